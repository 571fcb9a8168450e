use super::{SeededRng, Tensor};

/// A named trainable tensor paired with its gradient accumulator.
/// The gradient is zero after an optimizer step and before the next
/// backward pass; backward passes accumulate additively into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Flat collection of parameters for one network, addressed by `ParamId`
/// in registration order. Registration order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix initialized uniform in [-s, s] with s = 1/sqrt(fan_in).
    pub fn add_matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut SeededRng,
    ) -> ParamId {
        let s = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| (rng.uniform01() * 2.0 - 1.0) * s)
            .collect();
        self.add(
            name,
            Tensor::new(vec![rows, cols], data).expect("sized data"),
        )
    }

    pub fn add_zeros(&mut self, name: &str, len: usize) -> ParamId {
        self.add(name, Tensor::zeros(vec![len]))
    }

    pub fn add_ones(&mut self, name: &str, len: usize) -> ParamId {
        self.add(name, Tensor::vector(vec![1.0; len]))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let g = self.params[id.0].grad.data_mut();
        debug_assert_eq!(g.len(), grad.len());
        for (a, b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Per-store Adam accumulators, parallel to the store's parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn for_store(store: &ParamStore) -> Self {
        AdamState {
            first_moment: store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect(),
            second_moment: store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction over every parameter in the store.
/// Gradients are consumed: they are reset to zero afterward.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in store.params.iter_mut().enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let g = p.grad.data_mut();
        let w = p.value.data_mut();
        for j in 0..g.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            w[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            g[j] = 0.0;
        }
    }
}
