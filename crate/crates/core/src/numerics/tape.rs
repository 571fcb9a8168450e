use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Hadamard(Var, Var),
    Div(Var, Var),
    /// W[m,n] x[n] -> [m]
    MatVec(Var, Var),
    /// W[m,n] x[m] -> [n]; computes transpose(W) x
    MatVecT(Var, Var),
    /// a[m] b[n] -> [m,n]
    Outer(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Softmax(Var),
    Scale(Var, f64),
    AddConst(Var),
    Sum(Var),
    BroadcastScalar(Var),
    Concat(Var, Var),
    /// flat slice of `len(value)` elements of the source from `start`
    Slice(Var, usize),
    /// embed the source at `start` inside a zero vector
    PadSlice(Var, usize),
    /// same data, new shape
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Dynamic reverse-mode tape, rebuilt for every forward pass. Operations
/// record their inputs as they execute; `backward_into` replays the tape in
/// reverse with plain buffers, while `grad_of` builds the adjoints as new
/// tape nodes so the result can itself be differentiated (needed by the
/// gradient penalty).
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; gradients are not tracked through it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, None)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf whose gradient is wanted even though it is not a parameter.
    pub fn grad_leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, None)
    }

    /// Bind a stored parameter onto the tape. A trainable binding routes
    /// gradients back into the store on `backward_into`; a frozen binding
    /// behaves as a constant.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        let value = store.get(id).value.clone();
        if trainable {
            self.push(value, Op::Leaf, true, Some(id))
        } else {
            self.push(value, Op::Leaf, false, None)
        }
    }

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_elementwise(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(
            Tensor::new(shape, data).expect("elementwise shape"),
            op,
            ng,
            None,
        )
    }

    fn map_elementwise(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a);
        self.push(
            Tensor::new(shape, data).expect("elementwise shape"),
            op,
            ng,
            None,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check_same_shape("add", a, b)?;
        Ok(self.zip_elementwise(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check_same_shape("sub", a, b)?;
        Ok(self.zip_elementwise(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.map_elementwise(Op::Neg(a), a, |x| -x)
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check_same_shape("hadamard", a, b)?;
        Ok(self.zip_elementwise(Op::Hadamard(a, b), a, b, |x, y| x * y))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check_same_shape("div", a, b)?;
        Ok(self.zip_elementwise(Op::Div(a, b), a, b, |x, y| x / y))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_elementwise(Op::Sigmoid(a), a, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_elementwise(Op::Tanh(a), a, |x| x.tanh())
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumericsError> {
        if self.value(a).data().iter().any(|v| *v < 0.0) {
            return Err(NumericsError::NonFinite("sqrt of negative input"));
        }
        Ok(self.map_elementwise(Op::Sqrt(a), a, |x| x.sqrt()))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map_elementwise(Op::Scale(a, c), a, move |x| c * x)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.map_elementwise(Op::AddConst(a), a, move |x| x + c)
    }

    /// y = W x for W[m,n], x[n].
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(w).dims2().ok_or(NumericsError::BadShape {
            op: "matvec",
            expected: "rank-2 matrix",
            got: self.value(w).shape().to_vec(),
        })?;
        if self.value(x).shape() != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "matvec",
                lhs: vec![m, n],
                rhs: self.value(x).shape().to_vec(),
            });
        }
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wd[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * xd[j];
            }
            out[i] = acc;
        }
        let ng = self.needs(w) || self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), ng, None))
    }

    /// y = transpose(W) x for W[m,n], x[m].
    pub fn matvec_t(&mut self, w: Var, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(w).dims2().ok_or(NumericsError::BadShape {
            op: "matvec_t",
            expected: "rank-2 matrix",
            got: self.value(w).shape().to_vec(),
        })?;
        if self.value(x).shape() != [m] {
            return Err(NumericsError::ShapeMismatch {
                op: "matvec_t",
                lhs: vec![m, n],
                rhs: self.value(x).shape().to_vec(),
            });
        }
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            let row = &wd[i * n..(i + 1) * n];
            let xi = xd[i];
            for j in 0..n {
                out[j] += row[j] * xi;
            }
        }
        let ng = self.needs(w) || self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::MatVecT(w, x), ng, None))
    }

    /// Y = a b^T for a[m], b[n].
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 1 || sb.len() != 1 {
            return Err(NumericsError::BadShape {
                op: "outer",
                expected: "two rank-1 vectors",
                got: if sa.len() != 1 {
                    sa.to_vec()
                } else {
                    sb.to_vec()
                },
            });
        }
        let (m, n) = (sa[0], sb[0]);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = ad[i] * bd[j];
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out).expect("outer shape"),
            Op::Outer(a, b),
            ng,
            None,
        ))
    }

    /// Shift-invariant softmax over a rank-1 vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if t.shape().len() != 1 || t.is_empty() {
            return Err(NumericsError::BadShape {
                op: "softmax",
                expected: "non-empty rank-1 vector",
                got: t.shape().to_vec(),
            });
        }
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(NumericsError::NonFinite("softmax input"));
        }
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let out = exps.into_iter().map(|e| e / denom).collect();
        let ng = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::Softmax(a), ng, None))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng, None)
    }

    pub fn broadcast_scalar(&mut self, a: Var, len: usize) -> Result<Var, NumericsError> {
        if !self.value(a).is_scalar() {
            return Err(NumericsError::BadShape {
                op: "broadcast_scalar",
                expected: "single-element tensor",
                got: self.value(a).shape().to_vec(),
            });
        }
        let v = self.value(a).item();
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::vector(vec![v; len]),
            Op::BroadcastScalar(a),
            ng,
            None,
        ))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 1 || sb.len() != 1 {
            return Err(NumericsError::BadShape {
                op: "concat",
                expected: "two rank-1 vectors",
                got: if sa.len() != 1 {
                    sa.to_vec()
                } else {
                    sb.to_vec()
                },
            });
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::vector(out), Op::Concat(a, b), ng, None))
    }

    /// Rank-1 view of `len` elements of the flattened source starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let total = self.value(a).len();
        if start + len > total {
            return Err(NumericsError::BadShape {
                op: "slice",
                expected: "start + len within source",
                got: vec![start, len, total],
            });
        }
        let out = self.value(a).data()[start..start + len].to_vec();
        let ng = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::Slice(a, start), ng, None))
    }

    /// Embed a rank-1 vector at offset `start` in a zero vector of length `total`.
    pub fn pad_slice(&mut self, a: Var, start: usize, total: usize) -> Result<Var, NumericsError> {
        let len = self.value(a).len();
        if self.value(a).shape().len() != 1 || start + len > total {
            return Err(NumericsError::BadShape {
                op: "pad_slice",
                expected: "rank-1 source fitting inside total",
                got: vec![start, len, total],
            });
        }
        let mut out = vec![0.0; total];
        out[start..start + len].copy_from_slice(self.value(a).data());
        let ng = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::PadSlice(a, start), ng, None))
    }

    /// Same data under a new shape; lengths must agree.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let expected: usize = shape.iter().product();
        if t.len() != expected {
            return Err(NumericsError::LengthMismatch {
                len: t.len(),
                shape,
            });
        }
        let data = t.data().to_vec();
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::new(shape, data).expect("reshape"),
            Op::Reshape(a),
            ng,
            None,
        ))
    }

    // ── composite helpers ────────────────────────────────────────────

    /// W x + b.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var, NumericsError> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let h = self.hadamard(a, b)?;
        Ok(self.sum(h))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// gain ∘ (x - mean(x)) / sqrt(var(x) + eps) + bias, with population
    /// variance. Composed from primitives so its gradient (and the gradient
    /// of that gradient) follows from the primitive rules.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let k = self.value(x).len();
        let m = self.mean(x);
        let mb = self.broadcast_scalar(m, k)?;
        let centered = self.sub(x, mb)?;
        let sq = self.hadamard(centered, centered)?;
        let var = self.mean(sq);
        let var_eps = self.add_const(var, eps);
        let denom = self.sqrt(var_eps)?;
        let denom_b = self.broadcast_scalar(denom, k)?;
        let normed = self.div(centered, denom_b)?;
        let gained = self.hadamard(gain, normed)?;
        self.add(gained, bias)
    }

    // ── reverse passes ───────────────────────────────────────────────

    fn parents(&self, i: usize) -> (Option<Var>, Option<Var>) {
        match self.nodes[i].op {
            Op::Leaf => (None, None),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::Div(a, b)
            | Op::MatVec(a, b)
            | Op::MatVecT(a, b)
            | Op::Outer(a, b)
            | Op::Concat(a, b) => (Some(a), Some(b)),
            Op::Neg(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::Softmax(a)
            | Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Sum(a)
            | Op::BroadcastScalar(a)
            | Op::Slice(a, _)
            | Op::PadSlice(a, _)
            | Op::Reshape(a) => (Some(a), None),
        }
    }

    /// Reverse sweep with plain buffers. Adjoints of leaf nodes survive in
    /// the returned table; interior adjoints are dropped once consumed.
    fn reverse_sweep(&self, loss: Var, seed: f64) -> Result<Vec<Option<Vec<f64>>>, NumericsError> {
        let ln = &self.nodes[loss.0];
        if !ln.value.is_scalar() {
            return Err(NumericsError::NonScalarLoss(ln.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !ln.needs_grad {
            return Ok(adj);
        }
        adj[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.accumulate_parents(i, &g, &mut adj);
        }
        Ok(adj)
    }

    fn accumulate_parents(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let acc = |adj: &mut [Option<Vec<f64>>], v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.needs(v) {
                return;
            }
            let len = self.value(v).len();
            let buf = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let y = self.nodes[i].value.data();
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(adj, a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x += s)
                });
                acc(adj, b, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x += s)
                });
            }
            Op::Sub(a, b) => {
                acc(adj, a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x += s)
                });
                acc(adj, b, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x -= s)
                });
            }
            Op::Neg(a) => {
                acc(adj, a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x -= s)
                });
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                acc(adj, a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * vb[j];
                    }
                });
                acc(adj, b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * va[j];
                    }
                });
            }
            Op::Div(a, b) => {
                let vb = self.value(b).data();
                acc(adj, a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] / vb[j];
                    }
                });
                acc(adj, b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] -= g[j] * y[j] / vb[j];
                    }
                });
            }
            Op::MatVec(w, x) => {
                let (_, n) = self.value(w).dims2().expect("matvec parent");
                let (wd, xd) = (self.value(w).data(), self.value(x).data());
                acc(adj, w, &mut |d| {
                    for i in 0..g.len() {
                        for j in 0..n {
                            d[i * n + j] += g[i] * xd[j];
                        }
                    }
                });
                acc(adj, x, &mut |d| {
                    for i in 0..g.len() {
                        let row = &wd[i * n..(i + 1) * n];
                        for j in 0..n {
                            d[j] += row[j] * g[i];
                        }
                    }
                });
            }
            Op::MatVecT(w, x) => {
                let (m, n) = self.value(w).dims2().expect("matvec_t parent");
                let (wd, xd) = (self.value(w).data(), self.value(x).data());
                acc(adj, w, &mut |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += xd[i] * g[j];
                        }
                    }
                });
                acc(adj, x, &mut |d| {
                    for i in 0..m {
                        let row = &wd[i * n..(i + 1) * n];
                        let mut s = 0.0;
                        for j in 0..n {
                            s += row[j] * g[j];
                        }
                        d[i] += s;
                    }
                });
            }
            Op::Outer(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                let n = vb.len();
                acc(adj, a, &mut |d| {
                    for i in 0..d.len() {
                        let row = &g[i * n..(i + 1) * n];
                        let mut s = 0.0;
                        for j in 0..n {
                            s += row[j] * vb[j];
                        }
                        d[i] += s;
                    }
                });
                acc(adj, b, &mut |d| {
                    for i in 0..va.len() {
                        let row = &g[i * n..(i + 1) * n];
                        for j in 0..n {
                            d[j] += row[j] * va[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                acc(adj, a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Tanh(a) => {
                acc(adj, a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                });
            }
            Op::Sqrt(a) => {
                acc(adj, a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += 0.5 * g[j] / y[j];
                    }
                });
            }
            Op::Softmax(a) => {
                let s: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                acc(adj, a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += y[j] * (g[j] - s);
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(adj, a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x += c * s)
                });
            }
            Op::AddConst(a) => {
                acc(adj, a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x += s)
                });
            }
            Op::Sum(a) => {
                acc(adj, a, &mut |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::BroadcastScalar(a) => {
                let s: f64 = g.iter().sum();
                acc(adj, a, &mut |d| d[0] += s);
            }
            Op::Concat(a, b) => {
                let la = self.value(a).len();
                acc(adj, a, &mut |d| {
                    d.iter_mut().zip(&g[..la]).for_each(|(x, s)| *x += s)
                });
                acc(adj, b, &mut |d| {
                    d.iter_mut().zip(&g[la..]).for_each(|(x, s)| *x += s)
                });
            }
            Op::Slice(a, start) => {
                let len = y.len();
                acc(adj, a, &mut |d| {
                    d[start..start + len]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, s)| *x += s)
                });
            }
            Op::PadSlice(a, start) => {
                let la = self.value(a).len();
                acc(adj, a, &mut |d| {
                    d.iter_mut()
                        .zip(&g[start..start + la])
                        .for_each(|(x, s)| *x += s)
                });
            }
            Op::Reshape(a) => {
                acc(adj, a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, s)| *x += s)
                });
            }
        }
    }

    /// Reverse accumulation from a scalar loss; parameter gradients are added
    /// into the store (scaled by `seed`), so separate calls accumulate.
    pub fn backward_scaled_into(
        &self,
        loss: Var,
        store: &mut ParamStore,
        seed: f64,
    ) -> Result<(), NumericsError> {
        let adj = self.reverse_sweep(loss, seed)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Some(pid), Some(g)) = (node.param, adj[i].as_ref()) {
                store.accumulate_grad(pid, g);
            }
        }
        Ok(())
    }

    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<(), NumericsError> {
        self.backward_scaled_into(loss, store, 1.0)
    }

    /// Gradient of a scalar loss with respect to a non-parameter leaf
    /// created via `grad_leaf` (test support).
    pub fn leaf_gradient(&self, loss: Var, leaf: Var) -> Result<Tensor, NumericsError> {
        let adj = self.reverse_sweep(loss, 1.0)?;
        let shape = self.value(leaf).shape().to_vec();
        Ok(match &adj[leaf.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("leaf shape"),
            None => Tensor::zeros(shape),
        })
    }

    /// Differentiable gradient: builds dloss/dwrt as new tape nodes so the
    /// result can participate in a further loss (double backward).
    pub fn grad_of(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>, NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::NonScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let n = loss.0 + 1;
        let mut influences = vec![false; n];
        for w in wrt {
            if w.0 >= n {
                return Err(NumericsError::BadShape {
                    op: "grad_of",
                    expected: "wrt created before the loss",
                    got: vec![w.0, n],
                });
            }
            influences[w.0] = true;
        }
        for i in 0..n {
            if influences[i] {
                continue;
            }
            let (p, q) = self.parents(i);
            influences[i] = p.map(|v| influences[v.0]).unwrap_or(false)
                || q.map(|v| influences[v.0]).unwrap_or(false);
        }
        let mut adj: Vec<Option<Var>> = vec![None; n];
        if influences[loss.0] {
            adj[loss.0] = Some(self.scalar(1.0));
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let contribs = self.build_parent_contribs(i, g)?;
            for (parent, c) in contribs {
                if !influences[parent.0] {
                    continue;
                }
                adj[parent.0] = Some(match adj[parent.0] {
                    Some(prev) => self.add(prev, c)?,
                    None => c,
                });
            }
        }
        wrt.iter()
            .map(|w| match adj[w.0] {
                Some(v) => Ok(v),
                None => {
                    let shape = self.value(*w).shape().to_vec();
                    Ok(self.constant(Tensor::zeros(shape)))
                }
            })
            .collect()
    }

    /// Reshape `v` to the shape of `like` when their shapes differ (used for
    /// flat adjoints of flattening ops whose parent is rank 2).
    fn shaped_like(&mut self, v: Var, like: Var) -> Result<Var, NumericsError> {
        if self.value(v).shape() == self.value(like).shape() {
            Ok(v)
        } else {
            let shape = self.value(like).shape().to_vec();
            self.reshape(v, shape)
        }
    }

    /// Node-building counterpart of `accumulate_parents`; `y` in the rules
    /// below is the forward node's own output var.
    fn build_parent_contribs(
        &mut self,
        i: usize,
        g: Var,
    ) -> Result<Vec<(Var, Var)>, NumericsError> {
        let y = Var(i);
        Ok(match self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let nb = self.neg(g);
                vec![(a, g), (b, nb)]
            }
            Op::Neg(a) => vec![(a, self.neg(g))],
            Op::Hadamard(a, b) => {
                let ca = self.hadamard(g, b)?;
                let cb = self.hadamard(g, a)?;
                vec![(a, ca), (b, cb)]
            }
            Op::Div(a, b) => {
                let ca = self.div(g, b)?;
                let gy = self.hadamard(g, y)?;
                let gyb = self.div(gy, b)?;
                let cb = self.neg(gyb);
                vec![(a, ca), (b, cb)]
            }
            Op::MatVec(w, x) => {
                let cw = self.outer(g, x)?;
                let cx = self.matvec_t(w, g)?;
                vec![(w, cw), (x, cx)]
            }
            Op::MatVecT(w, x) => {
                let cw = self.outer(x, g)?;
                let cx = self.matvec(w, g)?;
                vec![(w, cw), (x, cx)]
            }
            Op::Outer(a, b) => {
                let ca = self.matvec(g, b)?;
                let cb = self.matvec_t(g, a)?;
                vec![(a, ca), (b, cb)]
            }
            Op::Sigmoid(a) => {
                let ny = self.neg(y);
                let one_minus = self.add_const(ny, 1.0);
                let deriv = self.hadamard(y, one_minus)?;
                vec![(a, self.hadamard(g, deriv)?)]
            }
            Op::Tanh(a) => {
                let yy = self.hadamard(y, y)?;
                let nyy = self.neg(yy);
                let deriv = self.add_const(nyy, 1.0);
                vec![(a, self.hadamard(g, deriv)?)]
            }
            Op::Sqrt(a) => {
                let gy = self.div(g, y)?;
                vec![(a, self.scale(gy, 0.5))]
            }
            Op::Softmax(a) => {
                let k = self.value(y).len();
                let gy = self.hadamard(g, y)?;
                let s = self.sum(gy);
                let sb = self.broadcast_scalar(s, k)?;
                let centered = self.sub(g, sb)?;
                vec![(a, self.hadamard(y, centered)?)]
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::AddConst(a) => vec![(a, g)],
            Op::Sum(a) => {
                let len = self.value(a).len();
                let b = self.broadcast_scalar(g, len)?;
                vec![(a, self.shaped_like(b, a)?)]
            }
            Op::BroadcastScalar(a) => vec![(a, self.sum(g))],
            Op::Concat(a, b) => {
                let la = self.value(a).len();
                let lb = self.value(b).len();
                let ca = self.slice(g, 0, la)?;
                let cb = self.slice(g, la, lb)?;
                vec![(a, ca), (b, cb)]
            }
            Op::Slice(a, start) => {
                let total = self.value(a).len();
                let p = self.pad_slice(g, start, total)?;
                vec![(a, self.shaped_like(p, a)?)]
            }
            Op::PadSlice(a, start) => {
                let la = self.value(a).len();
                vec![(a, self.slice(g, start, la)?)]
            }
            Op::Reshape(a) => {
                let flat = self.shaped_like(g, a)?;
                vec![(a, flat)]
            }
        })
    }
}
