//! Conditional critic: scores a (triple, feature grid) pair with an
//! unbounded real value. Shares the attend/LSTM step structure with the
//! generator; the triple enters step-wise through a learned lexeme
//! embedding. Includes the input-gradient penalty.

use crate::features::FeatureGrid;
use crate::nets::{
    attend, bind_features, AttentionIds, AttentionVars, FeatureVars, LstmIds, LstmVars,
};
use crate::numerics::{NumericsError, ParamId, ParamStore, SeededRng, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorDims {
    pub feature_dim: usize,
    pub cells: usize,
    /// Critic LSTM hidden width.
    pub hidden: usize,
    /// Lexeme embedding width fed to the LSTM alongside z.
    pub embed: usize,
    pub attn_hidden: usize,
    pub vocab: usize,
}

impl DiscriminatorDims {
    pub fn for_vocab(vocab: usize) -> Self {
        DiscriminatorDims {
            feature_dim: crate::features::FEATURE_DIM,
            cells: 16,
            hidden: 64,
            embed: 32,
            attn_hidden: 32,
            vocab,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    pub dims: DiscriminatorDims,
    pub store: ParamStore,
    attn: AttentionIds,
    lstm: LstmIds,
    embed: ParamId,
    score_w: ParamId,
    score_b: ParamId,
    h0_w: ParamId,
    h0_b: ParamId,
    c0_w: ParamId,
    c0_b: ParamId,
}

impl DiscriminatorParams {
    pub fn init(dims: DiscriminatorDims, rng: &mut SeededRng) -> Self {
        let mut store = ParamStore::new();
        let attn = AttentionIds::init(
            &mut store,
            "disc.attn",
            dims.feature_dim + dims.hidden,
            dims.attn_hidden,
            rng,
        );
        let lstm = LstmIds::init(
            &mut store,
            "disc.lstm",
            dims.feature_dim + dims.embed,
            dims.hidden,
            rng,
        );
        let embed = store.add_matrix("disc.embed", dims.vocab, dims.embed, rng);
        let score_w = store.add_matrix("disc.score_w", 1, dims.hidden, rng);
        let score_b = store.add_zeros("disc.score_b", 1);
        let h0_w = store.add_matrix("disc.h0_w", dims.hidden, dims.feature_dim, rng);
        let h0_b = store.add_zeros("disc.h0_b", dims.hidden);
        let c0_w = store.add_matrix("disc.c0_w", dims.hidden, dims.feature_dim, rng);
        let c0_b = store.add_zeros("disc.c0_b", dims.hidden);
        DiscriminatorParams {
            dims,
            store,
            attn,
            lstm,
            embed,
            score_w,
            score_b,
            h0_w,
            h0_b,
            c0_w,
            c0_b,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDiscriminator {
        BoundDiscriminator {
            dims: self.dims,
            attn: self.attn.bind(tape, &self.store, trainable),
            lstm: self.lstm.bind(tape, &self.store, trainable),
            embed: tape.param(&self.store, self.embed, trainable),
            score_w: tape.param(&self.store, self.score_w, trainable),
            score_b: tape.param(&self.store, self.score_b, trainable),
            h0_w: tape.param(&self.store, self.h0_w, trainable),
            h0_b: tape.param(&self.store, self.h0_b, trainable),
            c0_w: tape.param(&self.store, self.c0_w, trainable),
            c0_b: tape.param(&self.store, self.c0_b, trainable),
        }
    }

    fn check_grid(&self, grid: &FeatureGrid) -> Result<(), NumericsError> {
        if grid.cells() != self.dims.cells || grid.dim() != self.dims.feature_dim {
            return Err(NumericsError::ShapeMismatch {
                op: "critic feature grid",
                lhs: vec![grid.cells(), grid.dim()],
                rhs: vec![self.dims.cells, self.dims.feature_dim],
            });
        }
        Ok(())
    }
}

pub struct BoundDiscriminator {
    dims: DiscriminatorDims,
    attn: AttentionVars,
    lstm: LstmVars,
    embed: Var,
    score_w: Var,
    score_b: Var,
    h0_w: Var,
    h0_b: Var,
    c0_w: Var,
    c0_b: Var,
}

/// Critic forward pass over soft lexeme vars already on the tape. The start
/// state comes from the mean of the L features: the critic judges against
/// the whole image rather than a random cell. Differentiable with respect
/// to both the parameters and the input soft vectors.
pub fn score_on_tape(
    tape: &mut Tape,
    bound: &BoundDiscriminator,
    features: &FeatureVars,
    soft: &[Var; 3],
) -> Result<Var, NumericsError> {
    let l = features.cells.len();
    let uniform = tape.constant(Tensor::vector(vec![1.0 / l as f64; l]));
    let mean_x = tape.matvec_t(features.matrix, uniform)?;
    let mut h = tape.affine(bound.h0_w, mean_x, bound.h0_b)?;
    let mut c = tape.affine(bound.c0_w, mean_x, bound.c0_b)?;
    for v in soft {
        let (z, _alpha) = attend(tape, &bound.attn, features, h)?;
        let emb = tape.matvec_t(bound.embed, *v)?;
        let input = tape.concat(z, emb)?;
        let (h_next, c_next) = bound.lstm.step(tape, input, h, c)?;
        h = h_next;
        c = c_next;
    }
    let s = tape.affine(bound.score_w, h, bound.score_b)?;
    debug_assert_eq!(tape.value(s).len(), 1);
    Ok(s)
}

/// Score plain soft vectors against a grid on a throwaway tape with frozen
/// parameters.
pub fn score(
    params: &DiscriminatorParams,
    soft: [&[f64]; 3],
    grid: &FeatureGrid,
) -> Result<f64, NumericsError> {
    params.check_grid(grid)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let features = bind_features(&mut tape, grid);
    let vars = bind_soft(&mut tape, params.dims.vocab, soft)?;
    let s = score_on_tape(&mut tape, &bound, &features, &vars)?;
    Ok(tape.value(s).item())
}

pub fn bind_soft(
    tape: &mut Tape,
    vocab: usize,
    soft: [&[f64]; 3],
) -> Result<[Var; 3], NumericsError> {
    let mut vars = Vec::with_capacity(3);
    for v in soft {
        if v.len() != vocab {
            return Err(NumericsError::ShapeMismatch {
                op: "soft lexeme",
                lhs: vec![v.len()],
                rhs: vec![vocab],
            });
        }
        vars.push(tape.constant(Tensor::vector(v.to_vec())));
    }
    Ok(vars.try_into().expect("three positions"))
}

/// v̂ = ε · real + (1 − ε) · fake, per position.
pub fn interpolate(real: [&[f64]; 3], fake: [&[f64]; 3], eps: f64) -> [Vec<f64>; 3] {
    let mix = |r: &[f64], f: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(f)
            .map(|(a, b)| eps * a + (1.0 - eps) * b)
            .collect()
    };
    [
        mix(real[0], fake[0]),
        mix(real[1], fake[1]),
        mix(real[2], fake[2]),
    ]
}

/// λ (‖∇_v̂ score(v̂, X′)‖₂ − 1)² as a tape node, with the gradient taken
/// with respect to the concatenation of the three interpolated vectors and
/// built differentiably so the penalty can be backpropagated into the
/// critic parameters.
pub fn gradient_penalty_on_tape(
    tape: &mut Tape,
    bound: &BoundDiscriminator,
    features: &FeatureVars,
    real: [&[f64]; 3],
    fake: [&[f64]; 3],
    eps: f64,
    lambda: f64,
) -> Result<Var, NumericsError> {
    let mixed = interpolate(real, fake, eps);
    let vhat = bind_soft(tape, bound.dims.vocab, [&mixed[0], &mixed[1], &mixed[2]])?;
    let s = score_on_tape(tape, bound, features, &vhat)?;
    let grads = tape.grad_of(s, &vhat)?;
    let mut sum_sq: Option<Var> = None;
    for g in grads {
        let sq = tape.hadamard(g, g)?;
        let ssq = tape.sum(sq);
        sum_sq = Some(match sum_sq {
            Some(acc) => tape.add(acc, ssq)?,
            None => ssq,
        });
    }
    let norm = tape.sqrt(sum_sq.expect("three grads"))?;
    let excess = tape.add_const(norm, -1.0);
    let sq = tape.hadamard(excess, excess)?;
    Ok(tape.scale(sq, lambda))
}

/// Penalty for plain inputs: samples ε ~ Uniform(0,1) from the rng, builds a
/// throwaway tape, and returns the penalty value.
pub fn gradient_penalty(
    params: &DiscriminatorParams,
    real: [&[f64]; 3],
    fake: [&[f64]; 3],
    grid: &FeatureGrid,
    rng: &mut SeededRng,
    lambda: f64,
) -> Result<f64, NumericsError> {
    params.check_grid(grid)?;
    let eps = rng.uniform01();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let features = bind_features(&mut tape, grid);
    let pen = gradient_penalty_on_tape(&mut tape, &bound, &features, real, fake, eps, lambda)?;
    Ok(tape.value(pen).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::one_hot;

    pub(crate) fn tiny_dims() -> DiscriminatorDims {
        DiscriminatorDims {
            feature_dim: 5,
            cells: 4,
            hidden: 4,
            embed: 3,
            attn_hidden: 6,
            vocab: 6,
        }
    }

    fn tiny_grid(seed: u64, dims: &DiscriminatorDims) -> FeatureGrid {
        let mut rng = SeededRng::new(seed);
        let data = (0..dims.cells * dims.feature_dim)
            .map(|_| rng.gaussian())
            .collect();
        FeatureGrid::new(dims.cells, dims.feature_dim, data)
    }

    fn simplex(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| rng.uniform01() + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    #[test]
    fn score_is_deterministic_and_finite() {
        let dims = tiny_dims();
        let params = DiscriminatorParams::init(dims, &mut SeededRng::new(1));
        let grid = tiny_grid(2, &dims);
        let mut rng = SeededRng::new(3);
        for _ in 0..10 {
            let v1 = simplex(&mut rng, dims.vocab);
            let v2 = simplex(&mut rng, dims.vocab);
            let v3 = one_hot(rng.range(dims.vocab), dims.vocab).unwrap();
            let a = score(&params, [&v1, &v2, &v3], &grid).unwrap();
            let b = score(&params, [&v1, &v2, &v3], &grid).unwrap();
            assert_eq!(a, b);
            assert!(a.is_finite());
        }
    }

    #[test]
    fn one_hot_and_soft_inputs_both_score() {
        let dims = tiny_dims();
        let params = DiscriminatorParams::init(dims, &mut SeededRng::new(4));
        let grid = tiny_grid(5, &dims);
        let real: Vec<Vec<f64>> = (0..3).map(|i| one_hot(i, dims.vocab).unwrap()).collect();
        let s = score(&params, [&real[0], &real[1], &real[2]], &grid).unwrap();
        assert!(s.is_finite());
    }

    #[test]
    fn interpolation_endpoints() {
        let mut rng = SeededRng::new(6);
        let real: Vec<Vec<f64>> = (0..3).map(|_| simplex(&mut rng, 5)).collect();
        let fake: Vec<Vec<f64>> = (0..3).map(|_| simplex(&mut rng, 5)).collect();
        let r = [&real[0][..], &real[1][..], &real[2][..]];
        let f = [&fake[0][..], &fake[1][..], &fake[2][..]];
        let at_one = interpolate(r, f, 1.0);
        let at_zero = interpolate(r, f, 0.0);
        for t in 0..3 {
            assert_eq!(at_one[t], real[t]);
            assert_eq!(at_zero[t], fake[t]);
        }
    }

    #[test]
    fn penalty_is_nonnegative_and_matches_its_formula() {
        let dims = tiny_dims();
        let params = DiscriminatorParams::init(dims, &mut SeededRng::new(7));
        let grid = tiny_grid(8, &dims);
        let mut rng = SeededRng::new(9);
        let lambda = 10.0;
        for _ in 0..10 {
            let real: Vec<Vec<f64>> = (0..3)
                .map(|_| one_hot(rng.range(dims.vocab), dims.vocab).unwrap())
                .collect();
            let fake: Vec<Vec<f64>> = (0..3).map(|_| simplex(&mut rng, dims.vocab)).collect();
            let eps = rng.uniform01();

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let features = bind_features(&mut tape, &grid);
            let pen = gradient_penalty_on_tape(
                &mut tape,
                &bound,
                &features,
                [&real[0], &real[1], &real[2]],
                [&fake[0], &fake[1], &fake[2]],
                eps,
                lambda,
            )
            .unwrap();
            let pen_value = tape.value(pen).item();
            assert!(pen_value >= 0.0);

            // Recompute from the inner gradient directly.
            let mixed = interpolate(
                [&real[0], &real[1], &real[2]],
                [&fake[0], &fake[1], &fake[2]],
                eps,
            );
            let mut tape2 = Tape::new();
            let bound2 = params.bind(&mut tape2, false);
            let features2 = bind_features(&mut tape2, &grid);
            let vhat =
                bind_soft(&mut tape2, dims.vocab, [&mixed[0], &mixed[1], &mixed[2]]).unwrap();
            let s = score_on_tape(&mut tape2, &bound2, &features2, &vhat).unwrap();
            let grads = tape2.grad_of(s, &vhat).unwrap();
            let ss: f64 = grads
                .iter()
                .map(|g| tape2.value(*g).data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            let expected = lambda * (ss.sqrt() - 1.0) * (ss.sqrt() - 1.0);
            assert!((pen_value - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn penalty_rng_wrapper_is_deterministic() {
        let dims = tiny_dims();
        let params = DiscriminatorParams::init(dims, &mut SeededRng::new(11));
        let grid = tiny_grid(12, &dims);
        let mut rng = SeededRng::new(13);
        let real: Vec<Vec<f64>> = (0..3).map(|i| one_hot(i, dims.vocab).unwrap()).collect();
        let fake: Vec<Vec<f64>> = (0..3).map(|_| simplex(&mut rng, dims.vocab)).collect();
        let p1 = gradient_penalty(
            &params,
            [&real[0], &real[1], &real[2]],
            [&fake[0], &fake[1], &fake[2]],
            &grid,
            &mut SeededRng::new(20),
            10.0,
        )
        .unwrap();
        let p2 = gradient_penalty(
            &params,
            [&real[0], &real[1], &real[2]],
            [&fake[0], &fake[1], &fake[2]],
            &grid,
            &mut SeededRng::new(20),
            10.0,
        )
        .unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn soft_vector_length_is_validated() {
        let dims = tiny_dims();
        let params = DiscriminatorParams::init(dims, &mut SeededRng::new(14));
        let grid = tiny_grid(15, &dims);
        let bad = vec![0.5, 0.5];
        let good = one_hot(0, dims.vocab).unwrap();
        assert!(score(&params, [&bad, &good, &good], &grid).is_err());
    }
}
