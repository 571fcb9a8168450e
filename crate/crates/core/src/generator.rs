//! Triple generator: attention over the feature grid feeds a 3-step LSTM
//! conditioned on a per-triple noise draw; each step emits a soft lexeme
//! vector and records its attention vector.

use crate::features::FeatureGrid;
use crate::nets::{
    attend, bind_features, AttentionIds, AttentionVars, FeatureVars, LstmIds, LstmVars,
};
use crate::numerics::{NumericsError, ParamId, ParamStore, SeededRng, Tape, Tensor, Var};
use crate::vocab::{decode_argmax, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorDims {
    /// D: feature vector width.
    pub feature_dim: usize,
    /// L: number of spatial cells.
    pub cells: usize,
    /// H: LSTM hidden width.
    pub hidden: usize,
    /// N: noise width.
    pub noise: usize,
    /// Attention MLP hidden width.
    pub attn_hidden: usize,
    /// |V|: vocabulary size.
    pub vocab: usize,
}

impl GeneratorDims {
    pub fn for_vocab(vocab: usize) -> Self {
        GeneratorDims {
            feature_dim: crate::features::FEATURE_DIM,
            cells: 16,
            hidden: 64,
            noise: 16,
            attn_hidden: 32,
            vocab,
        }
    }
}

/// All trainable generator parameters, owned by one store.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub dims: GeneratorDims,
    pub store: ParamStore,
    attn: AttentionIds,
    lstm: LstmIds,
    head_w: ParamId,
    head_b: ParamId,
    h0_w: ParamId,
    h0_b: ParamId,
    c0_w: ParamId,
    c0_b: ParamId,
}

impl GeneratorParams {
    pub fn init(dims: GeneratorDims, rng: &mut SeededRng) -> Self {
        let mut store = ParamStore::new();
        let attn = AttentionIds::init(
            &mut store,
            "gen.attn",
            dims.feature_dim + dims.hidden,
            dims.attn_hidden,
            rng,
        );
        let lstm = LstmIds::init(
            &mut store,
            "gen.lstm",
            dims.feature_dim + dims.noise,
            dims.hidden,
            rng,
        );
        let head_w = store.add_matrix("gen.head_w", dims.vocab, dims.hidden, rng);
        let head_b = store.add_zeros("gen.head_b", dims.vocab);
        let h0_w = store.add_matrix("gen.h0_w", dims.hidden, dims.feature_dim, rng);
        let h0_b = store.add_zeros("gen.h0_b", dims.hidden);
        let c0_w = store.add_matrix("gen.c0_w", dims.hidden, dims.feature_dim, rng);
        let c0_b = store.add_zeros("gen.c0_b", dims.hidden);
        GeneratorParams {
            dims,
            store,
            attn,
            lstm,
            head_w,
            head_b,
            h0_w,
            h0_b,
            c0_w,
            c0_b,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGenerator {
        BoundGenerator {
            dims: self.dims,
            attn: self.attn.bind(tape, &self.store, trainable),
            lstm: self.lstm.bind(tape, &self.store, trainable),
            head_w: tape.param(&self.store, self.head_w, trainable),
            head_b: tape.param(&self.store, self.head_b, trainable),
            h0_w: tape.param(&self.store, self.h0_w, trainable),
            h0_b: tape.param(&self.store, self.h0_b, trainable),
            c0_w: tape.param(&self.store, self.c0_w, trainable),
            c0_b: tape.param(&self.store, self.c0_b, trainable),
        }
    }

    fn check_grid(&self, grid: &FeatureGrid) -> Result<(), NumericsError> {
        if grid.cells() != self.dims.cells || grid.dim() != self.dims.feature_dim {
            return Err(NumericsError::ShapeMismatch {
                op: "generator feature grid",
                lhs: vec![grid.cells(), grid.dim()],
                rhs: vec![self.dims.cells, self.dims.feature_dim],
            });
        }
        Ok(())
    }
}

pub struct BoundGenerator {
    dims: GeneratorDims,
    attn: AttentionVars,
    lstm: LstmVars,
    head_w: Var,
    head_b: Var,
    h0_w: Var,
    h0_b: Var,
    c0_w: Var,
    c0_b: Var,
}

impl BoundGenerator {
    /// h0, c0 from a learned affine of the feature vector at `cell`; the
    /// same cell seeds both so the start region stays coherent.
    pub(crate) fn init_state(
        &self,
        tape: &mut Tape,
        features: &FeatureVars,
        cell: usize,
    ) -> Result<(Var, Var), NumericsError> {
        let x = features.cells[cell];
        let h0 = tape.affine(self.h0_w, x, self.h0_b)?;
        let c0 = tape.affine(self.c0_w, x, self.c0_b)?;
        Ok((h0, c0))
    }
}

/// Tape-level products of one generated triple: three soft lexeme vars on
/// the simplex and their attention vars.
pub struct GeneratedVars {
    pub soft: [Var; 3],
    pub alphas: [Var; 3],
    pub h0_cell: usize,
}

/// Deterministic core: run the 3-step attend/LSTM/head pipeline with an
/// explicit noise vector and start cell. The same noise vector is reused at
/// every step.
pub fn generate_on_tape(
    tape: &mut Tape,
    bound: &BoundGenerator,
    features: &FeatureVars,
    noise: &Tensor,
    h0_cell: usize,
) -> Result<GeneratedVars, NumericsError> {
    let noise_var = tape.constant(noise.clone());
    let (mut h, mut c) = bound.init_state(tape, features, h0_cell)?;
    let mut soft = Vec::with_capacity(3);
    let mut alphas = Vec::with_capacity(3);
    for _ in 0..3 {
        let (z, alpha) = attend(tape, &bound.attn, features, h)?;
        let input = tape.concat(z, noise_var)?;
        let (h_next, c_next) = bound.lstm.step(tape, input, h, c)?;
        h = h_next;
        c = c_next;
        let logits = tape.affine(bound.head_w, h, bound.head_b)?;
        let v = tape.softmax(logits)?;
        soft.push(v);
        alphas.push(alpha);
    }
    Ok(GeneratedVars {
        soft: soft.try_into().expect("three steps"),
        alphas: alphas.try_into().expect("three steps"),
        h0_cell,
    })
}

/// Draw noise and the start cell from the rng, then run the core. Draw
/// order: noise vector first, then the cell index.
pub fn generate_vars(
    tape: &mut Tape,
    bound: &BoundGenerator,
    features: &FeatureVars,
    rng: &mut SeededRng,
) -> Result<(GeneratedVars, Tensor), NumericsError> {
    let noise = rng.gaussian_vector(bound.dims.noise);
    let cell = rng.range(bound.dims.cells);
    let vars = generate_on_tape(tape, bound, features, &noise, cell)?;
    Ok((vars, noise))
}

/// One generated triple: soft lexeme vectors, decoded lexemes, attention
/// trace, the noise draw, and the critic score once assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSample {
    pub soft: [Vec<f64>; 3],
    pub triple: Triple,
    pub alphas: [Vec<f64>; 3],
    pub noise: Vec<f64>,
    pub score: Option<f64>,
}

/// Materialize a sample from tape values (decoding by argmax).
pub fn sample_from_vars(
    tape: &Tape,
    vars: &GeneratedVars,
    noise: &Tensor,
) -> Result<TripleSample, NumericsError> {
    let soft: [Vec<f64>; 3] = [
        tape.value(vars.soft[0]).data().to_vec(),
        tape.value(vars.soft[1]).data().to_vec(),
        tape.value(vars.soft[2]).data().to_vec(),
    ];
    let alphas: [Vec<f64>; 3] = [
        tape.value(vars.alphas[0]).data().to_vec(),
        tape.value(vars.alphas[1]).data().to_vec(),
        tape.value(vars.alphas[2]).data().to_vec(),
    ];
    let decode =
        |v: &Vec<f64>| decode_argmax(v).map_err(|_| NumericsError::NonFinite("soft lexeme decode"));
    let triple = Triple::new(decode(&soft[0])?, decode(&soft[1])?, decode(&soft[2])?);
    Ok(TripleSample {
        soft,
        triple,
        alphas,
        noise: noise.data().to_vec(),
        score: None,
    })
}

/// Sample one triple on a throwaway tape with frozen parameters.
pub fn generate_triple(
    params: &GeneratorParams,
    grid: &FeatureGrid,
    rng: &mut SeededRng,
) -> Result<TripleSample, NumericsError> {
    params.check_grid(grid)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let features = bind_features(&mut tape, grid);
    let (vars, noise) = generate_vars(&mut tape, &bound, &features, rng)?;
    sample_from_vars(&tape, &vars, &noise)
}

/// `count` independent samples, each with fresh noise and a fresh start
/// cell.
pub fn sample_triples(
    params: &GeneratorParams,
    grid: &FeatureGrid,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<TripleSample>, NumericsError> {
    (0..count)
        .map(|_| generate_triple(params, grid, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_raw, Standardizer};
    use crate::nets::attend_with_scores;
    use crate::scenes::{render, sample_scene, SceneConfig};

    pub(crate) fn tiny_dims() -> GeneratorDims {
        GeneratorDims {
            feature_dim: 5,
            cells: 4,
            hidden: 4,
            noise: 3,
            attn_hidden: 6,
            vocab: 6,
        }
    }

    fn tiny_grid(seed: u64, dims: &GeneratorDims) -> FeatureGrid {
        let mut rng = SeededRng::new(seed);
        let data = (0..dims.cells * dims.feature_dim)
            .map(|_| rng.gaussian())
            .collect();
        FeatureGrid::new(dims.cells, dims.feature_dim, data)
    }

    fn default_grid(seed: u64) -> FeatureGrid {
        let mut rng = SeededRng::new(seed);
        let scene = sample_scene(&mut rng, &SceneConfig::default()).unwrap();
        let image = render(&scene, 64, 64).unwrap();
        extract_raw(&image, 4, 4).unwrap()
    }

    #[test]
    fn zeroed_attention_weights_give_uniform_alpha_and_mean_z() {
        let dims = tiny_dims();
        let mut rng = SeededRng::new(1);
        let mut params = GeneratorParams::init(dims, &mut rng);
        // Zero the attention MLP so every cell scores identically.
        for i in 0..params.store.len() {
            let p = params.store.get_mut(ParamId(i));
            if p.name.starts_with("gen.attn") {
                p.value.fill(0.0);
            }
        }
        let grid = tiny_grid(2, &dims);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let features = bind_features(&mut tape, &grid);
        let (h0, _c0) = bound.init_state(&mut tape, &features, 0).unwrap();
        let (z, alpha) = attend(&mut tape, &bound.attn, &features, h0).unwrap();
        for a in tape.value(alpha).data() {
            assert!((a - 1.0 / dims.cells as f64).abs() < 1e-12);
        }
        for d in 0..dims.feature_dim {
            let mean: f64 =
                (0..dims.cells).map(|i| grid.cell(i)[d]).sum::<f64>() / dims.cells as f64;
            assert!((tape.value(z).data()[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_one_hot_scores_select_a_cell_exactly() {
        let dims = tiny_dims();
        let grid = tiny_grid(3, &dims);
        let mut tape = Tape::new();
        let features = bind_features(&mut tape, &grid);
        let j = 2;
        let mut raw = vec![0.0; dims.cells];
        raw[j] = 1000.0;
        let scores = tape.constant(Tensor::vector(raw));
        let (z, alpha) = attend_with_scores(&mut tape, &features, scores).unwrap();
        assert_eq!(tape.value(alpha).data()[j], 1.0);
        assert_eq!(tape.value(z).data(), grid.cell(j));
    }

    #[test]
    fn attention_pool_matches_direct_summation() {
        let dims = tiny_dims();
        let grid = tiny_grid(4, &dims);
        let mut rng = SeededRng::new(9);
        let raw: Vec<f64> = (0..dims.cells).map(|_| rng.gaussian()).collect();
        let mut tape = Tape::new();
        let features = bind_features(&mut tape, &grid);
        let scores = tape.constant(Tensor::vector(raw));
        let (z, alpha) = attend_with_scores(&mut tape, &features, scores).unwrap();
        let a = tape.value(alpha).data().to_vec();
        for d in 0..dims.feature_dim {
            let direct: f64 = (0..dims.cells).map(|i| a[i] * grid.cell(i)[d]).sum();
            assert!((tape.value(z).data()[d] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn init_state_is_deterministic_and_single_cell_for_l1() {
        let dims = GeneratorDims {
            cells: 1,
            ..tiny_dims()
        };
        let mut rng = SeededRng::new(5);
        let params = GeneratorParams::init(dims, &mut rng);
        let grid = tiny_grid(6, &dims);
        let run = |seed: u64| {
            let mut r = SeededRng::new(seed);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let features = bind_features(&mut tape, &grid);
            let cell = r.range(dims.cells);
            assert_eq!(cell, 0);
            let (h0, c0) = bound.init_state(&mut tape, &features, cell).unwrap();
            (
                tape.value(h0).data().to_vec(),
                tape.value(c0).data().to_vec(),
            )
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn start_cell_choice_is_uniform() {
        let l = 16;
        let mut rng = SeededRng::new(123);
        let n = 10_000;
        let mut counts = vec![0usize; l];
        for _ in 0..n {
            counts[rng.range(l)] += 1;
        }
        let p = 1.0 / l as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * sigma + 1e-12, "freq {freq}");
        }
    }

    #[test]
    fn generation_is_deterministic_given_seed() {
        let dims = tiny_dims();
        let mut rng = SeededRng::new(5);
        let params = GeneratorParams::init(dims, &mut rng);
        let grid = tiny_grid(6, &dims);
        let a = generate_triple(&params, &grid, &mut SeededRng::new(42)).unwrap();
        let b = generate_triple(&params, &grid, &mut SeededRng::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn soft_vectors_lie_on_the_simplex() {
        let dims = GeneratorDims::for_vocab(13);
        let mut rng = SeededRng::new(77);
        let params = GeneratorParams::init(dims, &mut rng);
        let std_grid = {
            let grids: Vec<_> = (0..4).map(|i| default_grid(100 + i)).collect();
            let s = Standardizer::fit(&grids).unwrap();
            s.apply(&grids[0]).unwrap()
        };
        let mut sample_rng = SeededRng::new(8);
        for _ in 0..20 {
            let s = generate_triple(&params, &std_grid, &mut sample_rng).unwrap();
            for t in 0..3 {
                let sum: f64 = s.soft[t].iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(s.soft[t].iter().all(|v| *v >= 0.0));
                let asum: f64 = s.alphas[t].iter().sum();
                assert!((asum - 1.0).abs() < 1e-6);
                assert!(s.alphas[t].iter().all(|v| *v >= 0.0));
            }
            assert_eq!(decode_argmax(&s.soft[0]).unwrap(), s.triple.subject);
        }
    }

    // Fresh params, same start cell, two different noise draws: the soft
    // outputs must differ (no noise collapse at initialization).
    #[test]
    fn distinct_noise_changes_the_output() {
        let dims = tiny_dims();
        for pair in 0..10u64 {
            let mut prng = SeededRng::new(1000 + pair);
            let params = GeneratorParams::init(dims, &mut prng);
            let grid = tiny_grid(2000 + pair, &dims);
            let mut nrng = SeededRng::new(3000 + pair);
            let n1 = nrng.gaussian_vector(dims.noise);
            let n2 = nrng.gaussian_vector(dims.noise);
            let run = |noise: &Tensor| {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, false);
                let features = bind_features(&mut tape, &grid);
                let vars = generate_on_tape(&mut tape, &bound, &features, noise, 0).unwrap();
                (0..3)
                    .flat_map(|t| tape.value(vars.soft[t]).data().to_vec())
                    .collect::<Vec<f64>>()
            };
            let (a, b) = (run(&n1), run(&n2));
            let max_diff = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max_diff > 1e-12, "pair {pair}: collapse ({max_diff})");
        }
    }

    #[test]
    fn sample_triples_matches_serial_generation() {
        let dims = tiny_dims();
        let mut rng = SeededRng::new(5);
        let params = GeneratorParams::init(dims, &mut rng);
        let grid = tiny_grid(6, &dims);
        let batch = sample_triples(&params, &grid, 3, &mut SeededRng::new(50)).unwrap();
        let mut serial_rng = SeededRng::new(50);
        for sample in &batch {
            let s = generate_triple(&params, &grid, &mut serial_rng).unwrap();
            assert_eq!(&s, sample);
        }
        assert_eq!(batch.len(), 3);
    }

    #[test]
    fn grid_shape_is_validated() {
        let dims = tiny_dims();
        let mut rng = SeededRng::new(5);
        let params = GeneratorParams::init(dims, &mut rng);
        let wrong = FeatureGrid::new(2, dims.feature_dim, vec![0.0; 2 * dims.feature_dim]);
        assert!(generate_triple(&params, &wrong, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_params() {
        let dims = tiny_dims();
        let a = GeneratorParams::init(dims, &mut SeededRng::new(7));
        let b = GeneratorParams::init(dims, &mut SeededRng::new(7));
        assert_eq!(a.store, b.store);
    }
}
