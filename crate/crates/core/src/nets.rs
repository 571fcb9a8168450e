//! Recurrent building blocks shared by the generator and the critic: an
//! LSTM cell with layer-normalized gate pre-activations and the per-cell
//! attention scorer.

use crate::features::FeatureGrid;
use crate::numerics::{NumericsError, ParamId, ParamStore, SeededRng, Tape, Tensor, Var};

/// Layer-norm epsilon for every normalized site.
pub const LN_EPS: f64 = 1e-5;

const GATES: [&str; 4] = ["f", "i", "o", "c"];

/// Parameter ids of one LSTM cell: per gate, input weights W[hidden, input],
/// recurrent weights U[hidden, hidden], bias, and layer-norm gain/bias
/// applied to the gate pre-activation sum.
#[derive(Debug, Clone)]
pub(crate) struct LstmIds {
    w: [ParamId; 4],
    u: [ParamId; 4],
    b: [ParamId; 4],
    ln_gain: [ParamId; 4],
    ln_bias: [ParamId; 4],
}

impl LstmIds {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        let mut ln_gain = Vec::new();
        let mut ln_bias = Vec::new();
        for g in GATES {
            w.push(store.add_matrix(&format!("{prefix}.w_{g}"), hidden, input, rng));
            u.push(store.add_matrix(&format!("{prefix}.u_{g}"), hidden, hidden, rng));
            b.push(store.add_zeros(&format!("{prefix}.b_{g}"), hidden));
            ln_gain.push(store.add_ones(&format!("{prefix}.ln_gain_{g}"), hidden));
            ln_bias.push(store.add_zeros(&format!("{prefix}.ln_bias_{g}"), hidden));
        }
        let four = |v: Vec<ParamId>| -> [ParamId; 4] { v.try_into().expect("four gates") };
        LstmIds {
            w: four(w),
            u: four(u),
            b: four(b),
            ln_gain: four(ln_gain),
            ln_bias: four(ln_bias),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> LstmVars {
        let bind4 = |tape: &mut Tape, ids: &[ParamId; 4]| {
            [
                tape.param(store, ids[0], trainable),
                tape.param(store, ids[1], trainable),
                tape.param(store, ids[2], trainable),
                tape.param(store, ids[3], trainable),
            ]
        };
        LstmVars {
            w: bind4(tape, &self.w),
            u: bind4(tape, &self.u),
            b: bind4(tape, &self.b),
            ln_gain: bind4(tape, &self.ln_gain),
            ln_bias: bind4(tape, &self.ln_bias),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LstmVars {
    w: [Var; 4],
    u: [Var; 4],
    b: [Var; 4],
    ln_gain: [Var; 4],
    ln_bias: [Var; 4],
}

impl LstmVars {
    fn gate_pre(
        &self,
        tape: &mut Tape,
        k: usize,
        input: Var,
        h_prev: Var,
    ) -> Result<Var, NumericsError> {
        let wu = tape.matvec(self.w[k], input)?;
        let uh = tape.matvec(self.u[k], h_prev)?;
        let s = tape.add(wu, uh)?;
        let s = tape.add(s, self.b[k])?;
        tape.layer_norm(s, self.ln_gain[k], self.ln_bias[k], LN_EPS)
    }

    /// One step: sigmoid gates f, i, o and tanh candidate over normalized
    /// pre-activations; c = f ∘ c_prev + i ∘ candidate; h = o ∘ tanh(c).
    pub fn step(
        &self,
        tape: &mut Tape,
        input: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), NumericsError> {
        let f_pre = self.gate_pre(tape, 0, input, h_prev)?;
        let i_pre = self.gate_pre(tape, 1, input, h_prev)?;
        let o_pre = self.gate_pre(tape, 2, input, h_prev)?;
        let c_pre = self.gate_pre(tape, 3, input, h_prev)?;
        let f = tape.sigmoid(f_pre);
        let i = tape.sigmoid(i_pre);
        let o = tape.sigmoid(o_pre);
        let candidate = tape.tanh(c_pre);
        let keep = tape.hadamard(f, c_prev)?;
        let write = tape.hadamard(i, candidate)?;
        let c = tape.add(keep, write)?;
        let ct = tape.tanh(c);
        let h = tape.hadamard(o, ct)?;
        Ok((h, c))
    }
}

/// Attention scorer: a one-hidden-layer MLP with tanh activation mapping
/// (cell features ⊕ hidden state) to a scalar relevance.
#[derive(Debug, Clone)]
pub(crate) struct AttentionIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl AttentionIds {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Self {
        AttentionIds {
            w1: store.add_matrix(&format!("{prefix}.w1"), hidden, input, rng),
            b1: store.add_zeros(&format!("{prefix}.b1"), hidden),
            w2: store.add_matrix(&format!("{prefix}.w2"), 1, hidden, rng),
            b2: store.add_zeros(&format!("{prefix}.b2"), 1),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> AttentionVars {
        AttentionVars {
            w1: tape.param(store, self.w1, trainable),
            b1: tape.param(store, self.b1, trainable),
            w2: tape.param(store, self.w2, trainable),
            b2: tape.param(store, self.b2, trainable),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl AttentionVars {
    fn score_cell(&self, tape: &mut Tape, x_cell: Var, h: Var) -> Result<Var, NumericsError> {
        let joint = tape.concat(x_cell, h)?;
        let pre = tape.affine(self.w1, joint, self.b1)?;
        let hid = tape.tanh(pre);
        tape.affine(self.w2, hid, self.b2)
    }
}

/// Feature grid bound onto a tape: the [L, D] constant matrix and the L
/// per-cell row slices.
pub struct FeatureVars {
    pub matrix: Var,
    pub cells: Vec<Var>,
    pub dim: usize,
}

pub fn bind_features(tape: &mut Tape, grid: &FeatureGrid) -> FeatureVars {
    let l = grid.cells();
    let d = grid.dim();
    let matrix = tape.constant(Tensor::new(vec![l, d], grid.data().to_vec()).expect("grid data"));
    let cells = (0..l)
        .map(|i| tape.slice(matrix, i * d, d).expect("cell slice"))
        .collect();
    FeatureVars {
        matrix,
        cells,
        dim: d,
    }
}

/// Normalized attention over the cells from raw scores: α = softmax(e),
/// z = Σ αᵢ x′ᵢ.
pub fn attend_with_scores(
    tape: &mut Tape,
    features: &FeatureVars,
    scores: Var,
) -> Result<(Var, Var), NumericsError> {
    let alpha = tape.softmax(scores)?;
    let z = tape.matvec_t(features.matrix, alpha)?;
    Ok((z, alpha))
}

/// Score every cell with the attention MLP given the previous hidden state,
/// then normalize and pool: returns (z, α).
pub(crate) fn attend(
    tape: &mut Tape,
    attn: &AttentionVars,
    features: &FeatureVars,
    h_prev: Var,
) -> Result<(Var, Var), NumericsError> {
    let mut scores: Option<Var> = None;
    for cell in &features.cells {
        let e = attn.score_cell(tape, *cell, h_prev)?;
        scores = Some(match scores {
            Some(acc) => tape.concat(acc, e)?,
            None => e,
        });
    }
    let scores = scores.expect("at least one cell");
    attend_with_scores(tape, features, scores)
}
