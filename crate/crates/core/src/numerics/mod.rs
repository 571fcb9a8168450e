//! Dense f64 tensors, reverse-mode differentiation on a per-pass tape,
//! the nonlinearities and normalization used by the recurrent nets, Adam,
//! and a counter-based seeded RNG.

mod params;
mod rng;
mod tape;
mod tensor;

pub use params::{adam_step, AdamConfig, AdamState, ParamId, ParamStore, Parameter};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
