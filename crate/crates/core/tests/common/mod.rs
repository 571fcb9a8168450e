#![allow(dead_code)]

//! Shared test oracles. Gradient checks here are written against plain
//! closures and central finite differences so they stay independent of the
//! tape's own reverse-mode rules.

pub mod merge;
pub mod smoke;

use sggen_core::numerics::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function for every element of
/// every input tensor.
pub fn finite_difference<F>(f: &mut F, inputs: &[Tensor], h: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            g.data_mut()[j] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Check a tape-built scalar function against finite differences through
/// both reverse paths: the buffer sweep and the node-building `grad_of`.
pub fn check_tape_gradients<B>(build: B, inputs: &[Tensor], tol: f64, what: &str)
where
    B: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };
    let numeric = finite_difference(&mut eval, inputs, FD_STEP);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.grad_leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);

    let node_grads = {
        let mut tape2 = Tape::new();
        let vars2: Vec<Var> = inputs.iter().map(|t| tape2.grad_leaf(t.clone())).collect();
        let loss2 = build(&mut tape2, &vars2);
        let gs = tape2.grad_of(loss2, &vars2).expect("grad_of");
        gs.iter()
            .map(|g| tape2.value(*g).clone())
            .collect::<Vec<_>>()
    };

    for (i, fd) in numeric.iter().enumerate() {
        let analytic = tape.leaf_gradient(loss, vars[i]).expect("leaf gradient");
        for j in 0..fd.len() {
            let (a, n) = (analytic.data()[j], fd.data()[j]);
            assert!(
                rel_err(a, n) < tol,
                "{what}: buffer grad input {i} elem {j}: analytic {a} vs fd {n}"
            );
            let nb = node_grads[i].data()[j];
            assert!(
                rel_err(nb, n) < tol,
                "{what}: node grad input {i} elem {j}: analytic {nb} vs fd {n}"
            );
        }
    }
}
