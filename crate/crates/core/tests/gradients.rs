//! Finite-difference verification of every differentiable tape operation on
//! randomized small shapes, plus a double-backward check through `grad_of`.

mod common;

use common::{check_tape_gradients, finite_difference, rel_err, FD_STEP};
use sggen_core::numerics::{SeededRng, Tape, Tensor, Var};

const TOL: f64 = 1e-4;

fn rand_vec(rng: &mut SeededRng, len: usize) -> Tensor {
    Tensor::vector((0..len).map(|_| rng.gaussian()).collect())
}

fn rand_matrix(rng: &mut SeededRng, m: usize, n: usize) -> Tensor {
    Tensor::new(vec![m, n], (0..m * n).map(|_| rng.gaussian()).collect()).unwrap()
}

fn rand_positive(rng: &mut SeededRng, len: usize, floor: f64) -> Tensor {
    Tensor::vector((0..len).map(|_| rng.gaussian().abs() + floor).collect())
}

/// Weight the op output by a fixed random vector before reducing to a scalar
/// so the checked adjoint is not the all-ones vector.
fn weighted_sum(tape: &mut Tape, v: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let h = tape.hadamard(v, w).unwrap();
    tape.sum(h)
}

#[test]
fn elementwise_binary_ops() {
    let mut rng = SeededRng::new(101);
    for trial in 0..30 {
        let len = 1 + rng.range(8);
        let a = rand_vec(&mut rng, len);
        let b = rand_vec(&mut rng, len);
        let r = rand_vec(&mut rng, len);
        for (name, which) in [("add", 0), ("sub", 1), ("hadamard", 2)] {
            check_tape_gradients(
                |t, vs| {
                    let out = match which {
                        0 => t.add(vs[0], vs[1]).unwrap(),
                        1 => t.sub(vs[0], vs[1]).unwrap(),
                        _ => t.hadamard(vs[0], vs[1]).unwrap(),
                    };
                    weighted_sum(t, out, &r)
                },
                &[a.clone(), b.clone()],
                TOL,
                &format!("{name} trial {trial}"),
            );
        }
    }
}

#[test]
fn division() {
    let mut rng = SeededRng::new(102);
    for trial in 0..30 {
        let len = 1 + rng.range(8);
        let a = rand_vec(&mut rng, len);
        let b = rand_positive(&mut rng, len, 0.5);
        let r = rand_vec(&mut rng, len);
        check_tape_gradients(
            |t, vs| {
                let out = t.div(vs[0], vs[1]).unwrap();
                weighted_sum(t, out, &r)
            },
            &[a, b],
            TOL,
            &format!("div trial {trial}"),
        );
    }
}

#[test]
fn elementwise_unary_ops() {
    let mut rng = SeededRng::new(103);
    for trial in 0..30 {
        let len = 1 + rng.range(8);
        let a = rand_vec(&mut rng, len);
        let r = rand_vec(&mut rng, len);
        for (name, which) in [
            ("neg", 0),
            ("sigmoid", 1),
            ("tanh", 2),
            ("scale", 3),
            ("add_const", 4),
        ] {
            check_tape_gradients(
                |t, vs| {
                    let out = match which {
                        0 => t.neg(vs[0]),
                        1 => t.sigmoid(vs[0]),
                        2 => t.tanh(vs[0]),
                        3 => t.scale(vs[0], -1.7),
                        _ => t.add_const(vs[0], 0.9),
                    };
                    weighted_sum(t, out, &r)
                },
                std::slice::from_ref(&a),
                TOL,
                &format!("{name} trial {trial}"),
            );
        }
    }
}

#[test]
fn sqrt_on_positive_inputs() {
    let mut rng = SeededRng::new(104);
    for trial in 0..30 {
        let len = 1 + rng.range(8);
        let a = rand_positive(&mut rng, len, 0.3);
        let r = rand_vec(&mut rng, len);
        check_tape_gradients(
            |t, vs| {
                let out = t.sqrt(vs[0]).unwrap();
                weighted_sum(t, out, &r)
            },
            &[a],
            TOL,
            &format!("sqrt trial {trial}"),
        );
    }
}

#[test]
fn softmax_gradient() {
    let mut rng = SeededRng::new(105);
    for trial in 0..40 {
        let len = 1 + rng.range(8);
        let a = rand_vec(&mut rng, len);
        let r = rand_vec(&mut rng, len);
        check_tape_gradients(
            |t, vs| {
                let out = t.softmax(vs[0]).unwrap();
                weighted_sum(t, out, &r)
            },
            &[a],
            TOL,
            &format!("softmax trial {trial}"),
        );
    }
}

#[test]
fn matrix_vector_ops() {
    let mut rng = SeededRng::new(106);
    for trial in 0..30 {
        let m = 1 + rng.range(8);
        let n = 1 + rng.range(8);
        let w = rand_matrix(&mut rng, m, n);
        let x = rand_vec(&mut rng, n);
        let xt = rand_vec(&mut rng, m);
        let rm = rand_vec(&mut rng, m);
        let rn = rand_vec(&mut rng, n);
        check_tape_gradients(
            |t, vs| {
                let out = t.matvec(vs[0], vs[1]).unwrap();
                weighted_sum(t, out, &rm)
            },
            &[w.clone(), x.clone()],
            TOL,
            &format!("matvec trial {trial}"),
        );
        check_tape_gradients(
            |t, vs| {
                let out = t.matvec_t(vs[0], vs[1]).unwrap();
                weighted_sum(t, out, &rn)
            },
            &[w.clone(), xt.clone()],
            TOL,
            &format!("matvec_t trial {trial}"),
        );
        let rmat = rand_matrix(&mut rng, m, n);
        check_tape_gradients(
            |t, vs| {
                let out = t.outer(vs[0], vs[1]).unwrap();
                let r = t.constant(rmat.clone());
                let h = t.hadamard(out, r).unwrap();
                t.sum(h)
            },
            &[xt.clone(), x.clone()],
            TOL,
            &format!("outer trial {trial}"),
        );
    }
}

#[test]
fn reshaping_ops() {
    let mut rng = SeededRng::new(107);
    for trial in 0..30 {
        let la = 1 + rng.range(8);
        let lb = 1 + rng.range(8);
        let a = rand_vec(&mut rng, la);
        let b = rand_vec(&mut rng, lb);
        let r = rand_vec(&mut rng, la + lb);
        check_tape_gradients(
            |t, vs| {
                let out = t.concat(vs[0], vs[1]).unwrap();
                weighted_sum(t, out, &r)
            },
            &[a.clone(), b.clone()],
            TOL,
            &format!("concat trial {trial}"),
        );

        let start = rng.range(la);
        let len = 1 + rng.range(la - start);
        let rs = rand_vec(&mut rng, len);
        check_tape_gradients(
            |t, vs| {
                let out = t.slice(vs[0], start, len).unwrap();
                weighted_sum(t, out, &rs)
            },
            std::slice::from_ref(&a),
            TOL,
            &format!("slice trial {trial}"),
        );

        let total = la + 1 + rng.range(4);
        let offset = rng.range(total - la + 1);
        let rp = rand_vec(&mut rng, total);
        check_tape_gradients(
            |t, vs| {
                let out = t.pad_slice(vs[0], offset, total).unwrap();
                weighted_sum(t, out, &rp)
            },
            std::slice::from_ref(&a),
            TOL,
            &format!("pad_slice trial {trial}"),
        );

        check_tape_gradients(
            |t, vs| {
                let s = t.sum(vs[0]);
                let b = t.broadcast_scalar(s, 5).unwrap();
                let sq = t.hadamard(b, b).unwrap();
                t.sum(sq)
            },
            std::slice::from_ref(&a),
            TOL,
            &format!("sum/broadcast trial {trial}"),
        );
    }
}

#[test]
fn composites_layer_norm_affine_mean() {
    let mut rng = SeededRng::new(108);
    for trial in 0..25 {
        let k = 2 + rng.range(7);
        let x = rand_vec(&mut rng, k);
        let gain = rand_vec(&mut rng, k);
        let bias = rand_vec(&mut rng, k);
        let r = rand_vec(&mut rng, k);
        check_tape_gradients(
            |t, vs| {
                let out = t.layer_norm(vs[0], vs[1], vs[2], 1e-5).unwrap();
                weighted_sum(t, out, &r)
            },
            &[x, gain, bias],
            TOL,
            &format!("layer_norm trial {trial}"),
        );

        let m = 1 + rng.range(6);
        let n = 1 + rng.range(6);
        let w = rand_matrix(&mut rng, m, n);
        let xv = rand_vec(&mut rng, n);
        let b = rand_vec(&mut rng, m);
        let rm = rand_vec(&mut rng, m);
        check_tape_gradients(
            |t, vs| {
                let out = t.affine(vs[0], vs[1], vs[2]).unwrap();
                let s = t.sigmoid(out);
                weighted_sum(t, s, &rm)
            },
            &[w, xv, b],
            TOL,
            &format!("affine trial {trial}"),
        );
    }
}

// Double backward: loss(w) = || d s / d x ||^2 for s = sum(sigmoid(W x)),
// differentiated with respect to W through the inner grad_of graph. The
// outer gradient is checked against finite differences of the whole
// construction, which exercises exactly the path the gradient penalty uses.
#[test]
fn double_backward_through_grad_of() {
    let mut rng = SeededRng::new(109);
    for trial in 0..10 {
        let m = 2 + rng.range(3);
        let n = 2 + rng.range(3);
        let w = rand_matrix(&mut rng, m, n);
        let x = rand_vec(&mut rng, n);

        let build_loss = |wt: &Tensor, xt: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let wv = tape.constant(wt.clone());
            let xv = tape.constant(xt.clone());
            let wx = tape.matvec(wv, xv).unwrap();
            let s = tape.sigmoid(wx);
            let scalar = tape.sum(s);
            let g = tape.grad_of(scalar, &[xv]).unwrap()[0];
            let gg = tape.hadamard(g, g).unwrap();
            let loss = tape.sum(gg);
            tape.value(loss).item()
        };

        let mut eval = |inputs: &[Tensor]| build_loss(&inputs[0], &x);
        let fd = finite_difference(&mut eval, std::slice::from_ref(&w), FD_STEP);

        let mut tape = Tape::new();
        let wv = tape.grad_leaf(w.clone());
        let xv = tape.constant(x.clone());
        let wx = tape.matvec(wv, xv).unwrap();
        let s = tape.sigmoid(wx);
        let scalar = tape.sum(s);
        let g = tape.grad_of(scalar, &[xv]).unwrap()[0];
        let gg = tape.hadamard(g, g).unwrap();
        let loss = tape.sum(gg);
        let analytic = tape.leaf_gradient(loss, wv).unwrap();

        for j in 0..analytic.len() {
            let (a, nfd) = (analytic.data()[j], fd[0].data()[j]);
            assert!(
                rel_err(a, nfd) < 1e-3,
                "double backward trial {trial} elem {j}: {a} vs {nfd}"
            );
        }
    }
}
