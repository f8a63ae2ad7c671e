//! Minimal reverse-mode automatic differentiation over dense `f64`
//! matrices.
//!
//! Values are computed eagerly as operations are recorded on a [`Tape`];
//! [`Tape::backward`] then replays the tape in reverse to produce
//! vector-Jacobian products for every node.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Axis, Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("domain error: {0}")]
    Domain(&'static str),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks analytic gradients of `f` against central differences for
    /// every leaf, returning the worst relative error.
    fn fd_check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[NodeId]) -> NodeId) -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &ids);
        let grads = tape.backward(loss).unwrap();
        let eval = |vals: &[Tensor]| {
            let mut t = Tape::new();
            let ids: Vec<NodeId> = vals.iter().map(|v| t.constant(v.clone())).collect();
            let l = f(&mut t, &ids);
            t.value(l).item()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, input) in inputs.iter().enumerate() {
            let g = grads.get(ids[k]);
            for e in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[e] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let analytic = g.data()[e];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn forward_examples() {
        let mut t = Tape::new();
        let i3 = t.constant(Tensor::identity(3));
        let a_val = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let a = t.constant(a_val.clone());
        let p = t.matmul(i3, a).unwrap();
        assert_eq!(t.value(p), &a_val);

        let x = t.constant(Tensor::row(vec![-1.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);

        let z = t.constant(Tensor::row(vec![0.0, 0.0]));
        let s = t.softmax_rows(z);
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);

        assert!(matches!(t.matmul(a, a), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let unused = t.param(Tensor::row(vec![1.0, 2.0]));
        let y = t.scale(x, 2.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.param(random(&mut rng, 3, 4));
        let s = t.sum(x);
        assert_eq!(t.backward(s).unwrap().get(x), Tensor::filled(3, 4, 1.0));
    }

    #[test]
    fn gradients_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, b) = (random(&mut rng, 4, 3), random(&mut rng, 3, 5));
        let run = || {
            let mut t = Tape::new();
            let (x, y) = (t.param(a.clone()), t.param(b.clone()));
            let m = t.matmul(x, y).unwrap();
            let s = t.softmax_rows(m);
            let l = t.sum(s);
            let g = t.backward(l).unwrap();
            (g.get(x), g.get(y))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn three_layer_mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![
            random(&mut rng, 5, 3),
            random(&mut rng, 3, 6),
            random(&mut rng, 1, 6),
            random(&mut rng, 6, 4),
            random(&mut rng, 1, 4),
            random(&mut rng, 4, 1),
        ];
        let err = fd_check(&inputs, |t, ids| {
            let h = t.matmul(ids[0], ids[1]).unwrap();
            let h = t.add_row_bias(h, ids[2]).unwrap();
            let h = t.relu(h);
            let h = t.matmul(h, ids[3]).unwrap();
            let h = t.add_row_bias(h, ids[4]).unwrap();
            let h = t.relu(h);
            let h = t.matmul(h, ids[5]).unwrap();
            let h = t.mul(h, h).unwrap();
            t.sum(h)
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        type Case = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[NodeId]) -> NodeId>);
        let w = random(&mut rng, 3, 4);
        let weights = move |t: &mut Tape, x: NodeId| {
            // Non-uniform weighting so that sum-invariant ops have non-zero gradients.
            let wt = t.constant(w.clone());
            let y = t.mul(x, wt).unwrap();
            t.sum(y)
        };
        let cases: Vec<Case> = vec![
            (vec![random(&mut rng, 3, 2), random(&mut rng, 2, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.matmul(ids[0], ids[1]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4), random(&mut rng, 3, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.add(ids[0], ids[1]).unwrap(); let m = t.sub(m, ids[1]).unwrap(); let m = t.mul(m, ids[1]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.scale(ids[0], -1.7); let m = t.exp(m).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4).map(|x| x.abs() + 0.5)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.log(ids[0]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.softmax_rows(ids[0]); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4).map(|x| if x.abs() < 0.05 { 0.3 } else { x })], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.relu(ids[0]); let m = t.clamp(m, -0.5, 0.6); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 1), random(&mut rng, 3, 3)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.concat_cols(ids[0], ids[1]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 1, 4), random(&mut rng, 2, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.concat_rows(ids[0], ids[1]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 5, 6)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.slice(ids[0], 1..4, 2..6).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 4, 3)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.transpose(ids[0]); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4), random(&mut rng, 1, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.add_row_bias(ids[0], ids[1]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.log_normalize(ids[0], Axis::Rows, &[0.1, -0.3, 0.7]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.log_normalize(ids[0], Axis::Cols, &[0.2, 0.0, -1.0, 0.4]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 2, 3), random(&mut rng, 1, 1)], Box::new({
                let f = weights.clone();
                move |t, ids| { let m = t.augment_dustbin(ids[0], ids[1]).unwrap(); f(t, m) }
            })),
            (vec![random(&mut rng, 3, 4)], Box::new(|t, ids| {
                let m = t.gather(ids[0], &[(0, 1), (2, 3), (0, 1)]).unwrap();
                let m = t.mul(m, m).unwrap();
                t.sum(m)
            })),
        ];
        for (k, (inputs, f)) in cases.iter().enumerate() {
            let err = fd_check(inputs, |t, ids| f(t, ids));
            assert!(err < 1e-4, "case {k}: relative error {err}");
        }
    }
}
