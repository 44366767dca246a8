//! Dense `f64` tensors with a tape-style reverse-mode graph.
//!
//! Only the kernels the classifiers need are provided: matrix product,
//! full-width text convolution, max-pooling over time, single-channel 1-D
//! convolution, ReLU and softmax cross-entropy, plus reshaping glue.

mod checkpoint;
mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{
    check_fn, check_inputs, check_params, nudge_away_from_zero, relative_error, GradCheckReport,
    RELATIVE_FLOOR,
};
pub use graph::{conv1d_output_len, conv1d_padded_len, softmax, Gradients, Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Argument(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Scalar `Σ wᵢ·vᵢ` with fixed pseudo-random weights, so every element
    /// of `v` gets a distinct, non-trivial gradient.
    fn probe_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var, TensorError> {
        let n = g.value(v).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = g.constant(random(&[n, 1], &mut rng))?;
        let row = g.reshape(v, &[1, n])?;
        let s = g.matmul(row, w)?;
        g.reshape(s, &[1])
    }

    #[test]
    fn matmul_identity_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let x = random(&[3, 5], &mut rng);
        let (e, xv) = (g.constant(eye).unwrap(), g.constant(x.clone()).unwrap());
        let y = g.matmul(e, xv).unwrap();
        assert_eq!(g.value(y), &x);

        let h = g.constant(Tensor::zeros(&[1, 300])).unwrap();
        let a = g.constant(Tensor::zeros(&[300, 4])).unwrap();
        let ha = g.matmul(h, a).unwrap();
        assert_eq!(g.value(ha).shape(), &[1, 4]);

        let err = g.matmul(a, a).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                left: vec![300, 4],
                right: vec![300, 4]
            }
        );
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = [random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
        let report = check_inputs(
            |g, v| {
                let p = g.matmul(v[0], v[1])?;
                probe_sum(g, p, 7)
            },
            &inputs,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 20);
    }

    #[test]
    fn conv_text_shapes_and_zero_input() {
        let (t, m, f) = (40, 200, 100);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[t, m])).unwrap();
        let b = g.constant(Tensor::zeros(&[f])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rho in 1..=3 {
            let w = g.constant(random(&[f, rho * m], &mut rng)).unwrap();
            let c = g.conv_text(x, w, b).unwrap();
            assert_eq!(g.value(c).shape(), &[t - rho + 1, f]);
            let r = g.relu(c).unwrap();
            assert!(g.value(r).data().iter().all(|&v| v == 0.0));
        }
        let w = g.constant(Tensor::zeros(&[f, 41 * m])).unwrap();
        assert!(matches!(
            g.conv_text(x, w, b),
            Err(TensorError::Shape { .. })
        ));
    }

    #[test]
    fn conv_text_gradient_matches_finite_differences() {
        let (t, m, f) = (5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = [
            random(&[t, m], &mut rng),
            random(&[f, m], &mut rng),
            random(&[f], &mut rng),
            random(&[f, 2 * m], &mut rng),
            random(&[f], &mut rng),
        ];
        let report = check_inputs(
            |g, v| {
                let c1 = g.conv_text(v[0], v[1], v[2])?;
                let c2 = g.conv_text(v[0], v[3], v[4])?;
                let p1 = g.maxpool_time(c1)?;
                let p2 = g.maxpool_time(c2)?;
                let h = g.concat(&[p1, p2])?;
                probe_sum(g, h, 5)
            },
            &inputs,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::new();
        let one = g
            .constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 5.0]).unwrap())
            .unwrap();
        let p = g.maxpool_time(one).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, -2.0, 5.0]);
        let col = g
            .constant(Tensor::matrix(3, 1, vec![1.0, 3.0, 2.0]).unwrap())
            .unwrap();
        let p = g.maxpool_time(col).unwrap();
        assert_eq!(g.value(p).data(), &[3.0]);

        let x = Tensor::matrix(4, 2, vec![0.1, 0.9, 0.7, -0.3, 0.4, 0.2, -0.5, 0.6]).unwrap();
        let report = check_inputs(
            |g, v| {
                let m = g.maxpool_time(v[0])?;
                probe_sum(g, m, 1)
            },
            &[x],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn maxpool_ties_route_to_first_position() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap())
            .unwrap();
        let p = g.maxpool_time(x).unwrap();
        let l = g.reshape(p, &[1]).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn conv1d_lengths_identity_and_padding() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1200])).unwrap();
        let k = g.constant(Tensor::zeros(&[3])).unwrap();
        let b = g.constant(Tensor::zeros(&[1])).unwrap();
        let q = g.conv1d(x, k, b, 1).unwrap();
        assert_eq!(g.value(q).len(), 1198);

        let data = vec![0.5, -1.0, 2.0, 3.5];
        let x = g.constant(Tensor::vector(data.clone())).unwrap();
        let k1 = g.constant(Tensor::vector(vec![1.0])).unwrap();
        let q = g.conv1d(x, k1, b, 1).unwrap();
        assert_eq!(g.value(q).data(), &data[..]);

        let x10 = g
            .constant(Tensor::vector((0..10).map(f64::from).collect()))
            .unwrap();
        let ones = g.constant(Tensor::vector(vec![1.0; 3])).unwrap();
        let q = g.conv1d(x10, ones, b, 2).unwrap();
        // padded to 11: windows start 0,2,4,6,8; last is 8+9+0.
        assert_eq!(g.value(q).data(), &[3.0, 9.0, 15.0, 21.0, 17.0]);
        assert_eq!(conv1d_output_len(10, 3, 2), 5);
        assert_eq!(conv1d_padded_len(10, 3, 2), 11);

        // stride wider than the input: the second window lies in padding
        let x2 = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let half = g.constant(Tensor::vector(vec![0.5])).unwrap();
        let b1 = g.constant(Tensor::vector(vec![0.25])).unwrap();
        let q = g.conv1d(x2, half, b1, 4).unwrap();
        assert_eq!(g.value(q).data(), &[0.75, 0.25]);

        let long = g.constant(Tensor::zeros(&[5])).unwrap();
        assert!(matches!(
            g.conv1d(k, long, b, 1),
            Err(TensorError::Shape { .. })
        ));
    }

    #[test]
    fn conv1d_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for stride in [1, 2, 3] {
            let inputs = [
                random(&[10], &mut rng),
                random(&[3], &mut rng),
                random(&[1], &mut rng),
            ];
            let report = check_inputs(
                |g, v| {
                    let q = g.conv1d(v[0], v[1], v[2], stride)?;
                    probe_sum(g, q, 2)
                },
                &inputs,
                1e-5,
                1e-6,
            )
            .unwrap();
            assert!(report.passed, "stride {stride}: {report:?}");
        }
    }

    #[test]
    fn softmax_xent_examples() {
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::vector(vec![0.3; 7])).unwrap();
        let l = g.softmax_xent(uniform, 2).unwrap();
        for &p in g.probabilities(l).unwrap() {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
        assert!((g.value(l).item() - 7f64.ln()).abs() < 1e-12);

        let big = g.constant(Tensor::vector(vec![1000.0, 0.0])).unwrap();
        let l = g.softmax_xent(big, 0).unwrap();
        let p = g.probabilities(l).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300);
        assert!(g.value(l).item().abs() < 1e-12);

        assert!(matches!(
            g.softmax_xent(big, 2),
            Err(TensorError::Argument(_))
        ));
        let single = g.constant(Tensor::vector(vec![1.0])).unwrap();
        assert!(g.softmax_xent(single, 0).is_err());
    }

    #[test]
    fn softmax_xent_gradient_is_p_minus_onehot() {
        let logits = Tensor::vector(vec![0.2, -1.3, 0.7, 2.0, 0.0, -0.4, 1.1]);
        let mut g = Graph::new();
        let v = g.leaf(logits.clone()).unwrap();
        let l = g.softmax_xent(v, 3).unwrap();
        let grads = g.backward(l).unwrap();
        let p = softmax(logits.data());
        for (i, (&gv, &pv)) in grads.get(v).unwrap().data().iter().zip(&p).enumerate() {
            let expected = pv - if i == 3 { 1.0 } else { 0.0 };
            assert!((gv - expected).abs() < 1e-15);
        }
        let report = check_inputs(|g, v| g.softmax_xent(v[0], 3), &[logits], 1e-5, 1e-6).unwrap();
        assert!(report.passed, "{report:?}");
        let sum: f64 = grads.get(v).unwrap().data().iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn checker_flags_a_wrong_gradient() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let good = check_fn("x", f, &[2.0, 3.0], &[1.0, 5.0], 1e-5, 1e-4);
        assert!(good.passed, "{good:?}");
        let corrupted = check_fn("x", f, &[2.0, 3.3], &[1.0, 5.0], 1e-5, 1e-4);
        assert!(!corrupted.passed);
        assert_eq!(corrupted.worst.as_deref(), Some("x[1]"));
    }

    #[test]
    fn relu_kinks_are_avoided_by_nudging() {
        let mut x = Tensor::vector(vec![0.0, -0.5, 0.0, 1.2, 3e-6]);
        let build = |g: &mut Graph, v: &[Var]| {
            let r = g.relu(v[0])?;
            probe_sum(g, r, 3)
        };
        let raw = check_inputs(build, std::slice::from_ref(&x), 1e-5, 1e-4).unwrap();
        assert!(!raw.passed);
        nudge_away_from_zero(&mut x, 1e-3);
        let nudged = check_inputs(build, &[x], 1e-5, 1e-4).unwrap();
        assert!(nudged.passed, "{nudged:?}");
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = random(&[3, 4], &mut rng);
            let b = random(&[4, 2], &mut rng);
            let build = |which: u8| {
                let mut g = Graph::new();
                let (va, vb) = (g.leaf(a.clone()).unwrap(), g.leaf(b.clone()).unwrap());
                let p = g.matmul(va, vb).unwrap();
                let r = g.relu(p).unwrap();
                let l1 = probe_sum(&mut g, r, 1).unwrap();
                let flat = g.reshape(p, &[6, 1]).unwrap();
                let pooled = g.maxpool_time(flat).unwrap();
                let l2 = g.scale(pooled, 2.5).unwrap();
                let loss = match which {
                    1 => l1,
                    2 => l2,
                    _ => g.add(l1, l2).unwrap(),
                };
                let grads = g.backward(loss).unwrap();
                (
                    grads.get(va).unwrap().clone(),
                    grads.get(vb).unwrap().clone(),
                )
            };
            let (s1, s2, both) = (build(1), build(2), build(0));
            for (x, (y, z)) in both
                .0
                .data()
                .iter()
                .zip(s1.0.data().iter().zip(s2.0.data()))
            {
                assert!((x - (y + z)).abs() < 1e-12);
            }
            for (x, (y, z)) in both
                .1
                .data()
                .iter()
                .zip(s1.1.data().iter().zip(s2.1.data()))
            {
                assert!((x - (y + z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_values_trip_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1e200])).unwrap();
        assert_eq!(
            g.scale(x, 1e200).unwrap_err(),
            TensorError::NonFinite { op: "scale" }
        );
        assert!(g.constant(Tensor::vector(vec![f64::NAN])).is_err());
    }

    #[test]
    fn bounded_inputs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let x = g
            .constant(
                Tensor::new(
                    vec![6, 8],
                    (0..48).map(|_| rng.random_range(-1e3..1e3)).collect(),
                )
                .unwrap(),
            )
            .unwrap();
        let w = g.constant(random(&[3, 16], &mut rng)).unwrap();
        let b = g.constant(random(&[3], &mut rng)).unwrap();
        let c = g.conv_text(x, w, b).unwrap();
        let p = g.maxpool_time(c).unwrap();
        let l = g.softmax_xent(p, 0).unwrap();
        assert!(g.value(l).item().is_finite());
        assert!(g.backward(l).is_ok());
    }

    #[test]
    fn detached_values_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let d = g.detach(x).unwrap();
        let s = g.add(x, d).unwrap();
        let l = probe_sum(&mut g, s, 4).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(d).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn param_gradients_accumulate_and_sgd_steps() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0, -1.0])).unwrap();
        assert!(store.add("w", Tensor::scalar(0.0)).is_err());
        for _ in 0..2 {
            let mut g = Graph::new();
            let v = g.param(&store, w).unwrap();
            let l = g.softmax_xent(v, 0).unwrap();
            g.backward(l).unwrap().accumulate_into(&mut store);
        }
        let p0 = softmax(&[1.0, -1.0])[0];
        assert!((store.grad(w).data()[0] - 2.0 * (p0 - 1.0)).abs() < 1e-12);
        store.sgd_step(0.5);
        assert!((store.value(w).data()[0] - (1.0 - (p0 - 1.0))).abs() < 1e-12);
        store.zero_grad();
        assert!(store.grad(w).data().iter().all(|&v| v == 0.0));
    }
}
