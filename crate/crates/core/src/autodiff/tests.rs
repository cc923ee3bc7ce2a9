use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_examples() {
    let g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    assert_eq!(a.matmul(b).unwrap().value().data(), &[19.0, 22.0, 43.0, 50.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = rand_tensor(&[3, 4], &mut rng);
    let xv = g.constant(x.clone());
    assert_eq!(xv.matmul(g.constant(Tensor::eye(4))).unwrap().value(), x);
    let zero = xv.matmul(g.constant(Tensor::zeros([4, 5]))).unwrap().value();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::zeros([2, 3]));
    let err = a.matmul(b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
    assert!(matches!(a.matmul(b), Err(Error::Shape { .. })));
}

#[test]
fn softmax_examples() {
    let g = Graph::new();
    let c = g.constant(Tensor::full([1, 4], 2.5)).softmax(1).unwrap().value();
    assert!(c.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let s = g.constant(t(&[2], &[0.0, 3f64.ln()])).softmax(0).unwrap().value();
    assert!((s.data()[0] - 0.25).abs() < 1e-15);
    assert!((s.data()[1] - 0.75).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&[3, 5], &mut rng);
    let shifted = Tensor::new([3, 5], x.data().iter().map(|v| v + 123.0).collect()).unwrap();
    let a = g.constant(x).softmax(1).unwrap().value();
    let b = g.constant(shifted).softmax(1).unwrap().value();
    assert!(a.max_abs_diff(&b) < 1e-12);
    for row in a.data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn softmax_middle_axis_sums_to_one() {
    let g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = g.constant(rand_tensor(&[2, 4, 3], &mut rng)).softmax(1).unwrap().value();
    for b in 0..2 {
        for k in 0..3 {
            let total: f64 = (0..4).map(|j| s.at(&[b, j, k])).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
    assert!(g.constant(Tensor::zeros([2, 2])).softmax(2).is_err());
}

#[test]
fn layernorm_examples() {
    let g = Graph::new();
    let ones = g.constant(Tensor::full([3], 1.0));
    let zeros = g.constant(Tensor::zeros([3]));
    let c = g.constant(Tensor::full([1, 3], 4.0)).layernorm(ones, zeros, 1e-5).unwrap().value();
    assert!(c.data().iter().all(|&v| v == 0.0));

    let r = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0])).layernorm(ones, zeros, 0.0).unwrap().value();
    let expect = 1.5f64.sqrt(); // (3-2)/sqrt(2/3)
    assert!((r.data()[0] + expect).abs() < 1e-12);
    assert!(r.data()[1].abs() < 1e-12);
    assert!((r.data()[2] - expect).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = g.constant(rand_tensor(&[4, 3], &mut rng)).layernorm(ones, zeros, 1e-5).unwrap().value();
    for row in y.data().chunks(3) {
        assert!(row.iter().sum::<f64>().abs() / 3.0 < 1e-10);
    }
}

#[test]
fn backward_of_sum_is_ones() {
    let g = Graph::new();
    let x = g.param(Tensor::full([2, 3], 0.7));
    g.backward(x.sum()).unwrap();
    assert!(g.grad(x).data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let g = Graph::new();
    let x = g.param(Tensor::zeros([2]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_accumulates_until_zeroed() {
    let g = Graph::new();
    let x = g.param(Tensor::full([2], 1.0));
    let loss = x.scale(3.0).sum();
    g.backward(loss).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).data(), &[6.0, 6.0]);
    g.zero_grad();
    assert_eq!(g.grad(x).data(), &[0.0, 0.0]);
}

#[test]
fn detached_and_unused_leaves_get_zero_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::full([3], 2.0));
    let unused = g.param(Tensor::full([2], 5.0));
    let loss = x.detach().mul(x).unwrap().sum();
    g.backward(loss).unwrap();
    // d/dx sum(stop(x) * x) = stop(x)
    assert_eq!(g.grad(x).data(), &[2.0, 2.0, 2.0]);
    assert_eq!(g.grad(unused).data(), &[0.0, 0.0]);

    let h = Graph::new();
    let y = h.param(Tensor::full([3], 2.0));
    h.backward(y.detach().sum()).unwrap();
    assert_eq!(h.grad(y).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn linear_regression_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = rand_tensor(&[3, 2], &mut rng);
    let x = rand_tensor(&[5, 3], &mut rng);
    let y = rand_tensor(&[5, 2], &mut rng);
    let report = grad_check(
        |g, p| {
            let pred = g.constant(x.clone()).matmul(p[0])?;
            let r = pred.sub(g.constant(y.clone()))?;
            Ok(r.mul(r)?.mean())
        },
        &[w],
        1e-4,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn grad_check_trivial_functions() {
    let sq = grad_check(|_, p| Ok(p[0].mul(p[0])?.sum()), &[Tensor::scalar(3.0)], 1e-3, 1e-6).unwrap();
    assert!(sq.passed());
    assert!(sq.max_rel_err() < 1e-6);

    let constant = grad_check(
        |g, p| Ok(p[0].scale(0.0).sum().add(g.constant(Tensor::scalar(4.0)))?),
        &[Tensor::full([3], 1.5)],
        1e-3,
        1e-6,
    )
    .unwrap();
    assert!(constant.passed());
    assert_eq!(constant.params[0].max_abs_err, 0.0);
}

#[test]
fn grad_check_reports_failures_instead_of_erroring() {
    // relu at its kink: the tape says 0, central differences say 0.5.
    let report = grad_check(
        |_, p| Ok(p[0].relu().sum()),
        &[Tensor::zeros([1])],
        1e-3,
        1e-6,
    )
    .unwrap();
    assert!(!report.passed());
    assert_eq!(report.params[0].failures.len(), 1);
}

/// Every differentiable op against central differences on random inputs.
mod op_gradients {
    use super::*;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-5;

    fn check(shapes: &[&[usize]], seed: u64, f: impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(s, &mut rng)).collect();
        let report = grad_check(f, &params, H, TOL).unwrap();
        assert!(report.passed(), "max rel err {:e}: {report:?}", report.max_rel_err());
    }

    /// Weighted sum so every output element carries a distinct cotangent.
    fn reduce<'g>(v: Var<'g>) -> Result<Var<'g>> {
        let shape = v.shape();
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect())?;
        Ok(v.mul(v.graph().constant(w))?.sum())
    }

    #[test]
    fn matmul() {
        check(&[&[2, 3, 4], &[4, 5]], 10, |_, p| reduce(p[0].matmul(p[1])?));
    }

    #[test]
    fn bmm() {
        check(&[&[2, 3, 4], &[2, 4, 5]], 11, |_, p| reduce(p[0].bmm(p[1])?));
        check(&[&[2, 3, 4], &[2, 5, 4]], 12, |_, p| reduce(p[0].bmm_nt(p[1])?));
    }

    #[test]
    fn elementwise() {
        check(&[&[3, 4], &[4]], 13, |_, p| reduce(p[0].add_bias(p[1])?));
        check(&[&[3, 4], &[3, 4]], 14, |_, p| reduce(p[0].add(p[1])?));
        check(&[&[3, 4], &[3, 4]], 15, |_, p| reduce(p[0].sub(p[1])?));
        check(&[&[3, 4], &[3, 4]], 16, |_, p| reduce(p[0].mul(p[1])?));
        check(&[&[3, 4]], 17, |_, p| reduce(p[0].scale(-2.5)));
    }

    #[test]
    fn activations() {
        check(&[&[4, 5]], 18, |_, p| reduce(p[0].relu()));
        check(&[&[4, 5]], 19, |_, p| reduce(p[0].activate(Activation::Gelu)));
    }

    #[test]
    fn softmax_family() {
        check(&[&[2, 3, 4]], 20, |_, p| reduce(p[0].softmax(2)?));
        check(&[&[2, 3, 4]], 21, |_, p| reduce(p[0].softmax(1)?));
        check(&[&[2, 3, 4]], 22, |_, p| reduce(p[0].log_softmax(2)?));
        check(&[&[2, 3, 4]], 23, |_, p| reduce(p[0].log_softmax(0)?));
    }

    #[test]
    fn layernorm() {
        check(&[&[3, 5], &[5], &[5]], 24, |_, p| reduce(p[0].layernorm(p[1], p[2], 1e-5)?));
    }

    #[test]
    fn structural() {
        check(&[&[2, 3, 4]], 25, |_, p| reduce(p[0].reshape(&[6, 4])?));
        check(&[&[2, 3, 4]], 26, |_, p| reduce(p[0].permute(&[2, 0, 1])?));
        check(&[&[2, 3, 6]], 27, |_, p| reduce(p[0].slice_last(2, 3)?));
        check(&[&[2, 3], &[2, 4]], 28, |_, p| reduce(p[0].concat_last(p[1])?));
        check(&[&[2, 7]], 29, |_, p| reduce(p[0].second_diff()?));
        check(&[&[2, 3]], 30, |_, p| Ok(p[0].mean()));
    }
}

#[test]
fn second_diff_rejects_short_rows() {
    let g = Graph::new();
    assert!(matches!(g.constant(Tensor::zeros([2, 2])).second_diff(), Err(Error::Config(_))));
}

#[test]
fn slice_and_concat_roundtrip() {
    let g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = rand_tensor(&[3, 7], &mut rng);
    let v = g.constant(x.clone());
    let joined = v.slice_last(0, 4).unwrap().concat_last(v.slice_last(4, 3).unwrap()).unwrap();
    assert_eq!(joined.value(), x);
}
