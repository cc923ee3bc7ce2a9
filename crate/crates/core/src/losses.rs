//! Training objectives: prediction error, coefficient alignment between the
//! history and future views, and basis smoothness.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared error over every element.
pub fn mse_loss<'g>(pred: Var<'g>, target: Var<'g>) -> Result<Var<'g>> {
    let r = pred.sub(target)?;
    Ok(r.mul(r)?.mean())
}

/// Contrastive alignment of `c_x` against `c_y`, both `[.., N, H]`.
///
/// Every leading index `i` and basis `j` forms one anchor `c_x[i, j, :]`
/// whose positive is `c_y[i, j, :]` and whose candidates are `c_y[i, k, :]`
/// for all `k`. Scores are dot products over the head axis divided by
/// `temperature`; the loss is the mean negative log-softmax of the positive.
pub fn infonce_loss<'g>(c_x: Var<'g>, c_y: Var<'g>, temperature: f64) -> Result<Var<'g>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config(format!("temperature must be > 0, got {temperature}")));
    }
    let shape = c_x.shape();
    if shape.len() < 2 || shape != c_y.shape() {
        return Err(Error::shape("infonce", &shape, &c_y.shape()));
    }
    let (n, h) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let rows: usize = shape[..shape.len() - 2].iter().product();
    let a = c_x.reshape(&[rows, n, h])?;
    let b = c_y.reshape(&[rows, n, h])?;
    let log_p = a.bmm_nt(b)?.scale(1.0 / temperature).log_softmax(2)?;
    let diag = Tensor::new([rows, n, n], Tensor::eye(n).data().repeat(rows))?;
    let picked = log_p.mul(c_x.graph().constant(diag))?.sum();
    Ok(picked.scale(-1.0 / (rows * n) as f64))
}

/// Sum of squared second differences of `z` along time. `z` is `[N, L]` for
/// one window or `[B, N, L]` for a batch, in which case the per-window sums
/// are averaged over `B`.
pub fn smoothness_loss<'g>(z: Var<'g>) -> Result<Var<'g>> {
    let shape = z.shape();
    let windows = if shape.len() == 3 { shape[0] } else { 1 };
    let d = z.second_diff()?;
    Ok(d.mul(d)?.sum().scale(1.0 / windows as f64))
}

/// The banded `L × (L−2)` matrix whose column `t` holds `1, −2, 1` at rows
/// `t, t+1, t+2`, so `z·S` is the second difference of each row of `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessMatrix {
    matrix: Tensor,
}

impl SmoothnessMatrix {
    pub fn new(len: usize) -> Result<Self> {
        if len < 3 {
            return Err(Error::config(format!("smoothness matrix needs at least 3 steps, got {len}")));
        }
        let cols = len - 2;
        let mut m = Tensor::zeros([len, cols]);
        let data = m.data_mut();
        for t in 0..cols {
            data[t * cols + t] = 1.0;
            data[(t + 1) * cols + t] = -2.0;
            data[(t + 2) * cols + t] = 1.0;
        }
        Ok(Self { matrix: m })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// `‖z·S‖²` for `z: [N, L]`.
    pub fn penalty(&self, z: &Tensor) -> Result<f64> {
        let g = Graph::new();
        let zs = g.constant(z.clone()).matmul(g.constant(self.matrix.clone()))?;
        Ok(zs.mul(zs)?.sum().item())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pred: f64,
    pub align: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pred: 1.0,
            align: 1.0,
            smooth: 1.0,
        }
    }
}

/// Scalar values of each objective and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pred: f64,
    pub align: f64,
    pub smooth: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn weighted(pred: f64, align: f64, smooth: f64, w: &LossWeights) -> Self {
        Self {
            pred,
            align,
            smooth,
            total: w.pred * pred + w.align * align + w.smooth * smooth,
        }
    }
}

/// `w_pred·pred + w_align·align + w_smooth·smooth`. A non-finite component
/// is an error naming the term.
pub fn total_loss<'g>(pred: Var<'g>, align: Var<'g>, smooth: Var<'g>, weights: &LossWeights) -> Result<Var<'g>> {
    for (name, v) in [("L_pred", pred), ("L_align", align), ("L_smooth", smooth)] {
        if !v.value().is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
    }
    pred.scale(weights.pred)
        .add(align.scale(weights.align))?
        .add(smooth.scale(weights.smooth))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::grad_check;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn mse(a: &Tensor, b: &Tensor) -> f64 {
        let g = Graph::new();
        mse_loss(g.constant(a.clone()), g.constant(b.clone())).unwrap().item()
    }

    fn infonce(a: &Tensor, b: &Tensor, eps: f64) -> f64 {
        let g = Graph::new();
        infonce_loss(g.constant(a.clone()), g.constant(b.clone()), eps).unwrap().item()
    }

    fn smooth(z: &Tensor) -> f64 {
        let g = Graph::new();
        smoothness_loss(g.constant(z.clone())).unwrap().item()
    }

    /// Direct loop over anchors.
    fn infonce_oracle(a: &Tensor, b: &Tensor, eps: f64) -> f64 {
        let s = a.shape();
        let (c, n, h) = (s[0], s[1], s[2]);
        let mut total = 0.0;
        for i in 0..c {
            for j in 0..n {
                let score = |k: usize| (0..h).map(|q| a.at(&[i, j, q]) * b.at(&[i, k, q])).sum::<f64>() / eps;
                let denom: f64 = (0..n).map(|k| score(k).exp()).sum();
                total -= (score(j).exp() / denom).ln();
            }
        }
        total / (c * n) as f64
    }

    fn smooth_oracle(z: &Tensor) -> f64 {
        let (n, l) = (z.shape()[0], z.shape()[1]);
        let mut total = 0.0;
        for r in 0..n {
            for k in 0..l - 2 {
                let d = z.at(&[r, k]) - 2.0 * z.at(&[r, k + 1]) + z.at(&[r, k + 2]);
                total += d * d;
            }
        }
        total
    }

    #[test]
    fn mse_examples() {
        let y = t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 0.0, 7.0]);
        assert_eq!(mse(&y, &y), 0.0);
        let shifted = Tensor::new([2, 3], y.data().iter().map(|v| v + 1.0).collect()).unwrap();
        assert!((mse(&shifted, &y) - 1.0).abs() < 1e-15);
        assert_eq!(mse(&t(&[1, 2], &[0.0, 2.0]), &t(&[1, 2], &[1.0, 0.0])), 2.5);
        let g = Graph::new();
        assert!(mse_loss(g.constant(Tensor::zeros([2, 3])), g.constant(Tensor::zeros([3, 2]))).is_err());
    }

    #[test]
    fn infonce_uniform_logits_give_ln_n() {
        for n in [1, 2, 5, 10] {
            let a = Tensor::full([3, n, 4], 0.7);
            let b = Tensor::full([3, n, 4], -1.3);
            let want = (n as f64).ln();
            assert!((infonce(&a, &b, 1.0) - want).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn infonce_single_basis_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = rand_tensor(&[4, 1, 3], &mut rng);
        let b = rand_tensor(&[4, 1, 3], &mut rng);
        assert_eq!(infonce(&a, &b, 0.5), 0.0);
    }

    #[test]
    fn infonce_two_basis_hand_cases() {
        let softplus_neg1 = (1.0 + (-1f64).exp()).ln(); // -ln(e / (e + 1))
        assert!((softplus_neg1 - 0.31326).abs() < 2e-6);

        // H = 1, rows [1] and [0]: anchor 0 sees logits (1, 0), anchor 1 sees (0, 0).
        let a = t(&[1, 2, 1], &[1.0, 0.0]);
        let want = (softplus_neg1 + 2f64.ln()) / 2.0;
        assert!((infonce(&a, &a, 1.0) - want).abs() < 1e-12);

        // One-hot rows: both anchors see their positive at logit 1 and the negative at 0.
        let onehot = t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert!((infonce(&onehot, &onehot, 1.0) - softplus_neg1).abs() < 1e-12);
    }

    #[test]
    fn infonce_matches_loop_and_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = rand_tensor(&[3, 5, 4], &mut rng);
            let b = rand_tensor(&[3, 5, 4], &mut rng);
            let eps = rng.random_range(0.2..2.0);
            let got = infonce(&a, &b, eps);
            assert!((got - infonce_oracle(&a, &b, eps)).abs() < 1e-12);
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn infonce_rejects_bad_temperature() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros([1, 2, 1]));
        assert!(matches!(infonce_loss(a, a, 0.0), Err(Error::Config(_))));
        assert!(matches!(infonce_loss(a, a, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn infonce_batched_equals_flattened() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&[2, 3, 4, 2], &mut rng);
        let b = rand_tensor(&[2, 3, 4, 2], &mut rng);
        let flat_a = a.clone().reshape([6, 4, 2]).unwrap();
        let flat_b = b.clone().reshape([6, 4, 2]).unwrap();
        assert_eq!(infonce(&a, &b, 1.0), infonce(&flat_a, &flat_b, 1.0));
    }

    #[test]
    fn smoothness_examples() {
        let (n, l) = (3, 11);
        let square = Tensor::new([n, l], (0..n * l).map(|i| ((i % l) as f64).powi(2)).collect()).unwrap();
        let want = 4.0 * n as f64 * (l - 2) as f64;
        assert!((smooth(&square) - want).abs() < 1e-9);
        assert!((smooth_oracle(&square) - want).abs() < 1e-9);

        let affine = Tensor::new([n, l], (0..n * l).map(|i| 3.0 * (i / l) as f64 - 2.0 * (i % l) as f64).collect()).unwrap();
        assert_eq!(smooth(&affine), 0.0);
        assert_eq!(smooth(&Tensor::full([2, 5], 3.25)), 0.0);

        let g = Graph::new();
        assert!(matches!(smoothness_loss(g.constant(Tensor::zeros([2, 2]))), Err(Error::Config(_))));
    }

    #[test]
    fn smoothness_matrix_form_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SmoothnessMatrix::new(9).unwrap();
        for _ in 0..10 {
            let z = rand_tensor(&[4, 9], &mut rng);
            let direct = smooth(&z);
            assert!((s.penalty(&z).unwrap() - direct).abs() < 1e-12);
            assert!((smooth_oracle(&z) - direct).abs() < 1e-12);
        }
        // Constant and linear rows are annihilated.
        let m = s.matrix();
        for col in 0..7 {
            let ones: f64 = (0..9).map(|r| m.at(&[r, col])).sum();
            let ramp: f64 = (0..9).map(|r| r as f64 * m.at(&[r, col])).sum();
            assert_eq!((ones, ramp), (0.0, 0.0));
        }
        assert!(SmoothnessMatrix::new(2).is_err());
    }

    #[test]
    fn smoothness_batch_is_mean_of_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor(&[2, 6], &mut rng);
        let b = rand_tensor(&[2, 6], &mut rng);
        let batch = Tensor::new([2, 2, 6], [a.data(), b.data()].concat()).unwrap();
        assert!((smooth(&batch) - (smooth(&a) + smooth(&b)) / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn smoothness_ignores_affine_trends(
            z in prop::collection::vec(-10.0f64..10.0, 3 * 12),
            a in prop::collection::vec(-10.0f64..10.0, 3),
            b in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let base = Tensor::new([3, 12], z.clone()).unwrap();
            let moved: Vec<f64> = z.iter().enumerate().map(|(i, v)| v + a[i / 12] + b[i / 12] * (i % 12) as f64).collect();
            let moved = Tensor::new([3, 12], moved).unwrap();
            prop_assert!((smooth(&moved) - smooth(&base)).abs() < 1e-8);
        }
    }

    #[test]
    fn total_loss_weighting() {
        let g = Graph::new();
        let s = |v: f64| g.constant(Tensor::scalar(v));
        let w = LossWeights::default();
        assert_eq!(w, LossWeights { pred: 1.0, align: 1.0, smooth: 1.0 });
        assert_eq!(total_loss(s(1.0), s(2.0), s(3.0), &w).unwrap().item(), 6.0);
        let pred_only = LossWeights { pred: 1.0, align: 0.0, smooth: 0.0 };
        assert_eq!(total_loss(s(1.5), s(2.0), s(3.0), &pred_only).unwrap().item(), 1.5);
        let mixed = LossWeights { pred: 0.5, align: 0.25, smooth: 0.25 };
        assert_eq!(total_loss(s(2.0), s(4.0), s(4.0), &mixed).unwrap().item(), 3.0);
        assert_eq!(LossComponents::weighted(2.0, 4.0, 4.0, &mixed).total, 3.0);
    }

    #[test]
    fn total_loss_names_nan_term() {
        let g = Graph::new();
        let s = |v: f64| g.constant(Tensor::scalar(v));
        let err = total_loss(s(1.0), s(f64::NAN), s(0.0), &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("L_align"), "{err}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = rand_tensor(&[3, 4], &mut rng);
        let params = [rand_tensor(&[3, 4], &mut rng)];
        let r = grad_check(|g, p| mse_loss(p[0], g.constant(y.clone())), &params, 1e-5, 1e-5).unwrap();
        assert!(r.passed(), "{r:?}");

        let params = [rand_tensor(&[2, 4, 3], &mut rng), rand_tensor(&[2, 4, 3], &mut rng)];
        let r = grad_check(|_, p| infonce_loss(p[0], p[1], 0.7), &params, 1e-5, 1e-5).unwrap();
        assert!(r.passed(), "{r:?}");

        let params = [rand_tensor(&[2, 3, 7], &mut rng)];
        let r = grad_check(|_, p| smoothness_loss(p[0]), &params, 1e-5, 1e-5).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
