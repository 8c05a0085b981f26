//! Closed-form bridge posterior `q(X_t | X_0, X_t')`, bridge sampling, and
//! the drift recovered from a clean-data prediction.
//!
//! The joint law of `(X_t, X_t')` given `X_0` has all three covariance blocks
//! diagonal in the eigenbasis of `A`, so Gaussian conditioning reduces to a
//! scalar gain per mode: `g = c(t, t') / s(t')` with `c` the
//! cross-covariance and `s` the marginal variance.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::prior::{score, PriorSpec};
use crate::spectral::SpectralOperator;

/// Round-off allowance below which a negative posterior variance is treated
/// as zero.
pub const VARIANCE_CLAMP_TOLERANCE: f64 = 1e-14;

/// Gaussian law of the bridge state, covariance in the eigenbasis of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeStats {
    pub mean: Array2<f64>,
    pub mode_var: Vec<f64>,
}

impl BridgeStats {
    /// Draws `mean + V diag(sqrt(mode_var)) xi` with `xi` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, op: &SpectralOperator, rng: &mut R) -> Array2<f64> {
        sample_bridge(self, op, rng)
    }
}

/// Posterior of `X_t` given `X_0 = x0` and `X_t' = x_tp`.
pub fn posterior(
    spec: &PriorSpec,
    x0: ArrayView2<'_, f64>,
    x_tp: ArrayView2<'_, f64>,
    t: f64,
    t_prime: f64,
) -> Result<BridgeStats> {
    posterior_scaled(spec, x0, x_tp, t, t_prime, 1.0)
}

/// [`posterior`] with the cross-covariance multiplied by `cross_scale`.
/// Only useful as a negative control for the verification suite.
#[doc(hidden)]
pub fn posterior_scaled(
    spec: &PriorSpec,
    x0: ArrayView2<'_, f64>,
    x_tp: ArrayView2<'_, f64>,
    t: f64,
    t_prime: f64,
    cross_scale: f64,
) -> Result<BridgeStats> {
    spec.check_shape(x0, "x0")?;
    spec.check_shape(x_tp, "x_t'")?;
    spec.check_time(t_prime)?;
    if t_prime == 0.0 {
        return Err(Error::SingularConditioning);
    }
    spec.check_time(t)?;
    if t > t_prime {
        return Err(Error::Range(format!("bridge needs t <= t', got t = {t}, t' = {t_prime}")));
    }
    let n = spec.n();
    if t == t_prime {
        return Ok(BridgeStats { mean: x_tp.to_owned(), mode_var: vec![0.0; n] });
    }
    if t == 0.0 {
        return Ok(BridgeStats { mean: x0.to_owned(), mode_var: vec![0.0; n] });
    }

    let op = spec.op();
    let x0_modes = op.to_modes(x0);
    let mu_t = spec.mean_modes(x0_modes.view(), t);
    let mu_tp = spec.mean_modes(x0_modes.view(), t_prime);
    let var_t = spec.mode_variances(t);
    let var_tp = spec.mode_variances(t_prime);
    let cross: Vec<f64> = spec.cross_modes(t, t_prime).into_iter().map(|c| c * cross_scale).collect();

    let mut mean_modes = op.to_modes(x_tp);
    let mut mode_var = Vec::with_capacity(n);
    for k in 0..n {
        if var_tp[k] <= 0.0 {
            return Err(Error::SingularCovariance(format!("mode {k} has zero variance at t' = {t_prime}")));
        }
        let gain = cross[k] / var_tp[k];
        Zip::from(mean_modes.row_mut(k))
            .and(mu_t.row(k))
            .and(mu_tp.row(k))
            .for_each(|y, &mt, &mtp| *y = mt + gain * (*y - mtp));
        let v = var_t[k] - gain * cross[k];
        mode_var.push(if v < 0.0 && v > -VARIANCE_CLAMP_TOLERANCE { 0.0 } else { v.max(0.0) });
    }
    Ok(BridgeStats { mean: op.from_modes(mean_modes.view()), mode_var })
}

/// Draws one bridge state.
pub fn sample_bridge<R: Rng + ?Sized>(stats: &BridgeStats, op: &SpectralOperator, rng: &mut R) -> Array2<f64> {
    if stats.mode_var.iter().all(|&v| v == 0.0) {
        return stats.mean.clone();
    }
    let (n, d) = stats.mean.dim();
    let mut noise = Array2::<f64>::zeros((n, d));
    for (k, mut row) in noise.rows_mut().into_iter().enumerate() {
        let sd = stats.mode_var[k].sqrt();
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = sd * z;
        }
    }
    &stats.mean + &op.from_modes(noise.view())
}

/// Drift `-Sigma_t^{-1} (x_t - mu_t(x0_hat))` implied by a clean-data
/// prediction.
pub fn drift(spec: &PriorSpec, xt: ArrayView2<'_, f64>, t: f64, x0_hat: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    score(spec, x0_hat, xt, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense::{dense_matrix_function, joint_gaussian, tridiagonal_matrix};
    use crate::prior::{marginal, CorrelationSchedule, ScheduleKind};
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    fn spec_with(rng: &mut ChaCha8Rng, n: usize, d: usize, alpha: f64, eps: f64) -> PriorSpec {
        let op = Arc::new(SpectralOperator::new(n, alpha).unwrap());
        PriorSpec::new(op, eps, random(rng, n, d)).unwrap()
    }

    fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn conditioning_on_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sp = spec_with(&mut rng, 4, 2, 1.0, 0.1);
        let x0 = random(&mut rng, 4, 2);
        let xtp = random(&mut rng, 4, 2);
        let p = posterior(&sp, x0.view(), xtp.view(), 0.6, 0.6).unwrap();
        assert_eq!(p.mean, xtp);
        assert!(p.mode_var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sp = spec_with(&mut rng, 3, 1, 1.0, 0.1);
        let x = random(&mut rng, 3, 1);
        assert!(matches!(posterior(&sp, x.view(), x.view(), 0.0, 0.0), Err(Error::SingularConditioning)));
        assert!(matches!(posterior(&sp, x.view(), x.view(), 0.7, 0.5), Err(Error::Range(_))));
        assert!(matches!(drift(&sp, x.view(), 0.0, x.view()), Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn brownian_bridge_closed_form() {
        let op = Arc::new(SpectralOperator::new(4, 0.0).unwrap());
        let sp = PriorSpec::new(op, 0.2, Array2::zeros((4, 2))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = random(&mut rng, 4, 2);
        let xtp = random(&mut rng, 4, 2);
        let (t, tp) = (0.3, 0.9);
        let p = posterior(&sp, x0.view(), xtp.view(), t, tp).unwrap();
        let want = &x0 + &((&xtp - &x0) * (t / tp));
        assert!(max_abs(&p.mean, &want) < 1e-14);
        for v in p.mode_var {
            assert!((v - 0.2 * t * (tp - t) / tp).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_dense_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sp = spec_with(&mut rng, 5, 2, 1.0, 0.1);
        let x0 = random(&mut rng, 5, 2);
        let xtp = random(&mut rng, 5, 2);
        let (t, tp) = (0.3, 0.8);
        let p = posterior(&sp, x0.view(), xtp.view(), t, tp).unwrap();
        let joint = joint_gaussian(&sp, x0.view(), t, tp).unwrap();
        let cond = joint.condition(5..10, xtp.view()).unwrap().block(0..5);
        assert!(max_abs(&p.mean, &cond.mean) <= 1e-8);
        let v = sp.op().basis();
        let mut dense = v.clone();
        for (k, mut col) in dense.columns_mut().into_iter().enumerate() {
            col *= p.mode_var[k];
        }
        let dense = dense.dot(&v.t());
        assert!(max_abs(&dense, &cond.cov) <= 1e-8);
    }

    #[test]
    fn posterior_variance_below_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sp = spec_with(&mut rng, 6, 1, 1.5, 0.4);
        let x = random(&mut rng, 6, 1);
        for i in 1..20 {
            for j in i..=20 {
                let (t, tp) = (i as f64 / 20.0, j as f64 / 20.0);
                let p = posterior(&sp, x.view(), x.view(), t, tp).unwrap();
                let m = marginal(&sp, x.view(), t).unwrap();
                for (a, b) in p.mode_var.iter().zip(&m.mode_var) {
                    assert!(a <= b);
                }
            }
        }
    }

    #[test]
    fn nested_conditioning_is_markov() {
        // Conditioning on X_u (drawn from the bridge at u) and then bridging
        // from X_u down to t must reproduce the direct bridge in law.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sp = spec_with(&mut rng, 5, 1, 1.0, 0.3);
        let x0 = random(&mut rng, 5, 1);
        let xtp = random(&mut rng, 5, 1);
        let (t, u, tp) = (0.2, 0.5, 0.9);
        let direct = posterior(&sp, x0.view(), xtp.view(), t, tp).unwrap();
        let at_u = posterior(&sp, x0.view(), xtp.view(), u, tp).unwrap();
        let inner_mean = posterior(&sp, x0.view(), at_u.mean.view(), t, u).unwrap();
        // law of total expectation / variance through the linear gain
        assert!(max_abs(&inner_mean.mean, &direct.mean) <= 1e-9);
        let lambdas = sp.op().eigenvalues();
        for (k, lambda) in lambdas.iter().enumerate() {
            let c_tu = sp.cross_modes(t, u)[k];
            let s_u = sp.mode_variances(u)[k];
            let g = c_tu / s_u;
            let total = inner_mean.mode_var[k] + g * g * at_u.mode_var[k];
            assert!((total - direct.mode_var[k]).abs() <= 1e-9, "mode {k} lambda {lambda}");
        }
    }

    #[test]
    fn small_alpha_is_brownian() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let op = Arc::new(SpectralOperator::new(5, 1e-8).unwrap());
        let sp = PriorSpec::new(op, 0.1, Array2::zeros((5, 2))).unwrap();
        let x0 = random(&mut rng, 5, 2);
        let xtp = random(&mut rng, 5, 2);
        let (t, tp) = (0.35, 0.75);
        let p = posterior(&sp, x0.view(), xtp.view(), t, tp).unwrap();
        let want = &x0 + &((&xtp - &x0) * (t / tp));
        assert!(max_abs(&p.mean, &want) <= 1e-5);
        for v in p.mode_var {
            assert!((v - 0.1 * t * (tp - t) / tp).abs() <= 1e-5);
        }
    }

    #[test]
    fn zero_variance_sample_is_mean() {
        let op = SpectralOperator::new(3, 1.0).unwrap();
        let stats = BridgeStats { mean: array![[1.0], [2.0], [3.0]], mode_var: vec![0.0; 3] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(stats.sample(&op, &mut rng), stats.mean);
    }

    #[test]
    fn sampling_moments() {
        let op = SpectralOperator::new(4, 1.0).unwrap();
        let stats = BridgeStats {
            mean: array![[0.5, -1.0], [0.0, 0.2], [1.5, 0.0], [-0.3, 0.7]],
            mode_var: vec![0.02, 0.05, 0.1, 0.3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut sum = Array2::<f64>::zeros((4, 2));
        let mut sq_modes = Array2::<f64>::zeros((4, 2));
        let mean_modes = op.to_modes(stats.mean.view());
        for _ in 0..draws {
            let x = stats.sample(&op, &mut rng);
            let m = op.to_modes(x.view()) - &mean_modes;
            sum += &x;
            sq_modes += &m.mapv(|v| v * v);
        }
        let emp = sum / draws as f64;
        let basis = op.basis();
        for i in 0..4 {
            // per-entry variance in frame coordinates
            let var_i: f64 = (0..4).map(|k| basis[[i, k]].powi(2) * stats.mode_var[k]).sum();
            let se = (var_i / draws as f64).sqrt();
            for j in 0..2 {
                assert!((emp[[i, j]] - stats.mean[[i, j]]).abs() <= 4.0 * se);
            }
        }
        for k in 0..4 {
            for j in 0..2 {
                let v = sq_modes[[k, j]] / draws as f64;
                assert!((v / stats.mode_var[k] - 1.0).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn tower_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sp = spec_with(&mut rng, 3, 1, 1.0, 0.2);
        let x0 = random(&mut rng, 3, 1);
        let (t, horizon) = (0.4, 1.0);
        let at_t = marginal(&sp, x0.view(), t).unwrap();
        let at_end = marginal(&sp, x0.view(), horizon).unwrap();
        let draws = 100_000;
        let mut first = Array2::<f64>::zeros((3, 1));
        let mut second = Array2::<f64>::zeros((3, 3));
        let stats_end = BridgeStats { mean: at_end.mean.clone(), mode_var: at_end.mode_var.clone() };
        for _ in 0..draws {
            let xe = stats_end.sample(sp.op(), &mut rng);
            let xt = posterior(&sp, x0.view(), xe.view(), t, horizon).unwrap().sample(sp.op(), &mut rng);
            let c = &xt - &at_t.mean;
            first += &xt;
            second += &c.dot(&c.t());
        }
        let emp_mean = first / draws as f64;
        let emp_cov = second / draws as f64;
        let want_cov =
            dense_matrix_function(&tridiagonal_matrix(3, 1.0), |l| 0.2 * ((2.0 * l * t).exp() - 1.0) / (2.0 * l))
                .unwrap();
        for i in 0..3 {
            let se = (want_cov[[i, i]] / draws as f64).sqrt();
            assert!((emp_mean[[i, 0]] - at_t.mean[[i, 0]]).abs() <= 5.0 * se);
            let var_se = want_cov[[i, i]] * (2.0 / draws as f64).sqrt();
            assert!((emp_cov[[i, i]] - want_cov[[i, i]]).abs() <= 5.0 * var_se);
        }
    }

    #[test]
    fn drift_with_true_start_is_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sp = spec_with(&mut rng, 4, 2, 1.0, 0.1);
        let x0 = random(&mut rng, 4, 2);
        let xt = random(&mut rng, 4, 2);
        let a = drift(&sp, xt.view(), 0.5, x0.view()).unwrap();
        let b = score(&sp, x0.view(), xt.view(), 0.5).unwrap();
        assert!(max_abs(&a, &b) <= 1e-12);
    }

    #[test]
    fn drift_zero_when_prediction_explains_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let sp = spec_with(&mut rng, 4, 1, 1.0, 0.1);
        let x0_hat = random(&mut rng, 4, 1);
        let xt = marginal(&sp, x0_hat.view(), 0.3).unwrap().mean;
        let v = drift(&sp, xt.view(), 0.3, x0_hat.view()).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn drift_difference_against_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let sp = spec_with(&mut rng, 4, 1, 1.0, 0.1);
        let x0 = random(&mut rng, 4, 1);
        let x0_hat = random(&mut rng, 4, 1);
        let xt = random(&mut rng, 4, 1);
        let t = 0.4;
        let diff = drift(&sp, xt.view(), t, x0_hat.view()).unwrap() - score(&sp, x0.view(), xt.view(), t).unwrap();
        let a = tridiagonal_matrix(4, 1.0);
        let sigma_inv_exp = dense_matrix_function(&a, |l| {
            let s = 0.1 * ((2.0 * l * t).exp() - 1.0) / (2.0 * l);
            (l * t).exp() / s
        })
        .unwrap();
        let want = -sigma_inv_exp.dot(&(&x0 - &x0_hat));
        assert!(max_abs(&diff, &want) <= 1e-10);
    }

    #[test]
    fn dynamic_schedule_bridge_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let sp = spec_with(&mut rng, 4, 1, 1.0, 0.5)
            .with_schedule(CorrelationSchedule::new(ScheduleKind::Quadratic, 64).unwrap());
        let x0 = random(&mut rng, 4, 1);
        let xtp = random(&mut rng, 4, 1);
        let p = posterior(&sp, x0.view(), xtp.view(), 0.25, 0.7).unwrap();
        let cond = joint_gaussian(&sp, x0.view(), 0.25, 0.7).unwrap().condition(4..8, xtp.view()).unwrap().block(0..4);
        assert!(max_abs(&p.mean, &cond.mean) <= 1e-7);
    }
}
