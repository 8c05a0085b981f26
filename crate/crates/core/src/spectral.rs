//! The tridiagonal coupling operator and the scalar kernels every matrix
//! function of the prior reduces to.
//!
//! The coupling matrix has `-2` on the diagonal and `1` on both
//! off-diagonals, scaled by `alpha`. It is diagonalised in closed form by the
//! discrete sine basis, so every matrix function `g(A)` becomes a per-mode
//! scalar `g(lambda_k)`. All arithmetic here is `f64`.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Below this magnitude of `lambda * t` the `(e^x - 1) / x` family switches
/// to its Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-8;

/// Eigendecomposition of `alpha * A` for the `n x n` tridiagonal stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    n: usize,
    alpha: f64,
    eigenvalues: Vec<f64>,
    /// Column `k` holds eigenvector `v_k`. The sine basis is symmetric and
    /// orthogonal, so this matrix is its own inverse.
    basis: Array2<f64>,
}

impl SpectralOperator {
    /// Builds the operator for sequence length `n` and coupling scale `alpha`.
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("sequence length must be >= 1".into()));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Range(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let h = PI / (n as f64 + 1.0);
        let eigenvalues =
            (1..=n).map(|k| if alpha == 0.0 { 0.0 } else { alpha * (-2.0 + 2.0 * (k as f64 * h).cos()) }).collect();
        let scale = (2.0 / (n as f64 + 1.0)).sqrt();
        let basis = Array2::from_shape_fn((n, n), |(m, k)| scale * (((m + 1) * (k + 1)) as f64 * h).sin());
        Ok(Self { n, alpha, eigenvalues, basis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Eigenvalues in strictly decreasing order (all zero when `alpha == 0`).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns.
    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Projects an `n x d` array onto eigenmode coordinates (`V^T x`).
    pub fn to_modes(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        debug_assert_eq!(x.nrows(), self.n);
        self.basis.t().dot(&x)
    }

    /// Maps eigenmode coordinates back to frames (`V y`).
    pub fn from_modes(&self, y: ArrayView2<'_, f64>) -> Array2<f64> {
        debug_assert_eq!(y.nrows(), self.n);
        self.basis.dot(&y)
    }

    /// Applies `V diag(g) V^T` column-wise.
    pub fn apply_diagonal(&self, g: &[f64], x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut modes = self.to_modes(x);
        for (mut row, &gk) in modes.rows_mut().into_iter().zip(g) {
            row *= gk;
        }
        self.from_modes(modes.view())
    }
}

/// Per-mode mean propagator `e^{lambda t}`.
pub fn kernel_mean(lambda: f64, t: f64) -> f64 {
    (lambda * t).exp()
}

/// Per-mode response to the constant drift term, `(e^{lambda t} - 1) / lambda`,
/// continuously extended by `t` at `lambda = 0`.
pub fn kernel_bresponse(lambda: f64, t: f64) -> f64 {
    let x = lambda * t;
    if x.abs() < SERIES_THRESHOLD {
        t * (1.0 + x / 2.0 + x * x / 6.0)
    } else {
        x.exp_m1() / lambda
    }
}

/// Per-mode marginal variance `eps (e^{2 lambda t} - 1) / (2 lambda)`,
/// equal to `eps t` at `lambda = 0`.
pub fn kernel_var(lambda: f64, t: f64, eps: f64) -> f64 {
    (eps * kernel_bresponse(2.0 * lambda, t)).max(0.0)
}

/// Per-mode cross-covariance between the states at `t <= t_prime`.
pub fn kernel_cross(lambda: f64, t: f64, t_prime: f64, eps: f64) -> Result<f64> {
    if t > t_prime {
        return Err(Error::ArgumentOrder { t, t_prime });
    }
    Ok(kernel_mean(lambda, t_prime - t) * kernel_var(lambda, t, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense::{dense_eigensolve, tridiagonal_matrix};
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_eigenvalues() {
        let op = SpectralOperator::new(2, 1.0).unwrap();
        let ev = op.eigenvalues();
        assert!((ev[0] + 1.0).abs() < 1e-14);
        assert!((ev[1] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn three_by_three_eigenvalues() {
        let op = SpectralOperator::new(3, 1.0).unwrap();
        let s = 2f64.sqrt();
        let want = [-2.0 + s, -2.0, -2.0 - s];
        for (a, b) in op.eigenvalues().iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_length_is_rejected() {
        assert!(matches!(SpectralOperator::new(0, 1.0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn alpha_zero_is_exactly_zero() {
        let op = SpectralOperator::new(5, 0.0).unwrap();
        assert!(op.eigenvalues().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn eigenvalues_negative_and_decreasing() {
        for n in 1..=20 {
            let op = SpectralOperator::new(n, 0.7).unwrap();
            let ev = op.eigenvalues();
            assert!(ev.iter().all(|&l| l < 0.0));
            assert!(ev.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn matches_jacobi_eigensolver_n8() {
        let op = SpectralOperator::new(8, 1.0).unwrap();
        let (vals, _) = dense_eigensolve(&tridiagonal_matrix(8, 1.0)).unwrap();
        for (a, b) in op.eigenvalues().iter().zip(vals.iter()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn eigen_residual_small_up_to_64() {
        for n in [1, 2, 7, 16, 33, 64] {
            let op = SpectralOperator::new(n, 1.3).unwrap();
            let a = tridiagonal_matrix(n, 1.3);
            let av = a.dot(op.basis());
            let mut vl = op.basis().clone();
            for (k, mut col) in vl.columns_mut().into_iter().enumerate() {
                col *= op.eigenvalues()[k];
            }
            let err = (&av - &vl).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 1e-10, "n={n} residual {err}");
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_mean(-2.0, 0.0), 1.0);
        assert_eq!(kernel_mean(0.0, 0.7), 1.0);
        assert!((kernel_mean(-2.0, 1.0) - 0.135_335_283_236_612_7).abs() < 1e-15);

        assert_eq!(kernel_bresponse(0.0, 0.5), 0.5);
        assert_eq!(kernel_bresponse(-2.0, 0.0), 0.0);
        assert!((kernel_bresponse(-2.0, 1.0) - 0.432_332_358_381_693_65).abs() < 1e-15);

        assert_eq!(kernel_var(-2.0, 0.0, 0.3), 0.0);
        assert!((kernel_var(0.0, 0.3, 0.1) - 0.03).abs() < 1e-16);
        assert!((kernel_var(-2.0, 1.0, 0.1) - 0.024_542_109_027_781_647).abs() < 1e-16);

        let c = kernel_cross(-1.0, 0.4, 0.9, 1.0).unwrap();
        assert!((c - 0.166_999_433_339_310_42).abs() < 1e-15);
    }

    #[test]
    fn cross_order_error() {
        assert!(matches!(kernel_cross(-1.0, 0.5, 0.4, 1.0), Err(Error::ArgumentOrder { .. })));
    }

    #[test]
    fn cross_brownian_limit() {
        let c = kernel_cross(0.0, 0.3, 0.8, 0.5).unwrap();
        assert!((c - 0.15).abs() < 1e-16);
    }

    #[test]
    fn series_branch_is_continuous() {
        for t in [1e-3, 0.1, 0.5, 1.0] {
            for l in [1e-8, -1e-8] {
                let h0 = kernel_bresponse(0.0, t);
                let h1 = kernel_bresponse(l, t);
                assert!(((h1 - h0) / h0).abs() <= (l * t).abs() + 1e-15);
                let s0 = kernel_var(0.0, t, 0.1);
                let s1 = kernel_var(l, t, 0.1);
                assert!(((s1 - s0) / s0).abs() <= 2.0 * (l * t).abs() + 1e-15);
            }
            // both sides of the switch itself
            let below = kernel_bresponse(0.99e-8 / t, t);
            let above = kernel_bresponse(1.01e-8 / t, t);
            assert!(((above - below) / below).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn transform_round_trip(n in 1usize..40, d in 1usize..4, seed in any::<u64>()) {
            let op = SpectralOperator::new(n, 1.0).unwrap();
            let mut s = seed;
            let x = Array2::from_shape_fn((n, d), |_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            });
            let back = op.from_modes(op.to_modes(x.view()).view());
            let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= 1e-12);
        }

        #[test]
        fn variance_monotone_and_bounded(lambda in -20.0f64..0.0, t in 0.0f64..2.0, dt in 0.0f64..1.0, eps in 1e-3f64..10.0) {
            let s = kernel_var(lambda, t, eps);
            let s2 = kernel_var(lambda, t + dt, eps);
            prop_assert!(s >= 0.0);
            prop_assert!(s2 >= s);
            if lambda < 0.0 {
                prop_assert!(s <= eps / (2.0 * lambda.abs()) * (1.0 + 1e-12));
            }
        }

        #[test]
        fn cross_equal_times_is_variance(lambda in -10.0f64..0.0, t in 0.0f64..2.0, eps in 1e-3f64..10.0) {
            prop_assert_eq!(kernel_cross(lambda, t, t, eps).unwrap(), kernel_var(lambda, t, eps));
        }

        #[test]
        fn cross_bounded_by_geometric_mean(lambda in -10.0f64..0.0, t in 0.0f64..1.0, dt in 0.0f64..1.0, eps in 1e-3f64..10.0) {
            let c = kernel_cross(lambda, t, t + dt, eps).unwrap();
            let bound = (kernel_var(lambda, t, eps) * kernel_var(lambda, t + dt, eps)).sqrt();
            prop_assert!(c <= bound + 1e-12);
        }
    }
}
