//! Dense linear algebra used as an independent reference for the closed forms.
//!
//! Matrix functions here go through an explicit Jacobi eigendecomposition of
//! the stencil matrix, and every time integral is done by composite Simpson
//! quadrature, so no code is shared with `spectral`, `prior` or `bridge`.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::prior::PriorSpec;

const JACOBI_TOL: f64 = 1e-14;
const SYMMETRY_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;
const SIMPSON_INTERVALS: usize = 2000;
const SIMPSON_INNER: usize = 200;

/// The explicit `alpha * A` stencil: `-2` on the diagonal, `1` beside it.
pub fn tridiagonal_matrix(n: usize, alpha: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            -2.0 * alpha
        } else if i.abs_diff(j) == 1 {
            alpha
        } else {
            0.0
        }
    })
}

/// Cyclic Jacobi eigensolver. Eigenvalues come back in descending order with
/// matching eigenvector columns.
pub fn dense_eigensolve(matrix: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Contract("eigensolver needs a square matrix".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if (matrix[[i, j]] - matrix[[j, i]]).abs() > SYMMETRY_TOL {
                return Err(Error::Contract(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[k, q]] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sn * aqk;
                    a[[q, k]] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok((values, vectors))
}

/// `V diag(g(mu)) V^T` for a symmetric matrix with eigenpairs `(mu, V)`.
pub fn dense_matrix_function(matrix: &Array2<f64>, g: impl Fn(f64) -> f64) -> Result<Array2<f64>> {
    let (vals, vecs) = dense_eigensolve(matrix)?;
    let mut scaled = vecs.clone();
    for (k, mut col) in scaled.columns_mut().into_iter().enumerate() {
        col *= g(vals[k]);
    }
    Ok(scaled.dot(&vecs.t()))
}

fn simpson(a: f64, b: f64, intervals: usize, f: impl Fn(f64) -> f64) -> f64 {
    let m = intervals + intervals % 2;
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Gaussian over `dim x D` arrays: independent columns sharing one
/// covariance, each column with its own mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGaussian {
    pub mean: Array2<f64>,
    pub cov: Array2<f64>,
}

impl DenseGaussian {
    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// Marginal law of a contiguous block of rows.
    pub fn block(&self, rows: Range<usize>) -> DenseGaussian {
        DenseGaussian {
            mean: self.mean.slice(s![rows.clone(), ..]).to_owned(),
            cov: self.cov.slice(s![rows.clone(), rows]).to_owned(),
        }
    }

    /// Conditions on rows `observed` taking `value`. The result keeps the full
    /// dimension; observed rows become a point mass at `value`.
    pub fn condition(&self, observed: Range<usize>, value: ArrayView2<'_, f64>) -> Result<DenseGaussian> {
        let dim = self.dim();
        if observed.end > dim || observed.is_empty() {
            return Err(Error::Contract(format!("observed block {observed:?} invalid for dimension {dim}")));
        }
        if value.dim() != (observed.len(), self.mean.ncols()) {
            return Err(Error::InvalidDimension(format!("observed value has shape {:?}", value.dim())));
        }
        let free: Vec<usize> = (0..dim).filter(|i| !observed.contains(i)).collect();
        let obs: Vec<usize> = observed.clone().collect();

        let mut syy = Array2::from_shape_fn((obs.len(), obs.len()), |(i, j)| self.cov[[obs[i], obs[j]]]);
        let (vals, _) = dense_eigensolve(&syy)?;
        let (hi, lo) = (vals[0], *vals.last().unwrap());
        if lo <= 0.0 || hi / lo > MAX_CONDITION {
            for i in 0..obs.len() {
                syy[[i, i]] += RIDGE;
            }
        }
        let chol = cholesky(&syy)?;

        let resid = Array2::from_shape_fn(value.dim(), |(i, c)| value[[i, c]] - self.mean[[obs[i], c]]);
        let sxy = Array2::from_shape_fn((free.len(), obs.len()), |(i, j)| self.cov[[free[i], obs[j]]]);
        // K = Sxy Syy^{-1}
        let gain = cholesky_solve(&chol, &sxy.t().to_owned()).t().to_owned();

        let mut mean = self.mean.clone();
        let mut cov = Array2::zeros((dim, dim));
        let shift = gain.dot(&resid);
        for (i, &fi) in free.iter().enumerate() {
            for c in 0..mean.ncols() {
                mean[[fi, c]] += shift[[i, c]];
            }
        }
        for (i, &oi) in obs.iter().enumerate() {
            for c in 0..mean.ncols() {
                mean[[oi, c]] = value[[i, c]];
            }
        }
        let reduce = gain.dot(&sxy.t());
        for (i, &fi) in free.iter().enumerate() {
            for (j, &fj) in free.iter().enumerate() {
                cov[[fi, fj]] = self.cov[[fi, fj]] - reduce[[i, j]];
            }
        }
        Ok(DenseGaussian { mean, cov })
    }

    /// Log density of an array, summed over the independent columns.
    pub fn log_density(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        if x.dim() != self.mean.dim() {
            return Err(Error::InvalidDimension(format!("point has shape {:?}", x.dim())));
        }
        let chol = cholesky(&self.cov)?;
        let log_det: f64 = 2.0 * chol.diag().iter().map(|v| v.ln()).sum::<f64>();
        let resid = &x - &self.mean;
        let solved = cholesky_solve(&chol, &resid);
        let quad: f64 = (&resid * &solved).sum();
        let dim = self.dim() as f64;
        let cols = x.ncols() as f64;
        Ok(-0.5 * quad - 0.5 * cols * (log_det + dim * (2.0 * std::f64::consts::PI).ln()))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = dense_eigensolve(&self.cov)?;
        Ok(*vals.last().unwrap())
    }
}

/// Lower Cholesky factor.
pub fn cholesky(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return Err(Error::SingularMatrix(format!("pivot {j} is {d:e}")));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut v = m[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / d;
        }
    }
    Ok(l)
}

/// Solves `L L^T X = B`.
pub fn cholesky_solve(l: &Array2<f64>, rhs: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = rhs.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut v = x[[i, c]];
            for k in 0..i {
                v -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = v / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut v = x[[i, c]];
            for k in i + 1..n {
                v -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = v / l[[i, i]];
        }
    }
    x
}

/// Numerical `F(t)` for the prior's schedule, by quadrature of `f`.
fn time_change(spec: &PriorSpec, t: f64) -> f64 {
    let sched = spec.schedule();
    if sched.is_constant() {
        t
    } else {
        simpson(0.0, t, SIMPSON_INNER, |s| sched.rate(s))
    }
}

/// Joint law of `(X_t, X_t')` given `X_0 = x0` as a `2N`-row Gaussian, with
/// every block assembled from dense matrix exponentials and quadrature of the
/// variation-of-constants integrals.
pub fn joint_gaussian(spec: &PriorSpec, x0: ArrayView2<'_, f64>, t: f64, t_prime: f64) -> Result<DenseGaussian> {
    if t > t_prime {
        return Err(Error::ArgumentOrder { t, t_prime });
    }
    let n = spec.n();
    let a = tridiagonal_matrix(n, spec.op().alpha());
    let (mu, v) = dense_eigensolve(&a)?;
    let eps = spec.eps();
    let ft = time_change(spec, t);
    let ftp = time_change(spec, t_prime);

    let sched = spec.schedule().clone();
    let rate = move |s: f64| sched.rate(s);
    let f_at = |s: f64| time_change(spec, s);

    let mean_at = |ft_: f64, upto: f64| -> Array2<f64> {
        // e^{A F} x0 + int_0^upto e^{A (F(upto) - F(s))} f(s) b ds
        let mut out = Array2::<f64>::zeros((n, x0.ncols()));
        let x0m = v.t().dot(&x0);
        let bm = v.t().dot(spec.b());
        for k in 0..n {
            let decay = (mu[k] * ft_).exp();
            let forcing = simpson(0.0, upto, SIMPSON_INTERVALS, |s| (mu[k] * (ft_ - f_at(s))).exp() * rate(s));
            for c in 0..x0.ncols() {
                out[[k, c]] = decay * x0m[[k, c]] + forcing * bm[[k, c]];
            }
        }
        v.dot(&out)
    };

    let block = |fa: f64, fb: f64, upto: f64| -> Array2<f64> {
        let g: Vec<f64> = (0..n)
            .map(|k| eps * simpson(0.0, upto, SIMPSON_INTERVALS, |s| (mu[k] * (fa - f_at(s) + fb - f_at(s))).exp()))
            .collect();
        let mut scaled = v.clone();
        for (k, mut col) in scaled.columns_mut().into_iter().enumerate() {
            col *= g[k];
        }
        scaled.dot(&v.t())
    };

    let s_tt = block(ft, ft, t);
    let s_pp = block(ftp, ftp, t_prime);
    let s_tp = block(ft, ftp, t);

    let mut mean = Array2::zeros((2 * n, x0.ncols()));
    mean.slice_mut(s![0..n, ..]).assign(&mean_at(ft, t));
    mean.slice_mut(s![n.., ..]).assign(&mean_at(ftp, t_prime));
    let mut cov = Array2::zeros((2 * n, 2 * n));
    cov.slice_mut(s![0..n, 0..n]).assign(&s_tt);
    cov.slice_mut(s![n.., n..]).assign(&s_pp);
    cov.slice_mut(s![0..n, n..]).assign(&s_tp);
    cov.slice_mut(s![n.., 0..n]).assign(&s_tp.t());
    symmetrize(&mut cov);
    Ok(DenseGaussian { mean, cov })
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralOperator;
    use ndarray::array;
    use std::sync::Arc;

    fn spec(n: usize, alpha: f64, eps: f64) -> PriorSpec {
        PriorSpec::new(Arc::new(SpectralOperator::new(n, alpha).unwrap()), eps, Array2::zeros((n, 1))).unwrap()
    }

    #[test]
    fn identity_eigenvalues() {
        let (vals, _) = dense_eigensolve(&Array2::eye(4)).unwrap();
        assert!(vals.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn diagonal_eigenvalues_sorted() {
        let m = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let (vals, vecs) = dense_eigensolve(&m).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert_eq!(vecs[[2, 1]].abs(), 1.0);
    }

    #[test]
    fn non_symmetric_rejected() {
        let m = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(matches!(dense_eigensolve(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn reconstructs_random_symmetric() {
        let m = array![[4.0, 1.0, -2.0, 0.5], [1.0, 3.0, 0.0, 1.0], [-2.0, 0.0, 5.0, -1.0], [0.5, 1.0, -1.0, 2.0]];
        let r = dense_matrix_function(&m, |x| x).unwrap();
        assert!((&r - &m).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn joint_equal_times() {
        let sp = spec(3, 1.0, 0.2);
        let j = joint_gaussian(&sp, Array2::ones((3, 1)).view(), 0.4, 0.4).unwrap();
        let a = j.cov.slice(s![0..3, 0..3]).to_owned();
        let b = j.cov.slice(s![3.., 3..]).to_owned();
        let c = j.cov.slice(s![0..3, 3..]).to_owned();
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-14));
        assert!((&a - &c).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn joint_brownian_blocks() {
        let sp = spec(3, 0.0, 0.5);
        let j = joint_gaussian(&sp, Array2::zeros((3, 1)).view(), 0.2, 0.6).unwrap();
        for i in 0..3 {
            assert!((j.cov[[i, i]] - 0.1).abs() < 1e-12);
            assert!((j.cov[[i + 3, i + 3]] - 0.3).abs() < 1e-12);
            assert!((j.cov[[i, i + 3]] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_is_psd() {
        let sp = spec(5, 2.0, 0.1);
        let j = joint_gaussian(&sp, Array2::zeros((5, 1)).view(), 0.3, 0.35).unwrap();
        assert!(j.min_eigenvalue().unwrap() >= -1e-10);
    }

    #[test]
    fn condition_on_everything_is_point_mass() {
        let g = DenseGaussian { mean: array![[0.0], [1.0]], cov: array![[1.0, 0.3], [0.3, 2.0]] };
        let c = g.condition(0..2, array![[0.5], [-0.5]].view()).unwrap();
        assert_eq!(c.mean, array![[0.5], [-0.5]]);
        assert!(c.cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn independent_blocks_unchanged() {
        let g = DenseGaussian { mean: array![[1.0], [2.0]], cov: array![[1.5, 0.0], [0.0, 2.0]] };
        let c = g.condition(1..2, array![[7.0]].view()).unwrap();
        assert_eq!(c.mean[[0, 0]], 1.0);
        assert_eq!(c.cov[[0, 0]], 1.5);
    }

    #[test]
    fn bivariate_conditional_variance() {
        let (sx, sy, rho) = (1.3, 0.7, 0.6);
        let g = DenseGaussian {
            mean: array![[0.0], [0.0]],
            cov: array![[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]],
        };
        let c = g.condition(1..2, array![[0.4]].view()).unwrap();
        assert!((c.cov[[0, 0]] - sx * sx * (1.0 - rho * rho)).abs() < 1e-14);
        assert!((c.mean[[0, 0]] - rho * sx / sy * 0.4).abs() < 1e-14);
    }

    #[test]
    fn singular_block_gets_ridge_or_fails() {
        let g = DenseGaussian { mean: array![[0.0], [0.0]], cov: array![[1.0, 0.0], [0.0, 0.0]] };
        // the ridge rescues an exactly zero variance
        let c = g.condition(1..2, array![[0.0]].view()).unwrap();
        assert_eq!(c.cov[[0, 0]], 1.0);
        let bad = DenseGaussian { mean: array![[0.0], [0.0]], cov: array![[1.0, 0.0], [0.0, -1.0]] };
        assert!(matches!(bad.condition(1..2, array![[0.0]].view()), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn log_density_standard_normal() {
        let g = DenseGaussian { mean: array![[0.0]], cov: array![[1.0]] };
        let v = g.log_density(array![[1.0]].view()).unwrap();
        assert!((v - (-0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-14);
    }
}
