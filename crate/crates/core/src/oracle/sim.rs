//! Euler-Maruyama simulation of the prior SDE and Monte Carlo moments.
//!
//! Each path owns a ChaCha8 stream selected by its index, so an ensemble is
//! reproducible from `(seed, path, step)` whatever the thread count. Moment
//! reductions use a fixed chunking and a pairwise tree, which keeps the
//! floating-point summation order fixed as well.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dense::tridiagonal_matrix;
use crate::error::{Error, Result};
use crate::prior::PriorSpec;

const PATH_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, paths: 200_000, seed: 0 }
    }
}

/// States of every path at each checkpoint. `states[c]` is `paths x (N * D)`
/// with the frame index varying slowest.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub states: Vec<Array2<f64>>,
    pub n: usize,
    pub d: usize,
}

impl Ensemble {
    pub fn at(&self, t: f64) -> Option<&Array2<f64>> {
        self.times.iter().position(|&s| (s - t).abs() < 1e-12).map(|i| &self.states[i])
    }
}

/// Box-Muller pairs from a 64-bit stream.
struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self { rng, spare: None }
    }

    #[inline]
    fn uniform_open(&mut self) -> f64 {
        // (0, 1]: never zero so the log below is finite
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Simulates `dX = f(t)(A X + b) dt + sqrt(eps) dW` from `x0` up to `t_end`,
/// recording every path at each checkpoint (and at `t_end`).
pub fn simulate_prior(
    spec: &PriorSpec,
    x0: ArrayView2<'_, f64>,
    t_end: f64,
    cfg: SimConfig,
    checkpoints: &[f64],
) -> Result<Ensemble> {
    if !(t_end > 0.0) || t_end > spec.horizon() {
        return Err(Error::Range(format!("t_end = {t_end} outside (0, {}]", spec.horizon())));
    }
    if !(cfg.dt > 0.0) || cfg.paths == 0 {
        return Err(Error::Range("simulation needs dt > 0 and at least one path".into()));
    }
    let (n, d) = (spec.n(), spec.d());
    if x0.dim() != (n, d) {
        return Err(Error::InvalidDimension(format!("x0 has shape {:?}, expected {:?}", x0.dim(), (n, d))));
    }
    let steps = (t_end / cfg.dt).round().max(1.0) as usize;
    let h = t_end / steps as f64;

    let mut times: Vec<f64> = checkpoints.to_vec();
    if !times.iter().any(|&t| (t - t_end).abs() < 1e-12) {
        times.push(t_end);
    }
    times.sort_by(f64::total_cmp);
    let mut record_at = Vec::with_capacity(times.len());
    for &t in &times {
        let k = (t / h).round();
        if (k * h - t).abs() > 1e-9 || t < 0.0 || t > t_end + 1e-12 {
            return Err(Error::Range(format!("checkpoint {t} is not on the step grid")));
        }
        record_at.push(k as usize);
    }

    let a = tridiagonal_matrix(n, spec.op().alpha());
    let b = spec.b().clone();
    let sched = spec.schedule().clone();
    let noise = (spec.eps() * h).sqrt();
    let width = n * d;
    let start: Vec<f64> = x0.iter().copied().collect();

    let chunks: Vec<(usize, usize)> =
        (0..cfg.paths).step_by(PATH_CHUNK).map(|s| (s, (s + PATH_CHUNK).min(cfg.paths))).collect();

    let results: Vec<Result<Vec<Vec<f64>>>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut out = vec![Vec::with_capacity((hi - lo) * width); times.len()];
            let mut x = vec![0.0; width];
            let mut drift = vec![0.0; width];
            for path in lo..hi {
                let mut z = NormalStream::new(cfg.seed, path as u64);
                x.copy_from_slice(&start);
                let mut next_rec = 0;
                for step in 0..=steps {
                    while next_rec < record_at.len() && record_at[next_rec] == step {
                        if x.iter().any(|v| !v.is_finite()) {
                            return Err(Error::SimulationDiverged { step, time: step as f64 * h });
                        }
                        out[next_rec].extend_from_slice(&x);
                        next_rec += 1;
                    }
                    if step == steps {
                        break;
                    }
                    let t = step as f64 * h;
                    let f = sched.rate(t);
                    for i in 0..n {
                        for c in 0..d {
                            let mut acc = b[[i, c]];
                            for j in i.saturating_sub(1)..(i + 2).min(n) {
                                acc += a[[i, j]] * x[j * d + c];
                            }
                            drift[i * d + c] = f * acc;
                        }
                    }
                    for k in 0..width {
                        x[k] += drift[k] * h + noise * z.next();
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut states: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.paths * width); times.len()];
    for r in results {
        for (dst, src) in states.iter_mut().zip(r?) {
            dst.extend(src);
        }
    }
    let states = states
        .into_iter()
        .map(|v| Array2::from_shape_vec((cfg.paths, width), v).expect("consistent ensemble size"))
        .collect();
    Ok(Ensemble { times, states, n, d })
}

fn pairwise_sum(mut parts: Vec<Array2<f64>>) -> Array2<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one part")
}

/// Sample mean of the rows.
pub fn sample_mean(x: ArrayView2<'_, f64>) -> Array1<f64> {
    let parts: Vec<Array2<f64>> =
        x.axis_chunks_iter(Axis(0), PATH_CHUNK).map(|c| c.sum_axis(Axis(0)).insert_axis(Axis(0))).collect();
    pairwise_sum(parts).row(0).mapv(|v| v / x.nrows() as f64)
}

/// Unbiased sample cross-covariance `Cov(x_i, y_j)` between row-aligned samples.
pub fn sample_cross_cov(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(x.nrows(), y.nrows());
    let mx = sample_mean(x);
    let my = sample_mean(y);
    let parts: Vec<Array2<f64>> = x
        .axis_chunks_iter(Axis(0), PATH_CHUNK)
        .zip(y.axis_chunks_iter(Axis(0), PATH_CHUNK))
        .map(|(cx, cy)| {
            let cx = &cx - &mx;
            let cy = &cy - &my;
            cx.t().dot(&cy)
        })
        .collect();
    pairwise_sum(parts) / (x.nrows() as f64 - 1.0)
}

pub fn sample_cov(x: ArrayView2<'_, f64>) -> Array2<f64> {
    sample_cross_cov(x, x)
}

/// Sample mean, covariance and their standard errors (Gaussian fourth-moment
/// formula for the covariance entries).
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub count: usize,
    pub mean: Array1<f64>,
    pub mean_se: Array1<f64>,
    pub cov: Array2<f64>,
    pub cov_se: Array2<f64>,
}

impl MomentEstimate {
    pub fn from_samples(x: ArrayView2<'_, f64>) -> Self {
        let count = x.nrows();
        let mean = sample_mean(x);
        let cov = sample_cov(x);
        let nf = count as f64;
        let mean_se = cov.diag().mapv(|v| (v / nf).sqrt());
        let cov_se = Array2::from_shape_fn(cov.dim(), |(i, j)| {
            ((cov[[i, i]] * cov[[j, j]] + cov[[i, j]] * cov[[i, j]]) / nf).sqrt()
        });
        Self { count, mean, mean_se, cov, cov_se }
    }
}

/// Cross-covariance estimate with standard errors.
pub fn cross_moment(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let c = sample_cross_cov(x, y);
    let vx = sample_cov(x);
    let vy = sample_cov(y);
    let nf = x.nrows() as f64;
    let se = Array2::from_shape_fn(c.dim(), |(i, j)| ((vx[[i, i]] * vy[[j, j]] + c[[i, j]] * c[[i, j]]) / nf).sqrt());
    (c, se)
}
