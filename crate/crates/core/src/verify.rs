//! Closed forms checked against the independent oracles.
//!
//! Every check returns the measured error next to its tolerance. The CLI
//! `verify` command runs [`run_all`]; the acceptance tests call the
//! individual checks with their own settings.

use std::fmt;
use std::sync::Arc;

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bridge::{drift, posterior_scaled};
use crate::config::RunConfig;
use crate::error::Result;
use crate::oracle::dense::joint_gaussian;
use crate::oracle::sim::{simulate_prior, MomentEstimate, SimConfig};
use crate::pipeline::corrupt_all;
use crate::pipeline::data::{bouncing_dots, DotParams};
use crate::pipeline::sample::{sample, OraclePredictor};
use crate::pipeline::task::{TaskConfig, TaskKind};
use crate::prior::{marginal, score, CorrelationSchedule, PriorSpec, ScheduleKind};
use crate::spectral::SpectralOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        let passed = measured.is_finite() && measured <= tolerance;
        Self { name: name.into(), measured, tolerance, passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<31} measured {:.3e}  tolerance {:.3e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Multiplies the bridge cross-covariance; anything but 1 corrupts the
    /// posterior and should make the bridge check fail.
    pub cross_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { cross_scale: 1.0 }
    }
}

fn spec_for(n: usize, alpha: f64, eps: f64, b: Array2<f64>) -> Result<PriorSpec> {
    PriorSpec::new(Arc::new(SpectralOperator::new(n, alpha)?), eps, b)
}

fn randn<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Dense `V diag(v) V^T`.
fn mode_cov(op: &SpectralOperator, v: &[f64]) -> Array2<f64> {
    let basis = op.basis();
    let mut scaled = basis.clone();
    for (k, mut col) in scaled.columns_mut().into_iter().enumerate() {
        col *= v[k];
    }
    scaled.dot(&basis.t())
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Settings of the marginal-vs-simulation check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalMc {
    pub alpha: f64,
    pub eps: f64,
    pub sim: SimConfig,
}

/// Closed-form marginal mean and covariance of a 4-frame, 2-feature prior
/// at `t = 0.25, 0.5, 1` against Euler-Maruyama. Means must sit within
/// 3 standard errors, covariance entries within max(3 SE, 2% relative).
/// The measured value is the worst error-to-allowance ratio.
pub fn check_marginal_mc(s: MarginalMc) -> Result<Check> {
    let x0 = array![[0.5, -0.3], [1.0, 0.2], [-0.4, 0.8], [0.0, -1.0]];
    let mut b = Array2::zeros((4, 2));
    b.row_mut(0).assign(&array![1.0, -0.5]);
    let spec = spec_for(4, s.alpha, s.eps, b)?;
    let times = [0.25, 0.5, 1.0];
    let ens = simulate_prior(&spec, x0.view(), 1.0, s.sim, &times)?;
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for &t in &times {
        let m = MomentEstimate::from_samples(ens.at(t).expect("checkpoint recorded").view());
        let exact = marginal(&spec, x0.view(), t)?;
        let sigma = mode_cov(spec.op(), &exact.mode_var);
        let mut mean_ratio: f64 = 0.0;
        for i in 0..4 {
            for c in 0..2 {
                let k = i * 2 + c;
                mean_ratio = mean_ratio.max((m.mean[k] - exact.mean[[i, c]]).abs() / (3.0 * m.mean_se[k]));
            }
        }
        let mut cov_ratio: f64 = 0.0;
        for p in 0..8 {
            for q in 0..8 {
                let (i, c, j, c2) = (p / 2, p % 2, q / 2, q % 2);
                let want = if c == c2 { sigma[[i, j]] } else { 0.0 };
                let allowed = (3.0 * m.cov_se[[p, q]]).max(0.02 * want.abs());
                cov_ratio = cov_ratio.max((m.cov[[p, q]] - want).abs() / allowed);
            }
        }
        detail.push_str(&format!("t={t}: mean {mean_ratio:.2} cov {cov_ratio:.2}; "));
        worst = worst.max(mean_ratio).max(cov_ratio);
    }
    detail.push_str(&format!("{} paths, dt {}", s.sim.paths, s.sim.dt));
    Ok(Check::new("marginal_vs_simulation", worst, 1.0, detail))
}

/// Random instance with `n <= max_n` frames.
struct Instance {
    spec: PriorSpec,
    x0: Array2<f64>,
    t: f64,
    t_prime: f64,
}

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, schedule: Option<CorrelationSchedule>) -> Result<Instance> {
    let n = rng.random_range(1..=max_n);
    let d = rng.random_range(1..=3);
    let alpha = rng.random_range(0.05..2.0);
    let eps = rng.random_range(0.05..2.0);
    let b = randn(rng, n, d, 1.0);
    let mut spec = spec_for(n, alpha, eps, b)?;
    if let Some(s) = schedule {
        spec = spec.with_schedule(s);
    }
    let t_prime = rng.random_range(0.1..=1.0);
    let t = rng.random_range(0.02..0.98) * t_prime;
    Ok(Instance { x0: randn(rng, n, d, 1.0), spec, t, t_prime })
}

/// Bridge posterior mean and covariance against Schur-complement
/// conditioning of the dense joint, max absolute error over `count` random
/// instances.
pub fn check_bridge_dense(count: usize, seed: u64, opts: VerifyOptions) -> Result<Check> {
    bridge_dense(count, seed, opts, None, "bridge_vs_dense_conditioning", 1e-8)
}

fn bridge_dense(
    count: usize,
    seed: u64,
    opts: VerifyOptions,
    schedule: Option<CorrelationSchedule>,
    name: &str,
    tol: f64,
) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let inst = random_instance(&mut rng, 6, schedule.clone())?;
        let n = inst.spec.n();
        let x_tp = randn(&mut rng, n, inst.spec.d(), 1.0);
        let post = posterior_scaled(&inst.spec, inst.x0.view(), x_tp.view(), inst.t, inst.t_prime, opts.cross_scale)?;
        let joint = joint_gaussian(&inst.spec, inst.x0.view(), inst.t, inst.t_prime)?;
        let cond = joint.condition(n..2 * n, x_tp.view())?.block(0..n);
        let cov = mode_cov(inst.spec.op(), &post.mode_var);
        worst = worst.max(max_abs_diff(&post.mean, &cond.mean)).max(max_abs_diff(&cov, &cond.cov));
    }
    Ok(Check::new(name, worst, tol, format!("{count} instances, N <= 6")))
}

/// Closed-form score against central differences of the dense log-density,
/// infinity-norm relative error.
pub fn check_score_fd(count: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let h = 1e-4;
    for _ in 0..count {
        let inst = random_instance(&mut rng, 6, None)?;
        let (n, d) = (inst.spec.n(), inst.spec.d());
        let law = joint_gaussian(&inst.spec, inst.x0.view(), inst.t, inst.t)?.block(0..n);
        let xt = &law.mean + &randn(&mut rng, n, d, 0.5);
        let s = score(&inst.spec, inst.x0.view(), xt.view(), inst.t)?;
        let mut fd = Array2::zeros((n, d));
        for i in 0..n {
            for c in 0..d {
                let mut up = xt.clone();
                up[[i, c]] += h;
                let mut down = xt.clone();
                down[[i, c]] -= h;
                fd[[i, c]] = (law.log_density(up.view())? - law.log_density(down.view())?) / (2.0 * h);
            }
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        worst = worst.max(max_abs_diff(&s, &fd) / scale);
    }
    Ok(Check::new("score_vs_finite_difference", worst, 1e-5, format!("{count} instances")))
}

/// Drift from an exact clean-clip prediction equals the prior score.
pub fn check_drift_identity(count: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let inst = random_instance(&mut rng, 6, None)?;
        let xt = randn(&mut rng, inst.spec.n(), inst.spec.d(), 1.0);
        let a = drift(&inst.spec, xt.view(), inst.t, inst.x0.view())?;
        let b = score(&inst.spec, inst.x0.view(), xt.view(), inst.t)?;
        worst = worst.max(max_abs_diff(&a, &b));
    }
    Ok(Check::new("drift_identity", worst, 1e-12, format!("{count} instances")))
}

/// Posterior-sampling inference with a predictor that returns the true clip
/// reproduces the clip for every step count.
pub fn check_oracle_sampler(eps: f64, alpha: f64, steps: &[usize], seed: u64) -> Result<Check> {
    let task = TaskConfig::new(TaskKind::Interpolation, 8, 16)?;
    let (ds, _) = bouncing_dots(4, task.clip_len(), 16, DotParams::default(), seed)?;
    let clips = ds.clips();
    let spec = spec_for(8, alpha, eps, Array2::zeros((8, 16)))?;
    let oracle = OraclePredictor { clean: clips.clone() };
    let x_big_t = corrupt_all(&task, &clips, seed);
    let mut worst: f64 = 0.0;
    for &k in steps {
        let out = sample(&spec, &task, &oracle, &clips, &x_big_t, k, seed)?;
        for (o, c) in out.iter().zip(&clips) {
            worst = worst.max(max_abs_diff(o, c));
        }
    }
    Ok(Check::new("oracle_sampler_exact", worst, 1e-6, format!("n_steps {steps:?}")))
}

/// Near-zero coupling against the Brownian bridge closed form.
pub fn check_brownian_limit(count: usize, seed: u64) -> Result<Check> {
    brownian(count, seed, 1e-8, "brownian_limit", 1e-5)
}

/// Exactly zero coupling against the Brownian formulas.
pub fn check_brownian_exact(count: usize, seed: u64) -> Result<Check> {
    brownian(count, seed, 0.0, "brownian_special_case", 1e-12)
}

fn brownian(count: usize, seed: u64, alpha: f64, name: &str, tol: f64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=3);
        let eps = rng.random_range(0.05..2.0);
        let spec = spec_for(n, alpha, eps, Array2::zeros((n, d)))?;
        let t_prime = rng.random_range(0.1..=1.0);
        let t = rng.random_range(0.02..0.98) * t_prime;
        let x0 = randn(&mut rng, n, d, 1.0);
        let x_tp = randn(&mut rng, n, d, 1.0);

        let m = marginal(&spec, x0.view(), t)?;
        worst = worst.max(max_abs_diff(&m.mean, &x0));
        worst = m.mode_var.iter().fold(worst, |w, v| w.max((v - eps * t).abs()));

        let post = posterior_scaled(&spec, x0.view(), x_tp.view(), t, t_prime, 1.0)?;
        let want_mean = &x0 + &((&x_tp - &x0) * (t / t_prime));
        let want_var = eps * t * (t_prime - t) / t_prime;
        worst = worst.max(max_abs_diff(&post.mean, &want_mean));
        worst = post.mode_var.iter().fold(worst, |w, v| w.max((v - want_var).abs()));
    }
    Ok(Check::new(name, worst, tol, format!("alpha = {alpha:e}, {count} instances")))
}

/// Constant rate pushed through the time-dependent (quadrature) path
/// against the static closed forms.
pub fn check_constant_schedule(count: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat =
        CorrelationSchedule::new(ScheduleKind::Linear { a: 1.0, c: 0.0 }, crate::prior::DEFAULT_QUADRATURE_NODES)?;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let inst = random_instance(&mut rng, 6, None)?;
        let dynamic = inst.spec.clone().with_schedule(flat.clone());
        let x_tp = randn(&mut rng, inst.spec.n(), inst.spec.d(), 1.0);
        let a = marginal(&inst.spec, inst.x0.view(), inst.t)?;
        let b = marginal(&dynamic, inst.x0.view(), inst.t)?;
        worst = worst.max(max_abs_diff(&a.mean, &b.mean));
        worst = a.mode_var.iter().zip(&b.mode_var).fold(worst, |w, (x, y)| w.max((x - y).abs()));
        let pa = posterior_scaled(&inst.spec, inst.x0.view(), x_tp.view(), inst.t, inst.t_prime, 1.0)?;
        let pb = posterior_scaled(&dynamic, inst.x0.view(), x_tp.view(), inst.t, inst.t_prime, 1.0)?;
        worst = worst.max(max_abs_diff(&pa.mean, &pb.mean));
        worst = pa.mode_var.iter().zip(&pb.mode_var).fold(worst, |w, (x, y)| w.max((x - y).abs()));
    }
    Ok(Check::new("constant_schedule_static", worst, 1e-12, format!("{count} instances")))
}

/// Bridge under a quadratic rate against dense conditioning.
pub fn check_dynamic_bridge(count: usize, seed: u64) -> Result<Check> {
    let sched = CorrelationSchedule::new(ScheduleKind::Quadratic, crate::prior::DEFAULT_QUADRATURE_NODES)?;
    bridge_dense(count, seed, VerifyOptions::default(), Some(sched), "dynamic_bridge_vs_dense", 1e-7)
}

/// Variance under `f(t) = 1 - t` at `lambda = -1`, `t = 0.6` from the
/// quadrature against time-dependent Euler-Maruyama, within 3 standard errors.
pub fn check_dynamic_variance_mc(eps: f64, sim: SimConfig) -> Result<Check> {
    let sched =
        CorrelationSchedule::new(ScheduleKind::Linear { a: 1.0, c: 1.0 }, crate::prior::DEFAULT_QUADRATURE_NODES)?;
    // one frame with alpha = 1/2 has the single eigenvalue -1
    let spec = spec_for(1, 0.5, eps, Array2::zeros((1, 1)))?.with_schedule(sched);
    let x0 = Array2::zeros((1, 1));
    let exact = marginal(&spec, x0.view(), 0.6)?.mode_var[0];
    let ens = simulate_prior(&spec, x0.view(), 0.6, sim, &[])?;
    let m = MomentEstimate::from_samples(ens.at(0.6).expect("endpoint recorded").view());
    let ratio = (m.cov[[0, 0]] - exact).abs() / (3.0 * m.cov_se[[0, 0]]);
    Ok(Check::new(
        "dynamic_variance_vs_simulation",
        ratio,
        1.0,
        format!("quadrature {exact:.6e}, simulated {:.6e} (se {:.1e})", m.cov[[0, 0]], m.cov_se[[0, 0]]),
    ))
}

/// Full suite driven by a run configuration.
pub fn run_all(cfg: &RunConfig, opts: VerifyOptions) -> Result<Vec<Check>> {
    let sim = SimConfig { dt: cfg.dt, paths: cfg.paths, seed: cfg.seed };
    let s = cfg.seed;
    let mut out = vec![
        check_marginal_mc(MarginalMc { alpha: cfg.alpha, eps: cfg.eps, sim })?,
        check_bridge_dense(50, s.wrapping_add(1), opts)?,
        check_score_fd(20, s.wrapping_add(2))?,
        check_drift_identity(20, s.wrapping_add(3))?,
        check_oracle_sampler(cfg.eps, cfg.alpha, &[1, 10, 1000], s.wrapping_add(4))?,
        check_brownian_limit(20, s.wrapping_add(5))?,
        check_constant_schedule(20, s.wrapping_add(6))?,
        check_dynamic_bridge(10, s.wrapping_add(7))?,
        check_dynamic_variance_mc(cfg.eps, SimConfig { seed: s.wrapping_add(8), ..sim })?,
    ];
    if cfg.alpha == 0.0 {
        out.push(check_brownian_exact(20, s.wrapping_add(9))?);
    }
    Ok(out)
}

pub fn report(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        s.push_str(&c.to_string());
        s.push('\n');
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", checks.len(), failed));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        let opts = VerifyOptions::default();
        for c in [
            check_bridge_dense(10, 1, opts).unwrap(),
            check_score_fd(5, 2).unwrap(),
            check_drift_identity(5, 3).unwrap(),
            check_oracle_sampler(0.1, 1.0, &[1, 10], 4).unwrap(),
            check_brownian_limit(5, 5).unwrap(),
            check_brownian_exact(5, 5).unwrap(),
            check_constant_schedule(5, 6).unwrap(),
        ] {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn corrupted_cross_covariance_fails_the_bridge_check() {
        let c = check_bridge_dense(5, 1, VerifyOptions { cross_scale: 1.01 }).unwrap();
        assert!(!c.passed, "{c}");
    }

    #[test]
    fn report_lines() {
        let c = Check::new("x", 2.0, 1.0, String::new());
        assert!(!c.passed);
        let r = report(&[c, Check::new("y", f64::NAN, 1.0, String::new())]);
        assert!(r.starts_with("FAIL x"));
        assert!(r.ends_with("2 checks, 2 failed\n"));
    }
}
