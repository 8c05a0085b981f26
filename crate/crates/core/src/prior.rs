//! The time-correlated prior `dX = f(t)(A X + b) dt + sqrt(eps) dW` and its
//! exact transition statistics.
//!
//! Every covariance of the prior is a function of `A`, so it is stored as a
//! vector of per-eigenmode variances and shared across the `D` feature
//! columns. With a correlation schedule `f`, time enters the drift only
//! through `F(t) = int_0^t f`, which the mean and cross-covariance use
//! directly; the variance needs a one-dimensional integral that is evaluated
//! by Gauss-Legendre quadrature unless `f` is constant.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::spectral::{kernel_bresponse, kernel_mean, kernel_var, SpectralOperator};

/// Default number of Gauss-Legendre nodes for non-constant schedules.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Smallest per-mode variance accepted when inverting a covariance.
pub const MIN_MODE_VARIANCE: f64 = 1e-300;

/// Shape of the multiplicative drift schedule `f(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `f(t) = 1`.
    Constant,
    /// `f(t) = a - c t`.
    Linear { a: f64, c: f64 },
    /// `f(t) = (1 - t)^2`.
    Quadratic,
    /// `f(t) = e^{-r t}`.
    Exponential { r: f64 },
}

impl ScheduleKind {
    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            ScheduleKind::Constant => 1.0,
            ScheduleKind::Linear { a, c } => a - c * t,
            ScheduleKind::Quadratic => (1.0 - t) * (1.0 - t),
            ScheduleKind::Exponential { r } => (-r * t).exp(),
        }
    }

    /// Closed-form `F(t) = int_0^t f(s) ds`.
    pub fn antiderivative(&self, t: f64) -> f64 {
        match *self {
            ScheduleKind::Constant => t,
            ScheduleKind::Linear { a, c } => a * t - c * t * t / 2.0,
            ScheduleKind::Quadratic => t - t * t + t * t * t / 3.0,
            ScheduleKind::Exponential { r } => {
                if r == 0.0 {
                    t
                } else {
                    -(-r * t).exp_m1() / r
                }
            }
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Constant => write!(f, "constant"),
            ScheduleKind::Linear { a, c } => write!(f, "linear:{a},{c}"),
            ScheduleKind::Quadratic => write!(f, "quadratic"),
            ScheduleKind::Exponential { r } => write!(f, "exponential:{r}"),
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognised schedule `{s}`"));
        let num = |v: &str| v.trim().parse::<f64>().ok().filter(|x| x.is_finite());
        let (head, args) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a)),
            None => (s.trim(), None),
        };
        match (head, args) {
            ("constant", None) => Ok(ScheduleKind::Constant),
            ("quadratic", None) => Ok(ScheduleKind::Quadratic),
            ("linear", Some(a)) => {
                let (p, q) = a.split_once(',').ok_or_else(bad)?;
                Ok(ScheduleKind::Linear { a: num(p).ok_or_else(bad)?, c: num(q).ok_or_else(bad)? })
            }
            ("exponential", Some(a)) => Ok(ScheduleKind::Exponential { r: num(a).ok_or_else(bad)? }),
            _ => Err(bad()),
        }
    }
}

/// A schedule kind together with the quadrature rule used for its variance
/// integral.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSchedule {
    kind: ScheduleKind,
    rule: GaussLegendre,
}

impl CorrelationSchedule {
    pub fn new(kind: ScheduleKind, quadrature_nodes: usize) -> Result<Self> {
        if quadrature_nodes == 0 {
            return Err(Error::Range("quadrature_nodes must be positive".into()));
        }
        Ok(Self { kind, rule: GaussLegendre::new(quadrature_nodes) })
    }

    pub fn constant() -> Self {
        Self::new(ScheduleKind::Constant, DEFAULT_QUADRATURE_NODES).expect("default node count is valid")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.rule.len()
    }

    pub fn is_constant(&self) -> bool {
        self.kind == ScheduleKind::Constant
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.kind.rate(t)
    }

    pub fn antiderivative(&self, t: f64) -> f64 {
        self.kind.antiderivative(t)
    }
}

impl Default for CorrelationSchedule {
    fn default() -> Self {
        Self::constant()
    }
}

/// `F(t)` for a schedule.
pub fn antiderivative(schedule: &CorrelationSchedule, t: f64) -> f64 {
    schedule.antiderivative(t)
}

/// Full description of the prior process.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    op: Arc<SpectralOperator>,
    eps: f64,
    b: Array2<f64>,
    b_modes: Array2<f64>,
    horizon: f64,
    schedule: CorrelationSchedule,
}

impl PriorSpec {
    /// Prior with horizon `T = 1` and a constant schedule.
    pub fn new(op: Arc<SpectralOperator>, eps: f64, b: Array2<f64>) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Range(format!("eps must be finite and > 0, got {eps}")));
        }
        if b.nrows() != op.n() {
            return Err(Error::InvalidDimension(format!(
                "boundary term has {} rows, operator has {}",
                b.nrows(),
                op.n()
            )));
        }
        if b.ncols() == 0 {
            return Err(Error::InvalidDimension("feature dimension must be >= 1".into()));
        }
        let b_modes = op.to_modes(b.view());
        Ok(Self { op, eps, b, b_modes, horizon: 1.0, schedule: CorrelationSchedule::constant() })
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Range(format!("horizon must be finite and > 0, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_schedule(mut self, schedule: CorrelationSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Same prior with a different boundary term.
    pub fn with_boundary(&self, b: Array2<f64>) -> Result<Self> {
        if b.dim() != self.b.dim() {
            return Err(Error::InvalidDimension(format!(
                "boundary term shape {:?} differs from {:?}",
                b.dim(),
                self.b.dim()
            )));
        }
        let b_modes = self.op.to_modes(b.view());
        Ok(Self { b, b_modes, ..self.clone() })
    }

    pub fn op(&self) -> &SpectralOperator {
        &self.op
    }

    pub fn shared_op(&self) -> Arc<SpectralOperator> {
        Arc::clone(&self.op)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn schedule(&self) -> &CorrelationSchedule {
        &self.schedule
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    pub(crate) fn check_shape(&self, x: ArrayView2<'_, f64>, what: &str) -> Result<()> {
        if x.dim() != self.b.dim() {
            return Err(Error::InvalidDimension(format!(
                "{what} has shape {:?}, expected {:?}",
                x.dim(),
                self.b.dim()
            )));
        }
        Ok(())
    }

    /// Per-mode marginal variances at time `t` (no range check).
    pub(crate) fn mode_variances(&self, t: f64) -> Vec<f64> {
        let lambdas = self.op.eigenvalues();
        if self.schedule.is_constant() {
            return lambdas.iter().map(|&l| kernel_var(l, t, self.eps)).collect();
        }
        if t == 0.0 {
            return vec![0.0; lambdas.len()];
        }
        let ft = self.schedule.antiderivative(t);
        lambdas
            .iter()
            .map(|&l| {
                let integral =
                    self.schedule.rule.integrate(0.0, t, |s| (2.0 * l * (ft - self.schedule.antiderivative(s))).exp());
                (self.eps * integral).max(0.0)
            })
            .collect()
    }

    /// Marginal mean at `t` in mode coordinates, given `x0` in mode coordinates.
    pub(crate) fn mean_modes(&self, x0_modes: ArrayView2<'_, f64>, t: f64) -> Array2<f64> {
        let ft = self.schedule.antiderivative(t);
        let mut out = x0_modes.to_owned();
        for (k, &l) in self.op.eigenvalues().iter().enumerate() {
            let m = kernel_mean(l, ft);
            let h = kernel_bresponse(l, ft);
            Zip::from(out.row_mut(k)).and(self.b_modes.row(k)).for_each(|o, &bk| {
                *o = m * *o + h * bk;
            });
        }
        out
    }

    /// Per-mode cross-covariance between `t <= t_prime` (no range check).
    pub(crate) fn cross_modes(&self, t: f64, t_prime: f64) -> Vec<f64> {
        let gap = self.schedule.antiderivative(t_prime) - self.schedule.antiderivative(t);
        self.op.eigenvalues().iter().zip(self.mode_variances(t)).map(|(&l, s)| kernel_mean(l, gap) * s).collect()
    }
}

/// A Gaussian law over `N x D` arrays whose covariance is `V diag(mode_var) V^T`
/// applied to every feature column.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Array2<f64>,
    pub mode_var: Vec<f64>,
}

/// Exact law of `X_t` given `X_0 = x0`.
pub fn marginal(spec: &PriorSpec, x0: ArrayView2<'_, f64>, t: f64) -> Result<GaussianStats> {
    spec.check_time(t)?;
    spec.check_shape(x0, "x0")?;
    if t == 0.0 {
        return Ok(GaussianStats { mean: x0.to_owned(), mode_var: vec![0.0; spec.n()] });
    }
    let modes = spec.mean_modes(spec.op.to_modes(x0).view(), t);
    Ok(GaussianStats { mean: spec.op.from_modes(modes.view()), mode_var: spec.mode_variances(t) })
}

/// Score `grad log q(x_t | x_0)` of the marginal.
pub fn score(spec: &PriorSpec, x0: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
    spec.check_time(t)?;
    spec.check_shape(x0, "x0")?;
    spec.check_shape(xt, "xt")?;
    if t == 0.0 {
        return Err(Error::SingularCovariance("marginal covariance vanishes at t = 0".into()));
    }
    let var = spec.mode_variances(t);
    if let Some((k, v)) = var.iter().enumerate().find(|(_, &v)| v < MIN_MODE_VARIANCE) {
        return Err(Error::SingularCovariance(format!("mode {k} has variance {v:e}")));
    }
    let mean_modes = spec.mean_modes(spec.op.to_modes(x0).view(), t);
    let mut resid = spec.op.to_modes(xt) - mean_modes;
    for (mut row, v) in resid.rows_mut().into_iter().zip(&var) {
        row *= -1.0 / v;
    }
    Ok(spec.op.from_modes(resid.view()))
}

/// Per-mode `Cov(X_t, X_t' | X_0)` for `0 <= t <= t' <= T`.
pub fn cross_covariance(spec: &PriorSpec, t: f64, t_prime: f64) -> Result<Vec<f64>> {
    spec.check_time(t)?;
    spec.check_time(t_prime)?;
    if t > t_prime {
        return Err(Error::Range(format!("cross-covariance needs t <= t', got t = {t}, t' = {t_prime}")));
    }
    Ok(spec.cross_modes(t, t_prime))
}
