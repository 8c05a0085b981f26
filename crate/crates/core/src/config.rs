//! Plain-text run configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::AdamWConfig;
use crate::pipeline::task::{CouplingKind, TaskConfig, TaskKind};
use crate::prior::{CorrelationSchedule, PriorSpec, ScheduleKind};
use crate::spectral::SpectralOperator;

/// Every key accepted in a config file or on the command line.
pub const KEYS: &[&str] = &[
    "task",
    "coupling",
    "n_frames",
    "feature_dim",
    "lowres_factor",
    "count",
    "val_count",
    "eps",
    "alpha",
    "schedule",
    "quadrature_nodes",
    "horizon",
    "steps",
    "batch",
    "lr",
    "betas",
    "weight_decay",
    "ema",
    "hidden",
    "embed_width",
    "n_sample_steps",
    "seed",
    "paths",
    "dt",
    "eps_grid",
    "alpha_grid",
    "log_every",
    "data",
    "pred",
    "checkpoint",
    "out",
    "pgm_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    /// `None` picks the task's default coupling.
    pub coupling: Option<CouplingKind>,
    pub n_frames: usize,
    pub feature_dim: usize,
    pub lowres_factor: usize,
    pub count: usize,
    pub val_count: usize,
    pub eps: f64,
    pub alpha: f64,
    pub schedule: ScheduleKind,
    pub quadrature_nodes: usize,
    pub horizon: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub ema: f64,
    pub hidden: Vec<usize>,
    pub embed_width: usize,
    pub n_sample_steps: usize,
    pub seed: u64,
    pub paths: usize,
    pub dt: f64,
    pub eps_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub log_every: usize,
    pub data: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pgm_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Interpolation,
            coupling: None,
            n_frames: 8,
            feature_dim: 16,
            lowres_factor: 4,
            count: 2048,
            val_count: 64,
            eps: 0.1,
            alpha: 1.0,
            schedule: ScheduleKind::Constant,
            quadrature_nodes: crate::prior::DEFAULT_QUADRATURE_NODES,
            horizon: 1.0,
            steps: 20_000,
            batch: 128,
            lr: 3e-5,
            betas: (0.9, 0.95),
            weight_decay: 1e-4,
            ema: 0.999,
            hidden: crate::nn::DEFAULT_HIDDEN.to_vec(),
            embed_width: crate::nn::DEFAULT_EMBED_WIDTH,
            n_sample_steps: 1000,
            seed: 0,
            paths: 200_000,
            dt: 1e-3,
            eps_grid: vec![0.1, 1.0],
            alpha_grid: vec![0.1, 1.0],
            log_every: 1000,
            data: None,
            pred: None,
            checkpoint: None,
            out: None,
            pgm_dir: None,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| v.into())
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Splits config text into `(key, value)` pairs, keeping line numbers for errors.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "task" => self.task = v.parse()?,
            "coupling" => self.coupling = if v == "default" { None } else { Some(v.parse()?) },
            "n_frames" => self.n_frames = num(key, v)?,
            "feature_dim" => self.feature_dim = num(key, v)?,
            "lowres_factor" => self.lowres_factor = num(key, v)?,
            "count" => self.count = num(key, v)?,
            "val_count" => self.val_count = num(key, v)?,
            "eps" => self.eps = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "quadrature_nodes" => self.quadrature_nodes = num(key, v)?,
            "horizon" => self.horizon = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "betas" => {
                let b: Vec<f64> = list(key, v)?;
                if b.len() != 2 {
                    return Err(Error::Config("betas: expected two values".into()));
                }
                self.betas = (b[0], b[1]);
            }
            "weight_decay" => self.weight_decay = num(key, v)?,
            "ema" => self.ema = num(key, v)?,
            "hidden" => self.hidden = list(key, v)?,
            "embed_width" => self.embed_width = num(key, v)?,
            "n_sample_steps" => self.n_sample_steps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "paths" => self.paths = num(key, v)?,
            "dt" => self.dt = num(key, v)?,
            "eps_grid" => self.eps_grid = list(key, v)?,
            "alpha_grid" => self.alpha_grid = list(key, v)?,
            "log_every" => self.log_every = num(key, v)?,
            "data" => self.data = opt_path(v),
            "pred" => self.pred = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "out" => self.out = opt_path(v),
            "pgm_dir" => self.pgm_dir = opt_path(v),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Defaults, then `file_pairs`, then `cli_pairs`; validated at the end.
    pub fn resolve<'a>(
        file_pairs: impl IntoIterator<Item = (String, String)>,
        cli_pairs: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in file_pairs {
            cfg.set(&k, &v)?;
        }
        for (k, v) in cli_pairs {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::resolve(parse_pairs(text)?, std::iter::empty())
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, ok: bool| if ok { Ok(()) } else { Err(Error::Config(format!("{name} out of range"))) };
        pos("eps", self.eps > 0.0 && self.eps.is_finite())?;
        pos("alpha", self.alpha >= 0.0 && self.alpha.is_finite())?;
        pos("horizon", self.horizon > 0.0 && self.horizon.is_finite())?;
        pos("quadrature_nodes", self.quadrature_nodes > 0)?;
        pos("count", self.count > 0)?;
        pos("steps", self.steps > 0)?;
        pos("batch", self.batch > 0)?;
        pos("lr", self.lr > 0.0)?;
        pos("betas", (0.0..1.0).contains(&self.betas.0) && (0.0..1.0).contains(&self.betas.1))?;
        pos("weight_decay", self.weight_decay >= 0.0)?;
        pos("ema", (0.0..=1.0).contains(&self.ema))?;
        pos("hidden", !self.hidden.is_empty() && !self.hidden.contains(&0))?;
        pos("n_sample_steps", self.n_sample_steps > 0)?;
        pos("paths", self.paths >= 2)?;
        pos("dt", self.dt > 0.0 && self.dt <= self.horizon)?;
        pos("eps_grid", !self.eps_grid.is_empty() && self.eps_grid.iter().all(|&e| e > 0.0))?;
        pos("alpha_grid", !self.alpha_grid.is_empty() && self.alpha_grid.iter().all(|&a| a >= 0.0))?;
        pos("log_every", self.log_every > 0)?;
        if self.embed_width == 0 || !self.embed_width.is_multiple_of(2) {
            return Err(Error::Config("embed_width must be even and positive".into()));
        }
        self.task_config()?;
        Ok(())
    }

    pub fn task_config(&self) -> Result<TaskConfig> {
        let mut t = TaskConfig::new(self.task, self.n_frames, self.feature_dim)?;
        t.lowres_factor = self.lowres_factor;
        t.with_coupling(self.coupling.unwrap_or(t.coupling))
    }

    /// Prior on the free block with a zero boundary term; the per-clip
    /// boundary is filled in later.
    pub fn prior(&self) -> Result<PriorSpec> {
        let op = Arc::new(SpectralOperator::new(self.n_frames, self.alpha)?);
        let sched = CorrelationSchedule::new(self.schedule, self.quadrature_nodes)?;
        Ok(PriorSpec::new(op, self.eps, Array2::zeros((self.n_frames, self.feature_dim)))?
            .with_horizon(self.horizon)?
            .with_schedule(sched))
    }

    pub fn adam(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }

    /// Canonical `key = value` dump of every key, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.value(k));
        }
        s
    }

    fn value(&self, key: &str) -> String {
        match key {
            "task" => self.task.to_string(),
            "coupling" => self.coupling.map(|c| c.to_string()).unwrap_or_else(|| "default".into()),
            "n_frames" => self.n_frames.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "lowres_factor" => self.lowres_factor.to_string(),
            "count" => self.count.to_string(),
            "val_count" => self.val_count.to_string(),
            "eps" => self.eps.to_string(),
            "alpha" => self.alpha.to_string(),
            "schedule" => self.schedule.to_string(),
            "quadrature_nodes" => self.quadrature_nodes.to_string(),
            "horizon" => self.horizon.to_string(),
            "steps" => self.steps.to_string(),
            "batch" => self.batch.to_string(),
            "lr" => self.lr.to_string(),
            "betas" => format!("{},{}", self.betas.0, self.betas.1),
            "weight_decay" => self.weight_decay.to_string(),
            "ema" => self.ema.to_string(),
            "hidden" => join(&self.hidden),
            "embed_width" => self.embed_width.to_string(),
            "n_sample_steps" => self.n_sample_steps.to_string(),
            "seed" => self.seed.to_string(),
            "paths" => self.paths.to_string(),
            "dt" => self.dt.to_string(),
            "eps_grid" => join(&self.eps_grid),
            "alpha_grid" => join(&self.alpha_grid),
            "log_every" => self.log_every.to_string(),
            "data" => path_str(&self.data),
            "pred" => path_str(&self.pred),
            "checkpoint" => path_str(&self.checkpoint),
            "out" => path_str(&self.out),
            "pgm_dir" => path_str(&self.pgm_dir),
            _ => unreachable!("key list and value table disagree"),
        }
    }
}
