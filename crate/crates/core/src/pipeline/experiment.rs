//! End-to-end runs: train on the training split, sample the validation
//! split, score against the clean clips and the copy baseline.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corrupt_all;
use super::data::{bouncing_dots, split, Dataset, DotParams};
use super::metrics::evaluate;
use super::sample::{sample, Denoiser};
use super::train::{train, TrainConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ClipModel};

// Stream separation between the random draws of one seed.
const TRAIN_SALT: u64 = 0x7a11_0000_0000_0001;
const COUPLING_SALT: u64 = 0x7a11_0000_0000_0002;
const SAMPLE_SALT: u64 = 0x7a11_0000_0000_0003;

pub fn coupling_seed(seed: u64) -> u64 {
    seed ^ COUPLING_SALT
}

pub fn sample_seed(seed: u64) -> u64 {
    seed ^ SAMPLE_SALT
}

/// Dataset from `cfg.data`, or generated from `cfg.seed`.
pub fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    let task = cfg.task_config()?;
    let ds = match &cfg.data {
        Some(p) => Dataset::load(p)?,
        None => bouncing_dots(cfg.count, task.clip_len(), task.feature_dim, DotParams::default(), cfg.seed)?.0,
    };
    if (ds.frames(), ds.d()) != (task.clip_len(), task.feature_dim) {
        return Err(Error::Config(format!(
            "dataset clips are {} x {}, task expects {} x {}",
            ds.frames(),
            ds.d(),
            task.clip_len(),
            task.feature_dim
        )));
    }
    Ok(ds)
}

/// Training and validation clips for `cfg.seed`.
pub fn split_clips(cfg: &RunConfig, ds: &Dataset) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    let (tr, va) = split(ds.count(), cfg.val_count, cfg.seed)?;
    Ok((tr.iter().map(|&i| ds.clip(i)).collect(), va.iter().map(|&i| ds.clip(i)).collect()))
}

/// Fresh model and optimizer state trained per `cfg`.
pub fn train_model(
    cfg: &RunConfig,
    clips: &[Array2<f64>],
    log: impl FnMut(usize, f32),
) -> Result<(Checkpoint, Vec<f32>)> {
    let task = cfg.task_config()?;
    let spec = cfg.prior()?;
    let model = ClipModel::new(task.clip_len(), task.feature_dim, &cfg.hidden, cfg.embed_width, cfg.seed)?;
    let mut ck = Checkpoint::new(model, cfg.adam(), cfg.ema);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_SALT);
    let tc = TrainConfig { steps: cfg.steps, batch: cfg.batch, log_every: cfg.log_every };
    let trace = train(&spec, &task, clips, &mut ck, tc, &mut rng, log)?;
    Ok((ck, trace))
}

/// Samples every clip from its own corruption under `cfg.seed`.
pub fn sample_clips(cfg: &RunConfig, model: &dyn Denoiser, clips: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    let task = cfg.task_config()?;
    let spec = cfg.prior()?;
    let x_big_t = corrupt_all(&task, clips, coupling_seed(cfg.seed));
    sample(&spec, &task, model, clips, &x_big_t, cfg.n_sample_steps, sample_seed(cfg.seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
    pub final_loss: f32,
    pub trace: Vec<f32>,
}

pub fn run_experiment(cfg: &RunConfig, log: impl FnMut(usize, f32)) -> Result<ExperimentReport> {
    let task = cfg.task_config()?;
    let ds = load_or_generate(cfg)?;
    let (train_clips, val_clips) = split_clips(cfg, &ds)?;
    let (ck, trace) = train_model(cfg, &train_clips, log)?;
    let model = ck.ema_model()?;
    let out = sample_clips(cfg, &model, &val_clips)?;
    let (psnr, ssim) = evaluate(&task, &out, &val_clips)?;
    let base: Vec<Array2<f64>> = val_clips.iter().map(|c| task.copy_baseline(c.view())).collect();
    let (baseline_psnr, baseline_ssim) = evaluate(&task, &base, &val_clips)?;
    Ok(ExperimentReport { psnr, ssim, baseline_psnr, baseline_ssim, final_loss: ck.last_loss, trace })
}

pub const CSV_HEADER: &str = "seed,task,eps,alpha,psnr,ssim,loss";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub alpha: f64,
    pub outcome: std::result::Result<(f64, f64, f32), String>,
}

pub fn csv_row(
    seed: u64,
    task: &str,
    eps: f64,
    alpha: f64,
    outcome: &std::result::Result<(f64, f64, f32), String>,
) -> String {
    match outcome {
        Ok((p, s, l)) => format!("{seed},{task},{eps},{alpha},{p:.6},{s:.6},{l:.6e}"),
        Err(_) => format!("{seed},{task},{eps},{alpha},failed,failed,failed"),
    }
}

/// One train + evaluate run per `(eps, alpha)` cell. A failing cell is
/// recorded and the sweep moves on.
pub fn sweep(cfg: &RunConfig, mut on_row: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    if cfg.eps_grid.is_empty() || cfg.alpha_grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &eps in &cfg.eps_grid {
        for &alpha in &cfg.alpha_grid {
            let cell = RunConfig { eps, alpha, ..cfg.clone() };
            let outcome = cell
                .validate()
                .and_then(|_| run_experiment(&cell, |_, _| {}))
                .map(|r| (r.psnr, r.ssim, r.final_loss))
                .map_err(|e| e.to_string());
            let row = SweepRow { eps, alpha, outcome };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn sweep_csv(cfg: &RunConfig, rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CSV_HEADER}");
    for r in rows {
        let _ = writeln!(s, "{}", csv_row(cfg.seed, &cfg.task.to_string(), r.eps, r.alpha, &r.outcome));
    }
    s
}
