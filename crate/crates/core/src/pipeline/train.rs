//! Training loop: draw a clean clip, corrupt it, sample the bridge at a
//! uniform time, regress the clean clip.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::clip_prior;
use super::task::TaskConfig;
use crate::bridge::posterior;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::prior::PriorSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub log_every: usize,
}

/// Network inputs (clips with the free block at `X_t`), times and clean targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Array2<f64>>,
    pub times: Vec<f64>,
    pub targets: Vec<Array2<f64>>,
}

/// One bridge sample `X_t ~ q(X_t | X_0, X_T)` for a clean clip, returned as
/// a full clip.
pub fn bridge_input<R: Rng + ?Sized>(
    spec: &PriorSpec,
    task: &TaskConfig,
    clip: ArrayView2<'_, f64>,
    t: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    task.check_clip(clip)?;
    let x_big_t = task.corrupt(clip, rng);
    let spec = clip_prior(spec, task, clip)?;
    let post = posterior(&spec, task.free(clip), x_big_t.view(), t, spec.horizon())?;
    let xt = post.sample(spec.op(), rng);
    Ok(task.assemble(clip, xt.view()))
}

pub fn make_batch<R: Rng + ?Sized>(
    spec: &PriorSpec,
    task: &TaskConfig,
    clips: &[Array2<f64>],
    size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if clips.is_empty() {
        return Err(Error::Contract("no training clips".into()));
    }
    let mut b =
        Batch { inputs: Vec::with_capacity(size), times: Vec::with_capacity(size), targets: Vec::with_capacity(size) };
    for _ in 0..size {
        let clip = &clips[rng.random_range(0..clips.len())];
        let t = rng.random::<f64>() * spec.horizon();
        b.inputs.push(bridge_input(spec, task, clip.view(), t, rng)?);
        b.times.push(t);
        b.targets.push(clip.clone());
    }
    Ok(b)
}

/// Runs `cfg.steps` optimizer steps on `ck`, returning the per-step loss.
/// `log` sees `(step, loss)` every `log_every` steps.
pub fn train<R: Rng + ?Sized>(
    spec: &PriorSpec,
    task: &TaskConfig,
    clips: &[Array2<f64>],
    ck: &mut Checkpoint,
    cfg: TrainConfig,
    rng: &mut R,
    mut log: impl FnMut(usize, f32),
) -> Result<Vec<f32>> {
    if cfg.steps == 0 || cfg.batch == 0 {
        return Err(Error::Config("training needs steps >= 1 and batch >= 1".into()));
    }
    let width = task.clip_len() * task.feature_dim;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = make_batch(spec, task, clips, cfg.batch, rng)?;
        let views: Vec<_> = batch.inputs.iter().map(|c| c.view()).collect();
        let x = ck.model.encode(&views, &batch.times)?;
        let mut y = Array2::<f32>::zeros((cfg.batch, width));
        for (mut row, target) in y.rows_mut().into_iter().zip(&batch.targets) {
            for (dst, &v) in row.iter_mut().zip(target.iter()) {
                *dst = v as f32;
            }
        }
        let (loss, grads) = match ck.model.mlp.loss_and_grad(x.view(), y.view()) {
            Ok(v) => v,
            Err(Error::TrainingDiverged { .. }) => return Err(Error::TrainingDiverged { step, trace }),
            Err(e) => return Err(e),
        };
        ck.opt.update(&mut ck.model.mlp.params, &grads);
        if !ck.model.mlp.params.is_finite() {
            trace.push(loss);
            return Err(Error::TrainingDiverged { step, trace });
        }
        ck.ema.update(&ck.model.mlp.params);
        ck.last_loss = loss;
        trace.push(loss);
        if (step + 1) % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
            log(step + 1, loss);
        }
    }
    Ok(trace)
}
