//! Posterior-sampling inference on a uniform time grid.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::clip_prior;
use super::task::TaskConfig;
use crate::bridge::posterior;
use crate::error::{Error, Result};
use crate::nn::ClipModel;
use crate::prior::PriorSpec;

/// Anything that predicts clean clips from noisy ones.
pub trait Denoiser {
    fn predict(&self, clips: &[ArrayView2<'_, f64>], ts: &[f64]) -> Result<Vec<Array2<f64>>>;
}

impl Denoiser for ClipModel {
    fn predict(&self, clips: &[ArrayView2<'_, f64>], ts: &[f64]) -> Result<Vec<Array2<f64>>> {
        ClipModel::predict(self, clips, ts)
    }
}

/// Returns the known clean clip of each batch position, whatever the input.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub clean: Vec<Array2<f64>>,
}

impl Denoiser for OraclePredictor {
    fn predict(&self, clips: &[ArrayView2<'_, f64>], _ts: &[f64]) -> Result<Vec<Array2<f64>>> {
        if clips.len() != self.clean.len() {
            return Err(Error::Contract("oracle batch size mismatch".into()));
        }
        Ok(self.clean.clone())
    }
}

/// `t_n = n T / n_steps` with the last point pinned to `T`.
pub fn time_grid(horizon: f64, n_steps: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n_steps).map(|n| n as f64 * horizon / n_steps as f64).collect();
    g[n_steps] = horizon;
    g
}

/// Samples every clip from its conditioning frames and corrupted free block
/// `x_big_t`. Sequence `i` draws from stream `i` of `seed`, so results do not
/// depend on batch composition. Fixed frames are copied from `conds`.
pub fn sample(
    spec: &PriorSpec,
    task: &TaskConfig,
    model: &dyn Denoiser,
    conds: &[Array2<f64>],
    x_big_t: &[Array2<f64>],
    n_steps: usize,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    if n_steps == 0 {
        return Err(Error::Config("n_sample_steps must be >= 1".into()));
    }
    if conds.len() != x_big_t.len() {
        return Err(Error::Contract("one corrupted block per clip".into()));
    }
    let specs = conds
        .iter()
        .map(|c| {
            task.check_clip(c.view())?;
            clip_prior(spec, task, c.view())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..conds.len())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut state: Vec<Array2<f64>> = Vec::with_capacity(conds.len());
    for (c, x) in conds.iter().zip(x_big_t) {
        if x.dim() != (task.n_frames, task.feature_dim) {
            return Err(Error::Contract(format!("corrupted block has shape {:?}", x.dim())));
        }
        state.push(task.assemble(c.view(), x.view()));
    }

    let grid = time_grid(spec.horizon(), n_steps);
    for n in (1..=n_steps).rev() {
        let (t_prev, t_cur) = (grid[n - 1], grid[n]);
        let views: Vec<_> = state.iter().map(|s| s.view()).collect();
        let x0_hat = model.predict(&views, &vec![t_cur; state.len()])?;
        for (i, s) in state.iter_mut().enumerate() {
            if x0_hat[i].dim() != s.dim() {
                return Err(Error::Contract("prediction shape mismatch".into()));
            }
            let post = posterior(&specs[i], task.free(x0_hat[i].view()), task.free(s.view()), t_prev, t_cur)?;
            let next = post.sample(specs[i].op(), &mut rngs[i]);
            *s = task.assemble(conds[i].view(), next.view());
        }
    }
    Ok(state)
}
