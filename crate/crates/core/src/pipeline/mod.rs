//! Datasets, task couplings, training, posterior-sampling inference, metrics
//! and the `eps x alpha` sweep.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod sample;
pub mod task;
pub mod train;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::prior::PriorSpec;
use task::TaskConfig;

pub use data::{bouncing_dots, split, Dataset, DotParams};
pub use experiment::{run_experiment, sweep, ExperimentReport, SweepRow};
pub use metrics::{evaluate, psnr, ssim};
pub use sample::{sample, Denoiser, OraclePredictor};
pub use task::{CouplingKind, TaskKind};
pub use train::{train, TrainConfig};

/// Prior for one clip: the shared operator with boundary term `alpha * b`,
/// `b` taken from the clip's fixed frames. With `alpha = 0` this is the
/// driftless (Brownian) prior.
pub fn clip_prior(spec: &PriorSpec, task: &TaskConfig, clip: ArrayView2<'_, f64>) -> Result<PriorSpec> {
    let b = task.boundary(clip) * spec.op().alpha();
    spec.with_boundary(b)
}

/// Corrupted free blocks for evaluation; clip `i` uses stream `i` of `seed`.
pub fn corrupt_all(task: &TaskConfig, clips: &[Array2<f64>], seed: u64) -> Vec<Array2<f64>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            task.corrupt(c.view(), &mut rng)
        })
        .collect()
}
