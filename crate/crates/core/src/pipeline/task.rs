//! Tasks, their fixed frames, boundary terms and couplings.
//!
//! A clip holds every frame of a sequence, fixed frames included. The prior
//! acts on the free block only: rows `1..=N` for interpolation and
//! image-to-video, all rows for super-resolution.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Interpolation,
    ImageToVideo,
    SuperResolution,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Interpolation => "interpolation",
            TaskKind::ImageToVideo => "image_to_video",
            TaskKind::SuperResolution => "super_resolution",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" => Ok(TaskKind::Interpolation),
            "image_to_video" => Ok(TaskKind::ImageToVideo),
            "super_resolution" => Ok(TaskKind::SuperResolution),
            _ => Err(Error::Config(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    GaussianNoise,
    LinearInterp,
    StaticCopy,
    LowresUpsample,
    LowresConcatNoise,
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingKind::GaussianNoise => "gaussian_noise",
            CouplingKind::LinearInterp => "linear_interp",
            CouplingKind::StaticCopy => "static_copy",
            CouplingKind::LowresUpsample => "lowres_upsample",
            CouplingKind::LowresConcatNoise => "lowres_concat_noise",
        })
    }
}

impl FromStr for CouplingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(CouplingKind::GaussianNoise),
            "linear_interp" => Ok(CouplingKind::LinearInterp),
            "static_copy" => Ok(CouplingKind::StaticCopy),
            "lowres_upsample" => Ok(CouplingKind::LowresUpsample),
            "lowres_concat_noise" => Ok(CouplingKind::LowresConcatNoise),
            _ => Err(Error::Config(format!("unknown coupling '{s}'"))),
        }
    }
}

impl CouplingKind {
    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Interpolation => CouplingKind::GaussianNoise,
            TaskKind::ImageToVideo => CouplingKind::StaticCopy,
            TaskKind::SuperResolution => CouplingKind::LowresUpsample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Number of free frames `N`.
    pub n_frames: usize,
    pub feature_dim: usize,
    pub coupling: CouplingKind,
    /// Pooling factor of the low-resolution couplings.
    pub lowres_factor: usize,
}

impl TaskConfig {
    pub fn new(kind: TaskKind, n_frames: usize, feature_dim: usize) -> Result<Self> {
        let t = Self { kind, n_frames, feature_dim, coupling: CouplingKind::default_for(kind), lowres_factor: 4 };
        t.validate()?;
        Ok(t)
    }

    pub fn with_coupling(mut self, coupling: CouplingKind) -> Result<Self> {
        self.coupling = coupling;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.feature_dim == 0 {
            return Err(Error::Config("n_frames and feature_dim must be positive".into()));
        }
        match self.coupling {
            CouplingKind::LinearInterp if self.kind != TaskKind::Interpolation => {
                Err(Error::Config("linear_interp coupling needs the interpolation task".into()))
            }
            CouplingKind::StaticCopy if self.kind == TaskKind::SuperResolution => {
                Err(Error::Config("static_copy coupling needs a fixed first frame".into()))
            }
            CouplingKind::LowresUpsample | CouplingKind::LowresConcatNoise
                if self.lowres_factor == 0 || !self.feature_dim.is_multiple_of(self.lowres_factor) =>
            {
                Err(Error::Config(format!(
                    "lowres factor {} must divide feature_dim {}",
                    self.lowres_factor, self.feature_dim
                )))
            }
            _ => Ok(()),
        }
    }

    /// Frames stored per clip.
    pub fn clip_len(&self) -> usize {
        match self.kind {
            TaskKind::Interpolation => self.n_frames + 2,
            TaskKind::ImageToVideo => self.n_frames + 1,
            TaskKind::SuperResolution => self.n_frames,
        }
    }

    /// Clip rows the prior acts on.
    pub fn free_rows(&self) -> Range<usize> {
        match self.kind {
            TaskKind::SuperResolution => 0..self.n_frames,
            _ => 1..self.n_frames + 1,
        }
    }

    pub fn fixed_rows(&self) -> Vec<usize> {
        match self.kind {
            TaskKind::Interpolation => vec![0, self.n_frames + 1],
            TaskKind::ImageToVideo => vec![0],
            TaskKind::SuperResolution => vec![],
        }
    }

    pub fn check_clip(&self, clip: ArrayView2<'_, f64>) -> Result<()> {
        if clip.dim() != (self.clip_len(), self.feature_dim) {
            return Err(Error::Contract(format!(
                "clip shape {:?}, task expects {:?}",
                clip.dim(),
                (self.clip_len(), self.feature_dim)
            )));
        }
        Ok(())
    }

    pub fn free<'a>(&self, clip: ArrayView2<'a, f64>) -> ArrayView2<'a, f64> {
        clip.slice_move(s![self.free_rows(), ..])
    }

    /// Copy of `clip` with the free block replaced.
    pub fn assemble(&self, clip: ArrayView2<'_, f64>, free: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = clip.to_owned();
        out.slice_mut(s![self.free_rows(), ..]).assign(&free);
        out
    }

    /// Boundary term of the free block before scaling: the fixed neighbours of
    /// the first and last free frames, zeros elsewhere.
    pub fn boundary(&self, clip: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.n_frames;
        let mut b = Array2::zeros((n, self.feature_dim));
        match self.kind {
            TaskKind::Interpolation => {
                b.row_mut(0).assign(&clip.row(0));
                let last = clip.row(n + 1);
                let mut row = b.row_mut(n - 1);
                row += &last;
            }
            TaskKind::ImageToVideo => b.row_mut(0).assign(&clip.row(0)),
            TaskKind::SuperResolution => {}
        }
        b
    }

    /// Corrupted free block `X_T` for a clean clip.
    pub fn corrupt<R: Rng + ?Sized>(&self, clip: ArrayView2<'_, f64>, rng: &mut R) -> Array2<f64> {
        let (n, d) = (self.n_frames, self.feature_dim);
        let free = self.free(clip);
        match self.coupling {
            CouplingKind::GaussianNoise => Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal)),
            CouplingKind::LinearInterp => {
                let (first, last) = (clip.row(0), clip.row(n + 1));
                let denom = (n + 1) as f64;
                Array2::from_shape_fn((n, d), |(i, c)| {
                    let k = (i + 1) as f64;
                    ((denom - k) * first[c] + k * last[c]) / denom
                })
            }
            CouplingKind::StaticCopy => Array2::from_shape_fn((n, d), |(_, c)| clip[[0, c]]),
            CouplingKind::LowresUpsample => lowres(free, self.lowres_factor),
            CouplingKind::LowresConcatNoise => {
                let mut x = lowres(free, self.lowres_factor);
                x.mapv_inplace(|v| v + rng.sample::<f64, _>(StandardNormal));
                x
            }
        }
    }

    /// Reference reconstruction that uses only the conditioning: every free
    /// frame copies its nearest fixed frame; super-resolution upsamples the
    /// low-resolution input.
    pub fn copy_baseline(&self, clip: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.n_frames;
        let mut out = clip.to_owned();
        match self.kind {
            TaskKind::Interpolation => {
                for r in 1..=n {
                    let src = if r <= n + 1 - r { 0 } else { n + 1 };
                    let row = clip.row(src).to_owned();
                    out.row_mut(r).assign(&row);
                }
            }
            TaskKind::ImageToVideo => {
                for r in 1..=n {
                    out.row_mut(r).assign(&clip.row(0));
                }
            }
            TaskKind::SuperResolution => {
                out.assign(&lowres(clip, self.lowres_factor));
            }
        }
        out
    }
}

/// Average-pool each frame by `factor`, then nearest-neighbour upsample.
pub fn lowres(x: ArrayView2<'_, f64>, factor: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for blk in 0..d / factor {
            let cols = blk * factor..(blk + 1) * factor;
            let mean = x.slice(s![i, cols.clone()]).sum() / factor as f64;
            out.slice_mut(s![i, cols]).fill(mean);
        }
    }
    out
}
