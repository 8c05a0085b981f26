//! Synthetic 1-D "bouncing dot" clips, the TCDS container and PGM strips.
//!
//! Each clip is a Gaussian bump moving at constant velocity along a signal of
//! length `D`, reflecting off both ends. Values lie in `[-1, 1]`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::ByteReader;

pub const DATASET_MAGIC: &[u8; 4] = b"TCDS";
pub const DATASET_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotParams {
    pub width: f64,
    pub min_speed: f64,
    pub max_speed: f64,
}

impl Default for DotParams {
    fn default() -> Self {
        Self { width: 1.5, min_speed: 0.5, max_speed: 1.5 }
    }
}

/// Start position and signed velocity of one clip, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotTrack {
    pub start: f64,
    pub velocity: f64,
}

impl DotTrack {
    /// Position at frame `k` after reflecting into `[0, d - 1]`.
    pub fn position(&self, k: usize, d: usize) -> f64 {
        reflect(self.start + self.velocity * k as f64, (d - 1) as f64)
    }
}

pub fn reflect(x: f64, hi: f64) -> f64 {
    if hi == 0.0 {
        return 0.0;
    }
    let y = x.rem_euclid(2.0 * hi);
    if y > hi {
        2.0 * hi - y
    } else {
        y
    }
}

pub fn render_dot(pos: f64, width: f64, d: usize) -> impl Iterator<Item = f64> {
    (0..d).map(move |x| {
        let z = (x as f64 - pos) / width;
        -1.0 + 2.0 * (-0.5 * z * z).exp()
    })
}

/// Clips stored as `count x frames x d` in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: Array3<f32>,
}

impl Dataset {
    pub fn count(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn frames(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn d(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn clip(&self, i: usize) -> Array2<f64> {
        self.data.index_axis(Axis(0), i).mapv(f64::from)
    }

    pub fn clips(&self) -> Vec<Array2<f64>> {
        (0..self.count()).map(|i| self.clip(i)).collect()
    }

    pub fn from_clips(clips: &[Array2<f64>]) -> Result<Self> {
        let first = clips.first().ok_or_else(|| Error::Contract("empty clip list".into()))?;
        let (l, d) = first.dim();
        let mut data = Array3::zeros((clips.len(), l, d));
        for (i, c) in clips.iter().enumerate() {
            if c.dim() != (l, d) {
                return Err(Error::Contract("clips differ in shape".into()));
            }
            data.index_axis_mut(Axis(0), i).assign(&c.mapv(|v| v as f32));
        }
        Ok(Self { data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 4 * self.data.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.push(DATASET_VERSION);
        for v in [self.count(), self.frames(), self.d()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::Format { offset: 0, message: "not a dataset (bad magic)".into() });
        }
        let version = r.take(1)?[0];
        if version != DATASET_VERSION {
            return Err(Error::Format { offset: 4, message: format!("unsupported dataset version {version}") });
        }
        let count = r.u32()? as usize;
        let frames = r.u32()? as usize;
        let d = r.u32()? as usize;
        let expected = count.checked_mul(frames).and_then(|v| v.checked_mul(d)).and_then(|v| v.checked_mul(4));
        if expected != Some(bytes.len() - r.pos) {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!(
                    "payload of {} bytes does not match {count} x {frames} x {d} floats",
                    bytes.len() - r.pos
                ),
            });
        }
        let mut data = Vec::with_capacity(count * frames * d);
        for _ in 0..count * frames * d {
            data.push(r.f32()?);
        }
        let data = Array3::from_shape_vec((count, frames, d), data).expect("checked size");
        Ok(Self { data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `count` clips of `frames x d`, deterministic in `seed`.
pub fn bouncing_dots(
    count: usize,
    frames: usize,
    d: usize,
    params: DotParams,
    seed: u64,
) -> Result<(Dataset, Vec<DotTrack>)> {
    if count == 0 || frames == 0 || d == 0 {
        return Err(Error::Config("dataset needs count, frames and feature_dim > 0".into()));
    }
    if !(params.width > 0.0) || !(params.min_speed >= 0.0) || params.max_speed < params.min_speed {
        return Err(Error::Config("bad dot parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array3::zeros((count, frames, d));
    let mut tracks = Vec::with_capacity(count);
    for i in 0..count {
        let start = rng.random_range(0.0..=(d - 1) as f64);
        let speed = if params.max_speed > params.min_speed {
            rng.random_range(params.min_speed..params.max_speed)
        } else {
            params.min_speed
        };
        let velocity = if rng.random_bool(0.5) { speed } else { -speed };
        let track = DotTrack { start, velocity };
        for k in 0..frames {
            let pos = track.position(k, d);
            for (x, v) in render_dot(pos, params.width, d).enumerate() {
                data[[i, k, x]] = v as f32;
            }
        }
        tracks.push(track);
    }
    Ok((Dataset { data }, tracks))
}

/// Disjoint train/validation index sets from a seeded permutation.
pub fn split(count: usize, val_count: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if val_count == 0 || val_count >= count {
        return Err(Error::Config(format!("validation count {val_count} must be in 1..{count}")));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let val = idx.split_off(count - val_count);
    Ok((idx, val))
}

const SPLIT_SALT: u64 = 0x5b1f_0d5e_ed00_0001;

/// Binary PGM (P5) strip: frames side by side, each value block `scale` pixels
/// tall and wide, `[-1, 1]` mapped to `[0, 255]`.
pub fn write_pgm_strip(path: &Path, clip: ArrayView2<'_, f64>, scale: usize) -> Result<()> {
    let (frames, d) = clip.dim();
    let scale = scale.max(1);
    let (w, h) = (frames * d * scale, scale);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    let mut row = Vec::with_capacity(w);
    for k in 0..frames {
        for x in 0..d {
            let v = ((clip[[k, x]].clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
            row.extend(std::iter::repeat_n(v, scale));
        }
    }
    for _ in 0..h {
        f.write_all(&row)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_matches_unfolded_motion() {
        // D = 16: walls at 0 and 15
        assert_eq!(reflect(3.0, 15.0), 3.0);
        assert_eq!(reflect(17.0, 15.0), 13.0);
        assert_eq!(reflect(-2.5, 15.0), 2.5);
        assert_eq!(reflect(31.0, 15.0), 1.0);
        assert_eq!(reflect(0.3, 0.0), 0.0);
    }

    #[test]
    fn clips_follow_their_track() {
        let (ds, tracks) = bouncing_dots(20, 10, 16, DotParams::default(), 7).unwrap();
        for (i, tr) in tracks.iter().enumerate() {
            assert!((0.5..1.5).contains(&tr.velocity.abs()));
            // re-simulate step by step with explicit wall bounces
            let (mut p, mut v) = (tr.start, tr.velocity);
            for k in 0..10 {
                let row = ds.data.index_axis(Axis(0), i);
                let row = row.row(k);
                let argmax =
                    row.iter().enumerate().fold((0, f32::MIN), |a, (j, &x)| if x > a.1 { (j, x) } else { a }).0;
                assert!((argmax as f64 - p).abs() <= 0.5 + 1e-9, "clip {i} frame {k}: {argmax} vs {p}");
                p += v;
                while !(0.0..=15.0).contains(&p) {
                    if p < 0.0 {
                        p = -p;
                    } else {
                        p = 30.0 - p;
                    }
                    v = -v;
                }
            }
            assert!(ds.data.index_axis(Axis(0), i).iter().all(|&x| (-1.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn deterministic_and_split_disjoint() {
        let a = bouncing_dots(10, 4, 8, DotParams::default(), 3).unwrap().0;
        let b = bouncing_dots(10, 4, 8, DotParams::default(), 3).unwrap().0;
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(bouncing_dots(0, 4, 8, DotParams::default(), 3).is_err());
        let (tr, va) = split(10, 3, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        assert!(va.iter().all(|i| !tr.contains(i)));
        let (_, vb) = split(10, 3, 2).unwrap();
        assert_ne!(va, vb);
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let (ds, _) = bouncing_dots(3, 5, 6, DotParams::default(), 1).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), ds);
        assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { offset: 17, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn pgm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pgm");
        let clip = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) / 4.0);
        write_pgm_strip(&p, clip.view(), 2).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n24 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 48);
    }
}
