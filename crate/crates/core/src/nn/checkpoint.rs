//! Binary checkpoint: weights, optimizer moments and EMA shadow.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TCVB" | version u8 | layer count u32 | widths u32...
//! embed width u32 | frames u32 | feature dim u32
//! adam step u64 | lr, beta1, beta2, weight decay, ema rate: f64 | last loss f32
//! f32 arrays: weights/biases per layer, then Adam m, Adam v, EMA shadow
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::{Mlp, Params};
use super::model::ClipModel;
use super::optim::{AdamW, AdamWConfig, Ema};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCVB";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ClipModel,
    pub opt: AdamW,
    pub ema: Ema,
    pub last_loss: f32,
}

impl Checkpoint {
    pub fn new(model: ClipModel, config: AdamWConfig, ema_rate: f64) -> Self {
        let opt = AdamW::new(config, &model.mlp.params);
        let ema = Ema::new(ema_rate, &model.mlp.params);
        Self { model, opt, ema, last_loss: f32::NAN }
    }

    /// The model evaluated with EMA weights.
    pub fn ema_model(&self) -> Result<ClipModel> {
        self.model.with_params(self.ema.shadow.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        let widths = self.model.mlp.widths();
        out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for &w in widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for v in [self.model.embed_width(), self.model.frames(), self.model.d()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.opt.step.to_le_bytes());
        let c = self.opt.config;
        for v in [c.lr, c.beta1, c.beta2, c.weight_decay, self.ema.rate] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.last_loss.to_le_bytes());
        for p in [&self.model.mlp.params, &self.opt.m, &self.opt.v, &self.ema.shadow] {
            for s in p.slices() {
                for v in s {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, message: "not a checkpoint (bad magic)".into() });
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format { offset: 4, message: format!("unsupported checkpoint version {version}") });
        }
        let at = r.pos;
        let count = r.u32()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format { offset: at as u64, message: format!("implausible layer count {count}") });
        }
        let mut widths = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos;
            let w = r.u32()? as usize;
            if w == 0 || w > 1 << 20 {
                return Err(Error::Format { offset: at as u64, message: format!("implausible width {w}") });
            }
            widths.push(w);
        }
        let embed_width = r.u32()? as usize;
        let frames = r.u32()? as usize;
        let d = r.u32()? as usize;
        let step = r.u64()?;
        let lr = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let weight_decay = r.f64()?;
        let ema_rate = r.f64()?;
        let last_loss = r.f32()?;

        let shape = Mlp::<f32>::init(&widths, 0)?;
        let mut read_params = || -> Result<Params<f32>> {
            let mut p = Params::zeros_like(&shape.params);
            for s in p.slices_mut() {
                for v in s.iter_mut() {
                    *v = r.f32()?;
                }
            }
            Ok(p)
        };
        let params = read_params()?;
        let m = read_params()?;
        let v = read_params()?;
        let shadow = read_params()?;
        if r.pos != bytes.len() {
            return Err(Error::Format { offset: r.pos as u64, message: "trailing bytes after checkpoint".into() });
        }
        let mlp = Mlp::from_params(widths, params)?;
        let model = ClipModel::from_mlp(mlp, frames, d, embed_width)
            .map_err(|e| Error::Format { offset: 5, message: e.to_string() })?;
        let config = AdamWConfig { lr, beta1, beta2, weight_decay, ..Default::default() };
        Ok(Self { model, opt: AdamW { config, step, m, v }, ema: Ema { rate: ema_rate, shadow }, last_loss })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Little-endian reader that reports the offset of a short read.
pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("unexpected end of file, wanted {n} bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = ClipModel::new(3, 2, &[5], 4, 9).unwrap();
        let mut ck = Checkpoint::new(model, AdamWConfig::default(), 0.99);
        let g = ck.model.mlp.params.clone();
        ck.opt.update(&mut ck.model.mlp.params, &g);
        ck.ema.update(&ck.model.mlp.params);
        ck.last_loss = 0.25;
        ck
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"TCVB");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn bad_magic_and_version_report_offsets() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match Checkpoint::from_bytes(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ema_model_uses_shadow() {
        let ck = sample();
        assert_eq!(ck.ema_model().unwrap().mlp.params, ck.ema.shadow);
    }
}
