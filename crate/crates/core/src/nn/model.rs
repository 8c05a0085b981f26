use ndarray::{Array2, ArrayView2};

use super::embed::TimeEmbedding;
use super::mlp::Mlp;
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];

/// Clean-clip predictor: a clip of `frames x d` values plus the time
/// embedding in, a clip of the same shape out.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipModel {
    pub mlp: Mlp<f32>,
    embed: TimeEmbedding,
    frames: usize,
    d: usize,
}

impl ClipModel {
    pub fn new(frames: usize, d: usize, hidden: &[usize], embed_width: usize, seed: u64) -> Result<Self> {
        let embed = TimeEmbedding::new(embed_width)?;
        let mut widths = vec![frames * d + embed_width];
        widths.extend_from_slice(hidden);
        widths.push(frames * d);
        Ok(Self { mlp: Mlp::init(&widths, seed)?, embed, frames, d })
    }

    pub fn from_mlp(mlp: Mlp<f32>, frames: usize, d: usize, embed_width: usize) -> Result<Self> {
        let embed = TimeEmbedding::new(embed_width)?;
        if mlp.input_width() != frames * d + embed_width || mlp.output_width() != frames * d {
            return Err(Error::Contract("network widths do not match the clip shape".into()));
        }
        Ok(Self { mlp, embed, frames, d })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn embed_width(&self) -> usize {
        self.embed.width()
    }

    /// Same architecture with other parameters (the EMA shadow, say).
    pub fn with_params(&self, params: super::mlp::Params<f32>) -> Result<Self> {
        Ok(Self { mlp: Mlp::from_params(self.mlp.widths().to_vec(), params)?, ..self.clone() })
    }

    /// Network input rows: flattened clip followed by the embedding of `t`.
    pub fn encode(&self, clips: &[ArrayView2<'_, f64>], ts: &[f64]) -> Result<Array2<f32>> {
        if clips.len() != ts.len() {
            return Err(Error::Contract("one time per clip".into()));
        }
        let width = self.frames * self.d;
        let mut x = Array2::<f32>::zeros((clips.len(), width + self.embed.width()));
        for (i, (clip, &t)) in clips.iter().zip(ts).enumerate() {
            if clip.dim() != (self.frames, self.d) {
                return Err(Error::Contract(format!(
                    "clip shape {:?}, model expects {:?}",
                    clip.dim(),
                    (self.frames, self.d)
                )));
            }
            let mut row = x.row_mut(i);
            let row = row.as_slice_mut().expect("contiguous row");
            for (dst, &v) in row[..width].iter_mut().zip(clip.iter()) {
                *dst = v as f32;
            }
            self.embed.write(t, &mut row[width..]);
        }
        Ok(x)
    }

    pub fn predict(&self, clips: &[ArrayView2<'_, f64>], ts: &[f64]) -> Result<Vec<Array2<f64>>> {
        let x = self.encode(clips, ts)?;
        let y = self.mlp.forward(x.view())?;
        Ok(y.rows()
            .into_iter()
            .map(|r| Array2::from_shape_fn((self.frames, self.d), |(i, c)| r[i * self.d + c] as f64))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_matches_clip() {
        let m = ClipModel::new(10, 16, &[32], 16, 0).unwrap();
        assert_eq!(m.mlp.widths(), &[176, 32, 160]);
        let clip = Array2::<f64>::zeros((10, 16));
        let out = m.predict(&[clip.view(), clip.view()], &[0.1, 0.9]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].dim(), (10, 16));
        assert_ne!(out[0], out[1]);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let m = ClipModel::new(4, 3, &[8], 4, 0).unwrap();
        let bad = Array2::<f64>::zeros((3, 3));
        assert!(matches!(m.predict(&[bad.view()], &[0.5]), Err(Error::Contract(_))));
        assert!(m.predict(&[], &[0.5]).is_err());
    }
}
