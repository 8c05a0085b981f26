use crate::error::{Error, Result};

pub const DEFAULT_EMBED_WIDTH: usize = 16;

/// Highest angular frequency; the others are spaced geometrically down to 1.
const MAX_FREQUENCY: f64 = 100.0;

/// Sinusoidal features `[sin(w_0 t), cos(w_0 t), sin(w_1 t), ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 || !width.is_multiple_of(2) {
            return Err(Error::Contract(format!("time embedding width must be even and positive, got {width}")));
        }
        let half = width / 2;
        let freqs =
            (0..half).map(|k| if half == 1 { 1.0 } else { MAX_FREQUENCY.powf(k as f64 / (half - 1) as f64) }).collect();
        Ok(Self { freqs })
    }

    pub fn width(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn write(&self, t: f64, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.width());
        for (k, &w) in self.freqs.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            out[2 * k] = s as f32;
            out[2 * k + 1] = c as f32;
        }
    }

    pub fn features(&self, t: f64) -> Vec<f32> {
        let mut v = vec![0.0; self.width()];
        self.write(t, &mut v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_deterministic() {
        let e = TimeEmbedding::new(16).unwrap();
        for t in [0.0, 0.013, 0.5, 1.0] {
            let f = e.features(t);
            assert_eq!(f, e.features(t));
            assert!(f.iter().all(|v| v.abs() <= 1.0));
        }
        assert_eq!(e.features(0.0)[..4], [0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(TimeEmbedding::new(7).is_err());
        assert!(TimeEmbedding::new(0).is_err());
        assert_eq!(TimeEmbedding::new(2).unwrap().width(), 2);
    }

    #[test]
    fn distinguishes_nearby_times() {
        let e = TimeEmbedding::new(16).unwrap();
        let a = e.features(0.500);
        let b = e.features(0.501);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 0.05));
    }
}
