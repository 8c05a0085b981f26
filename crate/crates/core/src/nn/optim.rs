//! AdamW with decoupled weight decay, and an exponential moving average of
//! the weights for evaluation.

use super::mlp::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 3e-5, beta1: 0.9, beta2: 0.95, weight_decay: 1e-4, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Params<f32>,
    pub v: Params<f32>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &Params<f32>) -> Self {
        Self { config, step: 0, m: Params::zeros_like(params), v: Params::zeros_like(params) }
    }

    pub fn update(&mut self, params: &mut Params<f32>, grads: &Params<f32>) {
        assert!(params.same_shape(grads) && params.same_shape(&self.m), "optimizer shape mismatch");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        let (lr, b1, b2) = (c.lr as f32, c.beta1 as f32, c.beta2 as f32);
        let decay = (c.lr * c.weight_decay) as f32;
        let (bc1, bc2, eps) = (bc1 as f32, bc2 as f32, c.eps as f32);

        let mut ms = self.m.slices_mut();
        let mut vs = self.v.slices_mut();
        for (((w, g), m), v) in
            params.slices_mut().into_iter().zip(grads.slices()).zip(ms.iter_mut()).zip(vs.iter_mut())
        {
            for i in 0..w.len() {
                w[i] -= decay * w[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub rate: f64,
    pub shadow: Params<f32>,
}

impl Ema {
    pub fn new(rate: f64, params: &Params<f32>) -> Self {
        Self { rate, shadow: params.clone() }
    }

    /// `shadow <- rate * shadow + (1 - rate) * weights`
    pub fn update(&mut self, params: &Params<f32>) {
        assert!(params.same_shape(&self.shadow), "ema shape mismatch");
        let r = self.rate as f32;
        for (s, w) in self.shadow.slices_mut().into_iter().zip(params.slices()) {
            for (a, &b) in s.iter_mut().zip(w) {
                *a = r * *a + (1.0 - r) * b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Mlp;
    use ndarray::{Array1, Array2};

    fn params(vals: &[f32]) -> Params<f32> {
        Params {
            weights: vec![Array2::from_shape_vec((1, vals.len()), vals.to_vec()).unwrap()],
            biases: vec![Array1::zeros(vals.len())],
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = params(&[1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &p);
        let g = Params::zeros_like(&p);
        for _ in 0..5 {
            opt.update(&mut p, &g);
        }
        assert_eq!(p, before);
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = params(&[1.0, 1.0, 1.0]);
        let cfg = AdamWConfig { lr: 1e-2, weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &p);
        let g = params(&[3.0, -0.5, 1e-3]);
        opt.update(&mut p, &g);
        let w = p.weights[0].row(0).to_vec();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] - 1.01).abs() < 1e-6);
        assert!((w[2] - 0.99).abs() < 1e-5);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = params(&[2.0]);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(cfg, &p);
        let g = Params::zeros_like(&p);
        opt.update(&mut p, &g);
        assert!((p.weights[0][[0, 0]] - 1.9).abs() < 1e-6);
    }

    #[test]
    fn convex_quadratic_descends() {
        // least squares fit of a linear layer
        let mut model = Mlp::<f32>::init(&[3, 2], 0).unwrap();
        let x = Array2::from_shape_fn((32, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 5.0 - 1.0);
        let truth = Array2::from_shape_vec((3, 2), vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1]).unwrap();
        let y = x.dot(&truth);
        let mut opt = AdamW::new(AdamWConfig { lr: 2e-3, weight_decay: 0.0, ..Default::default() }, &model.params);
        let mut losses = Vec::new();
        for _ in 0..1000 {
            let (l, g) = model.loss_and_grad(x.view(), y.view()).unwrap();
            losses.push(l);
            opt.update(&mut model.params, &g);
        }
        assert!(losses[999] < 1e-3 * losses[0]);
        // block means fall monotonically once past the first block
        let blocks: Vec<f32> = losses.chunks(100).map(|c| c.iter().sum::<f32>() / c.len() as f32).collect();
        assert!(blocks.windows(2).all(|w| w[1] <= w[0]), "{blocks:?}");
        assert!(model.params.is_finite());
    }

    #[test]
    fn ema_limits() {
        let p = params(&[1.0, 2.0]);
        let q = params(&[3.0, -2.0]);
        let mut frozen = Ema::new(1.0, &p);
        frozen.update(&q);
        assert_eq!(frozen.shadow, p);
        let mut follow = Ema::new(0.0, &p);
        follow.update(&q);
        assert_eq!(follow.shadow, q);
        let mut slow = Ema::new(0.9, &p);
        for _ in 0..50 {
            slow.update(&q);
        }
        let gap = (slow.shadow.weights[0][[0, 0]] - 3.0).abs();
        assert!((gap - 2.0 * 0.9f32.powi(50)).abs() < 1e-4);
    }
}
