//! Fully connected network with hand-written reverse-mode gradients.
//!
//! Generic over the float type: training runs in `f32`, the gradient check
//! replays the same weights in `f64`.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub trait Scalar: Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static {}
impl<T: Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static> Scalar for T {}

fn lit<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("representable constant")
}

/// One array per weight matrix and bias vector, in layer order. Used for the
/// parameters themselves and for everything shaped like them.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    /// `fan_in x fan_out`
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: Scalar> Params<F> {
    pub fn zeros_like(other: &Params<F>) -> Self {
        Self {
            weights: other.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: other.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat views in declaration order: layer 0 weights, layer 0 bias, layer 1 weights, ...
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn same_shape(&self, other: &Params<F>) -> bool {
        self.weights.len() == other.weights.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.dim() == b.dim())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        let c = |v: &F| G::from_f64(v.to_f64().expect("finite")).expect("representable");
        Params {
            weights: self.weights.iter().map(|w| w.map(c)).collect(),
            biases: self.biases.iter().map(|b| b.map(c)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    widths: Vec<usize>,
    pub params: Params<F>,
}

/// Pre-activations and activations kept for the backward pass.
struct Tape<F> {
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
}

impl<F: Scalar> Mlp<F> {
    /// Fan-in scaled uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Contract(format!("bad layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            let w = Array2::from_shape_simple_fn((pair[0], pair[1]), || lit::<F>(rng.random_range(-bound..bound)));
            weights.push(w);
            biases.push(Array1::zeros(pair[1]));
        }
        Ok(Self { widths: widths.to_vec(), params: Params { weights, biases } })
    }

    pub fn from_params(widths: Vec<usize>, params: Params<F>) -> Result<Self> {
        let ok = params.weights.len() + 1 == widths.len()
            && params.weights.iter().zip(widths.windows(2)).all(|(w, p)| w.dim() == (p[0], p[1]))
            && params.biases.iter().zip(&widths[1..]).all(|(b, &n)| b.len() == n);
        if !ok {
            return Err(Error::Contract("parameter shapes do not match layer widths".into()));
        }
        Ok(Self { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn cast<G: Scalar>(&self) -> Mlp<G> {
        Mlp { widths: self.widths.clone(), params: self.params.cast() }
    }

    fn check_input(&self, x: &ArrayView2<'_, F>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::Contract(format!("input width {} != {}", x.ncols(), self.input_width())));
        }
        Ok(())
    }

    /// Rows of `x` are independent samples.
    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        Ok(self.run(x, None))
    }

    fn run(&self, x: ArrayView2<'_, F>, mut tape: Option<&mut Tape<F>>) -> Array2<F> {
        let layers = self.params.weights.len();
        let mut h = x.to_owned();
        for (l, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let z = h.dot(w) + b;
            let next = if l + 1 < layers { z.mapv(gelu) } else { z.clone() };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(h);
                t.pre.push(z);
            }
            h = next;
        }
        h
    }

    /// Mean squared error over every output entry and its parameter gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, F>, target: ArrayView2<'_, F>) -> Result<(F, Params<F>)> {
        self.check_input(&x)?;
        if target.dim() != (x.nrows(), self.output_width()) {
            return Err(Error::Contract(format!("target shape {:?} does not match output", target.dim())));
        }
        let mut tape = Tape { inputs: Vec::new(), pre: Vec::new() };
        let y = self.run(x, Some(&mut tape));
        let resid = &y - &target;
        let count = lit::<F>(resid.len() as f64);
        let loss = resid.iter().fold(F::zero(), |acc, &r| acc + r * r) / count;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step: 0, trace: Vec::new() });
        }
        let mut delta = resid * (lit::<F>(2.0) / count);
        let mut grads = Params::zeros_like(&self.params);
        for l in (0..self.params.weights.len()).rev() {
            if l + 1 < self.params.weights.len() {
                delta.zip_mut_with(&tape.pre[l], |d, &z| *d = *d * gelu_grad(z));
            }
            grads.weights[l] = tape.inputs[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.params.weights[l].t());
            }
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, x: ArrayView2<'_, F>, target: ArrayView2<'_, F>) -> Result<F> {
        let y = self.forward(x)?;
        let r = &y - &target;
        Ok(r.iter().fold(F::zero(), |acc, &v| acc + v * v) / lit::<F>(r.len() as f64))
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<F: Scalar>(z: F) -> F {
    let u = lit::<F>(GELU_K) * (z + lit::<F>(GELU_C) * z * z * z);
    lit::<F>(0.5) * z * (F::one() + u.tanh())
}

pub fn gelu_grad<F: Scalar>(z: F) -> F {
    let u = lit::<F>(GELU_K) * (z + lit::<F>(GELU_C) * z * z * z);
    let th = u.tanh();
    let du = lit::<F>(GELU_K) * (F::one() + lit::<F>(3.0 * GELU_C) * z * z);
    lit::<F>(0.5) * (F::one() + th) + lit::<F>(0.5) * z * (F::one() - th * th) * du
}

/// Largest gradient-check violation: for each parameter, central differences
/// with step `delta` in `f64`. Returns `(worst_abs, worst_rel)` over entries
/// failing the absolute bound, and how many entries were checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

pub fn gradient_check(
    model: &Mlp<f64>,
    x: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    delta: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheck> {
    let (_, grads) = model.loss_and_grad(x, target)?;
    let mut probe = model.clone();
    let mut report = GradCheck { checked: 0, failures: 0, max_abs_err: 0.0, max_rel_err: 0.0 };
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    for (block, g) in analytic.iter().enumerate() {
        for (i, &ga) in g.iter().enumerate() {
            let orig = probe.params.slices()[block][i];
            probe.params.slices_mut()[block][i] = orig + delta;
            let up = probe.loss(x, target)?;
            probe.params.slices_mut()[block][i] = orig - delta;
            let down = probe.loss(x, target)?;
            probe.params.slices_mut()[block][i] = orig;
            let fd = (up - down) / (2.0 * delta);
            let abs = (fd - ga).abs();
            let rel = abs / fd.abs().max(ga.abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs > abs_tol {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel > rel_tol {
                    report.failures += 1;
                }
            }
        }
    }
    Ok(report)
}
