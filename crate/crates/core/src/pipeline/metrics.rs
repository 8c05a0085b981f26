//! PSNR and 1-D windowed SSIM for `[-1, 1]` signals.

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::task::TaskConfig;
use crate::error::{Error, Result};

pub const DATA_RANGE: f64 = 2.0;
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

pub fn psnr(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != b.dim() || a.is_empty() {
        return Err(Error::Contract(format!("psnr shapes {:?} vs {:?}", a.dim(), b.dim())));
    }
    let mse = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (DATA_RANGE * DATA_RANGE / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let z = (i as f64 - c) / SSIM_SIGMA;
        *v = (-0.5 * z * z).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

fn ssim_1d(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, w: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (0.01 * DATA_RANGE).powi(2);
    let c2 = (0.03 * DATA_RANGE).powi(2);
    let positions = x.len() - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for o in 0..positions {
        let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, &wk) in w.iter().enumerate() {
            let (a, b) = (x[o + k], y[o + k]);
            mx += wk * a;
            my += wk * b;
            sxx += wk * a * a;
            syy += wk * b * b;
            sxy += wk * (a * b);
        }
        let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    total / positions as f64
}

/// Mean over frames (rows) of the windowed SSIM along each frame.
pub fn ssim(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != b.dim() || a.nrows() == 0 {
        return Err(Error::Contract(format!("ssim shapes {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.ncols() < SSIM_WINDOW {
        return Err(Error::Window { window: SSIM_WINDOW, len: a.ncols() });
    }
    let w = gaussian_window();
    let s: f64 = a.rows().into_iter().zip(b.rows()).map(|(x, y)| ssim_1d(x, y, &w)).sum();
    Ok(s / a.nrows() as f64)
}

/// Mean PSNR and SSIM over clips, each scored on its free frames only.
pub fn evaluate(task: &TaskConfig, pred: &[Array2<f64>], truth: &[Array2<f64>]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract("prediction and reference counts differ".into()));
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for (a, b) in pred.iter().zip(truth) {
        task.check_clip(a.view())?;
        task.check_clip(b.view())?;
        p += psnr(task.free(a.view()), task.free(b.view()))?;
        s += ssim(task.free(a.view()), task.free(b.view()))?;
    }
    let n = pred.len() as f64;
    Ok((p / n, s / n))
}
