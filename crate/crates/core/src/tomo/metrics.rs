use crate::error::{invalid, Result};
use crate::tomo::Image2D;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// PSNR in dB and mean SSIM of a prediction against ground truth.
///
/// `psnr` is `f64::INFINITY` when the images are identical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn is_exact(&self) -> bool {
        self.psnr.is_infinite()
    }
}

/// Data range used by both metrics: `max(gt) - min(gt)`.
fn data_range(gt: &Image2D) -> Result<f64> {
    let range = gt.max() - gt.min();
    if range <= 0.0 {
        return invalid("ground truth has zero dynamic range");
    }
    Ok(range)
}

fn check_shapes(pred: &Image2D, gt: &Image2D) -> Result<()> {
    if !pred.same_shape(gt) {
        return invalid(format!(
            "image shapes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        ));
    }
    Ok(())
}

pub fn psnr(pred: &Image2D, gt: &Image2D) -> Result<f64> {
    check_shapes(pred, gt)?;
    let range = data_range(gt)?;
    let n = gt.values().len() as f64;
    let mse = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

/// Summed-area table with a zero row/column prepended.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(width: usize, height: usize, f: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for r in 0..height {
            let mut row = 0.0;
            for c in 0..width {
                row += f(r * width + c);
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn window(&self, col: usize, row: usize, size: usize) -> f64 {
        let s = self.stride;
        self.sums[(row + size) * s + col + size] - self.sums[row * s + col + size]
            - self.sums[(row + size) * s + col]
            + self.sums[row * s + col]
    }
}

/// Mean SSIM over all fully contained 7x7 uniform windows with sample
/// covariance normalization.
pub fn ssim(pred: &Image2D, gt: &Image2D) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (w, h) = (gt.width(), gt.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return invalid(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"));
    }
    let range = data_range(gt)?;
    let (x, y) = (pred.values(), gt.values());
    let sx = Integral::new(w, h, |i| x[i]);
    let sy = Integral::new(w, h, |i| y[i]);
    let sxx = Integral::new(w, h, |i| x[i] * x[i]);
    let syy = Integral::new(w, h, |i| y[i] * y[i]);
    let sxy = Integral::new(w, h, |i| x[i] * y[i]);
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for row in 0..=h - SSIM_WINDOW {
        for col in 0..=w - SSIM_WINDOW {
            let mx = sx.window(col, row, SSIM_WINDOW) / np;
            let my = sy.window(col, row, SSIM_WINDOW) / np;
            let vx = cov_norm * (sxx.window(col, row, SSIM_WINDOW) / np - mx * mx);
            let vy = cov_norm * (syy.window(col, row, SSIM_WINDOW) / np - my * my);
            let vxy = cov_norm * (sxy.window(col, row, SSIM_WINDOW) / np - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn compute_metrics(pred: &Image2D, gt: &Image2D) -> Result<MetricReport> {
    Ok(MetricReport { psnr: psnr(pred, gt)?, ssim: ssim(pred, gt)? })
}
