//! Filtered back-projection.
//!
//! Parallel sinograms are ramp-filtered view by view in the Fourier domain
//! (zero-padded to the next power of two at least twice the detector count)
//! and smeared back with linear interpolation, scaled by `pi / L`. Fan
//! sinograms are first rebinned onto a parallel grid.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::tomo::{Beam, FanParams, Image2D, Sinogram, SinogramGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RampFilter {
    RamLak,
    Hann,
}

impl RampFilter {
    pub fn name(&self) -> &'static str {
        match self {
            RampFilter::RamLak => "ramlak",
            RampFilter::Hann => "hann",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ramlak" | "ram-lak" => Ok(RampFilter::RamLak),
            "hann" => Ok(RampFilter::Hann),
            other => invalid(format!("unknown filter {other:?}")),
        }
    }
}

/// Frequency response of the band-limited ramp for a detector spacing `tau`.
///
/// Built from the spatial Ram-Lak kernel `h(0) = 1/(4 tau^2)`,
/// `h(n odd) = -1/(pi n tau)^2`, which avoids the DC offset of a sampled `|f|`.
fn ramp_response(len: usize, tau: f64, filter: RampFilter) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    kernel[0].re = 1.0 / (4.0 * tau * tau);
    for n in 1..len / 2 {
        if n % 2 == 1 {
            let v = -1.0 / (PI * n as f64 * tau).powi(2);
            kernel[n].re = v;
            kernel[len - n].re = v;
        }
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let window = match filter {
                RampFilter::RamLak => 1.0,
                RampFilter::Hann => {
                    let f = k.min(len - k) as f64 / (len as f64 / 2.0);
                    0.5 * (1.0 + (PI * f).cos())
                }
            };
            h.re * window
        })
        .collect()
}

/// Ramp-filters every view of a parallel sinogram, returning the filtered values.
pub fn ramp_filter_views(sino: &Sinogram, filter: RampFilter) -> Vec<f64> {
    let w = sino.num_detectors();
    let tau = sino.geometry().detector_spacing;
    let len = (2 * w).next_power_of_two();
    let response = ramp_response(len, tau, filter);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut out = Vec::with_capacity(sino.values().len());
    for view in 0..sino.num_views() {
        buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for (z, &p) in buf.iter_mut().zip(sino.view(view)) {
            z.re = p;
        }
        fwd.process(&mut buf);
        for (z, &h) in buf.iter_mut().zip(&response) {
            *z *= h;
        }
        inv.process(&mut buf);
        // rustfft is unnormalized; the discrete convolution carries a factor tau
        let scale = tau / len as f64;
        out.extend(buf[..w].iter().map(|z| z.re * scale));
    }
    out
}

/// Reconstructs a `size x size` image with pixel size `pixel_size`.
pub fn fbp_reconstruct(
    sino: &Sinogram,
    filter: RampFilter,
    size: usize,
    pixel_size: f64,
) -> Result<Image2D> {
    if sino.num_views() < 2 {
        return invalid(format!("FBP needs at least 2 views, got {}", sino.num_views()));
    }
    match sino.geometry().beam {
        Beam::Parallel => fbp_parallel(sino, filter, size, pixel_size),
        Beam::Fan(fp) => {
            let par = rebin_fan_to_parallel(sino, fp)?;
            fbp_parallel(&par, filter, size, pixel_size)
        }
    }
}

fn fbp_parallel(sino: &Sinogram, filter: RampFilter, size: usize, pixel_size: f64) -> Result<Image2D> {
    let geom = sino.geometry();
    let filtered = ramp_filter_views(sino, filter);
    let w = geom.num_detectors;
    let mut img = Image2D::zeros(size, size, pixel_size)?;
    let trig: Vec<(f64, f64)> = (0..geom.num_views)
        .map(|l| geom.view_angle(l as f64).sin_cos())
        .collect();
    let centers: Vec<(f64, f64)> = (0..size * size)
        .map(|i| img.pixel_center(i % size, i / size))
        .collect();
    let scale = PI / geom.num_views as f64;
    for (view, &(s, c)) in trig.iter().enumerate() {
        let q = &filtered[view * w..(view + 1) * w];
        for (out, &(x, y)) in img.values_mut().iter_mut().zip(&centers) {
            let k = geom.detector_index(x * c + y * s);
            let k0 = k.floor();
            let t = k - k0;
            let k0 = k0 as i64;
            let mut v = 0.0;
            if k0 >= 0 && (k0 as usize) < w {
                v += (1.0 - t) * q[k0 as usize];
            }
            if k0 + 1 >= 0 && ((k0 + 1) as usize) < w {
                v += t * q[(k0 + 1) as usize];
            }
            *out += v;
        }
    }
    img.values_mut().iter_mut().for_each(|v| *v *= scale);
    Ok(img)
}

/// Resamples a fan sinogram onto a parallel grid over `[0, pi)` by bilinear
/// interpolation in (source angle, detector) space. Lines measured from both
/// sides are averaged.
///
/// A fan ray at source angle `beta` hitting detector offset `u` has fan angle
/// `gamma = atan(u / D)`, parallel angle `theta = beta + gamma - pi/2` and
/// signed distance `s = -R sin(gamma)` (`R` source-to-axis, `D` source-to-detector).
pub fn rebin_fan_to_parallel(sino: &Sinogram, fp: FanParams) -> Result<Sinogram> {
    let fan = sino.geometry();
    let views = fan.num_views;
    let spacing = fan.detector_spacing * fp.source_to_axis / fp.source_to_detector / REBIN_OVERSAMPLE as f64;
    let dets = fan.num_detectors * REBIN_OVERSAMPLE;
    let par = SinogramGeometry::parallel(views, dets, spacing);
    let span = fan.angular_span();
    let full_turn = (span - 2.0 * PI).abs() < 1e-9;
    let step = fan.angle_step();
    let mut values = vec![0.0; views * dets];
    for l in 0..views {
        let theta = par.view_angle(l as f64);
        for k in 0..dets {
            let s = par.detector_offset(k as f64);
            let ratio = -s / fp.source_to_axis;
            if ratio.abs() >= 1.0 {
                continue;
            }
            let gamma = ratio.asin();
            let u = fp.source_to_detector * gamma.tan();
            let det = fan.detector_index(u);
            // the same line seen from the opposite side: (theta + pi, -s)
            let candidates = [theta - gamma + PI / 2.0, theta + PI - (-gamma) + PI / 2.0];
            let (mut sum, mut hits) = (0.0, 0);
            for (i, beta) in candidates.iter().enumerate() {
                let det_i = if i == 0 { det } else { fan.detector_index(-u) };
                let rel = beta - fan.angular_range.0;
                let view = if full_turn {
                    rel.rem_euclid(2.0 * PI) / step
                } else {
                    rel / step
                };
                if let Some(v) = interp_fan(sino, view, det_i, full_turn) {
                    sum += v;
                    hits += 1;
                }
            }
            if hits > 0 {
                values[l * dets + k] = sum / hits as f64;
            }
        }
    }
    Sinogram::new(par, values)
}

/// Parallel detector bins per fan detector bin after rebinning.
const REBIN_OVERSAMPLE: usize = 2;

fn interp_fan(sino: &Sinogram, view: f64, det: f64, periodic: bool) -> Option<f64> {
    let views = sino.num_views() as i64;
    let dets = sino.num_detectors() as i64;
    let v0 = view.floor();
    let d0 = det.floor();
    let tv = view - v0;
    let td = det - d0;
    let (v0, d0) = (v0 as i64, d0 as i64);
    if !periodic && (view < 0.0 || view > (views - 1) as f64) {
        return None;
    }
    if d0 < -1 || d0 >= dets {
        return Some(0.0);
    }
    let mut acc = 0.0;
    for (dv, wv) in [(0, 1.0 - tv), (1, tv)] {
        if wv == 0.0 {
            continue;
        }
        let v = if periodic { (v0 + dv).rem_euclid(views) } else { v0 + dv };
        for (dd, wd) in [(0, 1.0 - td), (1, td)] {
            let d = d0 + dd;
            if d < 0 || d >= dets {
                continue;
            }
            acc += wv * wd * sino.get(v as usize, d as usize);
        }
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let sino = Sinogram::zeros(SinogramGeometry::parallel(8, 16, 0.1)).unwrap();
        let img = fbp_reconstruct(&sino, RampFilter::RamLak, 12, 0.1).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_view_is_rejected() {
        let sino = Sinogram::zeros(SinogramGeometry::parallel(1, 16, 0.1)).unwrap();
        assert!(fbp_reconstruct(&sino, RampFilter::Hann, 12, 0.1).is_err());
    }

    #[test]
    fn ramp_response_has_zero_mean_kernel_tail() {
        // H(0) = sum of the spatial kernel, small but positive for finite support
        let h = ramp_response(64, 1.0, RampFilter::RamLak);
        assert!(h[0].abs() < 0.01);
        assert!(h[32] > h[1]);
        let hann = ramp_response(64, 1.0, RampFilter::Hann);
        assert!(hann[32].abs() < 1e-12);
    }
}
