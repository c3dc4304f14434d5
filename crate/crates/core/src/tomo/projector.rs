//! Ray-driven projector `A` and its exact adjoint `A^T`.
//!
//! Each ray is clipped to a disc enclosing the image and integrated with the
//! midpoint rule at a step of at most half a pixel, sampling the image with
//! bilinear interpolation. The adjoint scatters through the same weights.

use rayon::prelude::*;

use crate::error::Result;
use crate::tomo::{Image2D, Ray, Sinogram, SinogramGeometry};

/// Midpoint-rule discretization of one ray clipped to the support disc.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RaySamples {
    pub start: (f64, f64),
    pub delta: (f64, f64),
    pub count: usize,
    pub step: f64,
}

impl RaySamples {
    pub fn new(ray: &Ray, radius: f64, max_step: f64) -> Option<Self> {
        let (ox, oy) = ray.origin;
        let (dx, dy) = ray.dir;
        // |o + t d|^2 = r^2 with |d| = 1
        let b = ox * dx + oy * dy;
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let (t0, t1) = (-b - root, -b + root);
        let len = t1 - t0;
        let count = (len / max_step).ceil().max(1.0) as usize;
        let step = len / count as f64;
        let t_first = t0 + 0.5 * step;
        Some(Self {
            start: (ox + t_first * dx, oy + t_first * dy),
            delta: (step * dx, step * dy),
            count,
            step,
        })
    }

    #[inline]
    pub fn point(&self, m: usize) -> (f64, f64) {
        let m = m as f64;
        (self.start.0 + m * self.delta.0, self.start.1 + m * self.delta.1)
    }
}

pub(crate) fn support_radius(img: &Image2D) -> f64 {
    img.half_diagonal() + img.pixel_size()
}

fn trace(img: &Image2D, geom: &SinogramGeometry, view: usize, det: usize) -> Option<RaySamples> {
    let ray = geom.ray(view as f64, det as f64);
    RaySamples::new(&ray, support_radius(img), 0.5 * img.pixel_size())
}

/// Line integrals of `img` along every ray of `geom`.
pub fn forward_project(img: &Image2D, geom: &SinogramGeometry) -> Result<Sinogram> {
    geom.validate()?;
    let w = geom.num_detectors;
    let mut values = vec![0.0; geom.num_views * w];
    values.par_chunks_mut(w).enumerate().for_each(|(view, row)| {
        for (det, out) in row.iter_mut().enumerate() {
            if let Some(rs) = trace(img, geom, view, det) {
                let mut acc = 0.0;
                for m in 0..rs.count {
                    let (x, y) = rs.point(m);
                    acc += img.sample_bilinear(x, y);
                }
                *out = acc * rs.step;
            }
        }
    });
    Sinogram::new(geom.clone(), values)
}

/// Applies `A^T` for the discretization used by [`forward_project`], producing an
/// image on the given grid.
pub fn backproject_adjoint(
    sino: &Sinogram,
    width: usize,
    height: usize,
    pixel_size: f64,
) -> Result<Image2D> {
    let mut img = Image2D::zeros(width, height, pixel_size)?;
    let geom = sino.geometry();
    let mut acc = vec![0.0; width * height];
    for view in 0..geom.num_views {
        for det in 0..geom.num_detectors {
            let y = sino.get(view, det);
            if y == 0.0 {
                continue;
            }
            if let Some(rs) = trace(&img, geom, view, det) {
                let scale = y * rs.step;
                for m in 0..rs.count {
                    let (x, yy) = rs.point(m);
                    img.for_each_bilinear(x, yy, |idx, wgt| acc[idx] += scale * wgt);
                }
            }
        }
    }
    img.values_mut().copy_from_slice(&acc);
    Ok(img)
}
