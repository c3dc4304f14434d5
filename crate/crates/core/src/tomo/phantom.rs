//! Shepp-Logan head phantom.

use crate::error::{invalid, Result};
use crate::tomo::Image2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contrast {
    /// Original intensities (skull at 2.0, clamped to 1.0 on rasterization).
    Standard,
    /// Toft's higher-contrast variant.
    Modified,
}

/// One ellipse of the phantom on the `[-1, 1]^2` square.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center: (f64, f64),
    pub rotation_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }
}

// (semi_x, semi_y, x0, y0, rotation in degrees)
const SHAPES: [(f64, f64, f64, f64, f64); 10] = [
    (0.69, 0.92, 0.0, 0.0, 0.0),
    (0.6624, 0.874, 0.0, -0.0184, 0.0),
    (0.11, 0.31, 0.22, 0.0, -18.0),
    (0.16, 0.41, -0.22, 0.0, 18.0),
    (0.21, 0.25, 0.0, 0.35, 0.0),
    (0.046, 0.046, 0.0, 0.1, 0.0),
    (0.046, 0.046, 0.0, -0.1, 0.0),
    (0.046, 0.023, -0.08, -0.605, 0.0),
    (0.023, 0.023, 0.0, -0.606, 0.0),
    (0.023, 0.046, 0.06, -0.605, 0.0),
];

const STANDARD: [f64; 10] = [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];
const MODIFIED: [f64; 10] = [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];

pub fn ellipses(contrast: Contrast) -> Vec<Ellipse> {
    let intensities = match contrast {
        Contrast::Standard => STANDARD,
        Contrast::Modified => MODIFIED,
    };
    SHAPES
        .iter()
        .zip(intensities)
        .map(|(&(a, b, x0, y0, phi), intensity)| Ellipse {
            intensity,
            semi_x: a,
            semi_y: b,
            center: (x0, y0),
            rotation_deg: phi,
        })
        .collect()
}

/// Rasterizes the ten-ellipse phantom at `size x size`, sampling pixel centres.
///
/// The image covers `[-1, 1]^2`, so `pixel_size = 2 / size`. Values are clamped
/// to `[0, 1]`.
pub fn make_shepp_logan(size: usize, contrast: Contrast) -> Result<Image2D> {
    if size < 16 {
        return invalid(format!("phantom size must be at least 16, got {size}"));
    }
    let table = ellipses(contrast);
    let mut img = Image2D::zeros(size, size, 2.0 / size as f64)?;
    for row in 0..size {
        for col in 0..size {
            let (x, y) = img.pixel_center(col, row);
            let v: f64 = table
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.intensity)
                .sum();
            img.set(col, row, v.clamp(0.0, 1.0));
        }
    }
    Ok(img)
}
