use crate::error::{invalid, Result};

/// A dense row-major 2D image of attenuation coefficients.
///
/// Pixel `(col, row)` is centred at physical coordinates
/// `x = (col + 0.5 - width/2) * pixel_size`, `y = (height/2 - row - 0.5) * pixel_size`,
/// so row 0 is the top of the image and the origin sits at the image centre.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    pixel_size: f64,
    values: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixel_size: f64, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid(format!("image dimensions must be positive, got {width}x{height}"));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return invalid(format!("pixel size must be positive, got {pixel_size}"));
        }
        if values.len() != width * height {
            return invalid(format!(
                "expected {} values for a {width}x{height} image, got {}",
                width * height,
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("image contains non-finite values");
        }
        Ok(Self { width, height, pixel_size, values })
    }

    pub fn zeros(width: usize, height: usize, pixel_size: f64) -> Result<Self> {
        Self::new(width, height, pixel_size, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    /// Physical centre of a pixel.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        let x = (col as f64 + 0.5 - self.width as f64 / 2.0) * self.pixel_size;
        let y = (self.height as f64 / 2.0 - row as f64 - 0.5) * self.pixel_size;
        (x, y)
    }

    /// Half the diagonal of the image support, in physical units.
    pub fn half_diagonal(&self) -> f64 {
        let w = self.width as f64 * self.pixel_size;
        let h = self.height as f64 * self.pixel_size;
        0.5 * (w * w + h * h).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Continuous pixel coordinates of a physical point: `(col, row)` as floats.
    #[inline]
    pub(crate) fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = x / self.pixel_size + self.width as f64 / 2.0 - 0.5;
        let fy = self.height as f64 / 2.0 - 0.5 - y / self.pixel_size;
        (fx, fy)
    }

    /// Bilinear interpolation with zero extension outside the grid.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_bilinear(x, y, |idx, w| acc += w * self.values[idx]);
        acc
    }

    /// Visits the (up to four) pixels touched by a bilinear sample at `(x, y)`
    /// with their interpolation weights. Out-of-grid neighbours are skipped.
    #[inline]
    pub(crate) fn for_each_bilinear(&self, x: f64, y: f64, mut f: impl FnMut(usize, f64)) {
        let (fx, fy) = self.to_grid(x, y);
        let c0 = fx.floor();
        let r0 = fy.floor();
        let tx = fx - c0;
        let ty = fy - r0;
        let (c0, r0) = (c0 as i64, r0 as i64);
        let (w, h) = (self.width as i64, self.height as i64);
        if c0 < -1 || r0 < -1 || c0 >= w || r0 >= h {
            return;
        }
        for (dr, wy) in [(0, 1.0 - ty), (1, ty)] {
            let r = r0 + dr;
            if r < 0 || r >= h {
                continue;
            }
            for (dc, wx) in [(0, 1.0 - tx), (1, tx)] {
                let c = c0 + dc;
                if c < 0 || c >= w {
                    continue;
                }
                f((r * w + c) as usize, wx * wy);
            }
        }
    }
}
