use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::tomo::Image2D;

/// Source/detector distances of a flat-detector fan beam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FanParams {
    pub source_to_axis: f64,
    pub source_to_detector: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Beam {
    Parallel,
    Fan(FanParams),
}

impl Beam {
    pub fn name(&self) -> &'static str {
        match self {
            Beam::Parallel => "parallel",
            Beam::Fan(_) => "fan",
        }
    }
}

/// A ray as an origin and a unit direction.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: (f64, f64),
    pub dir: (f64, f64),
}

/// Acquisition geometry of a 2D sinogram.
///
/// View `l` sits at angle `start + l * (end - start) / num_views`; the end of
/// the angular range is exclusive. Detector bin `k` is centred at
/// `(k + 0.5 - num_detectors / 2) * detector_spacing` along the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramGeometry {
    pub beam: Beam,
    pub num_views: usize,
    pub num_detectors: usize,
    pub angular_range: (f64, f64),
    pub detector_spacing: f64,
}

impl SinogramGeometry {
    /// Parallel beam over `[0, pi)`.
    pub fn parallel(num_views: usize, num_detectors: usize, detector_spacing: f64) -> Self {
        Self {
            beam: Beam::Parallel,
            num_views,
            num_detectors,
            angular_range: (0.0, PI),
            detector_spacing,
        }
    }

    /// Parallel beam whose detector covers the full diagonal of `img` at two bins per pixel.
    pub fn parallel_for_image(img: &Image2D, num_views: usize) -> Self {
        let spacing = 0.5 * img.pixel_size();
        let bins = (2.0 * img.half_diagonal() / spacing).ceil() as usize;
        Self::parallel(num_views, bins + bins % 2, spacing)
    }

    /// Fan beam over `[0, 2pi)` with explicit distances.
    pub fn fan(
        num_views: usize,
        num_detectors: usize,
        detector_spacing: f64,
        source_to_axis: f64,
        source_to_detector: f64,
    ) -> Self {
        Self {
            beam: Beam::Fan(FanParams { source_to_axis, source_to_detector }),
            num_views,
            num_detectors,
            angular_range: (0.0, 2.0 * PI),
            detector_spacing,
        }
    }

    /// Fan beam with the default distances for `img`: the source sits at twice the
    /// half-diagonal from the axis and the detector at twice that from the source.
    /// The detector spacing is chosen so the fan covers the image disc.
    pub fn fan_for_image(img: &Image2D, num_views: usize, num_detectors: usize) -> Self {
        let radius = img.half_diagonal();
        let source_to_axis = 2.0 * radius;
        let source_to_detector = 2.0 * source_to_axis;
        let half_angle = (radius / source_to_axis).asin();
        let half_width = source_to_detector * half_angle.tan() * 1.02;
        let spacing = 2.0 * half_width / num_detectors as f64;
        Self::fan(num_views, num_detectors, spacing, source_to_axis, source_to_detector)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_views == 0 || self.num_detectors == 0 {
            return invalid(format!(
                "geometry needs at least one view and one detector, got {}x{}",
                self.num_views, self.num_detectors
            ));
        }
        let (start, end) = self.angular_range;
        if !(start.is_finite() && end.is_finite() && end > start) {
            return invalid(format!("angular range must satisfy end > start, got ({start}, {end})"));
        }
        if !(self.detector_spacing > 0.0 && self.detector_spacing.is_finite()) {
            return invalid(format!("detector spacing must be positive, got {}", self.detector_spacing));
        }
        if let Beam::Fan(fp) = self.beam {
            if !(fp.source_to_axis > 0.0 && fp.source_to_detector > fp.source_to_axis) {
                return invalid(format!(
                    "fan distances need source_to_detector > source_to_axis > 0, got {} / {}",
                    fp.source_to_detector, fp.source_to_axis
                ));
            }
        }
        Ok(())
    }

    pub fn angular_span(&self) -> f64 {
        self.angular_range.1 - self.angular_range.0
    }

    pub fn angle_step(&self) -> f64 {
        self.angular_span() / self.num_views as f64
    }

    /// Angle of a (possibly fractional) view index.
    pub fn view_angle(&self, view: f64) -> f64 {
        self.angular_range.0 + view * self.angle_step()
    }

    /// Offset of a (possibly fractional) detector index from the detector centre.
    pub fn detector_offset(&self, det: f64) -> f64 {
        (det + 0.5 - self.num_detectors as f64 / 2.0) * self.detector_spacing
    }

    /// Fractional detector index for an offset along the detector.
    pub fn detector_index(&self, offset: f64) -> f64 {
        offset / self.detector_spacing + self.num_detectors as f64 / 2.0 - 0.5
    }

    /// Same geometry with a different view count over the same angular range.
    pub fn with_views(&self, num_views: usize) -> Self {
        Self { num_views, ..self.clone() }
    }

    /// The ray measured by view `view`, detector bin `det`.
    pub fn ray(&self, view: f64, det: f64) -> Ray {
        let angle = self.view_angle(view);
        let u = self.detector_offset(det);
        let (s, c) = angle.sin_cos();
        match self.beam {
            Beam::Parallel => Ray { origin: (u * c, u * s), dir: (-s, c) },
            Beam::Fan(fp) => {
                // central ray points along (cos, sin); the source sits behind the axis
                let src = (-fp.source_to_axis * c, -fp.source_to_axis * s);
                let px = src.0 + fp.source_to_detector * c - u * s;
                let py = src.1 + fp.source_to_detector * s + u * c;
                let (dx, dy) = (px - src.0, py - src.1);
                let norm = (dx * dx + dy * dy).sqrt();
                Ray { origin: src, dir: (dx / norm, dy / norm) }
            }
        }
    }
}

/// An `L x W` grid of line integrals bound to its geometry (view-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    geometry: SinogramGeometry,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: SinogramGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        let expected = geometry.num_views * geometry.num_detectors;
        if values.len() != expected {
            return invalid(format!("sinogram expects {expected} values, got {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("sinogram contains non-finite values");
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: SinogramGeometry) -> Result<Self> {
        let n = geometry.num_views * geometry.num_detectors;
        Self::new(geometry, vec![0.0; n])
    }

    pub fn geometry(&self) -> &SinogramGeometry {
        &self.geometry
    }

    pub fn num_views(&self) -> usize {
        self.geometry.num_views
    }

    pub fn num_detectors(&self) -> usize {
        self.geometry.num_detectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, view: usize, det: usize) -> f64 {
        self.values[view * self.geometry.num_detectors + det]
    }

    pub fn view(&self, view: usize) -> &[f64] {
        let w = self.geometry.num_detectors;
        &self.values[view * w..(view + 1) * w]
    }
}

/// Keeps every `(L / keep)`-th view.
pub fn sparsify_views(sino: &Sinogram, keep: usize) -> Result<Sinogram> {
    let total = sino.num_views();
    if keep == 0 || keep > total || !total.is_multiple_of(keep) {
        return invalid(format!("cannot keep {keep} of {total} views uniformly"));
    }
    let stride = total / keep;
    let mut values = Vec::with_capacity(keep * sino.num_detectors());
    for l in (0..total).step_by(stride) {
        values.extend_from_slice(sino.view(l));
    }
    Sinogram::new(sino.geometry().with_views(keep), values)
}
