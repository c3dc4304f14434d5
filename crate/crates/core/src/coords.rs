//! Sinogram-index to field-space normalization and Fourier positional encoding.

use crate::error::{invalid, Result};

/// A point of the neural field; every component lies in `(-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldCoordinate(Vec<f64>);

impl FieldCoordinate {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&components.len()) {
            return invalid(format!("field coordinates are 2D or 3D, got {}D", components.len()));
        }
        if let Some(c) = components.iter().find(|c| !(c.abs() < 1.0)) {
            return invalid(format!("field coordinate component {c} outside (-1, 1)"));
        }
        Ok(Self(components))
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Per-axis sinogram extents plus the padding `P` that keeps coordinates off the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationParams {
    dims: Vec<usize>,
    padding: usize,
}

impl NormalizationParams {
    pub fn new(dims: Vec<usize>, padding: usize) -> Result<Self> {
        if padding < 1 {
            return invalid("padding must be at least 1");
        }
        if dims.is_empty() || dims.iter().any(|&d| d < 1) {
            return invalid(format!("extents must be positive, got {dims:?}"));
        }
        Ok(Self { dims, padding })
    }

    /// The `(L, W)` specialization used for 2D sinograms.
    pub fn sinogram_2d(views: usize, detectors: usize, padding: usize) -> Result<Self> {
        Self::new(vec![views, detectors], padding)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    /// `(2 idx - dim) / (dim + 2P)` for one axis; fractional indices are allowed.
    #[inline]
    pub fn component(&self, axis: usize, idx: f64) -> f64 {
        let d = self.dims[axis] as f64;
        (2.0 * idx - d) / (d + 2.0 * self.padding as f64)
    }

    /// Field-space distance between two adjacent indices on `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 / (self.dims[axis] as f64 + 2.0 * self.padding as f64)
    }
}

/// Maps a (possibly fractional) sinogram index to field space.
pub fn normalize_index(idx: &[f64], params: &NormalizationParams) -> Result<FieldCoordinate> {
    if idx.len() != params.dims.len() {
        return invalid(format!(
            "index has {} axes but the sinogram has {}",
            idx.len(),
            params.dims.len()
        ));
    }
    for (axis, (&i, &d)) in idx.iter().zip(&params.dims).enumerate() {
        if !(i >= 0.0 && i < d as f64) {
            return invalid(format!("index {i} out of range [0, {d}) on axis {axis}"));
        }
    }
    let comps = idx.iter().enumerate().map(|(axis, &i)| params.component(axis, i)).collect();
    FieldCoordinate::new(comps)
}

/// A positionally encoded coordinate of length `d + 2 d omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCoordinate {
    pub values: Vec<f64>,
    pub omega: usize,
}

pub fn encoded_len(dim: usize, omega: usize) -> usize {
    dim + 2 * dim * omega
}

/// Writes `[x, (sin 2^i x_k, cos 2^i x_k) for i in 0..omega for k in 0..d]` into `out`.
#[inline]
pub fn encode_into(x: &[f64], omega: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), encoded_len(x.len(), omega));
    out[..x.len()].copy_from_slice(x);
    let mut pos = x.len();
    let mut freq = 1.0;
    for _ in 0..omega {
        for &v in x {
            let (s, c) = (freq * v).sin_cos();
            out[pos] = s;
            out[pos + 1] = c;
            pos += 2;
        }
        freq *= 2.0;
    }
}

pub fn positional_encode(x: &FieldCoordinate, omega: usize) -> EncodedCoordinate {
    let mut values = vec![0.0; encoded_len(x.dim(), omega)];
    encode_into(x.components(), omega, &mut values);
    EncodedCoordinate { values, omega }
}
