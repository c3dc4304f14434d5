//! Evaluates the field along sinogram rays: sample each segment, encode,
//! run the network and integrate. Training additionally backpropagates a
//! per-ray upstream gradient into the parameters.

use ndarray::Array2;
use rayon::prelude::*;

use crate::coords::{encode_into, encoded_len};
use crate::error::{invalid, Result};
use crate::field::{FieldBatch, FieldOutputs, ForwardCache, MlpField};
use crate::quadrature::{
    center_line_integral, naive_line_integral, naive_line_integral_literal, point_sample_baseline,
    sample_segment, IntegralMode, NaiveNormalization, QuadratureResult, SegmentSampleSet, SegmentSpec,
    Transmittance,
};

/// Unit in which sample distances enter the centre-based integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistanceUnit {
    /// Raw field-space distances.
    Field,
    /// Distances divided by the half-length of the ray's own segment, times `scale`,
    /// so `nu` spans `[0, scale]` whatever the segment length.
    HalfSegment { scale: f64 },
    /// Distances divided by the mean training sample spacing
    /// `rho_train / (n_train - 1)`, times `scale`. The unit stays fixed when
    /// synthesis shortens the segments and thins the samples.
    Spacing { scale: f64 },
}

impl DistanceUnit {
    pub fn name(&self) -> String {
        match self {
            DistanceUnit::Field => "field".into(),
            DistanceUnit::HalfSegment { scale } => format!("half-segment:{scale:e}"),
            DistanceUnit::Spacing { scale } => format!("spacing:{scale:e}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "field" {
            return Ok(DistanceUnit::Field);
        }
        let scale = |v: &str| match v.parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
            _ => invalid(format!("distance scale must be positive, got {v:?}")),
        };
        match s.split_once(':') {
            Some(("half-segment", v)) => Ok(DistanceUnit::HalfSegment { scale: scale(v)? }),
            Some(("spacing", v)) => Ok(DistanceUnit::Spacing { scale: scale(v)? }),
            _ => invalid(format!("unknown distance unit {s:?}")),
        }
    }

    pub fn scale(&self) -> Option<f64> {
        match *self {
            DistanceUnit::Field => None,
            DistanceUnit::HalfSegment { scale } | DistanceUnit::Spacing { scale } => Some(scale),
        }
    }
}

impl Default for DistanceUnit {
    fn default() -> Self {
        DistanceUnit::HalfSegment { scale: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub mode: IntegralMode,
    pub samples: usize,
    pub omega: usize,
    pub transmittance: Transmittance,
    pub naive: NaiveNormalization,
    pub distance: DistanceUnit,
    /// Training sample spacing in field units, read by [`DistanceUnit::Spacing`].
    pub spacing: f64,
    /// Upper bound on network rows evaluated at once.
    pub shard_rows: usize,
    /// Fixed shard order and sequential gradient reduction.
    pub deterministic: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            mode: IntegralMode::Center,
            samples: 65,
            omega: 10,
            transmittance: Transmittance::Inclusive,
            naive: NaiveNormalization::WeightedAverage,
            distance: DistanceUnit::default(),
            spacing: 1.0,
            shard_rows: 16_384,
            deterministic: true,
        }
    }
}

impl RenderOptions {
    pub fn samples_per_ray(&self) -> usize {
        match self.mode {
            IntegralMode::Point => 1,
            _ => self.samples,
        }
    }
}

/// One ray to evaluate: its segment and the seed of its samples.
#[derive(Clone, Debug)]
pub struct RayQuery {
    pub spec: SegmentSpec,
    pub seed: u64,
}

fn sample_set(q: &RayQuery, opts: &RenderOptions) -> Result<SegmentSampleSet> {
    match opts.mode {
        IntegralMode::Point => Ok(point_sample_baseline(q.spec.center())),
        _ => sample_segment(&q.spec, opts.samples, q.seed),
    }
}

fn integrate(set: &SegmentSampleSet, sigma: &[f64], c: &[f64], opts: &RenderOptions) -> Result<QuadratureResult> {
    match opts.mode {
        IntegralMode::Point => Ok(QuadratureResult { value: c[0], d_sigma: vec![0.0], d_c: vec![1.0] }),
        IntegralMode::Naive => match opts.naive {
            NaiveNormalization::WeightedAverage => naive_line_integral(sigma, c),
            NaiveNormalization::Literal => {
                naive_line_integral_literal(set.signed_offsets(), sigma, c, set.length())
            }
        },
        IntegralMode::Center => {
            let nu = match opts.distance {
                DistanceUnit::Field => set.offsets(),
                DistanceUnit::HalfSegment { scale } => set.offsets_in(0.5 * set.length() / scale),
                DistanceUnit::Spacing { scale } => set.offsets_in(opts.spacing / scale),
            };
            center_line_integral(&nu, sigma, c, opts.transmittance)
        }
    }
}

struct Shard {
    sets: Vec<SegmentSampleSet>,
    enc_x: Array2<f64>,
    enc_o: Array2<f64>,
}

fn build_shard(queries: &[RayQuery], opts: &RenderOptions) -> Result<Shard> {
    let n = opts.samples_per_ray();
    let dim = queries.first().map_or(2, |q| q.spec.center().dim());
    let width = encoded_len(dim, opts.omega);
    let mut enc_x = Array2::zeros((queries.len() * n, width));
    let mut enc_o = Array2::zeros((queries.len(), width));
    let mut sets = Vec::with_capacity(queries.len());
    for (r, q) in queries.iter().enumerate() {
        let set = sample_set(q, opts)?;
        encode_into(q.spec.center().components(), opts.omega, enc_o.row_mut(r).as_slice_mut().unwrap());
        for i in 0..n {
            let pos = set.position(i);
            encode_into(&pos, opts.omega, enc_x.row_mut(r * n + i).as_slice_mut().unwrap());
        }
        sets.push(set);
    }
    Ok(Shard { sets, enc_x, enc_o })
}

fn shard_forward(field: &MlpField, shard: &Shard, opts: &RenderOptions) -> Result<(FieldOutputs, ForwardCache)> {
    field.forward_train(&FieldBatch {
        enc_x: shard.enc_x.view(),
        enc_o: shard.enc_o.view(),
        samples_per_ray: opts.samples_per_ray(),
    })
}

fn rays_per_shard(opts: &RenderOptions) -> usize {
    (opts.shard_rows / opts.samples_per_ray()).max(1)
}

/// Integrates every query and returns the predicted sinogram values together
/// with the raw per-sample outputs of each shard.
fn render_shard(field: &MlpField, queries: &[RayQuery], opts: &RenderOptions) -> Result<Vec<f64>> {
    let shard = build_shard(queries, opts)?;
    let (out, _) = shard_forward(field, &shard, opts)?;
    let n = opts.samples_per_ray();
    shard
        .sets
        .iter()
        .enumerate()
        .map(|(r, set)| Ok(integrate(set, &out.sigma[r * n..(r + 1) * n], &out.c[r * n..(r + 1) * n], opts)?.value))
        .collect()
}

/// Predicted sinogram values for `queries`.
pub fn render(field: &MlpField, queries: &[RayQuery], opts: &RenderOptions) -> Result<Vec<f64>> {
    let chunk = rays_per_shard(opts);
    let parts: Vec<Result<Vec<f64>>> = if opts.deterministic {
        queries.chunks(chunk).map(|q| render_shard(field, q, opts)).collect()
    } else {
        queries.par_chunks(chunk).map(|q| render_shard(field, q, opts)).collect()
    };
    let mut out = Vec::with_capacity(queries.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn grad_shard(
    field: &MlpField,
    queries: &[RayQuery],
    upstream: &(dyn Fn(usize, f64) -> f64 + Sync),
    first_ray: usize,
    opts: &RenderOptions,
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    let shard = build_shard(queries, opts)?;
    let (out, cache) = shard_forward(field, &shard, opts)?;
    let n = opts.samples_per_ray();
    let mut d_sigma = vec![0.0; out.sigma.len()];
    let mut d_c = vec![0.0; out.c.len()];
    let mut preds = Vec::with_capacity(queries.len());
    for (r, set) in shard.sets.iter().enumerate() {
        let span = r * n..(r + 1) * n;
        let q = integrate(set, &out.sigma[span.clone()], &out.c[span.clone()], opts)?;
        let g = upstream(first_ray + r, q.value);
        for (i, m) in span.enumerate() {
            d_sigma[m] = g * q.d_sigma[i];
            d_c[m] = g * q.d_c[i];
        }
        preds.push(q.value);
    }
    field.backward(&cache, &d_sigma, &d_c, grad);
    Ok(preds)
}

/// Predicts every query and accumulates into `grad` the parameter gradient of
/// `sum_r L_r`, where `upstream(r, prediction)` returns `dL_r / dprediction`.
pub fn render_with_grad(
    field: &MlpField,
    queries: &[RayQuery],
    upstream: &(dyn Fn(usize, f64) -> f64 + Sync),
    opts: &RenderOptions,
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    let chunk = rays_per_shard(opts);
    let mut preds = Vec::with_capacity(queries.len());
    if opts.deterministic {
        for (k, q) in queries.chunks(chunk).enumerate() {
            preds.extend(grad_shard(field, q, upstream, k * chunk, opts, grad)?);
        }
        return Ok(preds);
    }
    let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = queries
        .par_chunks(chunk)
        .enumerate()
        .map(|(k, q)| {
            let mut local = vec![0.0; grad.len()];
            let p = grad_shard(field, q, upstream, k * chunk, opts, &mut local)?;
            Ok((p, local))
        })
        .collect();
    for part in parts {
        let (p, local) = part?;
        preds.extend(p);
        for (g, l) in grad.iter_mut().zip(local) {
            *g += l;
        }
    }
    Ok(preds)
}
