//! Line-segment sampling and the two segment integrals.
//!
//! A segment of length `rho` is centred on a field coordinate and spans one
//! axis (the projection-angle axis). Samples are drawn uniformly on it and
//! sorted by their distance `nu` to the centre. The centre-based integral is
//!
//! ```text
//! C = sum_{i=1}^{N-1} (1 - exp(-sigma_i d_i)) / exp(sum_{j<=i} sigma_j d_j) * c_i,   d_i = nu_{i+1} - nu_i
//! ```
//!
//! (the transmittance sum may be made exclusive, `j < i`), and the naive
//! integral is the density-weighted average `sum sigma_i c_i / sum sigma_i`.
//! Both return their partial derivatives with respect to every `sigma_i`, `c_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coords::FieldCoordinate;
use crate::error::{invalid, Result};

/// Below this total density the naive integral is treated as empty.
pub const NAIVE_DENSITY_FLOOR: f64 = 1e-12;

/// Derives an independent per-ray seed (splitmix64 finalizer over the inputs).
pub fn ray_seed(global: u64, stream: u64, index: u64) -> u64 {
    let mut z = global
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The segment `l(O_t, rho)` along one coordinate axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSpec {
    center: FieldCoordinate,
    length: f64,
    axis: usize,
}

impl SegmentSpec {
    pub fn new(center: FieldCoordinate, length: f64, axis: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return invalid(format!("segment length must be positive, got {length}"));
        }
        if axis >= center.dim() {
            return invalid(format!("axis {axis} out of range for a {}D coordinate", center.dim()));
        }
        let o = center.components()[axis];
        if !(o - 0.5 * length > -1.0 && o + 0.5 * length < 1.0) {
            return invalid(format!(
                "segment [{}, {}] escapes (-1, 1)",
                o - 0.5 * length,
                o + 0.5 * length
            ));
        }
        Ok(Self { center, length, axis })
    }

    pub fn center(&self) -> &FieldCoordinate {
        &self.center
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn axis(&self) -> usize {
        self.axis
    }
}

/// Samples on a segment, ordered by ascending distance to the centre; ties are
/// broken by signed offset.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSampleSet {
    center: FieldCoordinate,
    length: f64,
    axis: usize,
    signed: Vec<f64>,
}

impl SegmentSampleSet {
    fn from_offsets(spec: &SegmentSpec, mut signed: Vec<f64>) -> Self {
        signed.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        Self { center: spec.center.clone(), length: spec.length, axis: spec.axis, signed }
    }

    pub fn center(&self) -> &FieldCoordinate {
        &self.center
    }

    /// Segment length; zero for the point baseline.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.signed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signed.is_empty()
    }

    /// Signed offsets `x_i - O_t` along the segment axis.
    pub fn signed_offsets(&self) -> &[f64] {
        &self.signed
    }

    /// Distances `nu_i = |x_i - O_t|`, ascending.
    pub fn offsets(&self) -> Vec<f64> {
        self.signed.iter().map(|v| v.abs()).collect()
    }

    /// Distances rescaled by `1 / unit`.
    pub fn offsets_in(&self, unit: f64) -> Vec<f64> {
        self.signed.iter().map(|v| v.abs() / unit).collect()
    }

    /// Full field coordinate of sample `i`.
    pub fn position(&self, i: usize) -> Vec<f64> {
        let mut p = self.center.components().to_vec();
        p[self.axis] += self.signed[i];
        p
    }
}

/// Draws `n` i.i.d. uniform samples on the segment, deterministically from `seed`.
pub fn sample_segment(spec: &SegmentSpec, n: usize, seed: u64) -> Result<SegmentSampleSet> {
    if n < 2 {
        return invalid(format!("segment sampling needs at least 2 samples, got {n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * spec.length;
    let signed = (0..n).map(|_| rng.gen_range(-half..half)).collect();
    Ok(SegmentSampleSet::from_offsets(spec, signed))
}

/// The degenerate one-sample set at the centre used by the point baseline.
pub fn point_sample_baseline(center: &FieldCoordinate) -> SegmentSampleSet {
    SegmentSampleSet { center: center.clone(), length: 0.0, axis: 0, signed: vec![0.0] }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Transmittance {
    /// `exp(-sum_{j<=i})`, as the discretized centre integral is written.
    #[default]
    Inclusive,
    /// `exp(-sum_{j<i})`, as in standard volume rendering.
    Exclusive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NaiveNormalization {
    /// `sum sigma_i c_i / sum sigma_i`.
    #[default]
    WeightedAverage,
    /// `(1 / (rho sum sigma_i)) sum_{i<N} sigma_i c_i d_i`, distances measured from
    /// the segment start.
    Literal,
}

/// Integral value with its partial derivatives per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub d_sigma: Vec<f64>,
    pub d_c: Vec<f64>,
}

fn check_inputs(nu: &[f64], sigma: &[f64], c: &[f64]) -> Result<()> {
    if nu.len() < 2 {
        return invalid(format!("quadrature needs at least 2 samples, got {}", nu.len()));
    }
    if sigma.len() != nu.len() || c.len() != nu.len() {
        return invalid(format!(
            "length mismatch: {} offsets, {} densities, {} intensities",
            nu.len(),
            sigma.len(),
            c.len()
        ));
    }
    if nu.windows(2).any(|w| !(w[1] >= w[0])) {
        return invalid("sample distances must be sorted ascending");
    }
    Ok(())
}

/// Quadrature weights `w_i` of the centre integral; the last sample gets 0.
pub fn center_weights(nu: &[f64], sigma: &[f64], mode: Transmittance) -> Result<Vec<f64>> {
    check_inputs(nu, sigma, sigma)?;
    Ok(weights_unchecked(nu, sigma, mode).0)
}

/// Returns `(w_i, exp(-tau_i) T_i)` where `tau_i = sigma_i d_i` and `T_i` is the transmittance.
fn weights_unchecked(nu: &[f64], sigma: &[f64], mode: Transmittance) -> (Vec<f64>, Vec<f64>) {
    let n = nu.len();
    let mut w = vec![0.0; n];
    let mut local = vec![0.0; n];
    let mut depth = 0.0;
    for i in 0..n - 1 {
        let tau = sigma[i] * (nu[i + 1] - nu[i]);
        let (attn, trans) = match mode {
            Transmittance::Inclusive => {
                depth += tau;
                (-tau, (-depth).exp())
            }
            Transmittance::Exclusive => {
                let t = (-depth).exp();
                depth += tau;
                (-tau, t)
            }
        };
        // 1 - exp(-tau) without cancellation for small tau
        w[i] = -attn.exp_m1() * trans;
        local[i] = attn.exp() * trans;
    }
    (w, local)
}

/// Centre-based segment integral and its partials.
pub fn center_line_integral(
    nu: &[f64],
    sigma: &[f64],
    c: &[f64],
    mode: Transmittance,
) -> Result<QuadratureResult> {
    check_inputs(nu, sigma, c)?;
    let n = nu.len();
    let (w, local) = weights_unchecked(nu, sigma, mode);
    let value = w.iter().zip(c).map(|(w, c)| w * c).sum();
    // dC/dtau_k = exp(-tau_k) T_k c_k - sum over terms whose transmittance contains tau_k
    let mut d_sigma = vec![0.0; n];
    let mut suffix = 0.0;
    for k in (0..n - 1).rev() {
        let own = w[k] * c[k];
        let tail = match mode {
            Transmittance::Inclusive => suffix + own,
            Transmittance::Exclusive => suffix,
        };
        d_sigma[k] = (nu[k + 1] - nu[k]) * (local[k] * c[k] - tail);
        suffix += own;
    }
    Ok(QuadratureResult { value, d_sigma, d_c: w })
}

/// Density-weighted average of the intensities and its partials.
pub fn naive_line_integral(sigma: &[f64], c: &[f64]) -> Result<QuadratureResult> {
    if sigma.is_empty() || sigma.len() != c.len() {
        return invalid(format!("length mismatch: {} densities, {} intensities", sigma.len(), c.len()));
    }
    let n = sigma.len();
    let total: f64 = sigma.iter().sum();
    if total < NAIVE_DENSITY_FLOOR {
        return Ok(QuadratureResult { value: 0.0, d_sigma: vec![0.0; n], d_c: vec![0.0; n] });
    }
    let value = sigma.iter().zip(c).map(|(s, c)| s * c).sum::<f64>() / total;
    let d_sigma = c.iter().map(|ci| (ci - value) / total).collect();
    let d_c = sigma.iter().map(|s| s / total).collect();
    Ok(QuadratureResult { value, d_sigma, d_c })
}

/// `(1 / (rho sum sigma)) sum_{i<N} sigma_i c_i d_i` with the samples taken in
/// positional order along the segment (`positions` are signed offsets, any order).
pub fn naive_line_integral_literal(
    positions: &[f64],
    sigma: &[f64],
    c: &[f64],
    rho: f64,
) -> Result<QuadratureResult> {
    if positions.len() < 2 || sigma.len() != positions.len() || c.len() != positions.len() {
        return invalid("literal naive integral needs matching inputs of at least 2 samples");
    }
    let n = positions.len();
    let total: f64 = sigma.iter().sum();
    if total < NAIVE_DENSITY_FLOOR {
        return Ok(QuadratureResult { value: 0.0, d_sigma: vec![0.0; n], d_c: vec![0.0; n] });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| positions[a].total_cmp(&positions[b]));
    let norm = rho * total;
    let mut acc = 0.0;
    let mut d_sigma = vec![0.0; n];
    let mut d_c = vec![0.0; n];
    for pair in order.windows(2) {
        let (i, next) = (pair[0], pair[1]);
        let d = positions[next] - positions[i];
        acc += sigma[i] * c[i] * d;
        d_sigma[i] = c[i] * d / norm;
        d_c[i] = sigma[i] * d / norm;
    }
    let value = acc / norm;
    for ds in &mut d_sigma {
        *ds -= value / total;
    }
    Ok(QuadratureResult { value, d_sigma, d_c })
}

/// How a sinogram value is predicted from the samples of one ray.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum IntegralMode {
    /// Centre-based integral over a sampled segment.
    #[default]
    Center,
    /// Density-weighted average over a sampled segment.
    Naive,
    /// Intensity at the segment centre, no segment sampling.
    Point,
}

impl IntegralMode {
    pub fn name(&self) -> &'static str {
        match self {
            IntegralMode::Center => "center",
            IntegralMode::Naive => "naive",
            IntegralMode::Point => "point",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(IntegralMode::Center),
            "naive" => Ok(IntegralMode::Naive),
            "point" => Ok(IntegralMode::Point),
            _ => invalid(format!("unknown integral mode {s:?}")),
        }
    }
}

/// Guarded relative error `|a - b| / max(|a|, |b|, 1e-5)`. The floor sits above
/// the roundoff of a central difference at step `1e-5` on values of order one.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Largest relative error between the analytic partials and central finite
/// differences with step `1e-5`. In naive mode `nu` is ignored.
pub fn quadrature_gradcheck(nu: &[f64], sigma: &[f64], c: &[f64], mode: IntegralMode) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let eval = |s: &[f64], cc: &[f64]| -> Result<QuadratureResult> {
        match mode {
            IntegralMode::Center => center_line_integral(nu, s, cc, Transmittance::Inclusive),
            IntegralMode::Naive => naive_line_integral(s, cc),
            IntegralMode::Point => invalid("the point baseline has no quadrature"),
        }
    };
    let analytic = eval(sigma, c)?;
    let mut worst: f64 = 0.0;
    let mut s = sigma.to_vec();
    let mut cc = c.to_vec();
    for i in 0..sigma.len() {
        let orig = s[i];
        s[i] = orig + STEP;
        let up = eval(&s, &cc)?.value;
        s[i] = orig - STEP;
        let down = eval(&s, &cc)?.value;
        s[i] = orig;
        worst = worst.max(relative_error(analytic.d_sigma[i], (up - down) / (2.0 * STEP)));

        let orig = cc[i];
        cc[i] = orig + STEP;
        let up = eval(&s, &cc)?.value;
        cc[i] = orig - STEP;
        let down = eval(&s, &cc)?.value;
        cc[i] = orig;
        worst = worst.max(relative_error(analytic.d_c[i], (up - down) / (2.0 * STEP)));
    }
    Ok(worst)
}
