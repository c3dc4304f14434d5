use crate::error::{invalid, Result};
use crate::field::MlpField;
use crate::quadrature::{ray_seed, IntegralMode};
use crate::render::{render, RayQuery};
use crate::tomo::{Sinogram, SinogramGeometry};
use crate::trainer::{segment_at, TrainConfig, TrainGrid};

const SYNTH_STREAM: u64 = 0x73796e7468;

/// Samples per segment at synthesis time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NTest {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisConfig {
    pub dense_views: usize,
    /// `None` keeps the sparse geometry's range: `[0, pi)` parallel, `[0, 2pi)` fan.
    pub angular_range: Option<(f64, f64)>,
    pub n_test: NTest,
    /// Overrides the test-time segment length.
    pub rho_test: Option<f64>,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { dense_views: 720, angular_range: None, n_test: NTest::Auto, rho_test: None, seed: 0 }
    }
}

/// `round((n_train - 1) * eta / 720) + 1`, at least 2.
pub fn n_test_auto(n_train: usize, eta: usize) -> usize {
    n_test_for(n_train, eta, 720)
}

/// [`n_test_auto`] with the dense view count as denominator.
pub fn n_test_for(n_train: usize, eta: usize, dense_views: usize) -> usize {
    let n = ((n_train.saturating_sub(1) * eta) as f64 / dense_views as f64).round() as usize + 1;
    n.max(2)
}

/// Resolved test-time sampling: samples per segment and segment length.
pub fn test_sampling(train: &TrainConfig, grid: &TrainGrid, sparse_views: usize, cfg: &SynthesisConfig) -> (usize, f64) {
    let n = match (train.integral_mode, cfg.n_test) {
        (IntegralMode::Point, _) => 1,
        (_, NTest::Fixed(n)) => n,
        (_, NTest::Auto) => n_test_for(train.n_train, sparse_views, cfg.dense_views),
    };
    let rho = cfg
        .rho_test
        .unwrap_or_else(|| train.rho_policy.length(cfg.dense_views, grid.params.padding()));
    (n, rho)
}

/// Dense-view geometry for a sparse one.
pub fn dense_geometry(sv: &SinogramGeometry, cfg: &SynthesisConfig) -> SinogramGeometry {
    let mut g = sv.with_views(cfg.dense_views);
    if let Some(range) = cfg.angular_range {
        g.angular_range = range;
    }
    g
}

/// Queries for every (dense view, detector) ray, with the grid index of each
/// dense view expressed in sparse-view units.
pub fn dense_queries(
    sv: &SinogramGeometry,
    grid: &TrainGrid,
    cfg: &SynthesisConfig,
    rho: f64,
) -> Result<Vec<RayQuery>> {
    let dense = dense_geometry(sv, cfg);
    let w = sv.num_detectors;
    let mut out = Vec::with_capacity(cfg.dense_views * w);
    for j in 0..cfg.dense_views {
        let theta = dense.view_angle(j as f64);
        let view = (theta - sv.angular_range.0) / sv.angle_step();
        for k in 0..w {
            let spec = segment_at(view, k as f64, &grid.params, rho)?;
            out.push(RayQuery { spec, seed: ray_seed(cfg.seed, SYNTH_STREAM, (j * w + k) as u64) });
        }
    }
    Ok(out)
}

/// Renders the dense-view sinogram of a field trained on a sparse sinogram
/// with geometry `sv` under `train`.
pub fn synthesize_dense(
    field: &MlpField,
    sv: &SinogramGeometry,
    train: &TrainConfig,
    cfg: &SynthesisConfig,
) -> Result<Sinogram> {
    if cfg.dense_views < sv.num_views {
        return invalid(format!("dense_views {} is below the sparse count {}", cfg.dense_views, sv.num_views));
    }
    if let NTest::Fixed(0) = cfg.n_test {
        return invalid("n_test must be at least 1");
    }
    let grid = TrainGrid::from_geometry(sv, train)?;
    let (n, rho) = test_sampling(train, &grid, sv.num_views, cfg);
    let queries = dense_queries(sv, &grid, cfg, rho)?;
    let mut opts = train.render_options(&grid);
    opts.samples = n;
    if n < 2 && train.integral_mode != IntegralMode::Point {
        return invalid(format!("{} integral needs at least 2 test samples", train.integral_mode.name()));
    }
    let values = render(field, &queries, &opts)?;
    Sinogram::new(dense_geometry(sv, cfg), values)
}
