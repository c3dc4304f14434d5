//! Self-supervised fitting of a field to one sparse-view sinogram.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::coords::{encoded_len, normalize_index, NormalizationParams};
use crate::error::{invalid, AprfError, Result};
use crate::field::{adam_step, save_checkpoint, AdamState, FieldTopology, MlpField};
use crate::quadrature::{ray_seed, IntegralMode, NaiveNormalization, SegmentSpec, Transmittance};
use crate::render::{render_with_grad, DistanceUnit, RayQuery, RenderOptions};
use crate::tomo::{Sinogram, SinogramGeometry};

const EPOCH_STREAM: u64 = 0x65706f6368;
const STEP_STREAM: u64 = 0x73746570;
const INIT_STREAM: u64 = 0x696e6974;

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Segment length along the view axis, in normalized units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoPolicy {
    /// `2 / (L + P)`
    Default,
    /// `1 / (L + P)`
    Half,
    /// `4 / (L + P)`
    Double,
    Explicit(f64),
}

impl RhoPolicy {
    pub fn length(&self, views: usize, padding: usize) -> f64 {
        let denom = (views + padding) as f64;
        match *self {
            RhoPolicy::Default => 2.0 / denom,
            RhoPolicy::Half => 1.0 / denom,
            RhoPolicy::Double => 4.0 / denom,
            RhoPolicy::Explicit(v) => v,
        }
    }

    pub fn name(&self) -> String {
        match self {
            RhoPolicy::Default => "default".into(),
            RhoPolicy::Half => "half".into(),
            RhoPolicy::Double => "double".into(),
            RhoPolicy::Explicit(v) => format!("{v}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "default" => Ok(RhoPolicy::Default),
            "half" => Ok(RhoPolicy::Half),
            "double" => Ok(RhoPolicy::Double),
            other => match other.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(RhoPolicy::Explicit(v)),
                _ => invalid(format!("unknown rho policy {other:?}")),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_train: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub rho_policy: RhoPolicy,
    pub integral_mode: IntegralMode,
    pub use_center_input: bool,
    pub decouple_heads: bool,
    pub seed: u64,
    pub width: usize,
    pub omega: usize,
    /// Smallest padding `P`; raised automatically until every segment fits.
    pub padding: usize,
    pub transmittance: Transmittance,
    pub naive_normalization: NaiveNormalization,
    pub distance_unit: DistanceUnit,
    pub deterministic: bool,
    pub shard_rows: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_train: 65,
            batch_size: 2048,
            max_iters: 40_000,
            lr_start: 3e-3,
            lr_end: 2e-5,
            weight_decay: 1e-7,
            rho_policy: RhoPolicy::Default,
            integral_mode: IntegralMode::Center,
            use_center_input: true,
            decouple_heads: true,
            seed: 0,
            width: 256,
            omega: 10,
            padding: 1,
            transmittance: Transmittance::Inclusive,
            naive_normalization: NaiveNormalization::WeightedAverage,
            distance_unit: DistanceUnit::default(),
            deterministic: true,
            shard_rows: 16_384,
            log_every: 100,
            checkpoint_every: 5000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_end > 0.0 && self.lr_end < self.lr_start) {
            return invalid(format!("need 0 < lr_end < lr_start, got {} and {}", self.lr_end, self.lr_start));
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if self.n_train < 2 && self.integral_mode != IntegralMode::Point {
            return invalid(format!("n_train must be at least 2, got {}", self.n_train));
        }
        if self.padding == 0 {
            return invalid("padding must be at least 1");
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return invalid("weight_decay must be finite and nonnegative");
        }
        if let Some(scale) = self.distance_unit.scale() {
            if !(scale > 0.0 && scale.is_finite()) {
                return invalid("distance scale must be positive");
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> FieldTopology {
        let enc = encoded_len(2, self.omega);
        FieldTopology {
            width: self.width,
            enc_x: enc,
            enc_o: enc,
            use_center_input: self.use_center_input,
            decouple_heads: self.decouple_heads,
        }
    }

    /// Render options for a field trained on `grid`.
    pub fn render_options(&self, grid: &TrainGrid) -> RenderOptions {
        RenderOptions {
            mode: self.integral_mode,
            samples: self.n_train,
            omega: self.omega,
            transmittance: self.transmittance,
            naive: self.naive_normalization,
            distance: self.distance_unit,
            spacing: grid.rho / self.n_train.saturating_sub(1).max(1) as f64,
            shard_rows: self.shard_rows,
            deterministic: self.deterministic,
        }
    }

    /// Canonical `key = value` listing of every field.
    pub fn canonical(&self) -> String {
        let transmittance = match self.transmittance {
            Transmittance::Inclusive => "inclusive",
            Transmittance::Exclusive => "exclusive",
        };
        let naive = match self.naive_normalization {
            NaiveNormalization::WeightedAverage => "weighted",
            NaiveNormalization::Literal => "literal",
        };
        [
            format!("n_train = {}", self.n_train),
            format!("batch_size = {}", self.batch_size),
            format!("max_iters = {}", self.max_iters),
            format!("lr_start = {:e}", self.lr_start),
            format!("lr_end = {:e}", self.lr_end),
            format!("weight_decay = {:e}", self.weight_decay),
            format!("rho_policy = {}", self.rho_policy.name()),
            format!("integral_mode = {}", self.integral_mode.name()),
            format!("use_center_input = {}", self.use_center_input),
            format!("decouple_heads = {}", self.decouple_heads),
            format!("seed = {}", self.seed),
            format!("width = {}", self.width),
            format!("omega = {}", self.omega),
            format!("padding = {}", self.padding),
            format!("transmittance = {transmittance}"),
            format!("naive_normalization = {naive}"),
            format!("distance_unit = {}", self.distance_unit.name()),
        ]
        .join("\n")
    }

    /// Hex SHA-256 of [`TrainConfig::canonical`], truncated to 16 characters.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Geometric interpolation from `lr_start` to `lr_end` over `max_iters` steps.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.max_iters == 0 {
        return cfg.lr_start;
    }
    let t = step.min(cfg.max_iters) as f64 / cfg.max_iters as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t)
}

/// Smallest padding `P >= cfg.padding` for which every segment centred on a
/// view index in `[0, views - 1]` stays inside the open unit interval.
pub fn effective_padding(views: usize, policy: RhoPolicy, min_padding: usize) -> Result<usize> {
    for p in min_padding.max(1)..min_padding.max(1) + 4 * views + 64 {
        let params = NormalizationParams::new(vec![views], p)?;
        let edge = params.component(0, 0.0).abs().max(params.component(0, (views - 1) as f64).abs());
        if edge + 0.5 * policy.length(views, p) < 1.0 {
            return Ok(p);
        }
    }
    invalid(format!("segment length under policy {} never fits", policy.name()))
}

/// One training ray.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub view: usize,
    pub detector: usize,
    pub query: RayQuery,
    pub target: f64,
}

/// Segment for the pixel at fractional grid index `(view, detector)`.
pub fn segment_at(view: f64, detector: f64, params: &NormalizationParams, rho: f64) -> Result<SegmentSpec> {
    let center = normalize_index(&[view, detector], params)?;
    SegmentSpec::new(center, rho, 0)
}

/// Seed of the samples on ray `pixel` at `step`.
pub fn step_ray_seed(seed: u64, step: usize, pixel: usize) -> u64 {
    ray_seed(ray_seed(seed, STEP_STREAM, step as u64), STEP_STREAM, pixel as u64)
}

/// Pixel indices of the batch used at `step`.
pub fn batch_indices(total: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    if batch >= total {
        return (0..total).collect();
    }
    let per_epoch = total / batch;
    let epoch = step / per_epoch;
    let slot = step % per_epoch;
    let order = epoch_order(total, seed, epoch);
    order[slot * batch..(slot + 1) * batch].to_vec()
}

fn epoch_order(total: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(ray_seed(seed, EPOCH_STREAM, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Training grid, segment length and normalization derived from a sinogram and config.
#[derive(Clone, Debug)]
pub struct TrainGrid {
    pub params: NormalizationParams,
    pub rho: f64,
}

impl TrainGrid {
    pub fn new(sino: &Sinogram, cfg: &TrainConfig) -> Result<Self> {
        Self::from_geometry(sino.geometry(), cfg)
    }

    pub fn from_geometry(geom: &SinogramGeometry, cfg: &TrainConfig) -> Result<Self> {
        let views = geom.num_views;
        let padding = effective_padding(views, cfg.rho_policy, cfg.padding)?;
        let params = NormalizationParams::sinogram_2d(views, geom.num_detectors, padding)?;
        Ok(Self { params, rho: cfg.rho_policy.length(views, padding) })
    }
}

pub fn make_batch(sino: &Sinogram, cfg: &TrainConfig, step: usize) -> Result<Vec<BatchItem>> {
    let grid = TrainGrid::new(sino, cfg)?;
    let total = sino.num_views() * sino.num_detectors();
    let idx = batch_indices(total, cfg.batch_size, cfg.seed, step);
    build_batch(sino, &grid, cfg.seed, step, &idx)
}

fn build_batch(sino: &Sinogram, grid: &TrainGrid, seed: u64, step: usize, idx: &[usize]) -> Result<Vec<BatchItem>> {
    let w = sino.num_detectors();
    idx.iter()
        .map(|&pixel| {
            let (view, detector) = (pixel / w, pixel % w);
            let spec = segment_at(view as f64, detector as f64, &grid.params, grid.rho)?;
            Ok(BatchItem {
                view,
                detector,
                query: RayQuery { spec, seed: step_ray_seed(seed, step, pixel) },
                target: sino.get(view, detector),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Entries every `log_every` steps and at the last step.
    pub logged: Vec<LogEntry>,
    /// Loss of every step.
    pub step_losses: Vec<f64>,
    /// Mean loss over the last epoch, or over all steps if fewer.
    pub final_loss: f64,
    pub wall_secs: f64,
    pub config_hash: String,
}

/// Result of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
}

pub struct Trainer<'a> {
    sino: &'a Sinogram,
    cfg: TrainConfig,
    grid: TrainGrid,
    field: MlpField,
    adam: AdamState,
    grad: Vec<f64>,
    step: usize,
    epoch: Option<(usize, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(sino: &'a Sinogram, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = TrainGrid::new(sino, &cfg)?;
        let field = MlpField::init(cfg.topology(), ray_seed(cfg.seed, INIT_STREAM, 0))?;
        let n = field.num_params();
        Ok(Self {
            sino,
            adam: AdamState::new(n, cfg.weight_decay),
            grad: vec![0.0; n],
            cfg,
            grid,
            field,
            step: 0,
            epoch: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &TrainGrid {
        &self.grid
    }

    pub fn field(&self) -> &MlpField {
        &self.field
    }

    pub fn into_field(self) -> MlpField {
        self.field
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        let total = self.sino.num_views() * self.sino.num_detectors();
        (total / self.cfg.batch_size).max(1)
    }

    fn indices(&mut self, step: usize) -> Vec<usize> {
        let total = self.sino.num_views() * self.sino.num_detectors();
        let b = self.cfg.batch_size;
        if b >= total {
            return (0..total).collect();
        }
        let per_epoch = total / b;
        let epoch = step / per_epoch;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            self.epoch = Some((epoch, epoch_order(total, self.cfg.seed, epoch)));
        }
        let slot = step % per_epoch;
        self.epoch.as_ref().unwrap().1[slot * b..(slot + 1) * b].to_vec()
    }

    /// Runs one step: batch, forward, loss, backward, Adam.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let step = self.step;
        let idx = self.indices(step);
        let batch = build_batch(self.sino, &self.grid, self.cfg.seed, step, &idx)?;
        let queries: Vec<RayQuery> = batch.iter().map(|b| b.query.clone()).collect();
        let targets: Vec<f64> = batch.iter().map(|b| b.target).collect();
        let scale = 2.0 / batch.len() as f64;
        let upstream = |r: usize, pred: f64| scale * (pred - targets[r]);
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let opts = self.cfg.render_options(&self.grid);
        let predictions = render_with_grad(&self.field, &queries, &upstream, &opts, &mut self.grad)?;
        let loss = batch_mse(&predictions, &targets);
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(AprfError::TrainingDiverged { step, loss });
        }
        let lr = lr_at(step, &self.cfg);
        adam_step(&mut self.field, &mut self.adam, &self.grad, lr)
            .map_err(|_| AprfError::TrainingDiverged { step, loss })?;
        self.step += 1;
        Ok(StepOutcome { step, loss, lr, predictions, targets })
    }

    /// Runs the remaining steps, writing `step,loss,lr` lines to `log` and
    /// checkpoints under `checkpoint_dir`.
    pub fn run(mut self, mut log: Option<&mut dyn Write>, checkpoint_dir: Option<&Path>) -> Result<(MlpField, TrainReport)> {
        let start = Instant::now();
        let mut logged = Vec::new();
        let mut step_losses = Vec::with_capacity(self.cfg.max_iters);
        let hash = self.cfg.hash();
        while self.step < self.cfg.max_iters {
            let out = self.step()?;
            step_losses.push(out.loss);
            let done = self.step;
            let is_last = done == self.cfg.max_iters;
            if (self.cfg.log_every > 0 && out.step % self.cfg.log_every == 0) || is_last {
                let entry = LogEntry { step: out.step, loss: out.loss, lr: out.lr };
                if let Some(w) = log.as_mut() {
                    writeln!(w, "{},{:.9e},{:.6e}", entry.step, entry.loss, entry.lr)?;
                }
                logged.push(entry);
            }
            if let Some(dir) = checkpoint_dir {
                if self.cfg.checkpoint_every > 0 && (done.is_multiple_of(self.cfg.checkpoint_every) || is_last) {
                    let mut meta = std::collections::BTreeMap::new();
                    meta.insert("step".to_string(), done.to_string());
                    meta.insert("loss".to_string(), format!("{:e}", out.loss));
                    meta.insert("views".to_string(), self.sino.num_views().to_string());
                    meta.insert("detectors".to_string(), self.sino.num_detectors().to_string());
                    meta.insert("padding".to_string(), self.grid.params.padding().to_string());
                    meta.insert("rho".to_string(), format!("{:e}", self.grid.rho));
                    let sub = if is_last { dir.join("final") } else { dir.join(format!("step_{done:06}")) };
                    save_checkpoint(&sub, &self.field, &hash, &meta)?;
                }
            }
        }
        let tail = self.steps_per_epoch().min(step_losses.len()).max(1);
        let final_loss = if step_losses.is_empty() {
            f64::NAN
        } else {
            step_losses[step_losses.len() - tail..].iter().sum::<f64>() / tail as f64
        };
        let report = TrainReport {
            logged,
            step_losses,
            final_loss,
            wall_secs: start.elapsed().as_secs_f64(),
            config_hash: hash,
        };
        Ok((self.field, report))
    }
}

/// `(1 / |B|) * sum (target - prediction)^2`.
pub fn batch_mse(predictions: &[f64], targets: &[f64]) -> f64 {
    let n = predictions.len().max(1) as f64;
    predictions.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / n
}

/// Trains a fresh field on `sino` without logging or checkpoints.
pub fn train(sino: &Sinogram, cfg: &TrainConfig) -> Result<(MlpField, TrainReport)> {
    Trainer::new(sino, cfg.clone())?.run(None, None)
}
