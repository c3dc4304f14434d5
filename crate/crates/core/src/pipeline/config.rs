//! Flat `key = value` config files. Keys are the field names of
//! [`TrainConfig`], [`SynthesisConfig`] and [`ExperimentSpec`]; `#` starts a
//! comment. `seed` sets both the training and the synthesis seed.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, AprfError, Result};
use crate::pipeline::eval::BeamKind;
use crate::pipeline::matrix::{ExperimentSpec, Variant};
use crate::pipeline::synthesis::{NTest, SynthesisConfig};
use crate::quadrature::{IntegralMode, NaiveNormalization, Transmittance};
use crate::render::DistanceUnit;
use crate::tomo::RampFilter;
use crate::trainer::{RhoPolicy, TrainConfig};

/// Splits config text into `(line number, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return invalid(format!("line {}: expected key = value, got {line:?}", i + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return invalid(format!("line {}: empty key or value", i + 1));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| AprfError::InvalidArgument(format!("{key}: {e}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => invalid(format!("{key}: expected true or false, got {v:?}")),
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(", ")
}

/// Sets one [`TrainConfig`] field. Returns `false` for keys it does not own.
pub fn set_train_key(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "n_train" => cfg.n_train = num(key, v)?,
        "batch_size" => cfg.batch_size = num(key, v)?,
        "max_iters" => cfg.max_iters = num(key, v)?,
        "lr_start" => cfg.lr_start = num(key, v)?,
        "lr_end" => cfg.lr_end = num(key, v)?,
        "weight_decay" => cfg.weight_decay = num(key, v)?,
        "rho_policy" => cfg.rho_policy = RhoPolicy::parse(v)?,
        "integral_mode" => cfg.integral_mode = IntegralMode::parse(v)?,
        "use_center_input" => cfg.use_center_input = boolean(key, v)?,
        "decouple_heads" => cfg.decouple_heads = boolean(key, v)?,
        "seed" => cfg.seed = num(key, v)?,
        "width" => cfg.width = num(key, v)?,
        "omega" => cfg.omega = num(key, v)?,
        "padding" => cfg.padding = num(key, v)?,
        "transmittance" => {
            cfg.transmittance = match v {
                "inclusive" => Transmittance::Inclusive,
                "exclusive" => Transmittance::Exclusive,
                _ => return invalid(format!("{key}: unknown value {v:?}")),
            }
        }
        "naive_normalization" => {
            cfg.naive_normalization = match v {
                "weighted" => NaiveNormalization::WeightedAverage,
                "literal" => NaiveNormalization::Literal,
                _ => return invalid(format!("{key}: unknown value {v:?}")),
            }
        }
        "distance_unit" => cfg.distance_unit = DistanceUnit::parse(v)?,
        "deterministic" => cfg.deterministic = boolean(key, v)?,
        "shard_rows" => cfg.shard_rows = num(key, v)?,
        "log_every" => cfg.log_every = num(key, v)?,
        "checkpoint_every" => cfg.checkpoint_every = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Sets one [`SynthesisConfig`] field. Returns `false` for keys it does not own.
pub fn set_synthesis_key(cfg: &mut SynthesisConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "dense_views" => cfg.dense_views = num(key, v)?,
        "angular_range" => {
            cfg.angular_range = match v {
                "auto" => None,
                _ => match list(v, |s| num::<f64>(key, s))?.as_slice() {
                    &[a, b] if b > a => Some((a, b)),
                    _ => return invalid(format!("{key}: expected `start, end` with end > start")),
                },
            }
        }
        "n_test" => {
            cfg.n_test = match v {
                "auto" => NTest::Auto,
                _ => NTest::Fixed(num(key, v)?),
            }
        }
        "rho_test" => {
            cfg.rho_test = match v {
                "auto" => None,
                _ => Some(num(key, v)?),
            }
        }
        "seed" => cfg.seed = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Sets one [`ExperimentSpec`] field, including nested train and synthesis keys.
pub fn set_experiment_key(spec: &mut ExperimentSpec, key: &str, v: &str) -> Result<bool> {
    match key {
        "size" => spec.size = num(key, v)?,
        "beam" => spec.beam = BeamKind::parse(v)?,
        "views" => spec.views = list(v, |s| num(key, s))?,
        "variants" => spec.variants = list(v, Variant::parse)?,
        "seeds" => spec.seeds = list(v, |s| num(key, s))?,
        "detectors" => {
            spec.detectors = match v {
                "auto" => None,
                _ => Some(num(key, v)?),
            }
        }
        "filter" => spec.filter = RampFilter::parse(v)?,
        _ => {
            let t = set_train_key(&mut spec.train, key, v)?;
            let s = set_synthesis_key(&mut spec.synthesis, key, v)?;
            return Ok(t || s);
        }
    }
    Ok(true)
}

/// Applies config text on top of `spec`, rejecting unknown and repeated keys.
pub fn apply_text(spec: &mut ExperimentSpec, text: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (line, key, value) in parse_pairs(text)? {
        if !seen.insert(key.clone()) {
            return invalid(format!("line {line}: key {key} repeated"));
        }
        if !set_experiment_key(spec, &key, &value)? {
            return invalid(format!("line {line}: unknown key {key:?}"));
        }
    }
    Ok(())
}

pub fn parse_text(text: &str) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    apply_text(&mut spec, text)?;
    Ok(spec)
}

pub fn load(path: &Path) -> Result<ExperimentSpec> {
    parse_text(&std::fs::read_to_string(path)?)
}

pub fn synthesis_canonical(cfg: &SynthesisConfig) -> String {
    let range = cfg.angular_range.map_or("auto".to_string(), |(a, b)| format!("{a:e}, {b:e}"));
    let n_test = match cfg.n_test {
        NTest::Auto => "auto".to_string(),
        NTest::Fixed(n) => n.to_string(),
    };
    let rho = cfg.rho_test.map_or("auto".to_string(), |r| format!("{r:e}"));
    format!(
        "dense_views = {}\nangular_range = {range}\nn_test = {n_test}\nrho_test = {rho}",
        cfg.dense_views
    )
}

/// Full config text of `spec`; [`parse_text`] reads it back unchanged.
pub fn experiment_canonical(spec: &ExperimentSpec) -> String {
    let t = &spec.train;
    [
        format!("size = {}", spec.size),
        format!("beam = {}", spec.beam.name()),
        format!("views = {}", join(&spec.views, |v| v.to_string())),
        format!("variants = {}", join(&spec.variants, |v| v.name().to_string())),
        format!("seeds = {}", join(&spec.seeds, |v| v.to_string())),
        format!("detectors = {}", spec.detectors.map_or("auto".to_string(), |d| d.to_string())),
        format!("filter = {}", spec.filter.name()),
        t.canonical(),
        format!("deterministic = {}", t.deterministic),
        format!("shard_rows = {}", t.shard_rows),
        format!("log_every = {}", t.log_every),
        format!("checkpoint_every = {}", t.checkpoint_every),
        synthesis_canonical(&spec.synthesis),
    ]
    .join("\n")
        + "\n"
}
