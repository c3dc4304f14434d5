use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::field::MlpField;
use crate::pipeline::eval::{reconstruct_and_eval, sv_fbp_baseline, BeamKind, PhantomCase};
use crate::pipeline::synthesis::{NTest, SynthesisConfig};
use crate::quadrature::IntegralMode;
use crate::tomo::{MetricReport, RampFilter};
use crate::trainer::{train, RhoPolicy, TrainConfig};

pub const RESULTS_HEADER: &str = "beam,views,variant,seed,psnr,ssim,wall_secs";

/// One row of the ablation or parametric study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Direct FBP of the sparse sinogram, no field.
    SvFbp,
    /// Point sampling at the pixel centre.
    Point,
    /// Segment sampling with the naive integral.
    Lss,
    /// Segment sampling with the centre-based integral.
    LssCli,
    /// Centre-based integral, centre input and decoupled heads.
    Full,
    RhoHalf,
    RhoDouble,
    /// [`Variant::Full`] synthesized with `n_test = n_train`.
    NTestFull,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::SvFbp,
        Variant::Point,
        Variant::Lss,
        Variant::LssCli,
        Variant::Full,
        Variant::RhoHalf,
        Variant::RhoDouble,
        Variant::NTestFull,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::SvFbp => "sv-fbp",
            Variant::Point => "point",
            Variant::Lss => "lss",
            Variant::LssCli => "lss+cli",
            Variant::Full => "full",
            Variant::RhoHalf => "rho-half",
            Variant::RhoDouble => "rho-double",
            Variant::NTestFull => "ntest-full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .map_or_else(|| invalid(format!("unknown variant {s:?}")), Ok)
    }

    /// Training and synthesis configs of this variant, or `None` for [`Variant::SvFbp`].
    pub fn configure(&self, train: &TrainConfig, synth: &SynthesisConfig) -> Option<(TrainConfig, SynthesisConfig)> {
        let mut t = train.clone();
        let mut s = synth.clone();
        let (mode, cnt, dec) = match self {
            Variant::SvFbp => return None,
            Variant::Point => (IntegralMode::Point, false, false),
            Variant::Lss => (IntegralMode::Naive, false, false),
            Variant::LssCli => (IntegralMode::Center, false, false),
            _ => (IntegralMode::Center, true, true),
        };
        t.integral_mode = mode;
        t.use_center_input = cnt;
        t.decouple_heads = dec;
        match self {
            Variant::RhoHalf => t.rho_policy = RhoPolicy::Half,
            Variant::RhoDouble => t.rho_policy = RhoPolicy::Double,
            Variant::NTestFull => s.n_test = NTest::Fixed(t.n_train),
            _ => {}
        }
        Some((t, s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub size: usize,
    pub beam: BeamKind,
    pub views: Vec<usize>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Detector bins; `None` picks two per pixel.
    pub detectors: Option<usize>,
    pub train: TrainConfig,
    pub synthesis: SynthesisConfig,
    pub filter: RampFilter,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            size: 128,
            beam: BeamKind::Parallel,
            views: vec![45, 60, 90],
            variants: vec![Variant::SvFbp, Variant::Point, Variant::Lss, Variant::LssCli, Variant::Full],
            seeds: vec![0, 1, 2],
            detectors: None,
            train: TrainConfig::default(),
            synthesis: SynthesisConfig::default(),
            filter: RampFilter::RamLak,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return invalid("views, variants and seeds must be non-empty");
        }
        if self.size < 8 {
            return invalid(format!("phantom size {} is below 8", self.size));
        }
        if let Some(&v) = self.views.iter().find(|&&v| v == 0 || v > self.synthesis.dense_views) {
            return invalid(format!("view count {v} outside [1, {}]", self.synthesis.dense_views));
        }
        for variant in &self.variants {
            if let Some((t, _)) = variant.configure(&self.train, &self.synthesis) {
                t.validate()?;
            }
        }
        Ok(())
    }

    /// Cells in output order: views, then variants, then seeds.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &views in &self.views {
            for &variant in &self.variants {
                for &seed in &self.seeds {
                    out.push(Cell { views, variant, seed });
                }
            }
        }
        out
    }

    fn cell_configs(&self, cell: &Cell) -> Option<(TrainConfig, SynthesisConfig)> {
        let mut base = self.train.clone();
        base.seed = cell.seed;
        let mut synth = self.synthesis.clone();
        synth.seed = cell.seed;
        cell.variant.configure(&base, &synth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub views: usize,
    pub variant: Variant,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixRow {
    pub beam: BeamKind,
    pub cell: Cell,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
    pub train_secs: f64,
    pub synth_secs: f64,
    pub wall_secs: f64,
}

/// Mean metrics of one (views, variant) pair over its successful seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub views: usize,
    pub variant: Variant,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub ok: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixResults {
    pub rows: Vec<MatrixRow>,
    pub summary: Vec<SummaryRow>,
    /// Wall times are written as 0 in `results.csv` when set.
    pub deterministic: bool,
}

impl MatrixResults {
    pub fn summary_for(&self, views: usize, variant: Variant) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.views == views && r.variant == variant)
    }

    pub fn results_csv(&self) -> String {
        let mut out = format!("{RESULTS_HEADER}\n");
        for r in &self.rows {
            let (psnr, ssim) = r.metrics.map_or((f64::NAN, f64::NAN), |m| (m.psnr, m.ssim));
            let wall = if self.deterministic { 0.0 } else { r.wall_secs };
            let _ = writeln!(
                out,
                "{},{},{},{},{psnr:.6},{ssim:.6},{wall:.3}",
                r.beam.name(),
                r.cell.views,
                r.cell.variant.name(),
                r.cell.seed
            );
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("views,variant,seed,train_secs,synth_secs,wall_secs\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3}",
                r.cell.views,
                r.cell.variant.name(),
                r.cell.seed,
                r.train_secs,
                r.synth_secs,
                r.wall_secs
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:>6}  {:<12} {:>9} {:>8} {:>6}\n", "views", "variant", "psnr", "ssim", "seeds");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:>6}  {:<12} {:>9.3} {:>8.4} {:>6}",
                s.views,
                s.variant.name(),
                s.mean_psnr,
                s.mean_ssim,
                s.ok
            );
        }
        for r in self.rows.iter().filter(|r| r.error.is_some()) {
            let _ = writeln!(
                out,
                "failed: views={} variant={} seed={}: {}",
                r.cell.views,
                r.cell.variant.name(),
                r.cell.seed,
                r.error.as_deref().unwrap_or_default()
            );
        }
        out
    }

    /// Writes `results.csv`, `timings.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), self.results_csv())?;
        fs::write(dir.join("timings.csv"), self.timings_csv())?;
        fs::write(dir.join("summary.txt"), self.table())?;
        Ok(())
    }
}

fn summarize(spec: &ExperimentSpec, rows: &[MatrixRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &views in &spec.views {
        for &variant in &spec.variants {
            let cell_rows: Vec<_> = rows.iter().filter(|r| r.cell.views == views && r.cell.variant == variant).collect();
            let ok: Vec<MetricReport> = cell_rows.iter().filter_map(|r| r.metrics).collect();
            let mean = |f: fn(&MetricReport) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(f).sum::<f64>() / ok.len() as f64
                }
            };
            out.push(SummaryRow {
                views,
                variant,
                mean_psnr: mean(|m| m.psnr),
                mean_ssim: mean(|m| m.ssim),
                ok: ok.len(),
                failed: cell_rows.len() - ok.len(),
            });
        }
    }
    out
}

struct Trained {
    field: std::result::Result<MlpField, String>,
    secs: f64,
}

/// Runs every cell of `spec`, writing results into `out_dir` when given.
///
/// Cells sharing a training config share one trained field. Distinct
/// trainings run in parallel; a failing cell is recorded and the run goes on.
pub fn run_experiment_matrix(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<MatrixResults> {
    spec.validate()?;
    let cases: BTreeMap<usize, PhantomCase> = spec
        .views
        .iter()
        .map(|&v| Ok((v, PhantomCase::new(spec.size, spec.beam, v, spec.detectors)?)))
        .collect::<Result<_>>()?;

    let cells = spec.cells();
    let mut jobs: BTreeMap<(usize, String), TrainConfig> = BTreeMap::new();
    for cell in &cells {
        if let Some((t, _)) = spec.cell_configs(cell) {
            jobs.entry((cell.views, t.hash())).or_insert(t);
        }
    }
    let jobs: Vec<_> = jobs.into_iter().collect();
    let trained: BTreeMap<(usize, String), Trained> = jobs
        .into_par_iter()
        .map(|(key, cfg)| {
            let start = Instant::now();
            let field = train(&cases[&key.0].sparse, &cfg).map(|(f, _)| f).map_err(|e| e.to_string());
            (key, Trained { field, secs: start.elapsed().as_secs_f64() })
        })
        .collect();

    let rows: Vec<MatrixRow> = cells
        .par_iter()
        .map(|cell| {
            let case = &cases[&cell.views];
            let mut row = MatrixRow {
                beam: spec.beam,
                cell: *cell,
                metrics: None,
                error: None,
                train_secs: 0.0,
                synth_secs: 0.0,
                wall_secs: 0.0,
            };
            let start = Instant::now();
            let outcome = match spec.cell_configs(cell) {
                None => sv_fbp_baseline(&case.sparse, &case.gt, spec.filter).map_err(|e| e.to_string()),
                Some((t, s)) => {
                    let job = &trained[&(cell.views, t.hash())];
                    row.train_secs = job.secs;
                    match &job.field {
                        Ok(field) => reconstruct_and_eval(field, &case.sparse, &case.gt, &t, &s, spec.filter, None)
                            .map(|o| {
                                row.synth_secs = o.synth_secs;
                                o.report
                            })
                            .map_err(|e| e.to_string()),
                        Err(e) => Err(format!("training failed: {e}")),
                    }
                }
            };
            row.wall_secs = row.train_secs + start.elapsed().as_secs_f64();
            match outcome {
                Ok(m) => row.metrics = Some(m),
                Err(e) => row.error = Some(e),
            }
            row
        })
        .collect();

    let results = MatrixResults {
        summary: summarize(spec, &rows),
        rows,
        deterministic: spec.train.deterministic,
    };
    if let Some(dir) = out_dir {
        results.write(dir)?;
    }
    Ok(results)
}
