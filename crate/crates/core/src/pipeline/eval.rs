use std::path::Path;
use std::time::Instant;

use crate::error::{invalid, Result};
use crate::field::MlpField;
use crate::io::{save_image, save_pgm16, save_sinogram};
use crate::pipeline::synthesis::{synthesize_dense, SynthesisConfig};
use crate::tomo::{
    compute_metrics, fbp_reconstruct, forward_project, make_shepp_logan, Beam, Contrast, Image2D,
    MetricReport, RampFilter, Sinogram, SinogramGeometry,
};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeamKind {
    Parallel,
    Fan,
}

impl BeamKind {
    pub fn name(&self) -> &'static str {
        match self {
            BeamKind::Parallel => "parallel",
            BeamKind::Fan => "fan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "parallel" => Ok(BeamKind::Parallel),
            "fan" => Ok(BeamKind::Fan),
            other => invalid(format!("unknown beam {other:?}")),
        }
    }

    pub fn of(beam: &Beam) -> Self {
        match beam {
            Beam::Parallel => BeamKind::Parallel,
            Beam::Fan(_) => BeamKind::Fan,
        }
    }
}

/// Geometry used for phantom experiments. `detectors = None` covers the image
/// diagonal at two bins per pixel, for both beams.
pub fn phantom_geometry(gt: &Image2D, beam: BeamKind, views: usize, detectors: Option<usize>) -> SinogramGeometry {
    match beam {
        BeamKind::Parallel => match detectors {
            Some(w) => SinogramGeometry::parallel(views, w, gt.width() as f64 * gt.pixel_size() / w as f64),
            None => SinogramGeometry::parallel_for_image(gt, views),
        },
        BeamKind::Fan => {
            let w = detectors.unwrap_or_else(|| SinogramGeometry::parallel_for_image(gt, views).num_detectors);
            SinogramGeometry::fan_for_image(gt, views, w)
        }
    }
}

/// Ground truth phantom and its sparse-view sinogram.
#[derive(Clone, Debug)]
pub struct PhantomCase {
    pub gt: Image2D,
    pub sparse: Sinogram,
}

impl PhantomCase {
    pub fn new(size: usize, beam: BeamKind, views: usize, detectors: Option<usize>) -> Result<Self> {
        let gt = make_shepp_logan(size, Contrast::Modified)?;
        let geom = phantom_geometry(&gt, beam, views, detectors);
        let sparse = forward_project(&gt, &geom)?;
        Ok(Self { gt, sparse })
    }
}

/// FBP of `sino` on the grid of `gt`.
pub fn fbp_like(sino: &Sinogram, gt: &Image2D, filter: RampFilter) -> Result<Image2D> {
    fbp_reconstruct(sino, filter, gt.width(), gt.pixel_size())
}

/// Metrics of plain FBP on the sparse sinogram.
pub fn sv_fbp_baseline(sv: &Sinogram, gt: &Image2D, filter: RampFilter) -> Result<MetricReport> {
    compute_metrics(&fbp_like(sv, gt, filter)?, gt)
}

/// `|pred - gt|` scaled to `[0, 1]` by its own range.
pub fn abs_diff_heatmap(pred: &Image2D, gt: &Image2D) -> Result<Vec<f64>> {
    if !pred.same_shape(gt) {
        return invalid("heatmap needs images of the same shape");
    }
    let diff: Vec<f64> = pred.values().iter().zip(gt.values()).map(|(a, b)| (a - b).abs()).collect();
    let lo = diff.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = diff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    Ok(diff.iter().map(|d| if range > 0.0 { (d - lo) / range } else { 0.0 }).collect())
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub dense: Sinogram,
    pub recon: Image2D,
    pub synth_secs: f64,
}

/// Writes `recon.bin`, `recon.pgm`, `gt.pgm`, `dense_sinogram.bin` and `diff_heatmap.pgm`.
pub fn write_artifacts(dir: &Path, recon: &Image2D, gt: &Image2D, dense: Option<&Sinogram>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_image(&dir.join("recon.bin"), recon)?;
    save_pgm16(&dir.join("recon.pgm"), recon.width(), recon.height(), recon.values())?;
    save_pgm16(&dir.join("gt.pgm"), gt.width(), gt.height(), gt.values())?;
    save_pgm16(&dir.join("diff_heatmap.pgm"), gt.width(), gt.height(), &abs_diff_heatmap(recon, gt)?)?;
    if let Some(d) = dense {
        save_sinogram(&dir.join("dense_sinogram.bin"), d)?;
    }
    Ok(())
}

/// Synthesizes the dense sinogram, reconstructs it with FBP and scores it against `gt`.
pub fn reconstruct_and_eval(
    field: &MlpField,
    sv: &Sinogram,
    gt: &Image2D,
    train: &TrainConfig,
    synth: &SynthesisConfig,
    filter: RampFilter,
    out_dir: Option<&Path>,
) -> Result<EvalOutcome> {
    let start = Instant::now();
    let dense = synthesize_dense(field, sv.geometry(), train, synth)?;
    let synth_secs = start.elapsed().as_secs_f64();
    let recon = fbp_like(&dense, gt, filter)?;
    let report = compute_metrics(&recon, gt)?;
    if let Some(dir) = out_dir {
        write_artifacts(dir, &recon, gt, Some(&dense))?;
    }
    Ok(EvalOutcome { report, dense, recon, synth_secs })
}
