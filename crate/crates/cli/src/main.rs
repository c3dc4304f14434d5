use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aprf::field::load_checkpoint;
use aprf::io::{load_image, load_sinogram_with_geometry, save_image, save_pgm16, save_sinogram_with_geometry};
use aprf::pipeline::config::{apply_text, experiment_canonical};
use aprf::pipeline::{
    abs_diff_heatmap, phantom_geometry, run_experiment_matrix, synthesize_dense, BeamKind, ExperimentSpec,
};
use aprf::tomo::{
    compute_metrics, fbp_reconstruct, forward_project, make_shepp_logan, sparsify_views, Contrast, Image2D,
};
use aprf::trainer::Trainer;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aprf", version, about = "Sparse-view CT sinogram synthesis with a neural field")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for training and synthesis; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reproducible execution order (`--deterministic=false` to disable); overrides the config file.
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    deterministic: Option<bool>,
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a Shepp-Logan phantom covering [-1, 1]^2.
    Phantom {
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Use the original low-contrast intensities.
        #[arg(long)]
        standard: bool,
    },
    /// Forward-project an image.
    Project {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 720)]
        views: usize,
        #[arg(long, default_value = "parallel")]
        beam: String,
        #[arg(long)]
        detectors: Option<usize>,
    },
    /// Keep a uniform subset of views.
    Sparsify {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long)]
        keep: usize,
    },
    /// Fit a field to a sparse-view sinogram.
    Train {
        #[arg(long)]
        sino: PathBuf,
    },
    /// Render a dense-view sinogram from a trained run.
    Synthesize {
        /// Output directory of `train`.
        #[arg(long)]
        run: PathBuf,
        /// Sparse sinogram the run was trained on.
        #[arg(long)]
        sino: PathBuf,
    },
    /// Filtered back-projection of a sinogram.
    Reconstruct {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// PSNR and SSIM of a reconstruction against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run the ablation and parametric experiment matrix.
    Matrix,
}

fn load_spec(common: &Common) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        apply_text(&mut spec, &text).with_context(|| format!("parsing {}", path.display()))?;
    }
    if let Some(seed) = common.seed {
        spec.train.seed = seed;
        spec.synthesis.seed = seed;
        spec.seeds = vec![seed];
    }
    if let Some(d) = common.deterministic {
        spec.train.deterministic = d;
    }
    Ok(spec)
}

/// Images cover `[-1, 1]^2`.
fn load_square_image(path: &Path) -> Result<Image2D> {
    let arr = aprf::io::load_array(path).with_context(|| format!("reading {}", path.display()))?;
    let width = *arr.shape.last().context("empty shape")?;
    Ok(load_image(path, 2.0 / width as f64)?)
}

fn save_image_pair(dir: &Path, stem: &str, img: &Image2D) -> Result<()> {
    save_image(&dir.join(format!("{stem}.bin")), img)?;
    save_pgm16(&dir.join(format!("{stem}.pgm")), img.width(), img.height(), img.values())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = &cli.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Phantom { size, standard } => {
            let contrast = if standard { Contrast::Standard } else { Contrast::Modified };
            save_image_pair(out, "phantom", &make_shepp_logan(size, contrast)?)?;
        }
        Command::Project { image, views, beam, detectors } => {
            let img = load_square_image(&image)?;
            let geom = phantom_geometry(&img, BeamKind::parse(&beam)?, views, detectors);
            let sino = forward_project(&img, &geom)?;
            save_sinogram_with_geometry(&out.join("sinogram.bin"), &sino)?;
        }
        Command::Sparsify { sino, keep } => {
            let dense = load_sinogram_with_geometry(&sino)?;
            save_sinogram_with_geometry(&out.join("sparse.bin"), &sparsify_views(&dense, keep)?)?;
        }
        Command::Train { sino } => {
            let spec = load_spec(&cli.common)?;
            let sino = load_sinogram_with_geometry(&sino)?;
            fs::write(out.join("config.txt"), experiment_canonical(&spec))?;
            let trainer = Trainer::new(&sino, spec.train.clone())?;
            let mut log = BufWriter::new(File::create(out.join("train_log.csv"))?);
            writeln!(log, "step,loss,lr")?;
            let (_, report) = trainer.run(Some(&mut log), Some(&out.join("checkpoint")))?;
            log.flush()?;
            println!(
                "trained {} steps in {:.1}s, final loss {:.6e}, config {}",
                report.step_losses.len(),
                report.wall_secs,
                report.final_loss,
                report.config_hash
            );
        }
        Command::Synthesize { run, sino } => {
            let mut spec = ExperimentSpec::default();
            let cfg_path = cli.common.config.clone().unwrap_or_else(|| run.join("config.txt"));
            apply_text(&mut spec, &fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?)?;
            if let Some(seed) = cli.common.seed {
                spec.synthesis.seed = seed;
            }
            if let Some(d) = cli.common.deterministic {
                spec.train.deterministic = d;
            }
            let ckpt = load_checkpoint(&run.join("checkpoint").join("final"))?;
            let train_cfg = spec.train;
            if ckpt.config_hash != train_cfg.hash() {
                bail!("checkpoint was trained under config {}, not {}", ckpt.config_hash, train_cfg.hash());
            }
            let sv = load_sinogram_with_geometry(&sino)?;
            let dense = synthesize_dense(&ckpt.field, sv.geometry(), &train_cfg, &spec.synthesis)?;
            save_sinogram_with_geometry(&out.join("dense.bin"), &dense)?;
        }
        Command::Reconstruct { sino, size } => {
            let spec = load_spec(&cli.common)?;
            let sino = load_sinogram_with_geometry(&sino)?;
            let img = fbp_reconstruct(&sino, spec.filter, size, 2.0 / size as f64)?;
            save_image_pair(out, "recon", &img)?;
        }
        Command::Eval { pred, gt } => {
            let pred = load_square_image(&pred)?;
            let gt = load_square_image(&gt)?;
            let m = compute_metrics(&pred, &gt)?;
            save_pgm16(&out.join("diff_heatmap.pgm"), gt.width(), gt.height(), &abs_diff_heatmap(&pred, &gt)?)?;
            let text = format!("psnr = {}\nssim = {:.6}\n", if m.is_exact() { "inf".into() } else { format!("{:.6}", m.psnr) }, m.ssim);
            fs::write(out.join("metrics.txt"), &text)?;
            print!("{text}");
        }
        Command::Matrix => {
            let spec = load_spec(&cli.common)?;
            fs::write(out.join("config.txt"), experiment_canonical(&spec))?;
            let results = run_experiment_matrix(&spec, Some(out))?;
            print!("{}", results.table());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
