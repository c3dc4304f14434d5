use std::sync::OnceLock;

use aprf::field::MlpField;
use aprf::pipeline::config::{experiment_canonical, parse_text};
use aprf::pipeline::{
    n_test_auto, reconstruct_and_eval, run_experiment_matrix, sv_fbp_baseline, synthesize_dense, BeamKind,
    ExperimentSpec, NTest, PhantomCase, SynthesisConfig, Variant, RESULTS_HEADER,
};
use aprf::quadrature::IntegralMode;
use aprf::render::{render, RayQuery};
use aprf::tomo::{compute_metrics, RampFilter};
use aprf::trainer::{segment_at, train, TrainConfig, TrainGrid, TrainReport, Trainer};

fn desk_config() -> TrainConfig {
    TrainConfig {
        n_train: 9,
        batch_size: 512,
        max_iters: 1500,
        lr_start: 3e-3,
        lr_end: 1e-4,
        width: 32,
        omega: 6,
        ..Default::default()
    }
}

struct Fitted {
    case: PhantomCase,
    cfg: TrainConfig,
    field: MlpField,
    report: TrainReport,
}

/// One 60-view fit shared by the tests below.
fn fitted() -> &'static Fitted {
    static CELL: OnceLock<Fitted> = OnceLock::new();
    CELL.get_or_init(|| {
        let case = PhantomCase::new(32, BeamKind::Parallel, 60, None).unwrap();
        let cfg = desk_config();
        let (field, report) = train(&case.sparse, &cfg).unwrap();
        Fitted { case, cfg, field, report }
    })
}

#[test]
fn n_test_examples() {
    assert_eq!(n_test_auto(65, 45), 5);
    assert_eq!(n_test_auto(65, 90), 9);
    assert_eq!(n_test_auto(65, 60), 6);
    assert_eq!(n_test_auto(2, 1), 2);
}

#[test]
fn dense_sinogram_has_dense_shape() {
    let f = fitted();
    let synth = SynthesisConfig { dense_views: 240, ..Default::default() };
    let dense = synthesize_dense(&f.field, f.case.sparse.geometry(), &f.cfg, &synth).unwrap();
    assert_eq!(dense.num_views(), 240);
    assert_eq!(dense.num_detectors(), f.case.sparse.num_detectors());
    assert_eq!(dense.geometry().angular_range, f.case.sparse.geometry().angular_range);
    assert!(dense.values().iter().all(|v| v.is_finite()));
}

#[test]
fn synthesis_without_upsampling_reproduces_training_predictions() {
    let case = PhantomCase::new(32, BeamKind::Parallel, 12, None).unwrap();
    let total = case.sparse.values().len();
    let cfg = TrainConfig {
        integral_mode: IntegralMode::Point,
        use_center_input: false,
        decouple_heads: false,
        batch_size: total,
        max_iters: 10,
        ..desk_config()
    };
    let mut trainer = Trainer::new(&case.sparse, cfg.clone()).unwrap();
    for _ in 0..3 {
        trainer.step().unwrap();
    }
    let field = trainer.field().clone();
    let out = trainer.step().unwrap();
    let grid = trainer.grid().clone();
    let synth = SynthesisConfig { dense_views: 12, rho_test: Some(grid.rho), ..Default::default() };
    let dense = synthesize_dense(&field, case.sparse.geometry(), &cfg, &synth).unwrap();
    assert_eq!(dense.values(), &out.predictions[..]);
}

#[test]
fn synthesis_matches_direct_rendering_at_the_training_grid() {
    let f = fitted();
    let sv = f.case.sparse.geometry();
    let grid = TrainGrid::new(&f.case.sparse, &f.cfg).unwrap();
    let synth = SynthesisConfig {
        dense_views: sv.num_views,
        n_test: NTest::Fixed(f.cfg.n_train),
        rho_test: Some(grid.rho),
        ..Default::default()
    };
    let dense = synthesize_dense(&f.field, sv, &f.cfg, &synth).unwrap();
    let err = dense
        .values()
        .iter()
        .zip(f.case.sparse.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / dense.values().len() as f64;
    // different sample draws than any training step, same distribution
    assert!(err.sqrt() < 2.0 * f.report.final_loss.sqrt(), "rmse {} vs loss {}", err.sqrt(), f.report.final_loss);
}

#[test]
fn zero_intensity_field_gives_zero_sinogram() {
    let f = fitted();
    let field = MlpField::zeros(f.cfg.topology()).unwrap();
    assert!(field.params().iter().all(|&p| p == 0.0));
    let synth = SynthesisConfig { dense_views: 120, ..Default::default() };
    let dense = synthesize_dense(&field, f.case.sparse.geometry(), &f.cfg, &synth).unwrap();
    assert!(dense.values().iter().all(|&v| v == 0.0));
}

#[test]
fn dense_views_agree_with_the_sparse_input() {
    let f = fitted();
    // with the training sample count the shorter test segments still see the
    // same number of quadrature intervals
    let synth = SynthesisConfig { n_test: NTest::Fixed(f.cfg.n_train), ..Default::default() };
    let dense = synthesize_dense(&f.field, f.case.sparse.geometry(), &f.cfg, &synth).unwrap();
    let mut abs = 0.0;
    for l in 0..60 {
        for (a, b) in dense.view(12 * l).iter().zip(f.case.sparse.view(l)) {
            abs += (a - b).abs();
        }
    }
    let mae = abs / f.case.sparse.values().len() as f64;
    let level = f.report.final_loss.sqrt();
    assert!(mae < level, "every 12th dense view: mae {mae} vs training rmse {level}");
}

#[test]
fn fit_is_self_consistent() {
    let f = fitted();
    let grid = TrainGrid::new(&f.case.sparse, &f.cfg).unwrap();
    let w = f.case.sparse.num_detectors();
    let queries: Vec<RayQuery> = (0..f.case.sparse.values().len())
        .map(|p| RayQuery {
            spec: segment_at((p / w) as f64, (p % w) as f64, &grid.params, grid.rho).unwrap(),
            seed: 7_000_000 + p as u64,
        })
        .collect();
    let preds = render(&f.field, &queries, &f.cfg.render_options(&grid)).unwrap();
    let mse = preds.iter().zip(f.case.sparse.values()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64;
    let ratio = mse.sqrt() / f.report.final_loss.sqrt();
    assert!((ratio - 1.0).abs() < 0.05, "rmse {} vs sqrt(loss) {}", mse.sqrt(), f.report.final_loss.sqrt());
}

#[test]
fn trained_field_reconstruction_and_artifacts() {
    let f = fitted();
    let dir = tempfile::tempdir().unwrap();
    let out = reconstruct_and_eval(
        &f.field,
        &f.case.sparse,
        &f.case.gt,
        &f.cfg,
        &SynthesisConfig::default(),
        RampFilter::RamLak,
        Some(dir.path()),
    )
    .unwrap();
    assert!(out.report.psnr.is_finite() && out.report.ssim <= 1.0);
    for name in ["recon.bin", "recon.pgm", "gt.pgm", "diff_heatmap.pgm", "dense_sinogram.bin"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let same = compute_metrics(&f.case.gt, &f.case.gt).unwrap();
    assert!(same.is_exact());
    assert!((same.ssim - 1.0).abs() < 1e-12);
}

#[test]
fn untrained_field_is_worse_than_fbp() {
    let f = fitted();
    let field = MlpField::init(f.cfg.topology(), 3).unwrap();
    let fbp = sv_fbp_baseline(&f.case.sparse, &f.case.gt, RampFilter::RamLak).unwrap();
    let out = reconstruct_and_eval(
        &field,
        &f.case.sparse,
        &f.case.gt,
        &f.cfg,
        &SynthesisConfig::default(),
        RampFilter::RamLak,
        None,
    )
    .unwrap();
    assert!(out.report.psnr < fbp.psnr, "untrained {} vs fbp {}", out.report.psnr, fbp.psnr);
}

fn tiny_spec(variants: Vec<Variant>) -> ExperimentSpec {
    ExperimentSpec {
        size: 32,
        views: vec![16],
        variants,
        seeds: vec![0],
        train: TrainConfig { max_iters: 40, batch_size: 128, ..desk_config() },
        synthesis: SynthesisConfig { dense_views: 64, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn one_cell_matrix_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment_matrix(&tiny_spec(vec![Variant::Full]), Some(dir.path())).unwrap();
    assert_eq!(res.rows.len(), 1);
    assert_eq!(res.summary.len(), 1);
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, vec![RESULTS_HEADER, lines[1]]);
    assert!(lines[1].starts_with("parallel,16,full,0,"));
    assert!(dir.path().join("summary.txt").is_file());
    assert!(dir.path().join("timings.csv").is_file());
}

#[test]
fn matrix_shares_one_training_between_full_and_ntest_full() {
    let res = run_experiment_matrix(&tiny_spec(vec![Variant::Full, Variant::NTestFull]), None).unwrap();
    assert_eq!(res.rows.len(), 2);
    assert!(res.rows.iter().all(|r| r.error.is_none()));
    assert_eq!(res.rows[0].train_secs, res.rows[1].train_secs);
}

#[test]
fn failing_cells_are_recorded() {
    let mut spec = tiny_spec(vec![Variant::SvFbp, Variant::Full]);
    spec.synthesis.n_test = NTest::Fixed(1);
    let res = run_experiment_matrix(&spec, None).unwrap();
    assert!(res.rows[0].metrics.is_some());
    assert!(res.rows[1].error.is_some());
    assert!(res.results_csv().lines().nth(2).unwrap().contains("NaN"));
    assert!(res.table().contains("failed"));
}

#[test]
fn matrix_results_are_reproducible() {
    let spec = tiny_spec(vec![Variant::SvFbp, Variant::Lss, Variant::Full]);
    let a = run_experiment_matrix(&spec, None).unwrap().results_csv();
    let b = run_experiment_matrix(&spec, None).unwrap().results_csv();
    assert_eq!(a, b);
}

#[test]
fn config_file_drives_the_matrix() {
    let spec = tiny_spec(vec![Variant::SvFbp]);
    let back = parse_text(&experiment_canonical(&spec)).unwrap();
    assert_eq!(back, spec);
}
