//! End-to-end runs: dense synthesis from a trained field, FBP, scoring and
//! the experiment matrix.

pub mod config;
mod eval;
mod matrix;
mod synthesis;

pub use eval::{
    abs_diff_heatmap, fbp_like, phantom_geometry, reconstruct_and_eval, sv_fbp_baseline, write_artifacts,
    BeamKind, EvalOutcome, PhantomCase,
};
pub use synthesis::{
    dense_geometry, dense_queries, n_test_auto, n_test_for, synthesize_dense, test_sampling, NTest,
    SynthesisConfig,
};
pub use matrix::{
    run_experiment_matrix, Cell, ExperimentSpec, MatrixResults, MatrixRow, SummaryRow, Variant, RESULTS_HEADER,
};
