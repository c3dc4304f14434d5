//! Simulation and re-projection endpoints: phantoms, projector, FBP, metrics.

mod fbp;
mod geometry;
mod image;
mod metrics;
mod phantom;
mod projector;

pub use fbp::{fbp_reconstruct, ramp_filter_views, rebin_fan_to_parallel, RampFilter};
pub use geometry::{sparsify_views, Beam, FanParams, Ray, Sinogram, SinogramGeometry};
pub use image::Image2D;
pub use metrics::{compute_metrics, psnr, ssim, MetricReport, SSIM_K1, SSIM_K2, SSIM_WINDOW};
pub use phantom::{ellipses, make_shepp_logan, Contrast, Ellipse};
pub use projector::{backproject_adjoint, forward_project};
