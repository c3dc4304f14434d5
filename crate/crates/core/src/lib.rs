//! Self-supervised sparse-view CT reconstruction with a neural field over
//! sinogram coordinates.
//!
//! A coordinate network is fitted to a single sparse-view sinogram by sampling
//! short segments along the view axis and integrating the network's
//! density/intensity outputs over each segment. The trained field then
//! synthesizes a dense-view sinogram, which filtered back-projection turns into
//! the reconstructed image.

pub mod coords;
pub mod error;
pub mod field;
pub mod io;
pub mod pipeline;
pub mod quadrature;
pub mod render;
pub mod trainer;
pub mod tomo;

pub use error::{AprfError, Result};
