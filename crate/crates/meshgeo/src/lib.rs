//! File formats, batch parallelism and command-line plumbing around
//! [`meshgeo_core`].
//!
//! - [`obj`]: Wavefront OBJ meshes
//! - [`voxl`]: `VOXL1` occupancy grids (dense float, dense bit, run-length)
//! - [`weights`]: `MWTS1` named weight matrices and `MFEA1` feature maps
//! - [`records`]: JSON-lines detection and ground-truth records
//! - [`parallel`]: rayon drivers for batch cubify and mesh AP
//!
//! Every writer goes through [`write_atomic`], so a failed write never leaves
//! a partial file behind.

mod atomic;
mod error;
pub mod obj;
pub mod parallel;
pub mod records;
pub mod voxl;
pub mod weights;

pub use atomic::write_atomic;
pub use error::{Error, Result};
pub use meshgeo_core as core;
