//! Batched 3D geometry kernels for voxel-to-mesh shape prediction.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure, deterministic
//! computation:
//!
//! - [`mesh`]: triangle meshes, edge extraction and topology checks
//! - [`camera`]: pinhole projection, frustum-space transforms, depth-extent normalization
//! - [`voxel`] / [`cubify`]: occupancy grids and their conversion to watertight meshes
//! - [`sampler`]: area-uniform surface sampling with reparameterized gradients
//! - [`nn`] / [`losses`]: nearest neighbors, chamfer/normal/edge/Laplacian/voxel losses
//! - [`refine`]: vertex alignment, graph convolution and vertex refinement forward passes,
//!   icospheres and face subdivision
//! - [`metrics`]: chamfer, normal consistency, F1@τ and mesh average precision
//!
//! File formats and the command-line tool live in the companion `meshgeo` crate.
#![no_std]

extern crate alloc;

pub mod camera;
pub mod cubify;
mod error;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod refine;
pub mod rng;
pub mod sampler;
pub mod voxel;

pub use glam::{DVec2, DVec3};

pub use camera::CameraIntrinsics;
pub use cubify::{cubify, cubify_naive, CubifyConfig};
pub use error::{Error, Result};
pub use mesh::TriangleMesh;
pub use sampler::PointSampleSet;
pub use voxel::VoxelGrid;
