//! Single-image structured scene reconstruction by iterative object removal.
//!
//! The crate turns one RGB image into a set of posed object meshes plus a
//! background mesh. Foundation-model roles (object proposal, segmentation,
//! removal, depth, image-to-3D, rotation and tracking) sit behind the traits
//! in [`backends`]; everything geometric is implemented here.

// `!(x > 0.0)` is the NaN-rejecting form and is used on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod backends;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod refine;
pub mod render;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
