//! Contracts for the foundation-model roles plus oracle, fixture and
//! subprocess-adapter implementations.
//!
//! The orchestrator only ever talks to the traits here. Queries carry the
//! iteration / object index and label so that replaying or oracle backends
//! can look their answers up; live adapters are free to ignore them.

mod adapter;
mod fixture;
mod inpaint;
mod oracle;
mod proposal;
mod synthetic;

use nalgebra::Matrix3;

pub use adapter::{AdapterCommand, AdapterSuite};
pub use fixture::{FixtureDir, FixtureSuite};
pub use inpaint::CropInpaintRemover;
pub use oracle::{OracleOptions, OracleSuite};
pub use proposal::{ObjectProposal, AMODAL_SELECTION_PROMPT, INPAINT_PROMPT};
pub use synthetic::{generate_synthetic_scene, SceneObject, SceneSpec, Shape, SyntheticScene, Support};

use crate::align::Sim3;
use crate::error::Result;
use crate::fitting::CorrespondenceSet;
use crate::geometry::{Camera, TriangleMesh};
use crate::raster::{DisparityGrid, Image, Mask};
use crate::render::SweepView;

/// Identifies the object a stage-two backend call is about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectQuery {
    /// Position in the layer sequence's mask list.
    pub index: usize,
    pub label: String,
}

/// Extra context handed to the rotation estimator.
pub struct RotationQuery<'a> {
    pub object: &'a ObjectQuery,
    pub mesh: &'a TriangleMesh,
    pub sweep: &'a [SweepView],
}

/// Extra context handed to the tracker: how the rendered view was produced.
pub struct TrackQuery<'a> {
    pub object: &'a ObjectQuery,
    pub mesh: &'a TriangleMesh,
    /// Maps mesh coordinates into the rendered view's camera frame.
    pub render_pose: &'a Sim3,
    pub camera: &'a Camera,
}

pub trait Proposer {
    fn propose(&mut self, image: &Image, iteration: usize) -> Result<ObjectProposal>;
}

pub trait Segmenter {
    /// An empty mask means "not found".
    fn segment(&mut self, image: &Image, label: &str, iteration: usize) -> Result<Mask>;
}

pub trait Remover {
    fn remove(&mut self, image: &Image, mask: &Mask, label: &str, iteration: usize) -> Result<Image>;
}

pub trait DepthEstimator {
    fn estimate_disparity(&mut self, image: &Image, layer: usize) -> Result<(DisparityGrid, Camera)>;
}

pub trait MeshGenerator {
    fn generate_mesh(&mut self, masked: &Image, query: &ObjectQuery) -> Result<TriangleMesh>;
}

pub trait RotationEstimator {
    /// Rotation that, when removed from the mesh, matches its appearance in
    /// the masked image. Sweep view `i` corresponds to `yaw_rotation(yaw_i)`.
    fn estimate_rotation(&mut self, masked: &Image, mask: &Mask, query: &RotationQuery<'_>) -> Result<Matrix3<f64>>;
}

pub trait Tracker {
    fn track(&mut self, image: &Image, rendered: &Image, query: &TrackQuery<'_>) -> Result<CorrespondenceSet>;
}

/// One implementation per role.
pub struct BackendSuite {
    pub proposer: Box<dyn Proposer>,
    pub segmenter: Box<dyn Segmenter>,
    pub remover: Box<dyn Remover>,
    pub depth: Box<dyn DepthEstimator>,
    pub mesh_generator: Box<dyn MeshGenerator>,
    pub rotation: Box<dyn RotationEstimator>,
    pub tracker: Box<dyn Tracker>,
}

/// Rotation estimator that picks the best-matching sweep silhouette.
#[derive(Debug, Clone, Copy, Default)]
pub struct SilhouetteRotation;

impl RotationEstimator for SilhouetteRotation {
    fn estimate_rotation(&mut self, _masked: &Image, mask: &Mask, query: &RotationQuery<'_>) -> Result<Matrix3<f64>> {
        Ok(crate::fitting::baseline_rotation_estimate(mask, query.sweep)?.1)
    }
}
