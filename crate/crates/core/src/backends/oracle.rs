//! Backends that answer from a [`SyntheticScene`]'s ground truth.

use std::sync::Arc;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    BackendSuite, DepthEstimator, MeshGenerator, ObjectProposal, ObjectQuery, Proposer, Remover, RotationEstimator,
    RotationQuery, SceneObject, Segmenter, SyntheticScene, TrackQuery, Tracker,
};
use crate::align::{yaw_rotation, Sim3};
use crate::error::{Error, Result};
use crate::fitting::{Correspondence, CorrespondenceSet};
use crate::geometry::{Camera, TriangleMesh};
use crate::raster::{DisparityGrid, Image, Mask};
use crate::render::{render, RenderSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    pub seed: u64,
    /// Apply a per-layer affine distortion `a·D + b` to estimated disparity.
    pub corrupt_disparity: bool,
    /// Range of `a`, sampled log-uniformly.
    pub scale_range: (f64, f64),
    /// `b` is uniform in `±offset_fraction · median(D)`.
    pub offset_fraction: f64,
    /// Corrupt the first layer too. Off by default so the input view keeps
    /// metric ground truth and alignment has a clean anchor.
    pub corrupt_reference: bool,
    /// Pixel stride of the tracker's sampling grid over the render.
    pub track_stride: usize,
    /// Relative disparity tolerance of the tracker's visibility test.
    pub track_tolerance: f64,
    /// Confidence attached to every tracked pair.
    pub track_confidence: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            corrupt_disparity: true,
            scale_range: (0.8, 1.25),
            offset_fraction: 0.1,
            corrupt_reference: false,
            track_stride: 2,
            track_tolerance: 1e-2,
            track_confidence: 1.0,
        }
    }
}

impl OracleOptions {
    pub fn clean() -> Self {
        Self {
            corrupt_disparity: false,
            ..Self::default()
        }
    }
}

/// Shared ground truth behind the oracle role implementations.
#[derive(Debug, Clone)]
pub struct OracleSuite {
    scene: Arc<SyntheticScene>,
    options: OracleOptions,
}

fn mix(seed: u64, salt: u64, k: usize) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

impl OracleSuite {
    pub fn new(scene: SyntheticScene, options: OracleOptions) -> Self {
        Self {
            scene: Arc::new(scene),
            options,
        }
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }

    pub fn options(&self) -> &OracleOptions {
        &self.options
    }

    /// The `(a, b)` distortion applied to layer `k`; identity when disabled.
    pub fn corruption(&self, layer: usize) -> (f64, f64) {
        let o = &self.options;
        if !o.corrupt_disparity || (layer == 0 && !o.corrupt_reference) {
            return (1.0, 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(o.seed, 1, layer));
        let (lo, hi) = (o.scale_range.0.ln(), o.scale_range.1.ln());
        let a = if hi > lo { rng.gen_range(lo..hi).exp() } else { o.scale_range.0 };
        let median = self.scene.disparities[layer].median().unwrap_or(0.0) as f64;
        let b = if o.offset_fraction > 0.0 {
            rng.gen_range(-1.0..1.0) * o.offset_fraction * median
        } else {
            0.0
        };
        (a, b)
    }

    /// Yaw given to object `id`'s generated mesh.
    pub fn generated_yaw(&self, id: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.options.seed, 2, id));
        rng.gen_range(0.0..std::f64::consts::TAU)
    }

    /// Maps the object's primitive into its generated canonical frame:
    /// centred, unit bounding sphere, yawed.
    pub fn generation_transform(&self, obj: &SceneObject) -> Result<Sim3> {
        let c = obj
            .mesh
            .centroid()
            .ok_or_else(|| Error::DegenerateMesh("empty primitive".into()))?;
        let r = obj.mesh.radius_about(&c);
        Ok(Sim3::from_rotation(yaw_rotation(self.generated_yaw(obj.id)))
            .compose(&Sim3::from_scale(1.0 / r))
            .compose(&Sim3::from_translation(-c)))
    }

    /// Ground-truth placement of the generated mesh in camera space.
    pub fn true_placement(&self, obj: &SceneObject) -> Result<Sim3> {
        Ok(obj.pose.compose(&self.generation_transform(obj)?.inverse()))
    }

    pub fn generated_mesh(&self, obj: &SceneObject) -> Result<TriangleMesh> {
        Ok(self.generation_transform(obj)?.apply_mesh(&obj.mesh))
    }

    fn object(&self, label: &str, role: &'static str) -> Result<&SceneObject> {
        self.scene
            .object_by_label(label)
            .ok_or_else(|| Error::backend(role, format!("unknown object {label:?}")))
    }

    fn layer(&self, image: &Image, role: &'static str) -> Result<usize> {
        self.scene
            .layer_of(image)
            .ok_or_else(|| Error::backend(role, "image is not a layer of the oracle scene"))
    }

    /// One boxed handle per role, all sharing this ground truth.
    pub fn backends(&self) -> BackendSuite {
        BackendSuite {
            proposer: Box::new(self.clone()),
            segmenter: Box::new(self.clone()),
            remover: Box::new(self.clone()),
            depth: Box::new(self.clone()),
            mesh_generator: Box::new(self.clone()),
            rotation: Box::new(self.clone()),
            tracker: Box::new(self.clone()),
        }
    }
}

impl Proposer for OracleSuite {
    fn propose(&mut self, image: &Image, _iteration: usize) -> Result<ObjectProposal> {
        Ok(self.scene.proposal(self.layer(image, "proposer")?))
    }
}

impl Segmenter for OracleSuite {
    fn segment(&mut self, image: &Image, label: &str, _iteration: usize) -> Result<Mask> {
        let layer = self.layer(image, "segmenter")?;
        Ok(match self.scene.object_by_label(label) {
            Some(o) if o.id >= layer => self.scene.amodal_masks[o.id].clone(),
            _ => Mask::empty(image.width(), image.height()),
        })
    }
}

impl Remover for OracleSuite {
    fn remove(&mut self, image: &Image, _mask: &Mask, label: &str, _iteration: usize) -> Result<Image> {
        let layer = self.layer(image, "remover")?;
        let obj = self.object(label, "remover")?;
        if obj.id != layer {
            return Err(Error::backend(
                "remover",
                format!("{label:?} is not the next object in removal order"),
            ));
        }
        Ok(self.scene.layers[layer + 1].clone())
    }
}

impl DepthEstimator for OracleSuite {
    fn estimate_disparity(&mut self, image: &Image, _layer: usize) -> Result<(DisparityGrid, Camera)> {
        let layer = self.layer(image, "depth")?;
        let clean = &self.scene.disparities[layer];
        let (a, b) = self.corruption(layer);
        let grid = if (a, b) == (1.0, 0.0) {
            clean.clone()
        } else {
            clean.map_valid(|d| (a * d as f64 + b) as f32)
        };
        Ok((grid, self.scene.camera))
    }
}

impl MeshGenerator for OracleSuite {
    fn generate_mesh(&mut self, _masked: &Image, query: &ObjectQuery) -> Result<TriangleMesh> {
        let obj = self.object(&query.label, "mesh_generator")?;
        self.generated_mesh(obj)
    }
}

impl RotationEstimator for OracleSuite {
    fn estimate_rotation(&mut self, _masked: &Image, _mask: &Mask, query: &RotationQuery<'_>) -> Result<Matrix3<f64>> {
        let obj = self.object(&query.object.label, "rotation")?;
        let generated = yaw_rotation(self.generated_yaw(obj.id));
        Ok(generated * obj.pose.rotation.transpose())
    }
}

impl Tracker for OracleSuite {
    /// Projective ground-truth pairs: each sampled render pixel is carried
    /// through the true placement into the scene and kept only where the
    /// scene surface there is the same point.
    fn track(&mut self, image: &Image, _rendered: &Image, query: &TrackQuery<'_>) -> Result<CorrespondenceSet> {
        let obj = self.object(&query.object.label, "tracker")?;
        let layer = self.scene.layer_of(image).unwrap_or(obj.id);
        let clean = &self.scene.disparities[layer];
        let cam = query.camera;
        let rendered = render(query.mesh, query.render_pose, &RenderSettings::new(*cam))?;
        let to_scene = self.true_placement(obj)?.compose(&query.render_pose.inverse());
        let stride = self.options.track_stride.max(1);
        let (w, h) = cam.dims();
        let mut pairs = Vec::new();
        for y in (0..h).step_by(stride) {
            for x in (0..w).step_by(stride) {
                let Some(d) = rendered.disparity.get(x, y) else {
                    continue;
                };
                let p = to_scene.apply(&cam.unproject(x as f64, y as f64, 1.0 / d as f64));
                if p.z <= 0.0 {
                    continue;
                }
                let (u, v) = cam.project(&p);
                if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
                    continue;
                }
                let expected = 1.0 / p.z;
                let visible = clean
                    .sample(u, v)
                    .is_some_and(|s| (s - expected).abs() <= self.options.track_tolerance * expected);
                if visible {
                    pairs.push(Correspondence {
                        source: (u, v),
                        rendered: (x as f64, y as f64),
                        confidence: self.options.track_confidence,
                    });
                }
            }
        }
        Ok(CorrespondenceSet { pairs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{generate_synthetic_scene, SceneSpec};

    fn suite(options: OracleOptions) -> OracleSuite {
        let scene = generate_synthetic_scene(&SceneSpec {
            objects: 3,
            seed: 11,
            ..SceneSpec::default()
        })
        .unwrap();
        OracleSuite::new(scene, options)
    }

    #[test]
    fn identity_corruption_is_bit_exact() {
        let mut s = suite(OracleOptions::clean());
        for k in 0..4 {
            let img = s.scene().layers[k].clone();
            let (d, _) = s.estimate_disparity(&img, k).unwrap();
            assert_eq!(d, s.scene().disparities[k]);
        }
    }

    #[test]
    fn corruption_is_affine_seeded_and_spares_the_reference() {
        let mut s = suite(OracleOptions::default());
        let img0 = s.scene().layers[0].clone();
        assert_eq!(s.estimate_disparity(&img0, 0).unwrap().0, s.scene().disparities[0]);
        for k in 1..4 {
            let (a, b) = s.corruption(k);
            assert!((0.8..=1.25).contains(&a));
            let median = s.scene().disparities[k].median().unwrap() as f64;
            assert!(b.abs() <= 0.1 * median);
            let img = s.scene().layers[k].clone();
            let (d, _) = s.estimate_disparity(&img, k).unwrap();
            let clean = s.scene().disparities[k].get(5, 5).unwrap() as f64;
            assert!((d.get(5, 5).unwrap() as f64 - (a * clean + b)).abs() < 1e-6);
        }
        assert_eq!(s.corruption(2), suite(OracleOptions::default()).corruption(2));
    }

    #[test]
    fn proposals_only_name_present_objects() {
        let mut s = suite(OracleOptions::default());
        for k in 0..4 {
            let img = s.scene().layers[k].clone();
            let p = s.propose(&img, k).unwrap();
            if k == 3 {
                assert!(p.is_empty());
                continue;
            }
            let obj = s.scene().object_by_label(&p.visible_object).unwrap().clone();
            assert!(obj.id >= k);
            let mask = s.segment(&img, &p.visible_object, k).unwrap();
            assert_eq!(mask, s.scene().amodal_masks[obj.id]);
            let next = s.remove(&img, &mask, &p.visible_object, k).unwrap();
            assert_eq!(next, s.scene().layers[k + 1]);
        }
        let last = s.scene().layers[3].clone();
        assert!(s.segment(&last, "red box", 3).unwrap().is_empty());
    }

    #[test]
    fn generated_mesh_maps_back_onto_ground_truth() {
        let s = suite(OracleOptions::default());
        for obj in &s.scene().objects {
            let gen = s.generated_mesh(obj).unwrap();
            let c = gen.centroid().unwrap();
            assert!(c.norm() < 1e-9);
            assert!((gen.radius_about(&c) - 1.0).abs() < 1e-9);
            let placed = s.true_placement(obj).unwrap().apply_mesh(&gen);
            for (a, b) in placed.vertices.iter().zip(&obj.world_mesh().vertices) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }
}
