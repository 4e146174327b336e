//! Replaying precomputed backend outputs from a scene directory.
//!
//! Layout: `layer_###.png`, `mask_###.png`, `disp_###.pfm`, `camera.json`,
//! `mesh_###.obj`, `proposals.json`, `rotations.json`, `tracks_###.json`,
//! plus an optional `labels.json` naming each mask.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Matrix3;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    BackendSuite, DepthEstimator, MeshGenerator, ObjectProposal, ObjectQuery, Proposer, Remover, RotationEstimator,
    RotationQuery, Segmenter, TrackQuery, Tracker,
};
use crate::error::{Error, Result};
use crate::fitting::CorrespondenceSet;
use crate::geometry::{load_obj, save_obj, Camera, TriangleMesh};
use crate::raster::{load_disparity, load_image, load_mask, save_disparity, save_image, save_mask, DisparityGrid, Image, Mask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureDir {
    root: PathBuf,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

impl FixtureDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Create the directory if needed.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn file(&self, stem: &str, k: usize, ext: &str) -> PathBuf {
        self.root.join(format!("{stem}_{k:03}.{ext}"))
    }

    fn count(&self, stem: &str, ext: &str) -> usize {
        (0..).take_while(|&k| self.file(stem, k, ext).is_file()).count()
    }

    pub fn layer_count(&self) -> usize {
        self.count("layer", "png")
    }

    pub fn mask_count(&self) -> usize {
        self.count("mask", "png")
    }

    pub fn layer(&self, k: usize) -> Result<Image> {
        load_image(self.file("layer", k, "png"))
    }

    pub fn mask(&self, k: usize) -> Result<Mask> {
        load_mask(self.file("mask", k, "png"))
    }

    pub fn disparity(&self, k: usize) -> Result<DisparityGrid> {
        load_disparity(self.file("disp", k, "pfm"))
    }

    pub fn has_disparity(&self, k: usize) -> bool {
        self.file("disp", k, "pfm").is_file()
    }

    pub fn camera(&self) -> Result<Camera> {
        let cam: Camera = read_json(&self.root.join("camera.json"))?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn mesh(&self, k: usize) -> Result<TriangleMesh> {
        load_obj(self.file("mesh", k, "obj"))
    }

    /// Missing file reads as no proposals.
    pub fn proposals(&self) -> Result<Vec<ObjectProposal>> {
        let path = self.root.join("proposals.json");
        if !path.is_file() {
            return Ok(Vec::new());
        }
        read_json(&path)
    }

    /// Row-major rotation per mask index; `null` entries are allowed.
    pub fn rotations(&self) -> Result<Vec<Option<Matrix3<f64>>>> {
        let path = self.root.join("rotations.json");
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let rows: Vec<Option<[[f64; 3]; 3]>> = read_json(&path)?;
        Ok(rows
            .into_iter()
            .map(|r| r.map(|r| Matrix3::from_fn(|i, j| r[i][j])))
            .collect())
    }

    pub fn tracks(&self, k: usize) -> Result<CorrespondenceSet> {
        read_json(&self.file("tracks", k, "json"))
    }

    pub fn labels(&self) -> Result<Option<Vec<String>>> {
        let path = self.root.join("labels.json");
        if !path.is_file() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn write_layer(&self, k: usize, image: &Image) -> Result<()> {
        save_image(image, self.file("layer", k, "png"))
    }

    pub fn write_mask(&self, k: usize, mask: &Mask) -> Result<()> {
        save_mask(mask, self.file("mask", k, "png"))
    }

    pub fn write_disparity(&self, k: usize, grid: &DisparityGrid) -> Result<()> {
        save_disparity(grid, self.file("disp", k, "pfm"))
    }

    pub fn write_camera(&self, cam: &Camera) -> Result<()> {
        write_json(&self.root.join("camera.json"), cam)
    }

    pub fn write_mesh(&self, k: usize, mesh: &TriangleMesh) -> Result<()> {
        save_obj(mesh, self.file("mesh", k, "obj"))
    }

    pub fn write_proposals(&self, proposals: &[ObjectProposal]) -> Result<()> {
        write_json(&self.root.join("proposals.json"), proposals)
    }

    pub fn write_rotations(&self, rotations: &[Option<Matrix3<f64>>]) -> Result<()> {
        let rows: Vec<Option<[[f64; 3]; 3]>> = rotations
            .iter()
            .map(|r| r.map(|r| std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))))
            .collect();
        write_json(&self.root.join("rotations.json"), &rows)
    }

    pub fn write_tracks(&self, k: usize, tracks: &CorrespondenceSet) -> Result<()> {
        write_json(&self.file("tracks", k, "json"), tracks)
    }

    pub fn write_labels(&self, labels: &[String]) -> Result<()> {
        write_json(&self.root.join("labels.json"), labels)
    }
}

/// Every role answered from a [`FixtureDir`]. Stage-one roles identify the
/// current layer by exact image match; stage-two roles use the mask index.
#[derive(Debug, Clone)]
pub struct FixtureSuite {
    dir: FixtureDir,
    layers: Arc<Vec<Image>>,
    proposals: Arc<Vec<ObjectProposal>>,
    rotations: Arc<Vec<Option<Matrix3<f64>>>>,
    proposals_served: usize,
}

impl FixtureSuite {
    pub fn open(dir: FixtureDir) -> Result<Self> {
        let layers = (0..dir.layer_count()).map(|k| dir.layer(k)).collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(Error::InvalidArgument(format!("{} holds no layer_000.png", dir.path().display())));
        }
        Ok(Self {
            proposals: Arc::new(dir.proposals()?),
            rotations: Arc::new(dir.rotations()?),
            layers: Arc::new(layers),
            dir,
            proposals_served: 0,
        })
    }

    pub fn dir(&self) -> &FixtureDir {
        &self.dir
    }

    fn layer_of(&self, image: &Image, role: &'static str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l == image)
            .ok_or_else(|| Error::backend(role, "image matches no fixture layer"))
    }

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

fn missing(role: &'static str, e: Error) -> Error {
    Error::backend(role, e.to_string())
}

impl Proposer for FixtureSuite {
    fn propose(&mut self, _image: &Image, _iteration: usize) -> Result<ObjectProposal> {
        let p = self.proposals.get(self.proposals_served).cloned().unwrap_or_default();
        self.proposals_served += 1;
        Ok(p)
    }
}

impl Segmenter for FixtureSuite {
    fn segment(&mut self, image: &Image, _label: &str, _iteration: usize) -> Result<Mask> {
        let k = self.layer_of(image, "segmenter")?;
        if k < self.dir.mask_count() {
            self.dir.mask(k).map_err(|e| missing("segmenter", e))
        } else {
            Ok(Mask::empty(image.width(), image.height()))
        }
    }
}

impl Remover for FixtureSuite {
    fn remove(&mut self, image: &Image, _mask: &Mask, _label: &str, _iteration: usize) -> Result<Image> {
        let k = self.layer_of(image, "remover")?;
        self.layers
            .get(k + 1)
            .cloned()
            .ok_or_else(|| Error::backend("remover", format!("no layer after {k}")))
    }
}

impl DepthEstimator for FixtureSuite {
    fn estimate_disparity(&mut self, image: &Image, layer: usize) -> Result<(DisparityGrid, Camera)> {
        let k = self.layer_of(image, "depth").unwrap_or(layer);
        let grid = self.dir.disparity(k).map_err(|e| missing("depth", e))?;
        let cam = self.dir.camera().map_err(|e| missing("depth", e))?;
        Ok((grid, cam))
    }
}

impl MeshGenerator for FixtureSuite {
    fn generate_mesh(&mut self, _masked: &Image, query: &ObjectQuery) -> Result<TriangleMesh> {
        self.dir.mesh(query.index).map_err(|e| missing("mesh_generator", e))
    }
}

impl RotationEstimator for FixtureSuite {
    fn estimate_rotation(&mut self, _masked: &Image, _mask: &Mask, query: &RotationQuery<'_>) -> Result<Matrix3<f64>> {
        self.rotations
            .get(query.object.index)
            .copied()
            .flatten()
            .ok_or_else(|| Error::backend("rotation", format!("no rotation for object {}", query.object.index)))
    }
}

impl Tracker for FixtureSuite {
    fn track(&mut self, _image: &Image, _rendered: &Image, query: &TrackQuery<'_>) -> Result<CorrespondenceSet> {
        self.dir.tracks(query.object.index).map_err(|e| missing("tracker", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_dir() -> (tempfile::TempDir, FixtureDir) {
        let tmp = tempfile::tempdir().unwrap();
        let dir = FixtureDir::new(tmp.path());
        for k in 0..2 {
            dir.write_layer(k, &Image::filled(4, 3, [k as f32 * 0.5; 3])).unwrap();
            dir.write_disparity(k, &DisparityGrid::from_values(4, 3, vec![0.5 + k as f32; 12]).unwrap()).unwrap();
        }
        dir.write_mask(0, &Mask::from_fn(4, 3, |x, _| x < 2)).unwrap();
        dir.write_camera(&Camera::centered(4.0, 4, 3).unwrap()).unwrap();
        dir.write_proposals(&[ObjectProposal::single("cup")]).unwrap();
        dir.write_rotations(&[Some(Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0))]).unwrap();
        (tmp, dir)
    }

    #[test]
    fn replays_a_removal() {
        let (_tmp, dir) = sample_dir();
        let mut s = FixtureSuite::open(dir.clone()).unwrap();
        let l0 = dir.layer(0).unwrap();
        assert_eq!(s.propose(&l0, 0).unwrap().visible_object, "cup");
        assert!(s.propose(&l0, 1).unwrap().is_empty());
        let m = s.segment(&l0, "cup", 0).unwrap();
        assert_eq!(m.count(), 6);
        assert_eq!(s.remove(&l0, &m, "cup", 0).unwrap(), dir.layer(1).unwrap());
        let l1 = dir.layer(1).unwrap();
        assert!(s.segment(&l1, "cup", 1).unwrap().is_empty());
        assert!(s.remove(&l1, &m, "cup", 1).is_err());
        assert_eq!(s.estimate_disparity(&l1, 1).unwrap().0.get(0, 0), Some(1.5));
    }

    #[test]
    fn reads_are_pure() {
        let (_tmp, dir) = sample_dir();
        assert_eq!(dir.rotations().unwrap(), dir.rotations().unwrap());
        assert_eq!(dir.rotations().unwrap()[0].unwrap()[(0, 1)], -1.0);
        assert_eq!(dir.disparity(1).unwrap(), dir.disparity(1).unwrap());
        assert_eq!(dir.layer_count(), 2);
        assert_eq!(dir.mask_count(), 1);
        assert!(dir.labels().unwrap().is_none());
    }
}
