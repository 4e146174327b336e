//! Recording a live backend run into a fixture directory that the fixture
//! backend can replay.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use nalgebra::Matrix3;

use super::{decompose, reconstruct, LayerSequence, PipelineConfig};
use crate::backends::{
    BackendSuite, FixtureDir, MeshGenerator, ObjectProposal, ObjectQuery, Proposer, RotationEstimator, RotationQuery,
    TrackQuery, Tracker,
};
use crate::error::Result;
use crate::fitting::CorrespondenceSet;
use crate::geometry::TriangleMesh;
use crate::raster::{Image, Mask};

#[derive(Default)]
struct Log {
    proposals: Vec<ObjectProposal>,
    meshes: BTreeMap<usize, TriangleMesh>,
    rotations: BTreeMap<usize, Matrix3<f64>>,
    tracks: BTreeMap<usize, CorrespondenceSet>,
}

type Shared = Rc<RefCell<Log>>;

struct Recorded<T: ?Sized> {
    inner: Box<T>,
    log: Shared,
}

impl Proposer for Recorded<dyn Proposer> {
    fn propose(&mut self, image: &Image, iteration: usize) -> Result<ObjectProposal> {
        let p = self.inner.propose(image, iteration)?;
        self.log.borrow_mut().proposals.push(p.clone());
        Ok(p)
    }
}

impl MeshGenerator for Recorded<dyn MeshGenerator> {
    fn generate_mesh(&mut self, masked: &Image, query: &ObjectQuery) -> Result<TriangleMesh> {
        let m = self.inner.generate_mesh(masked, query)?;
        self.log.borrow_mut().meshes.insert(query.index, m.clone());
        Ok(m)
    }
}

impl RotationEstimator for Recorded<dyn RotationEstimator> {
    fn estimate_rotation(&mut self, masked: &Image, mask: &Mask, query: &RotationQuery<'_>) -> Result<Matrix3<f64>> {
        let r = self.inner.estimate_rotation(masked, mask, query)?;
        self.log.borrow_mut().rotations.insert(query.object.index, r);
        Ok(r)
    }
}

impl Tracker for Recorded<dyn Tracker> {
    fn track(&mut self, image: &Image, rendered: &Image, query: &TrackQuery<'_>) -> Result<CorrespondenceSet> {
        let t = self.inner.track(image, rendered, query)?;
        self.log.borrow_mut().tracks.insert(query.object.index, t.clone());
        Ok(t)
    }
}

/// Run both stages on `input` through `backends`, recording every answer,
/// and write the sequence plus the recorded stage-two answers into `dir`.
/// Alignment and filtering are skipped: they make no backend calls.
pub fn capture_fixture(input: &Image, backends: BackendSuite, cfg: &PipelineConfig, dir: &FixtureDir) -> Result<LayerSequence> {
    let log: Shared = Rc::default();
    let mut suite = BackendSuite {
        proposer: Box::new(Recorded {
            inner: backends.proposer,
            log: log.clone(),
        }),
        segmenter: backends.segmenter,
        remover: backends.remover,
        depth: backends.depth,
        mesh_generator: Box::new(Recorded {
            inner: backends.mesh_generator,
            log: log.clone(),
        }),
        rotation: Box::new(Recorded {
            inner: backends.rotation,
            log: log.clone(),
        }),
        tracker: Box::new(Recorded {
            inner: backends.tracker,
            log: log.clone(),
        }),
    };
    let cfg = PipelineConfig {
        depth_align: false,
        filter: false,
        ..*cfg
    };
    let (seq, _) = decompose(input, &mut suite, &cfg)?;
    reconstruct(&seq, &mut suite, &cfg)?;
    drop(suite);

    let log = log.borrow();
    seq.save(dir)?;
    dir.write_proposals(&log.proposals)?;
    for (k, m) in &log.meshes {
        dir.write_mesh(*k, m)?;
    }
    for (k, t) in &log.tracks {
        dir.write_tracks(*k, t)?;
    }
    let rotations: Vec<Option<Matrix3<f64>>> = (0..seq.masks.len()).map(|k| log.rotations.get(&k).copied()).collect();
    dir.write_rotations(&rotations)?;
    Ok(seq)
}
