//! The two-stage orchestration. Stage one peels objects off the input image
//! one at a time; stage two aligns the per-layer disparities, places a
//! generated mesh for every removed object and tessellates what is left.

mod capture;
mod layout;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use capture::capture_fixture;
pub use layout::{LayoutObject, SceneLayout};

use crate::align::Sim3;
use crate::backends::{BackendSuite, FixtureDir, ObjectQuery};
use crate::error::{Error, Result};
use crate::fitting::{fit_object, filter_overlapping, FilterDecision, FitConfig, FitDiagnostics};
use crate::geometry::{tessellate_background, Camera, OverlapMeasure, TessellateOptions, TriangleMesh};
use crate::raster::{check_dims, dilate, mask_apply, DisparityGrid, Image, Mask, BLACK};
use crate::refine::{refine_disparities, RefineConfig, RefineSidecar};

/// Output of stage one: every intermediate image, the mask of the object
/// removed from each, and per-layer disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSequence {
    pub images: Vec<Image>,
    pub masks: Vec<Mask>,
    pub disparities: Vec<DisparityGrid>,
    pub labels: Vec<String>,
    pub camera: Camera,
}

impl LayerSequence {
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if n == 0 || self.masks.len() + 1 != n || self.disparities.len() != n || self.labels.len() != self.masks.len() {
            return Err(Error::InvalidArgument(format!(
                "layer sequence has {} images, {} masks, {} disparities, {} labels",
                n,
                self.masks.len(),
                self.disparities.len(),
                self.labels.len()
            )));
        }
        let dims = self.camera.dims();
        for img in &self.images {
            check_dims(dims, img.dims())?;
        }
        for m in &self.masks {
            check_dims(dims, m.dims())?;
        }
        for d in &self.disparities {
            check_dims(dims, d.dims())?;
        }
        Ok(())
    }

    /// Write in the fixture layout, plus `labels.json`.
    pub fn save(&self, dir: &FixtureDir) -> Result<()> {
        self.validate()?;
        for (k, img) in self.images.iter().enumerate() {
            dir.write_layer(k, img)?;
            dir.write_disparity(k, &self.disparities[k])?;
        }
        for (k, m) in self.masks.iter().enumerate() {
            dir.write_mask(k, m)?;
        }
        dir.write_camera(&self.camera)?;
        dir.write_labels(&self.labels)
    }

    /// Read a fixture directory that already holds every layer's disparity.
    /// Without `labels.json` the masks are labelled by the proposals file,
    /// or by index.
    pub fn load(dir: &FixtureDir) -> Result<Self> {
        let n = dir.layer_count();
        let m = dir.mask_count();
        if n == 0 || m + 1 != n {
            return Err(Error::InvalidArgument(format!(
                "{}: {n} layers and {m} masks do not form a sequence",
                dir.path().display()
            )));
        }
        let labels = match dir.labels()? {
            Some(l) => l,
            None => {
                let proposals = dir.proposals()?;
                (0..m)
                    .map(|k| {
                        proposals
                            .get(k)
                            .filter(|p| !p.is_empty())
                            .map_or_else(|| format!("object {k}"), |p| p.visible_object.clone())
                    })
                    .collect()
            }
        };
        let seq = Self {
            images: (0..n).map(|k| dir.layer(k)).collect::<Result<_>>()?,
            masks: (0..m).map(|k| dir.mask(k)).collect::<Result<_>>()?,
            disparities: (0..n).map(|k| dir.disparity(k)).collect::<Result<_>>()?,
            labels,
            camera: dir.camera()?,
        };
        seq.validate()?;
        Ok(seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Upper bound on object removals.
    pub max_iterations: usize,
    /// Growth applied to each segmentation before it becomes a layer mask.
    pub segmentation_dilation: usize,
    /// Further growth of the layer mask handed to the remover.
    pub removal_dilation: usize,
    pub refine: RefineConfig,
    pub fit: FitConfig,
    pub filter: bool,
    pub filter_threshold: f64,
    pub depth_align: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 16,
            segmentation_dilation: 3,
            removal_dilation: 5,
            // sized for desk-scale images: a few seconds per sequence
            refine: RefineConfig {
                hidden: 32,
                batch_size: 512,
                steps: 600,
                learning_rate: 3e-3,
                cosine_decay: true,
                ..RefineConfig::default()
            },
            fit: FitConfig::default(),
            filter: true,
            filter_threshold: 0.9,
            depth_align: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.filter_threshold > 0.0 && self.filter_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "filter_threshold must be in (0, 1], got {}",
                self.filter_threshold
            )));
        }
        self.refine.validate()?;
        self.fit.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The proposer saw nothing left to remove.
    EmptyProposal,
    /// Two passes in a row segmented nothing.
    EmptyMasks,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub passes: usize,
    pub removals: usize,
    /// Passes abandoned because the queue head segmented to nothing.
    pub empty_masks: usize,
    pub stop: StopReason,
}

/// Stage one. Each pass asks for a proposal; carried objects go first and
/// their carrier waits for a later pass.
pub fn decompose(input: &Image, backends: &mut BackendSuite, cfg: &PipelineConfig) -> Result<(LayerSequence, DecomposeReport)> {
    cfg.validate()?;
    let mut images = vec![input.clone()];
    let mut masks = Vec::new();
    let mut labels = Vec::new();
    let mut report = DecomposeReport {
        passes: 0,
        removals: 0,
        empty_masks: 0,
        stop: StopReason::MaxIterations,
    };
    let mut consecutive_empty = 0;
    'passes: while masks.len() < cfg.max_iterations {
        let iteration = masks.len();
        let current = images.last().expect("sequence starts with the input").clone();
        report.passes += 1;
        let proposal = backends
            .proposer
            .propose(&current, iteration)
            .map_err(|e| e.at_iteration(iteration))?;
        if proposal.is_empty() {
            report.stop = StopReason::EmptyProposal;
            break;
        }
        let queue = if proposal.secondary_objects.is_empty() {
            vec![proposal.visible_object]
        } else {
            proposal.secondary_objects
        };
        for label in queue {
            let iteration = masks.len();
            if iteration >= cfg.max_iterations {
                break 'passes;
            }
            let current = images.last().expect("non-empty").clone();
            let raw = backends
                .segmenter
                .segment(&current, &label, iteration)
                .map_err(|e| e.at_iteration(iteration))?;
            check_dims(current.dims(), raw.dims())?;
            if raw.is_empty() {
                report.empty_masks += 1;
                consecutive_empty += 1;
                if consecutive_empty >= 2 {
                    report.stop = StopReason::EmptyMasks;
                    break 'passes;
                }
                continue 'passes;
            }
            consecutive_empty = 0;
            let mask = dilate(&raw, cfg.segmentation_dilation);
            let removal_mask = dilate(&mask, cfg.removal_dilation);
            let next = backends
                .remover
                .remove(&current, &removal_mask, &label, iteration)
                .map_err(|e| e.at_iteration(iteration))?;
            check_dims(current.dims(), next.dims())?;
            images.push(next);
            masks.push(mask);
            labels.push(label);
            report.removals += 1;
        }
    }

    let mut disparities = Vec::with_capacity(images.len());
    let mut camera = None;
    for (k, img) in images.iter().enumerate() {
        let (d, cam) = backends.depth.estimate_disparity(img, k).map_err(|e| e.at_iteration(k))?;
        check_dims(img.dims(), d.dims())?;
        cam.validate()?;
        camera.get_or_insert(cam);
        disparities.push(d);
    }
    let seq = LayerSequence {
        images,
        masks,
        disparities,
        labels,
        camera: camera.expect("at least one layer"),
    };
    seq.validate()?;
    Ok((seq, report))
}

/// What happened to one removed object in stage two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub index: usize,
    pub label: String,
    pub diagnostics: Option<FitDiagnostics>,
    /// Why the object was skipped, when fitting failed.
    pub error: Option<String>,
    pub filter: Option<FilterDecision>,
    pub in_layout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub depth_aligned: bool,
    pub refine: Option<RefineSidecar>,
    pub objects: Vec<ObjectReport>,
    pub background_vertices: usize,
}

/// Wall-clock seconds per step. Kept apart from the report, which must be
/// reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub decompose: f64,
    pub refine: f64,
    pub fit: Vec<f64>,
    pub filter: f64,
    pub background: f64,
    pub total: f64,
}

/// Stage two.
pub fn reconstruct(
    layers: &LayerSequence,
    backends: &mut BackendSuite,
    cfg: &PipelineConfig,
) -> Result<(SceneLayout, ReconstructReport, Timings)> {
    cfg.validate()?;
    layers.validate()?;
    let mut timings = Timings::default();
    let clock = Instant::now();
    let (disparities, refine) = if cfg.depth_align && !layers.masks.is_empty() {
        let out = refine_disparities(&layers.disparities, &layers.images, &layers.masks, &cfg.refine)?;
        let sidecar = out.sidecar(&cfg.refine);
        (out.grids, Some(sidecar))
    } else {
        (layers.disparities.clone(), None)
    };
    timings.refine = clock.elapsed().as_secs_f64();

    let mut reports = Vec::with_capacity(layers.masks.len());
    let mut fitted: Vec<(usize, TriangleMesh, Sim3)> = Vec::new();
    for (n, mask) in layers.masks.iter().enumerate() {
        let clock = Instant::now();
        let query = ObjectQuery {
            index: n,
            label: layers.labels[n].clone(),
        };
        let masked = mask_apply(&layers.images[n], mask, BLACK)?;
        let mesh = backends
            .mesh_generator
            .generate_mesh(&masked, &query)
            .map_err(|e| e.at_iteration(n))?;
        let outcome = fit_object(
            &layers.images[n],
            mask,
            &disparities[n],
            &mesh,
            &layers.camera,
            &query,
            backends.rotation.as_mut(),
            backends.tracker.as_mut(),
            &cfg.fit,
        );
        let mut report = ObjectReport {
            index: n,
            label: query.label.clone(),
            diagnostics: None,
            error: None,
            filter: None,
            in_layout: false,
        };
        match outcome {
            Ok(out) => {
                report.diagnostics = Some(out.diagnostics);
                fitted.push((n, mesh, out.transform));
            }
            // a broken backend is not a per-object problem
            Err(e @ (Error::Backend { .. } | Error::Io { .. })) => return Err(e.at_iteration(n)),
            Err(e) => {
                if let Error::FitFailure { diagnostics, .. } = &e {
                    report.diagnostics = Some((**diagnostics).clone());
                }
                report.error = Some(e.to_string());
            }
        }
        reports.push(report);
        timings.fit.push(clock.elapsed().as_secs_f64());
    }

    let clock = Instant::now();
    let keep: Vec<bool> = if cfg.filter && !fitted.is_empty() {
        let posed: Vec<(&TriangleMesh, Sim3)> = fitted.iter().map(|(_, m, t)| (m, *t)).collect();
        let decisions = filter_overlapping(&posed, cfg.filter_threshold, OverlapMeasure::default())?;
        let keep = decisions.iter().map(|d| d.kept).collect();
        for (d, (n, _, _)) in decisions.into_iter().zip(&fitted) {
            // report indices in mask order, not in fitted order
            let overlaps = d.overlaps.map(|(k, iou)| (fitted[k].0, iou));
            reports[*n].filter = Some(FilterDecision {
                index: *n,
                kept: d.kept,
                overlaps,
            });
        }
        keep
    } else {
        vec![true; fitted.len()]
    };
    timings.filter = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let last = layers.images.len() - 1;
    let background = tessellate_background(
        &disparities[last],
        &layers.camera,
        &layers.images[last],
        TessellateOptions::default(),
    )?;
    timings.background = clock.elapsed().as_secs_f64();

    let mut objects = Vec::new();
    for ((n, mesh, transform), keep) in fitted.into_iter().zip(keep) {
        if keep {
            reports[n].in_layout = true;
            objects.push(LayoutObject {
                id: n,
                label: layers.labels[n].clone(),
                mesh,
                transform,
            });
        }
    }
    let report = ReconstructReport {
        depth_aligned: refine.is_some(),
        refine,
        objects: reports,
        background_vertices: background.vertices.len(),
    };
    let layout = SceneLayout {
        objects,
        background,
        camera: layers.camera,
    };
    layout.validate()?;
    Ok((layout, report, timings))
}

/// Where a run starts: a raw image goes through both stages, a stored
/// sequence skips stage one.
pub enum RunInput {
    Image(Image),
    Layers(LayerSequence),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    /// Absent when the run started from a stored sequence.
    pub decompose: Option<DecomposeReport>,
    pub layers: usize,
    pub labels: Vec<String>,
    pub reconstruct: ReconstructReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub layers: LayerSequence,
    pub layout: SceneLayout,
    pub report: RunReport,
    pub timings: Timings,
}

pub fn run(input: RunInput, backends: &mut BackendSuite, cfg: &PipelineConfig) -> Result<RunOutput> {
    let clock = Instant::now();
    let (layers, decompose_report) = match input {
        RunInput::Image(img) => {
            let (seq, rep) = decompose(&img, backends, cfg)?;
            (seq, Some(rep))
        }
        RunInput::Layers(seq) => (seq, None),
    };
    let decompose_time = clock.elapsed().as_secs_f64();
    let (layout, rec, mut timings) = reconstruct(&layers, backends, cfg)?;
    timings.decompose = decompose_time;
    timings.total = clock.elapsed().as_secs_f64();
    let report = RunReport {
        config: *cfg,
        decompose: decompose_report,
        layers: layers.images.len(),
        labels: layers.labels.clone(),
        reconstruct: rec,
    };
    Ok(RunOutput {
        layers,
        layout,
        report,
        timings,
    })
}

impl RunOutput {
    /// `layout.json` with its meshes, `layers/`, `report.json` and
    /// `timings.json`.
    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.layout.save(dir)?;
        self.layers.save(&FixtureDir::create(dir.join("layers"))?)?;
        layout::write_json(&dir.join("report.json"), &self.report)?;
        layout::write_json(&dir.join("timings.json"), &self.timings)
    }
}
