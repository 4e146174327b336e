//! Reconstruction quality: point-sample distances, F-scores, rendered depth
//! and segmentation agreement between a predicted and a ground-truth layout.

mod hungarian;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use hungarian::{max_score_matching, min_cost_assignment};

use crate::align::Sim3;
use crate::backends::FixtureDir;
use crate::error::{Error, Result};
use crate::geometry::{Camera, KdTree, PointSet, TriangleMesh};
use crate::pipeline::SceneLayout;
use crate::raster::Mask;
use crate::render::{render_ids, Rasterizer, RenderSettings};

/// Area-weighted uniform samples on the surface, reproducible from `seed`.
pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<PointSet> {
    if count == 0 {
        return Ok(PointSet::default());
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cumulative.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::DegenerateMesh("mesh has no surface area to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| {
            let pick = rng.gen::<f64>() * acc;
            let t = cumulative.partition_point(|c| *c <= pick).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            // folding the unit square onto the triangle keeps the density uniform
            let (mut r1, mut r2) = (rng.gen::<f64>(), rng.gen::<f64>());
            if r1 + r2 > 1.0 {
                (r1, r2) = (1.0 - r1, 1.0 - r2);
            }
            a + (b - a) * r1 + (c - a) * r2
        })
        .collect();
    Ok(PointSet::new(points))
}

fn nearest_distances(query: &PointSet, target: &PointSet) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let tree = KdTree::build(&target.points);
    Ok(query
        .points
        .iter()
        .map(|q| tree.nearest(q, None).expect("target is non-empty").distance)
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sum of the two directed mean nearest-neighbour distances, each
/// per-point distance clipped at `clip` when given.
pub fn chamfer_with_clip(a: &PointSet, b: &PointSet, clip: Option<f64>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let cut = |d: f64| clip.map_or(d, |c| d.min(c));
    let ab: Vec<f64> = nearest_distances(a, b)?.into_iter().map(cut).collect();
    let ba: Vec<f64> = nearest_distances(b, a)?.into_iter().map(cut).collect();
    Ok(mean(&ab) + mean(&ba))
}

pub fn chamfer(a: &PointSet, b: &PointSet) -> Result<f64> {
    chamfer_with_clip(a, b, None)
}

/// Precision, recall and F1, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl FScore {
    const ZERO: FScore = FScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

fn within_fraction(query: &PointSet, target: &PointSet, tau: f64) -> Result<f64> {
    if query.is_empty() || target.is_empty() {
        return Ok(0.0);
    }
    // bounded search: far-apart clouds would otherwise visit most of the tree
    let tree = KdTree::build(&target.points);
    let hits = query.points.iter().filter(|q| tree.nearest(q, Some(tau)).is_some()).count();
    Ok(hits as f64 / query.len() as f64)
}

pub fn fscore(pred: &PointSet, gt: &PointSet, tau: f64) -> Result<FScore> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {tau}")));
    }
    let p = within_fraction(pred, gt, tau)?;
    let r = within_fraction(gt, pred, tau)?;
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Ok(FScore {
        precision: 100.0 * p,
        recall: 100.0 * r,
        f1: 100.0 * f1,
    })
}

/// Per ground-truth object outcome of the optimal matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectMatch {
    pub gt: usize,
    pub pred: Option<usize>,
    pub f1: f64,
}

/// Mean over ground-truth objects of the F1 of the predicted object each is
/// paired with under the score-maximising one-to-one matching; ground-truth
/// objects left unpaired score zero.
pub fn object_fscore(pred: &[PointSet], gt: &[PointSet], tau: f64) -> Result<(f64, Vec<ObjectMatch>)> {
    if gt.is_empty() {
        return Err(Error::InvalidArgument("no ground-truth objects".into()));
    }
    let mut score = Vec::with_capacity(gt.len() * pred.len());
    for g in gt {
        for p in pred {
            score.push(fscore(p, g, tau)?.f1);
        }
    }
    let matching = max_score_matching(&score, gt.len(), pred.len());
    let matches: Vec<ObjectMatch> = matching
        .iter()
        .enumerate()
        .map(|(i, m)| ObjectMatch {
            gt: i,
            pred: *m,
            f1: m.map_or(0.0, |j| score[i * pred.len() + j]),
        })
        .collect();
    let total = matches.iter().map(|m| m.f1).sum::<f64>() / gt.len() as f64;
    Ok((total, matches))
}

fn draw_layout(layout: &SceneLayout, camera: &Camera, with_background: bool) -> Result<Rasterizer> {
    let mut r = Rasterizer::new(RenderSettings::new(*camera))?;
    for (i, o) in layout.objects.iter().enumerate() {
        r.draw(&o.mesh, &o.transform, i as u32);
    }
    if with_background {
        r.draw(&layout.background, &Sim3::identity(), u32::MAX);
    }
    Ok(r)
}

/// Mean absolute depth difference over pixels both renderings cover.
pub fn depth_error(pred: &SceneLayout, gt: &SceneLayout, camera: &Camera, with_background: bool) -> Result<f64> {
    let a = draw_layout(pred, camera, with_background)?.finish().disparity;
    let b = draw_layout(gt, camera, with_background)?.finish().disparity;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..a.values().len() {
        if a.validity()[i] && b.validity()[i] {
            sum += (1.0 / a.values()[i] as f64 - 1.0 / b.values()[i] as f64).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    /// Mean over ground-truth instances of the IoU with their greedy match.
    pub iou: f64,
    pub rand_index: f64,
}

/// Compare two per-pixel instance maps; `None` is the unlabelled segment.
pub fn segmentation_scores(pred: &[Option<u32>], gt: &[Option<u32>]) -> Result<SegmentationScores> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "instance maps differ in size: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument("empty instance maps".into()));
    }
    // contingency counts between the two partitions
    let mut joint: BTreeMap<(Option<u32>, Option<u32>), u64> = BTreeMap::new();
    let mut pred_sizes: BTreeMap<Option<u32>, u64> = BTreeMap::new();
    let mut gt_sizes: BTreeMap<Option<u32>, u64> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        *joint.entry((*p, *g)).or_default() += 1;
        *pred_sizes.entry(*p).or_default() += 1;
        *gt_sizes.entry(*g).or_default() += 1;
    }
    let pairs = |n: u64| n as f64 * (n as f64 - 1.0) / 2.0;
    let total = pairs(pred.len() as u64);
    let same_both: f64 = joint.values().map(|n| pairs(*n)).sum();
    let same_pred: f64 = pred_sizes.values().map(|n| pairs(*n)).sum();
    let same_gt: f64 = gt_sizes.values().map(|n| pairs(*n)).sum();
    let rand_index = if total > 0.0 {
        (total + 2.0 * same_both - same_pred - same_gt) / total
    } else {
        1.0
    };

    let gt_ids: Vec<u32> = gt_sizes.keys().filter_map(|k| *k).collect();
    let pred_ids: Vec<u32> = pred_sizes.keys().filter_map(|k| *k).collect();
    let iou_of = |g: u32, p: u32| {
        let inter = joint.get(&(Some(p), Some(g))).copied().unwrap_or(0) as f64;
        let union = (gt_sizes[&Some(g)] + pred_sizes[&Some(p)]) as f64 - inter;
        inter / union
    };
    let mut used = vec![false; pred_ids.len()];
    let mut iou_sum = 0.0;
    for &g in &gt_ids {
        let mut best: Option<(usize, f64)> = None;
        for (j, &p) in pred_ids.iter().enumerate() {
            if used[j] {
                continue;
            }
            let v = iou_of(g, p);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            used[j] = true;
            iou_sum += v;
        }
    }
    let iou = if gt_ids.is_empty() {
        // nothing to find: perfect only if nothing was predicted
        if pred_ids.is_empty() { 1.0 } else { 0.0 }
    } else {
        iou_sum / gt_ids.len() as f64
    };
    Ok(SegmentationScores { iou, rand_index })
}

/// Instance map of a set of possibly overlapping masks; the first mask
/// covering a pixel claims it.
pub fn masks_to_instances(masks: &[Mask]) -> Result<Vec<Option<u32>>> {
    let Some(first) = masks.first() else {
        return Err(Error::InvalidArgument("no masks".into()));
    };
    let dims = first.dims();
    let mut ids = vec![None; dims.0 * dims.1];
    for (k, m) in masks.iter().enumerate() {
        crate::raster::check_dims(dims, m.dims())?;
        for (id, bit) in ids.iter_mut().zip(m.bits()) {
            if *bit && id.is_none() {
                *id = Some(k as u32);
            }
        }
    }
    Ok(ids)
}

fn layout_ids(layout: &SceneLayout, camera: &Camera) -> Result<Vec<Option<u32>>> {
    let posed: Vec<(&TriangleMesh, Sim3)> = layout.objects.iter().map(|o| (&o.mesh, o.transform)).collect();
    render_ids(&posed, &RenderSettings::new(*camera))
}

/// IoU of the layout's rendered instance map against ground-truth
/// instances.
pub fn mesh_iou(layout: &SceneLayout, gt_instances: &[Option<u32>], camera: &Camera) -> Result<f64> {
    Ok(segmentation_scores(&layout_ids(layout, camera)?, gt_instances)?.iou)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// F-score distance threshold, scene units.
    pub tau: f64,
    pub samples_per_object: usize,
    pub seed: u64,
    /// Per-point clip of the clipped chamfer variant.
    pub chamfer_clip: f64,
    pub with_background: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            samples_per_object: 10_000,
            seed: 0,
            chamfer_clip: 0.1,
            with_background: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: EvalConfig,
    /// `None` when either side has nothing to sample.
    pub chamfer: Option<f64>,
    pub chamfer_clipped: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub object_fscore: f64,
    pub object_matches: Vec<ObjectMatch>,
    /// `None` when the renderings share no pixel.
    pub depth_error: Option<f64>,
    /// Predicted segmentation masks against ground-truth silhouettes, when
    /// the prediction carries masks.
    pub seg_iou: Option<f64>,
    pub rand_index: Option<f64>,
    pub mesh_iou: f64,
}

/// Seeds depend only on the object's position, so identical layouts give
/// identical samples.
fn object_samples(layout: &SceneLayout, cfg: &EvalConfig) -> Result<Vec<PointSet>> {
    layout
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let seed = cfg.seed ^ (i as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            sample_surface(&o.posed_mesh(), cfg.samples_per_object, seed)
        })
        .collect()
}

fn union(sets: &[PointSet]) -> PointSet {
    PointSet::new(sets.iter().flat_map(|s| s.points.iter().copied()).collect())
}

/// Full battery. Ground truth fixes the camera; `pred_masks` are the
/// prediction's per-object segmentation masks, if any.
pub fn evaluate(pred: &SceneLayout, gt: &SceneLayout, pred_masks: Option<&[Mask]>, cfg: &EvalConfig) -> Result<MetricReport> {
    if !(cfg.tau > 0.0) || !(cfg.chamfer_clip > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid evaluation config {cfg:?}")));
    }
    let camera = gt.camera;
    let pred_objects = object_samples(pred, cfg)?;
    let gt_objects = object_samples(gt, cfg)?;
    let mut pred_all = union(&pred_objects);
    let mut gt_all = union(&gt_objects);
    if cfg.with_background {
        pred_all.points.extend(sample_surface(&pred.background, cfg.samples_per_object, cfg.seed)?.points);
        gt_all.points.extend(sample_surface(&gt.background, cfg.samples_per_object, cfg.seed)?.points);
    }
    let both = !pred_all.is_empty() && !gt_all.is_empty();
    let scene = if both { fscore(&pred_all, &gt_all, cfg.tau)? } else { FScore::ZERO };
    let (object_fscore, object_matches) = if gt_objects.is_empty() {
        (0.0, Vec::new())
    } else {
        object_fscore(&pred_objects, &gt_objects, cfg.tau)?
    };
    let depth = match depth_error(pred, gt, &camera, cfg.with_background) {
        Ok(d) => Some(d),
        Err(Error::NoOverlap) => None,
        Err(e) => return Err(e),
    };
    let gt_ids = layout_ids(gt, &camera)?;
    let seg = match pred_masks {
        Some(masks) if !masks.is_empty() && !gt.objects.is_empty() => {
            let settings = RenderSettings::new(camera);
            let silhouettes = gt
                .objects
                .iter()
                .map(|o| Ok(crate::render::render(&o.mesh, &o.transform, &settings)?.mask))
                .collect::<Result<Vec<_>>>()?;
            Some(segmentation_scores(&masks_to_instances(masks)?, &masks_to_instances(&silhouettes)?)?)
        }
        _ => None,
    };
    Ok(MetricReport {
        config: *cfg,
        chamfer: if both { Some(chamfer(&pred_all, &gt_all)?) } else { None },
        chamfer_clipped: if both {
            Some(chamfer_with_clip(&pred_all, &gt_all, Some(cfg.chamfer_clip))?)
        } else {
            None
        },
        precision: scene.precision,
        recall: scene.recall,
        f1: scene.f1,
        object_fscore,
        object_matches,
        depth_error: depth,
        seg_iou: seg.map(|s| s.iou),
        rand_index: seg.map(|s| s.rand_index),
        mesh_iou: mesh_iou(pred, &gt_ids, &camera)?,
    })
}

/// Evaluate two layout directories; masks are read from the prediction's
/// `layers/` when present. Writes `report.json` into `out_dir` if given.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, cfg: &EvalConfig, out_dir: Option<&Path>) -> Result<MetricReport> {
    let pred = SceneLayout::load(pred_dir)?;
    let gt = SceneLayout::load(gt_dir)?;
    let layers = FixtureDir::new(pred_dir.join("layers"));
    let masks = (0..layers.mask_count()).map(|k| layers.mask(k)).collect::<Result<Vec<_>>>()?;
    let report = evaluate(&pred, &gt, (!masks.is_empty()).then_some(&masks[..]), cfg)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
