//! Placing a generated mesh into scene disparity space: coarse yaw from a
//! render sweep, then a similarity fit from tracked correspondences, with
//! trimmed ICP as the fallback when too few correspondences survive.

use nalgebra::Matrix3;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::align::{rms_residual, sim3_least_squares, trimmed_icp, yaw_rotation, IcpConfig, IcpStop, Sim3};
use crate::backends::{ObjectQuery, RotationEstimator, RotationQuery, TrackQuery, Tracker};
use crate::error::{Error, Result};
use crate::geometry::{backproject, backproject_at, Camera, OverlapMeasure, PointSet, TriangleMesh, Vec3};
use crate::raster::{mask_apply, DisparityGrid, Image, Mask, BLACK};
use crate::render::{canonical_pose, render, render_yaw_sweep, RenderSettings, SweepView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub yaw_views: usize,
    pub min_confidence: f64,
    pub min_correspondences: usize,
    /// Fixed ICP parameters; `None` derives them from the target cloud.
    pub icp: Option<IcpConfig>,
    /// Radius multiplier applied to target-derived ICP parameters.
    pub icp_radius_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            yaw_views: 8,
            min_confidence: 0.5,
            min_correspondences: 12,
            icp: None,
            icp_radius_scale: 2.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let radius_ok = self.icp_radius_scale > 0.0 && self.icp_radius_scale.is_finite();
        if self.yaw_views == 0 || !(0.0..=1.0).contains(&self.min_confidence) || self.min_correspondences < 3 || !radius_ok {
            return Err(Error::InvalidArgument(format!("invalid fit config {self:?}")));
        }
        Ok(())
    }
}

/// One tracked pixel pair in continuous pixel-index coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: (f64, f64),
    pub rendered: (f64, f64),
    pub confidence: f64,
}

/// Serialised as a JSON array of `[x1, y1, x2, y2, conf]` rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        let inside = |(x, y): (f64, f64)| x >= -0.5 && y >= -0.5 && x <= dims.0 as f64 - 0.5 && y <= dims.1 as f64 - 0.5;
        for (i, p) in self.pairs.iter().enumerate() {
            if !inside(p.source) || !inside(p.rendered) || !p.confidence.is_finite() {
                return Err(Error::InvalidArgument(format!("correspondence {i} out of bounds: {p:?}")));
            }
        }
        Ok(())
    }
}

impl Serialize for CorrespondenceSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.pairs.len()))?;
        for p in &self.pairs {
            seq.serialize_element(&[p.source.0, p.source.1, p.rendered.0, p.rendered.1, p.confidence])?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for CorrespondenceSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<[f64; 5]>::deserialize(d)?;
        Ok(Self {
            pairs: rows
                .into_iter()
                .map(|r| Correspondence {
                    source: (r[0], r[1]),
                    rendered: (r[2], r[3]),
                    confidence: r[4],
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitBranch {
    LeastSquares,
    Icp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpSummary {
    pub iterations: usize,
    pub stop: IcpStop,
    pub final_rms: Option<f64>,
    pub source_points: usize,
    pub target_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub branch: Option<FitBranch>,
    pub tracked: usize,
    pub kept: usize,
    /// RMS of the least-squares fit over the kept pairs, in scene units.
    pub residual_rms: Option<f64>,
    pub icp: Option<IcpSummary>,
    pub rotation: [[f64; 3]; 3],
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub transform: Sim3,
    pub diagnostics: FitDiagnostics,
}

const SCALE_RANGE: (f64, f64) = (1e-4, 1e4);

/// Similarity transform that places `mesh` into the scene seen by `cam`.
#[allow(clippy::too_many_arguments)]
pub fn fit_object(
    img: &Image,
    mask: &Mask,
    d: &DisparityGrid,
    mesh: &TriangleMesh,
    cam: &Camera,
    query: &ObjectQuery,
    rot_backend: &mut dyn RotationEstimator,
    track_backend: &mut dyn Tracker,
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let valid = mask
        .bits()
        .iter()
        .zip(d.validity())
        .filter(|(m, v)| **m && **v)
        .count();
    if valid < cfg.min_correspondences {
        return Err(Error::Unfittable {
            valid,
            needed: cfg.min_correspondences,
        });
    }
    if mesh.is_empty() {
        return Err(Error::DegenerateMesh("empty mesh".into()));
    }
    let settings = RenderSettings::new(*cam);
    let sweep = render_yaw_sweep(mesh, cfg.yaw_views, &settings)?;
    let masked = mask_apply(img, mask, BLACK)?;
    let r_est = rot_backend.estimate_rotation(
        &masked,
        mask,
        &RotationQuery {
            object: query,
            mesh,
            sweep: &sweep,
        },
    )?;
    let r_est = Sim3::new(1.0, r_est, Vec3::zeros())
        .map_err(|e| Error::backend("rotation", e.to_string()))?
        .rotation;
    let render_pose = canonical_pose(mesh, &r_est.transpose(), cam)?;
    let rendered = render(mesh, &render_pose, &settings)?;

    let tracks = track_backend.track(
        img,
        &rendered.image,
        &TrackQuery {
            object: query,
            mesh,
            render_pose: &render_pose,
            camera: cam,
        },
    )?;
    let mut diagnostics = FitDiagnostics {
        branch: None,
        tracked: tracks.len(),
        kept: 0,
        residual_rms: None,
        icp: None,
        rotation: r_est.transpose().into(),
    };

    let in_mask = |(u, v): (f64, f64)| {
        let (x, y) = (u.round(), v.round());
        x >= 0.0 && y >= 0.0 && (x as usize) < mask.width() && (y as usize) < mask.height() && mask.get(x as usize, y as usize)
    };
    let candidates: Vec<&Correspondence> = tracks
        .pairs
        .iter()
        .filter(|p| p.confidence >= cfg.min_confidence && in_mask(p.source))
        .collect();
    let xa = backproject_at(d, cam, &candidates.iter().map(|p| p.source).collect::<Vec<_>>());
    let xb = backproject_at(&rendered.disparity, cam, &candidates.iter().map(|p| p.rendered).collect::<Vec<_>>());
    let (pa, pb): (Vec<_>, Vec<_>) = xa
        .into_iter()
        .zip(xb)
        .filter_map(|(a, b)| Some((a?, b?)))
        .unzip();
    diagnostics.kept = pa.len();

    let local = if pa.len() >= cfg.min_correspondences {
        diagnostics.branch = Some(FitBranch::LeastSquares);
        let pb_set = PointSet::new(pb);
        let pa_set = PointSet::new(pa);
        let t = sim3_least_squares(&pb_set, &pa_set).map_err(|e| fit_failure(e.to_string(), &diagnostics))?;
        diagnostics.residual_rms = Some(rms_residual(&t, &pb_set.points, &pa_set.points));
        t
    } else {
        diagnostics.branch = Some(FitBranch::Icp);
        let p_a = backproject(d, cam, Some(mask))?;
        let p_b = backproject(&rendered.disparity, cam, None)?;
        if p_b.is_empty() {
            return Err(fit_failure("mesh render is empty".into(), &diagnostics));
        }
        let icp_cfg = cfg.icp.unwrap_or_else(|| {
            let base = IcpConfig::for_target(&p_a);
            IcpConfig {
                radius: base.radius * cfg.icp_radius_scale,
                ..base
            }
        });
        let out = trimmed_icp(&p_b, &p_a, &icp_cfg).map_err(|e| fit_failure(e.to_string(), &diagnostics))?;
        diagnostics.icp = Some(IcpSummary {
            iterations: out.iterations.len(),
            stop: out.stop,
            final_rms: out.final_rms(),
            source_points: p_b.len(),
            target_points: p_a.len(),
        });
        out.transform
    };
    let transform = local.compose(&render_pose);
    if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&transform.scale) {
        return Err(fit_failure(format!("scale {} outside {:?}", transform.scale, SCALE_RANGE), &diagnostics));
    }
    Ok(FitOutcome {
        transform,
        diagnostics,
    })
}

fn fit_failure(reason: String, diagnostics: &FitDiagnostics) -> Error {
    Error::FitFailure {
        reason,
        diagnostics: Box::new(diagnostics.clone()),
    }
}

const SILHOUETTE_GRID: usize = 32;

/// Resample the mask's bounding box into a square grid, longer side
/// spanning the grid and the shorter side centred.
fn normalized_silhouette(mask: &Mask) -> Option<Mask> {
    let (x0, y0, x1, y1) = mask.bounding_box()?;
    let (w, h) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
    let side = w.max(h);
    let (ox, oy) = ((side - w) / 2.0, (side - h) / 2.0);
    let n = SILHOUETTE_GRID;
    Some(Mask::from_fn(n, n, |i, j| {
        let fx = (i as f64 + 0.5) / n as f64 * side - ox;
        let fy = (j as f64 + 0.5) / n as f64 * side - oy;
        if fx < 0.0 || fy < 0.0 || fx >= w || fy >= h {
            return false;
        }
        mask.get(x0 + fx as usize, y0 + fy as usize)
    }))
}

/// Index and rotation of the sweep view whose normalised silhouette best
/// matches `mask`; ties go to the lowest index.
pub fn baseline_rotation_estimate(mask: &Mask, sweep: &[SweepView]) -> Result<(usize, Matrix3<f64>)> {
    if sweep.is_empty() {
        return Err(Error::InvalidArgument("empty sweep".into()));
    }
    let target = normalized_silhouette(mask).ok_or(Error::EmptyMask)?;
    if sweep.len() == 1 {
        return Ok((0, yaw_rotation(sweep[0].yaw)));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, view) in sweep.iter().enumerate() {
        let score = normalized_silhouette(&view.mask).map_or(0.0, |s| s.iou(&target));
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok((best.0, yaw_rotation(sweep[best.0].yaw)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub index: usize,
    pub kept: bool,
    /// Earlier kept object with the largest overlap, and that overlap.
    pub overlaps: Option<(usize, f64)>,
}

/// Scan in order and drop any object whose overlap with an earlier *kept*
/// object exceeds `threshold`.
pub fn filter_overlapping(
    objects: &[(&TriangleMesh, Sim3)],
    threshold: f64,
    measure: OverlapMeasure,
) -> Result<Vec<FilterDecision>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must be in (0, 1], got {threshold}")));
    }
    let posed: Vec<TriangleMesh> = objects.iter().map(|(m, t)| t.apply_mesh(m)).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut decisions = Vec::with_capacity(objects.len());
    for (i, mesh) in posed.iter().enumerate() {
        let mut worst: Option<(usize, f64)> = None;
        for &k in &kept {
            let iou = measure.iou(&posed[k], mesh)?;
            if worst.is_none_or(|(_, w)| iou > w) {
                worst = Some((k, iou));
            }
        }
        let keep = worst.is_none_or(|(_, iou)| iou <= threshold);
        if keep {
            kept.push(i);
        }
        decisions.push(FilterDecision {
            index: i,
            kept: keep,
            overlaps: worst,
        });
    }
    Ok(decisions)
}

#[cfg(test)]
mod tests;
