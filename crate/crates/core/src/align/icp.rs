use serde::{Deserialize, Serialize};

use super::least_squares::{rms_residual, sim3_least_squares_slices};
use super::Sim3;
use crate::error::{Error, Result};
use crate::geometry::{voxel_downsample, KdTree, PointSet, Vec3};

/// Parameters of trimmed scale-aware ICP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub voxel_size: f64,
    pub radius: f64,
    pub keep_ratio: f64,
    pub max_iterations: usize,
    pub rms_delta: f64,
    pub min_correspondences: usize,
}

impl IcpConfig {
    /// Defaults scaled to the target: voxel = 1% of the bounding-box
    /// diagonal, radius = 5 voxels.
    pub fn for_target(target: &PointSet) -> Self {
        let diag = target.bounds().map_or(1.0, |b| b.diagonal());
        let voxel = if diag > 0.0 { 0.01 * diag } else { 1e-3 };
        Self {
            voxel_size: voxel,
            radius: 5.0 * voxel,
            keep_ratio: 0.8,
            max_iterations: 50,
            rms_delta: 1e-6,
            min_correspondences: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.voxel_size, self.radius, self.keep_ratio, self.rms_delta]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.keep_ratio > 1.0 || self.max_iterations == 0 || self.min_correspondences == 0 {
            return Err(Error::InvalidArgument(format!("invalid ICP config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpIteration {
    pub correspondences: usize,
    pub kept: usize,
    /// Trimmed RMS over the kept pairs after this iteration's refit.
    pub rms: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpStop {
    Converged,
    MaxIterations,
    TooFewCorrespondences,
    RmsIncreased,
}

#[derive(Debug, Clone)]
pub struct IcpOutcome {
    pub transform: Sim3,
    pub iterations: Vec<IcpIteration>,
    pub stop: IcpStop,
    /// Downsampled source points kept in the last accepted refit.
    pub kept_source: PointSet,
}

impl IcpOutcome {
    pub fn final_rms(&self) -> Option<f64> {
        self.iterations.iter().rev().find(|i| i.accepted).map(|i| i.rms)
    }
}

/// Scale-aware ICP that refits on the smallest-residual fraction of the
/// radius-bounded nearest-neighbour pairs. The returned transform maps
/// `p_b` onto `p_a`.
///
/// An iteration is accepted only if its trimmed RMS does not exceed the
/// previous accepted one; the first rejected iteration ends the loop.
pub fn trimmed_icp(p_b: &PointSet, p_a: &PointSet, cfg: &IcpConfig) -> Result<IcpOutcome> {
    cfg.validate()?;
    if p_b.is_empty() || p_a.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let (mu_b, spread_b) = robust_moments(&p_b.points, cfg.keep_ratio);
    let (mu_a, spread_a) = robust_moments(&p_a.points, cfg.keep_ratio);
    if !(spread_b > 0.0) {
        return Err(Error::DegenerateSource);
    }
    let scale = if spread_a > 0.0 { spread_a / spread_b } else { 1.0 };
    let mut current = Sim3 {
        scale,
        translation: mu_a - scale * mu_b,
        ..Sim3::identity()
    };
    // the voxel size is in target units; sample the source at the same
    // density once mapped onto the target
    let src = voxel_downsample(p_b, cfg.voxel_size / scale)?;
    let dst = voxel_downsample(p_a, cfg.voxel_size)?;

    let tree = KdTree::build(&dst.points);
    let mut iterations = Vec::new();
    let mut prev_rms: Option<f64> = None;
    let mut kept_source = PointSet::default();
    let mut stop = IcpStop::MaxIterations;
    for iter in 0..cfg.max_iterations {
        let mut pairs: Vec<(usize, usize, f64)> = src
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                tree.nearest(&current.apply(p), Some(cfg.radius))
                    .map(|n| (i, n.index, n.distance))
            })
            .collect();
        if pairs.len() < cfg.min_correspondences {
            if iter == 0 {
                return Err(Error::NoInitialOverlap {
                    correspondences: pairs.len(),
                });
            }
            stop = IcpStop::TooFewCorrespondences;
            break;
        }
        // a fixed count, not a fraction of the in-radius pairs, so the
        // trimmed RMS cannot rise while the pair supply is sufficient
        let keep = ((cfg.keep_ratio * src.len() as f64).floor() as usize)
            .max(cfg.min_correspondences)
            .min(pairs.len());
        pairs.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)));
        let found = pairs.len();
        pairs.truncate(keep);
        let xs: Vec<Vec3> = pairs.iter().map(|p| src.points[p.0]).collect();
        let ys: Vec<Vec3> = pairs.iter().map(|p| dst.points[p.1]).collect();
        let candidate = match sim3_least_squares_slices(&xs, &ys) {
            Ok(t) => t,
            Err(e) if iter == 0 => return Err(e),
            Err(_) => {
                stop = IcpStop::TooFewCorrespondences;
                break;
            }
        };
        let rms = rms_residual(&candidate, &xs, &ys);
        let accepted = prev_rms.is_none_or(|p| rms <= p);
        iterations.push(IcpIteration {
            correspondences: found,
            kept: keep,
            rms,
            accepted,
        });
        if !accepted {
            stop = IcpStop::RmsIncreased;
            break;
        }
        current = candidate;
        kept_source = src.subset(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        if let Some(p) = prev_rms {
            if (p - rms).abs() < cfg.rms_delta {
                stop = IcpStop::Converged;
                break;
            }
        }
        prev_rms = Some(rms);
    }
    Ok(IcpOutcome {
        transform: current,
        iterations,
        stop,
        kept_source,
    })
}

/// Outlier-resistant centroid and RMS spread. The centroid is first
/// re-estimated from the `keep` fraction of points nearest to it; the final
/// moments use every point within three median distances of that centroid,
/// which keeps the estimate equivariant under similarity transforms.
fn robust_moments(points: &[Vec3], keep: f64) -> (Vec3, f64) {
    let n = points.len();
    let k = ((keep * n as f64).floor() as usize).clamp(1, n);
    let mean = |ids: &[usize]| ids.iter().map(|&i| points[i]).sum::<Vec3>() / ids.len() as f64;
    let mut kept: Vec<usize> = (0..n).collect();
    let mut mu = mean(&kept);
    if k < n {
        for _ in 0..20 {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                (points[a] - mu)
                    .norm_squared()
                    .total_cmp(&(points[b] - mu).norm_squared())
                    .then(a.cmp(&b))
            });
            let mut next = idx[..k].to_vec();
            next.sort_unstable();
            if next == kept {
                break;
            }
            kept = next;
            mu = mean(&kept);
        }
    }
    for _ in 0..3 {
        let dist: Vec<f64> = points.iter().map(|p| (p - mu).norm()).collect();
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = 3.0 * sorted[n / 2];
        kept = (0..n).filter(|&i| dist[i] <= cut).collect();
        mu = mean(&kept);
    }
    let spread = (kept.iter().map(|&i| (points[i] - mu).norm_squared()).sum::<f64>() / kept.len() as f64).sqrt();
    (mu, spread)
}
