use std::f64::consts::PI;

use super::*;
use crate::backends::SilhouetteRotation;
use crate::geometry::Vec3;

fn cube_at(x: f64) -> TriangleMesh {
    TriangleMesh::cuboid(Vec3::repeat(0.5), [0.5; 3]).map_vertices(|v| v + Vec3::new(x, 0.0, 0.0))
}

fn posed(meshes: &[TriangleMesh]) -> Vec<(&TriangleMesh, Sim3)> {
    meshes.iter().map(|m| (m, Sim3::identity())).collect()
}

fn kept(decisions: &[FilterDecision]) -> Vec<usize> {
    decisions.iter().filter(|d| d.kept).map(|d| d.index).collect()
}

#[test]
fn near_duplicate_is_dropped() {
    // unit cubes offset by d overlap with IoU (1 - d) / (1 + d)
    let d = 0.05 / 1.95;
    let meshes = [cube_at(0.0), cube_at(d)];
    let out = filter_overlapping(&posed(&meshes), 0.9, OverlapMeasure::default()).unwrap();
    assert_eq!(kept(&out), vec![0]);
    let (by, iou) = out[1].overlaps.unwrap();
    assert_eq!(by, 0);
    assert!((iou - 0.95).abs() < 0.02, "{iou}");
}

#[test]
fn half_overlap_keeps_both() {
    let meshes = [cube_at(0.0), cube_at(1.0 / 3.0)];
    let out = filter_overlapping(&posed(&meshes), 0.9, OverlapMeasure::default()).unwrap();
    assert_eq!(kept(&out), vec![0, 1]);
}

#[test]
fn discarded_objects_do_not_suppress() {
    // #2 overlaps #1 (0.67) and #3 (0.67); #3 overlaps #1 only 0.43
    let meshes = [cube_at(0.0), cube_at(0.2), cube_at(0.4)];
    let out = filter_overlapping(&posed(&meshes), 0.5, OverlapMeasure::default()).unwrap();
    assert_eq!(kept(&out), vec![0, 2]);
    assert_eq!(out[2].overlaps.unwrap().0, 0);
}

#[test]
fn filtering_is_idempotent() {
    let meshes: Vec<TriangleMesh> = [0.0, 0.1, 0.9, 0.95, 2.0].iter().map(|x| cube_at(*x)).collect();
    let objects = posed(&meshes);
    let once = kept(&filter_overlapping(&objects, 0.7, OverlapMeasure::default()).unwrap());
    let survivors: Vec<_> = once.iter().map(|&i| objects[i]).collect();
    let twice = filter_overlapping(&survivors, 0.7, OverlapMeasure::default()).unwrap();
    assert!(twice.iter().all(|d| d.kept));
}

#[test]
fn threshold_must_be_in_unit_interval() {
    let meshes = [cube_at(0.0)];
    assert!(filter_overlapping(&posed(&meshes), 0.0, OverlapMeasure::default()).is_err());
    assert!(filter_overlapping(&posed(&meshes), 1.5, OverlapMeasure::default()).is_err());
}

fn camera() -> Camera {
    Camera::centered(60.0, 64, 48).unwrap()
}

#[test]
fn single_view_sweep_is_returned_unconditionally() {
    let mesh = TriangleMesh::cuboid(Vec3::new(0.5, 0.3, 0.2), [0.5; 3]);
    let sweep = render_yaw_sweep(&mesh, 1, &RenderSettings::new(camera())).unwrap();
    let mask = Mask::from_fn(64, 48, |x, y| x < 3 && y < 3);
    let (i, r) = baseline_rotation_estimate(&mask, &sweep).unwrap();
    assert_eq!(i, 0);
    assert_eq!(r, Matrix3::identity());
}

#[test]
fn symmetric_object_ties_to_first_view() {
    let mesh = TriangleMesh::cylinder(0.4, 0.5, 64, [0.5; 3]);
    let sweep = render_yaw_sweep(&mesh, 8, &RenderSettings::new(camera())).unwrap();
    let (i, _) = baseline_rotation_estimate(&sweep[5].mask, &sweep).unwrap();
    assert_eq!(i, 0);
}

#[test]
fn box_yaw_within_sweep_spacing() {
    let mesh = TriangleMesh::cuboid(Vec3::new(0.5, 0.3, 0.2), [0.5; 3]);
    let s = 8;
    let settings = RenderSettings::new(camera());
    let sweep = render_yaw_sweep(&mesh, s, &settings).unwrap();
    for k in 0..s {
        let truth = sweep[k].yaw;
        let pose = canonical_pose(&mesh, &yaw_rotation(-truth), &settings.camera).unwrap();
        let target = render(&mesh, &pose, &settings).unwrap().mask;
        let (i, _) = baseline_rotation_estimate(&target, &sweep).unwrap();
        // a box is symmetric under a half turn
        let err = (sweep[i].yaw - truth).rem_euclid(PI);
        let err = err.min(PI - err);
        assert!(err <= PI / s as f64 + 1e-12, "view {k}: picked {i}");
    }
}

#[test]
fn empty_mask_is_rejected() {
    let mesh = TriangleMesh::cuboid(Vec3::repeat(0.3), [0.5; 3]);
    let sweep = render_yaw_sweep(&mesh, 2, &RenderSettings::new(camera())).unwrap();
    assert!(matches!(
        baseline_rotation_estimate(&Mask::empty(64, 48), &sweep),
        Err(Error::EmptyMask)
    ));
}

struct NoTracks;

impl Tracker for NoTracks {
    fn track(&mut self, _: &Image, _: &Image, _: &TrackQuery<'_>) -> Result<CorrespondenceSet> {
        Ok(CorrespondenceSet::default())
    }
}

#[test]
fn two_pixel_mask_is_unfittable() {
    let cam = camera();
    let img = Image::filled(64, 48, [0.3; 3]);
    let d = DisparityGrid::from_values(64, 48, vec![0.5; 64 * 48]).unwrap();
    let mask = Mask::from_fn(64, 48, |x, y| y == 10 && (x == 4 || x == 5));
    let mesh = TriangleMesh::cuboid(Vec3::repeat(0.3), [0.5; 3]);
    let query = ObjectQuery {
        index: 0,
        label: "cube".into(),
    };
    let r = fit_object(&img, &mask, &d, &mesh, &cam, &query, &mut SilhouetteRotation, &mut NoTracks, &FitConfig::default());
    assert!(matches!(r, Err(Error::Unfittable { valid: 2, needed: 12 })));
}

#[test]
fn config_bounds() {
    assert!(FitConfig::default().validate().is_ok());
    for bad in [
        FitConfig { yaw_views: 0, ..FitConfig::default() },
        FitConfig { min_confidence: 1.1, ..FitConfig::default() },
        FitConfig { min_correspondences: 2, ..FitConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn correspondences_serialise_as_rows() {
    let set = CorrespondenceSet {
        pairs: vec![Correspondence {
            source: (1.0, 2.0),
            rendered: (3.5, 4.0),
            confidence: 0.75,
        }],
    };
    let text = serde_json::to_string(&set).unwrap();
    assert_eq!(text, "[[1.0,2.0,3.5,4.0,0.75]]");
    assert_eq!(serde_json::from_str::<CorrespondenceSet>(&text).unwrap(), set);
    assert!(set.validate((4, 5)).is_ok());
    assert!(set.validate((3, 3)).is_err());
}
