use proptest::prelude::*;

use super::*;
use crate::geometry::Vec3;
use crate::pipeline::LayoutObject;

fn brute_nearest(q: &Vec3, set: &PointSet) -> f64 {
    set.points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

fn brute_chamfer(a: &PointSet, b: &PointSet) -> f64 {
    let ab: f64 = a.points.iter().map(|p| brute_nearest(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.points.iter().map(|p| brute_nearest(p, a)).sum::<f64>() / b.len() as f64;
    ab + ba
}

fn cloud(raw: &[(f64, f64, f64)]) -> PointSet {
    PointSet::new(raw.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect())
}

fn points(n: usize) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), n)
}

#[test]
fn triangle_samples_stay_inside() {
    let mesh = TriangleMesh::new(
        vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
        None,
        vec![[0, 1, 2]],
    )
    .unwrap();
    let s = sample_surface(&mesh, 2000, 3).unwrap();
    for p in &s.points {
        assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
    }
    assert!(sample_surface(&mesh, 0, 3).unwrap().is_empty());
    assert_eq!(sample_surface(&mesh, 50, 9).unwrap(), sample_surface(&mesh, 50, 9).unwrap());
}

#[test]
fn samples_follow_area() {
    // areas 1 and 3
    let mesh = TriangleMesh::new(
        vec![
            Vec3::zeros(),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(13.0, 0.0, 0.0),
            Vec3::new(10.0, 2.0, 0.0),
        ],
        None,
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let s = sample_surface(&mesh, 10_000, 1).unwrap();
    let second = s.points.iter().filter(|p| p.x >= 10.0).count() as f64 / 10_000.0;
    assert!((second - 0.75).abs() < 0.03, "{second}");
}

#[test]
fn chamfer_closed_forms() {
    let a = PointSet::from_arrays(&[[0.0, 0.0, 0.0]]);
    let b = PointSet::from_arrays(&[[0.1, 0.0, 0.0]]);
    assert!((chamfer(&a, &b).unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    let far = PointSet::from_arrays(&[[5.0, 0.0, 0.0]]);
    assert!((chamfer_with_clip(&a, &far, Some(0.1)).unwrap() - 0.2).abs() < 1e-15);
}

#[test]
fn fscore_examples() {
    let gt = PointSet::new((0..400).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.0)).collect());
    let same = fscore(&gt, &gt, 0.1).unwrap();
    assert_eq!((same.precision, same.recall, same.f1), (100.0, 100.0, 100.0));
    let shifted = PointSet::new(gt.points.iter().map(|p| p + Vec3::new(0.0, 0.05, 0.0)).collect());
    assert_eq!(fscore(&shifted, &gt, 0.1).unwrap().f1, 100.0);
    let split = PointSet::new(
        gt.points
            .iter()
            .enumerate()
            .map(|(i, p)| if i % 2 == 0 { *p } else { p + Vec3::new(0.0, 0.2, 0.0) })
            .collect(),
    );
    assert_eq!(fscore(&split, &gt, 0.1).unwrap().precision, 50.0);
    let far = PointSet::new(gt.points.iter().map(|p| p + Vec3::new(0.0, 9.0, 0.0)).collect());
    assert_eq!(fscore(&far, &gt, 0.1).unwrap(), FScore::ZERO);
}

#[test]
fn object_fscore_examples() {
    let objs: Vec<PointSet> = (0..3)
        .map(|k| PointSet::new((0..50).map(|i| Vec3::new(k as f64 * 5.0 + i as f64 * 0.02, 0.0, 0.0)).collect()))
        .collect();
    assert_eq!(object_fscore(&objs, &objs, 0.1).unwrap().0, 100.0);
    assert_eq!(object_fscore(&objs[..1], &objs[..2], 0.1).unwrap().0, 50.0);
    let permuted = vec![objs[2].clone(), objs[0].clone(), objs[1].clone()];
    let (score, matches) = object_fscore(&permuted, &objs, 0.1).unwrap();
    assert_eq!(score, 100.0);
    assert_eq!(matches[0].pred, Some(1));
}

fn quad_layout(z: f64) -> SceneLayout {
    let cam = Camera::centered(40.0, 32, 24).unwrap();
    let quad = TriangleMesh::quad(Vec3::zeros(), Vec3::new(0.6, 0.0, 0.0), Vec3::new(0.0, 0.6, 0.0), [0.5; 3]);
    SceneLayout {
        objects: vec![LayoutObject {
            id: 0,
            label: "panel".into(),
            mesh: quad,
            transform: Sim3::from_translation(Vec3::new(0.0, 0.0, z)),
        }],
        background: TriangleMesh::default(),
        camera: cam,
    }
}

#[test]
fn depth_error_examples() {
    let a = quad_layout(2.0);
    assert_eq!(depth_error(&a, &a, &a.camera, false).unwrap(), 0.0);
    let b = quad_layout(2.1);
    assert!((depth_error(&b, &a, &a.camera, false).unwrap() - 0.1).abs() < 1e-5);
    let empty = SceneLayout {
        objects: Vec::new(),
        ..a.clone()
    };
    assert!(matches!(depth_error(&empty, &a, &a.camera, false), Err(Error::NoOverlap)));
}

#[test]
fn segmentation_examples() {
    let gt = vec![Some(0), Some(0), Some(1), Some(1)];
    let same = segmentation_scores(&gt, &gt).unwrap();
    assert_eq!((same.iou, same.rand_index), (1.0, 1.0));
    // one segment against two halves: 2 of 6 pixel pairs agree
    let whole = vec![Some(7); 4];
    let s = segmentation_scores(&whole, &gt).unwrap();
    assert_eq!(s.iou, 0.5 * 0.5);
    assert!((s.rand_index - 2.0 / 6.0).abs() < 1e-15);
    let disjoint = vec![None, None, None, Some(3)];
    let g = vec![Some(0), None, None, None];
    assert_eq!(segmentation_scores(&disjoint, &g).unwrap().iou, 0.0);
}

#[test]
fn mesh_iou_examples() {
    let a = quad_layout(2.0);
    let ids = layout_ids(&a, &a.camera).unwrap();
    assert_eq!(mesh_iou(&a, &ids, &a.camera).unwrap(), 1.0);
    let empty = SceneLayout {
        objects: Vec::new(),
        ..a.clone()
    };
    assert_eq!(mesh_iou(&empty, &ids, &a.camera).unwrap(), 0.0);
}

#[test]
fn identical_layouts_score_perfectly() {
    let a = quad_layout(2.0);
    let r = evaluate(&a, &a, None, &EvalConfig::default()).unwrap();
    assert_eq!(r.f1, 100.0);
    assert_eq!(r.chamfer, Some(0.0));
    assert_eq!(r.object_fscore, 100.0);
    assert_eq!(r.mesh_iou, 1.0);
    assert_eq!(r.depth_error, Some(0.0));
}

fn brute_rand(a: &[Option<u32>], b: &[Option<u32>]) -> f64 {
    let n = a.len();
    let (mut agree, mut total) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            agree += ((a[i] == a[j]) == (b[i] == b[j])) as u64;
        }
    }
    agree as f64 / total as f64
}

fn labels(n: usize) -> impl Strategy<Value = Vec<Option<u32>>> {
    proptest::collection::vec(proptest::option::of(0u32..4), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chamfer_matches_brute_force(a in points(300), b in points(250)) {
        let (a, b) = (cloud(&a), cloud(&b));
        let fast = chamfer(&a, &b).unwrap();
        prop_assert!((fast - brute_chamfer(&a, &b)).abs() < 1e-9);
        prop_assert_eq!(fast, chamfer(&b, &a).unwrap());
    }

    #[test]
    fn fscore_matches_brute_force(a in points(200), b in points(300), tau in 0.05f64..0.5) {
        let (a, b) = (cloud(&a), cloud(&b));
        let f = fscore(&a, &b, tau).unwrap();
        let p = a.points.iter().filter(|q| brute_nearest(q, &b) <= tau).count() as f64 / a.len() as f64 * 100.0;
        let r = b.points.iter().filter(|q| brute_nearest(q, &a) <= tau).count() as f64 / b.len() as f64 * 100.0;
        prop_assert!((f.precision - p).abs() < 1e-9 && (f.recall - r).abs() < 1e-9);
        let swapped = fscore(&b, &a, tau).unwrap();
        prop_assert_eq!((swapped.precision, swapped.recall), (f.recall, f.precision));
    }

    #[test]
    fn object_fscore_ignores_order(shift in proptest::collection::vec(0.0f64..0.3, 4), rot in 0usize..4) {
        let objs: Vec<PointSet> = (0..4)
            .map(|k| PointSet::new((0..40).map(|i| Vec3::new(k as f64 * 3.0 + shift[k] + i as f64 * 0.03, 0.0, 0.0)).collect()))
            .collect();
        let gt: Vec<PointSet> = (0..4)
            .map(|k| PointSet::new((0..40).map(|i| Vec3::new(k as f64 * 3.0 + i as f64 * 0.03, 0.0, 0.0)).collect()))
            .collect();
        let mut rotated = objs.clone();
        rotated.rotate_left(rot);
        let mut gt_rotated = gt.clone();
        gt_rotated.rotate_right(rot);
        let base = object_fscore(&objs, &gt, 0.1).unwrap().0;
        prop_assert!((object_fscore(&rotated, &gt, 0.1).unwrap().0 - base).abs() < 1e-12);
        prop_assert!((object_fscore(&objs, &gt_rotated, 0.1).unwrap().0 - base).abs() < 1e-12);
    }

    #[test]
    fn rand_index_matches_pair_counting(a in labels(60), b in labels(60)) {
        let s = segmentation_scores(&a, &b).unwrap();
        prop_assert!((s.rand_index - brute_rand(&a, &b)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s.iou));
    }

    #[test]
    fn rand_index_is_one_only_for_equal_partitions(a in labels(30), perm in 0u32..4) {
        // relabelling leaves the partition unchanged
        let relabelled: Vec<Option<u32>> = a.iter().map(|x| x.map(|v| (v + perm) % 4 + 10)).collect();
        prop_assert_eq!(segmentation_scores(&a, &relabelled).unwrap().rand_index, 1.0);
        let mut moved = a.clone();
        moved[0] = Some(99);
        let distinct = a.iter().skip(1).any(|x| *x == a[0]);
        let ri = segmentation_scores(&a, &moved).unwrap().rand_index;
        prop_assert_eq!(ri == 1.0, !distinct);
    }
}
