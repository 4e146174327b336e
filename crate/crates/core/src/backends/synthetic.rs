//! Seeded box/sphere scenes on a floor in front of a wall, with every
//! ground-truth artifact the oracle backends need.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ObjectProposal;
use crate::align::{yaw_rotation, Sim3};
use crate::error::{Error, Result};
use crate::geometry::{Camera, TriangleMesh, Vec3};
use crate::pipeline::{LayoutObject, SceneLayout};
use crate::raster::{DisparityGrid, Image, Mask, Rgb};
use crate::render::{Rasterizer, RenderSettings, Rendering};

/// Height of the floor plane below the camera (+y is down).
pub const FLOOR_Y: f64 = 0.75;
pub const WALL_Z: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Sphere,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Box => "box",
            Shape::Sphere => "sphere",
        })
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "box" => Ok(Shape::Box),
            "sphere" => Ok(Shape::Sphere),
            other => Err(Error::InvalidArgument(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Floor,
    /// Resting on top of the object with this id.
    On(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub objects: usize,
    pub shapes: Vec<Shape>,
    pub seed: u64,
    /// How many of the objects are stacked on top of a floor box.
    pub stacked: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Placement attempts per object before giving up.
    pub max_retries: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            objects: 3,
            shapes: vec![Shape::Box, Shape::Sphere],
            seed: 0,
            stacked: 0,
            width: 128,
            height: 96,
            focal: 110.0,
            max_retries: 200,
        }
    }
}

impl SceneSpec {
    pub fn camera(&self) -> Result<Camera> {
        Camera::centered(self.focal, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    /// Index in generation order; also the removal order.
    pub id: usize,
    pub label: String,
    pub shape: Shape,
    /// Primitive centred at the origin.
    pub mesh: TriangleMesh,
    /// Places `mesh` in camera space.
    pub pose: Sim3,
    pub color: Rgb,
    pub support: Support,
}

impl SceneObject {
    pub fn world_mesh(&self) -> TriangleMesh {
        self.pose.apply_mesh(&self.mesh)
    }
}

/// A generated scene. `objects` is sorted in removal order, so layer `k`
/// shows the background plus `objects[k..]`.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub camera: Camera,
    pub background: TriangleMesh,
    pub objects: Vec<SceneObject>,
    pub layers: Vec<Image>,
    /// Clean disparity of each layer.
    pub disparities: Vec<DisparityGrid>,
    /// Full silhouette of object `k`, rendered alone.
    pub amodal_masks: Vec<Mask>,
}

const PALETTE: [(&str, Rgb); 10] = [
    ("red", [0.85, 0.15, 0.12]),
    ("green", [0.2, 0.7, 0.25]),
    ("blue", [0.15, 0.3, 0.85]),
    ("yellow", [0.9, 0.8, 0.15]),
    ("magenta", [0.8, 0.2, 0.7]),
    ("cyan", [0.15, 0.75, 0.8]),
    ("orange", [0.95, 0.5, 0.1]),
    ("purple", [0.45, 0.2, 0.65]),
    ("white", [0.95, 0.95, 0.95]),
    ("black", [0.1, 0.1, 0.1]),
];

const MIN_PIXELS: usize = 60;
const GAP: f64 = 0.05;

fn background_mesh() -> TriangleMesh {
    let mut m = TriangleMesh::quad(
        Vec3::new(0.0, FLOOR_Y, 3.5),
        Vec3::new(5.0, 0.0, 0.0),
        Vec3::new(0.0, 0.0, 2.5),
        [0.55, 0.5, 0.45],
    );
    // darker towards the camera so the floor carries a gradient
    if let Some(c) = m.colors.as_mut() {
        c[0] = [0.4, 0.36, 0.32];
        c[1] = [0.4, 0.36, 0.32];
    }
    let mut wall = TriangleMesh::quad(
        Vec3::new(0.0, FLOOR_Y - 3.0, WALL_Z),
        Vec3::new(5.0, 0.0, 0.0),
        Vec3::new(0.0, 3.0, 0.0),
        [0.78, 0.78, 0.72],
    );
    if let Some(c) = wall.colors.as_mut() {
        c[2] = [0.7, 0.72, 0.78];
        c[3] = [0.7, 0.72, 0.78];
    }
    m.append(&wall);
    m
}

struct Draft {
    shape: Shape,
    mesh: TriangleMesh,
    pose: Sim3,
    /// Bounding sphere in camera space.
    center: Vec3,
    radius: f64,
    /// Top surface height (y of the upper face) for boxes.
    top_y: f64,
    half: Vec3,
    support: Support,
}

fn primitive(shape: Shape, rng: &mut ChaCha8Rng, small: bool) -> (TriangleMesh, Vec3) {
    let k = if small { 0.6 } else { 1.0 };
    match shape {
        Shape::Box => {
            let half = Vec3::new(
                k * rng.gen_range(0.15..0.35),
                k * rng.gen_range(0.15..0.35),
                k * rng.gen_range(0.15..0.35),
            );
            (TriangleMesh::cuboid(half, [1.0; 3]), half)
        }
        Shape::Sphere => {
            let r = k * rng.gen_range(0.15..0.3);
            (TriangleMesh::uv_sphere(r, 24, 12, [1.0; 3]), Vec3::repeat(r))
        }
    }
}

fn in_frame(cam: &Camera, center: &Vec3, radius: f64) -> bool {
    if center.z - radius < 1.0 {
        return false;
    }
    let (u, v) = cam.project(center);
    let r_px = cam.fx * radius / (center.z - radius);
    u - r_px >= 1.0 && v - r_px >= 1.0 && u + r_px <= cam.width as f64 - 2.0 && v + r_px <= cam.height as f64 - 2.0
}

fn place(
    shape: Shape,
    support: Option<&Draft>,
    placed: &[Draft],
    cam: &Camera,
    rng: &mut ChaCha8Rng,
) -> Option<Draft> {
    let (mesh, half) = primitive(shape, rng, support.is_some());
    let yaw = rng.gen_range(0.0..2.0 * PI);
    let radius = half.norm();
    let (x, y, z) = match support {
        None => {
            let z = rng.gen_range(2.2..4.5);
            let span = z * cam.cx / cam.fx - radius;
            if span <= 0.0 {
                return None;
            }
            (rng.gen_range(-span..span), FLOOR_Y - half.y, z)
        }
        Some(s) => {
            let slack = (s.half.x.min(s.half.z) - half.x.max(half.z)).max(0.0) * 0.5;
            let dx = rng.gen_range(-slack..=slack);
            let dz = rng.gen_range(-slack..=slack);
            (s.pose.translation.x + dx, s.top_y - half.y, s.pose.translation.z + dz)
        }
    };
    let center = Vec3::new(x, y, z);
    if !in_frame(cam, &center, radius) {
        return None;
    }
    let footprint = |d: &Draft| d.half.x.hypot(d.half.z);
    for other in placed {
        let touching_support = support.is_some_and(|s| std::ptr::eq(s, other));
        if touching_support {
            continue;
        }
        let horizontal = (other.center.xz() - center.xz()).norm();
        let apart = horizontal > footprint(other) + half.x.hypot(half.z) + GAP
            || (other.center - center).norm() > other.radius + radius + GAP;
        if !apart {
            return None;
        }
    }
    let pose = Sim3::from_translation(center).compose(&Sim3::from_rotation(yaw_rotation(yaw)));
    Some(Draft {
        shape,
        mesh,
        pose,
        center,
        radius,
        top_y: y - half.y,
        half,
        support: Support::Floor,
    })
}

fn render_scene(background: &TriangleMesh, objects: &[&SceneObject], settings: &RenderSettings) -> Result<(Rendering, Vec<Option<u32>>)> {
    let mut r = Rasterizer::new(*settings)?;
    r.draw(background, &Sim3::identity(), u32::MAX);
    for o in objects {
        r.draw(&o.mesh, &o.pose, o.id as u32);
    }
    let ids = r.ids().to_vec();
    Ok((r.finish(), ids))
}

/// Removal order: repeatedly take the nearest remaining object whose
/// silhouette is not covered by any other remaining object and that has
/// nothing resting on it.
fn removal_order(background: &TriangleMesh, objects: &[SceneObject], amodal: &[Mask], settings: &RenderSettings) -> Result<Option<Vec<usize>>> {
    let mut remaining: Vec<usize> = (0..objects.len()).collect();
    let mut order = Vec::with_capacity(objects.len());
    while !remaining.is_empty() {
        let present: Vec<&SceneObject> = remaining.iter().map(|&i| &objects[i]).collect();
        let (_, ids) = render_scene(background, &present, settings)?;
        let mut best: Option<(usize, f64)> = None;
        for (slot, &i) in remaining.iter().enumerate() {
            let carries = remaining
                .iter()
                .any(|&j| objects[j].support == Support::On(i));
            if carries {
                continue;
            }
            let unoccluded = amodal[i]
                .bits()
                .iter()
                .zip(&ids)
                .all(|(m, id)| !*m || *id == Some(i as u32));
            if !unoccluded {
                continue;
            }
            let dist = objects[i].pose.translation.norm();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((slot, dist));
            }
        }
        let Some((slot, _)) = best else {
            return Ok(None);
        };
        order.push(remaining.remove(slot));
    }
    Ok(Some(order))
}

/// Build a scene; fails with a placement error once an object cannot be
/// placed within `spec.max_retries` attempts.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.shapes.is_empty() && spec.objects > 0 {
        return Err(Error::InvalidArgument("no shapes to draw from".into()));
    }
    if spec.stacked > spec.objects / 2 {
        return Err(Error::InvalidArgument(format!(
            "{} stacked objects need at least {} objects",
            spec.stacked,
            2 * spec.stacked
        )));
    }
    let camera = spec.camera()?;
    let settings = RenderSettings::new(camera);
    let background = background_mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // whole-scene attempts guard against rare cyclic occlusions
    const SCENE_ATTEMPTS: usize = 8;
    let mut last_failure = None;
    for _ in 0..SCENE_ATTEMPTS {
        let floor_count = spec.objects - spec.stacked;
        let mut drafts: Vec<Draft> = Vec::with_capacity(spec.objects);
        let mut failed = None;
        for k in 0..spec.objects {
            let stacked = k >= floor_count;
            let mut tries = 0;
            let draft = loop {
                if tries == spec.max_retries {
                    break None;
                }
                tries += 1;
                let draft = if stacked {
                    // the i-th stacked item rests on the i-th floor object,
                    // which is forced to be a box below
                    let s = k - floor_count;
                    let shape = spec.shapes[rng.gen_range(0..spec.shapes.len())];
                    let mut d = place(shape, Some(&drafts[s]), &drafts, &camera, &mut rng);
                    if let Some(d) = d.as_mut() {
                        d.support = Support::On(s);
                    }
                    d
                } else {
                    // supports for stacked items have to be boxes
                    let shape = if k < spec.stacked {
                        Shape::Box
                    } else {
                        spec.shapes[rng.gen_range(0..spec.shapes.len())]
                    };
                    place(shape, None, &drafts, &camera, &mut rng)
                };
                if let Some(d) = draft {
                    break Some(d);
                }
            };
            match draft {
                Some(d) => drafts.push(d),
                None => {
                    failed = Some(Error::Placement {
                        object: k,
                        retries: spec.max_retries,
                    });
                    break;
                }
            }
        }
        if let Some(e) = failed {
            // running out of room is not fixed by reshuffling
            return Err(e);
        }
        let objects: Vec<SceneObject> = drafts
            .into_iter()
            .enumerate()
            .map(|(id, d)| {
                let (name, color) = PALETTE[id % PALETTE.len()];
                let label = if id < PALETTE.len() {
                    format!("{name} {}", d.shape)
                } else {
                    format!("{name} {} {}", d.shape, id / PALETTE.len() + 1)
                };
                SceneObject {
                    id,
                    label,
                    shape: d.shape,
                    mesh: tint(&d.mesh, color),
                    pose: d.pose,
                    color,
                    support: d.support,
                }
            })
            .collect();
        let amodal: Vec<Mask> = objects
            .iter()
            .map(|o| Ok(crate::render::render(&o.mesh, &o.pose, &settings)?.mask))
            .collect::<Result<_>>()?;
        if amodal.iter().any(|m| m.count() < MIN_PIXELS) {
            last_failure = Some(Error::Placement {
                object: amodal.iter().position(|m| m.count() < MIN_PIXELS).unwrap_or(0),
                retries: spec.max_retries,
            });
            continue;
        }
        let Some(order) = removal_order(&background, &objects, &amodal, &settings)? else {
            last_failure = Some(Error::Placement {
                object: spec.objects,
                retries: spec.max_retries,
            });
            continue;
        };
        return assemble(spec.clone(), camera, background, objects, amodal, &order, &settings);
    }
    Err(last_failure.unwrap_or(Error::Placement {
        object: 0,
        retries: spec.max_retries,
    }))
}

fn tint(mesh: &TriangleMesh, color: Rgb) -> TriangleMesh {
    let mut m = mesh.clone();
    if let Some(cs) = m.colors.as_mut() {
        for c in cs.iter_mut() {
            *c = [c[0] * color[0], c[1] * color[1], c[2] * color[2]];
        }
    }
    m
}

fn assemble(
    spec: SceneSpec,
    camera: Camera,
    background: TriangleMesh,
    objects: Vec<SceneObject>,
    amodal: Vec<Mask>,
    order: &[usize],
    settings: &RenderSettings,
) -> Result<SyntheticScene> {
    let mut renumber = vec![0; objects.len()];
    for (new, &old) in order.iter().enumerate() {
        renumber[old] = new;
    }
    let mut sorted: Vec<SceneObject> = order.iter().map(|&i| objects[i].clone()).collect();
    for o in &mut sorted {
        o.id = renumber[o.id];
        if let Support::On(s) = o.support {
            o.support = Support::On(renumber[s]);
        }
    }
    let amodal_masks = order.iter().map(|&i| amodal[i].clone()).collect();
    let mut layers = Vec::with_capacity(sorted.len() + 1);
    let mut disparities = Vec::with_capacity(sorted.len() + 1);
    for k in 0..=sorted.len() {
        let present: Vec<&SceneObject> = sorted[k..].iter().collect();
        let (r, _) = render_scene(&background, &present, settings)?;
        // 8-bit levels so the layers survive a PNG round trip unchanged
        layers.push(r.image.quantized());
        disparities.push(r.disparity);
    }
    Ok(SyntheticScene {
        spec,
        camera,
        background,
        objects: sorted,
        layers,
        disparities,
        amodal_masks,
    })
}

impl SyntheticScene {
    /// Objects still present in layer `k`.
    pub fn present(&self, layer: usize) -> &[SceneObject] {
        &self.objects[layer.min(self.objects.len())..]
    }

    pub fn object_by_label(&self, label: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.label == label)
    }

    /// Layer whose image equals `image` exactly.
    pub fn layer_of(&self, image: &Image) -> Option<usize> {
        self.layers.iter().position(|l| l == image)
    }

    /// What an ideal proposer says when looking at layer `k`.
    pub fn proposal(&self, layer: usize) -> ObjectProposal {
        let present = self.present(layer);
        let Some(next) = present.first() else {
            return ObjectProposal::default();
        };
        let description = format!("{} object(s) remain", present.len());
        match next.support {
            Support::On(s) if s >= layer => {
                // report the carrier and everything resting on it that comes
                // next in removal order
                let carried: Vec<String> = present
                    .iter()
                    .take_while(|o| o.support == Support::On(s))
                    .map(|o| o.label.clone())
                    .collect();
                ObjectProposal {
                    visible_object: self.objects[s].label.clone(),
                    secondary_objects: carried,
                    description,
                }
            }
            _ => ObjectProposal {
                visible_object: next.label.clone(),
                secondary_objects: Vec::new(),
                description,
            },
        }
    }

    /// Visible-region mask of object `k` within layer `layer`.
    pub fn visible_mask(&self, k: usize, layer: usize) -> Result<Mask> {
        let settings = RenderSettings::new(self.camera);
        let present: Vec<&SceneObject> = self.present(layer).iter().collect();
        let (_, ids) = render_scene(&self.background, &present, &settings)?;
        Mask::new(
            self.camera.width,
            self.camera.height,
            ids.iter().map(|id| *id == Some(k as u32)).collect(),
        )
    }

    /// The scene as a layout: primitives at their poses, ids in removal
    /// order.
    pub fn ground_truth(&self) -> SceneLayout {
        SceneLayout {
            objects: self
                .objects
                .iter()
                .map(|o| LayoutObject {
                    id: o.id,
                    label: o.label.clone(),
                    mesh: o.mesh.clone(),
                    transform: o.pose,
                })
                .collect(),
            background: self.background.clone(),
            camera: self.camera,
        }
    }

    /// Visible-instance id map of the input image.
    pub fn instance_ids(&self) -> Result<Vec<Option<u32>>> {
        let settings = RenderSettings::new(self.camera);
        let present: Vec<&SceneObject> = self.objects.iter().collect();
        let (_, ids) = render_scene(&self.background, &present, &settings)?;
        Ok(ids.into_iter().map(|id| id.filter(|i| *i != u32::MAX)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(objects: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            objects,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn empty_scene_has_one_layer() {
        let s = generate_synthetic_scene(&spec(0, 1)).unwrap();
        assert_eq!(s.layers.len(), 1);
        assert!(s.proposal(0).is_empty());
        assert!(s.disparities[0].validity().iter().all(|v| *v));
    }

    #[test]
    fn deterministic_with_n_plus_one_layers() {
        let a = generate_synthetic_scene(&spec(2, 9)).unwrap();
        let b = generate_synthetic_scene(&spec(2, 9)).unwrap();
        assert_eq!(a.layers.len(), 3);
        assert_eq!(a.layers, b.layers);
        assert_eq!(a.disparities, b.disparities);
    }

    #[test]
    fn layers_remove_one_object_at_a_time() {
        let s = generate_synthetic_scene(&spec(3, 4)).unwrap();
        for k in 0..3 {
            let changed: Vec<bool> = s.layers[k]
                .pixels()
                .iter()
                .zip(s.layers[k + 1].pixels())
                .map(|(a, b)| a != b)
                .collect();
            // everything that changed belonged to the removed object
            for (i, c) in changed.iter().enumerate() {
                if *c {
                    assert!(s.amodal_masks[k].bits()[i]);
                }
            }
            assert!(changed.iter().any(|c| *c));
            // the removed object was fully visible
            assert_eq!(s.visible_mask(k, k).unwrap(), s.amodal_masks[k]);
        }
    }

    #[test]
    fn occluded_amodal_strictly_contains_visible() {
        let mut found = 0;
        for seed in 0..30 {
            let s = generate_synthetic_scene(&spec(3, seed)).unwrap();
            for k in 1..3 {
                let vis = s.visible_mask(k, 0).unwrap();
                assert!(vis.is_subset_of(&s.amodal_masks[k]));
                if vis.count() < s.amodal_masks[k].count() {
                    found += 1;
                }
            }
        }
        assert!(found > 0, "no occlusions in 30 scenes");
    }

    #[test]
    fn stacked_item_comes_before_its_support() {
        let s = generate_synthetic_scene(&SceneSpec {
            objects: 2,
            stacked: 1,
            seed: 3,
            ..SceneSpec::default()
        })
        .unwrap();
        assert_eq!(s.objects[0].support, Support::On(1));
        let p = s.proposal(0);
        assert_eq!(p.visible_object, s.objects[1].label);
        assert_eq!(p.secondary_objects, vec![s.objects[0].label.clone()]);
        assert_eq!(s.proposal(1), ObjectProposal {
            visible_object: s.objects[1].label.clone(),
            secondary_objects: vec![],
            description: "1 object(s) remain".into(),
        });
    }

    #[test]
    fn crowded_scene_reports_retries() {
        match generate_synthetic_scene(&spec(50, 0)) {
            Err(Error::Placement { retries, .. }) => assert_eq!(retries, 200),
            other => panic!("expected placement failure, got {other:?}"),
        }
    }

    #[test]
    fn shapes_parse() {
        assert_eq!("sphere".parse::<Shape>().unwrap(), Shape::Sphere);
        assert!("cone".parse::<Shape>().is_err());
    }
}
