use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::Sim3;
use crate::error::{Error, Result};
use crate::geometry::{load_obj, save_obj, Camera, TriangleMesh};

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutObject {
    pub id: usize,
    pub label: String,
    /// Mesh in its own frame; `transform` places it in camera space.
    pub mesh: TriangleMesh,
    pub transform: Sim3,
}

impl LayoutObject {
    pub fn posed_mesh(&self) -> TriangleMesh {
        self.transform.apply_mesh(&self.mesh)
    }
}

/// Reconstructed scene: posed objects plus the background surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub objects: Vec<LayoutObject>,
    pub background: TriangleMesh,
    pub camera: Camera,
}

#[derive(Serialize, Deserialize)]
struct ObjectEntry {
    id: usize,
    label: String,
    mesh: String,
    /// Row-major 4x4.
    transform: Sim3,
}

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    camera: Camera,
    objects: Vec<ObjectEntry>,
    background: String,
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

impl SceneLayout {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            o.transform.validate()?;
            if !ids.insert(o.id) {
                return Err(Error::InvalidArgument(format!("duplicate object id {}", o.id)));
            }
        }
        self.camera.validate()
    }

    /// Write `layout.json`, `objects/obj_###.obj` and `background.obj`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        let objects_dir = dir.join("objects");
        std::fs::create_dir_all(&objects_dir).map_err(|e| Error::io(&objects_dir, e))?;
        let mut entries = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            let rel = format!("objects/obj_{:03}.obj", o.id);
            save_obj(&o.mesh, dir.join(&rel))?;
            entries.push(ObjectEntry {
                id: o.id,
                label: o.label.clone(),
                mesh: rel,
                transform: o.transform,
            });
        }
        save_obj(&self.background, dir.join("background.obj"))?;
        write_json(
            &dir.join("layout.json"),
            &LayoutFile {
                camera: self.camera,
                objects: entries,
                background: "background.obj".into(),
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("layout.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: LayoutFile = serde_json::from_str(&text)?;
        let objects = file
            .objects
            .into_iter()
            .map(|e| {
                Ok(LayoutObject {
                    id: e.id,
                    label: e.label,
                    mesh: load_obj(dir.join(&e.mesh))?,
                    transform: e.transform,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = Self {
            objects,
            background: load_obj(dir.join(&file.background))?,
            camera: file.camera,
        };
        layout.validate()?;
        Ok(layout)
    }
}
