//! Wavefront OBJ subset: `v x y z [r g b]` and triangular `f i j k`.

use std::fmt::Write as _;
use std::path::Path;

use super::{TriangleMesh, Vec3};
use crate::error::{Error, Result};

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let [r, g, b] = c[i];
                writeln!(out, "v {} {} {} {} {} {}", v.x, v.y, v.z, r, g, b).unwrap();
            }
            None => writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap(),
        }
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    out
}

pub fn read_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut colored = None;
    let mut triangles = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let err = |message: String| Error::Obj { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let tag = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let nums = rest
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                let has_color = match nums.len() {
                    3 => false,
                    6 => true,
                    n => return Err(err(format!("vertex needs 3 or 6 numbers, got {n}"))),
                };
                if *colored.get_or_insert(has_color) != has_color {
                    return Err(err("mixed colored and uncolored vertices".into()));
                }
                vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                if has_color {
                    let mut c = [0f32; 3];
                    for (k, s) in rest[3..].iter().enumerate() {
                        c[k] = s.parse().map_err(|_| err(format!("bad color {s:?}")))?;
                    }
                    colors.push(c);
                }
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(format!("only triangles are supported, got {} corners", rest.len())));
                }
                let mut tri = [0u32; 3];
                for (k, s) in rest.iter().enumerate() {
                    let idx = s.split('/').next().unwrap_or("");
                    let one_based: i64 = idx
                        .parse()
                        .map_err(|_| err(format!("bad index {s:?}")))?;
                    if one_based < 1 {
                        return Err(err(format!("index {one_based} is not one-based positive")));
                    }
                    tri[k] = (one_based - 1) as u32;
                }
                triangles.push(tri);
            }
            // groups, normals, texture coordinates and materials are ignored
            _ => {}
        }
    }
    let colors = (colored == Some(true)).then_some(colors);
    TriangleMesh::new(vertices, colors, triangles).map_err(|e| Error::Obj {
        line: 0,
        message: e.to_string(),
    })
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    read_obj(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_obj(mesh)).map_err(|e| Error::io(path, e))
}
