//! Backends that shell out to external executables.
//!
//! Each call gets a fresh `in/` and `out/` directory under the work
//! directory. The executable receives the input paths followed by the output
//! directory and must exit 0 after writing its result there:
//!
//! | role | inputs | output |
//! |------|--------|--------|
//! | proposer | image.png, prompt.txt | proposal.json or reply.txt |
//! | segmenter | image.png, label.txt | mask.png |
//! | remover | image.png, mask.png, prompt.txt | image.png |
//! | depth | image.png | disparity.pfm, camera.json |
//! | mesh_generator | masked.png | mesh.obj |
//! | rotation | masked.png, mask.png, sweep_###.png… | rotation.json |
//! | tracker | image.png, rendered.png | tracks.json |

use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{
    BackendSuite, CropInpaintRemover, DepthEstimator, MeshGenerator, ObjectProposal, ObjectQuery, Proposer, Remover,
    RotationEstimator, RotationQuery, Segmenter, SilhouetteRotation, TrackQuery, Tracker, AMODAL_SELECTION_PROMPT,
    INPAINT_PROMPT,
};
use crate::error::{Error, Result};
use crate::fitting::CorrespondenceSet;
use crate::geometry::{load_obj, Camera, TriangleMesh};
use crate::raster::{load_disparity, load_image, load_mask, save_image, save_mask, DisparityGrid, Image, Mask};

/// Executable plus fixed leading arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl AdapterCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }

    /// Run with `inputs… out_dir`; a nonzero exit surfaces stderr verbatim.
    pub fn invoke(&self, role: &'static str, inputs: &[PathBuf], out_dir: &Path) -> Result<()> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .args(inputs)
            .arg(out_dir)
            .output()
            .map_err(|e| Error::backend(role, format!("cannot start {}: {e}", self.program.display())))?;
        if !output.status.success() {
            return Err(Error::backend(role, String::from_utf8_lossy(&output.stderr).trim_end().to_string()));
        }
        Ok(())
    }
}

/// Which executable serves which role. A missing rotation adapter falls
/// back to silhouette matching; every other role is required.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterSuite {
    pub work_dir: PathBuf,
    pub proposer: Option<AdapterCommand>,
    pub segmenter: Option<AdapterCommand>,
    pub remover: Option<AdapterCommand>,
    pub depth: Option<AdapterCommand>,
    pub mesh_generator: Option<AdapterCommand>,
    pub rotation: Option<AdapterCommand>,
    pub tracker: Option<AdapterCommand>,
    /// Wrap the remover in crop-and-paste with this context margin.
    pub crop_margin: Option<usize>,
}

struct Adapter {
    role: &'static str,
    command: AdapterCommand,
    work_dir: PathBuf,
    calls: usize,
}

impl Adapter {
    /// Fresh `(in, out)` directories for the next call.
    fn dirs(&mut self) -> Result<(PathBuf, PathBuf)> {
        let base = self.work_dir.join(format!("{}_{:03}", self.role, self.calls));
        self.calls += 1;
        let (inp, out) = (base.join("in"), base.join("out"));
        for d in [&inp, &out] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok((inp, out))
    }

    fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn run(&self, inputs: &[PathBuf], out: &Path) -> Result<()> {
        self.command.invoke(self.role, inputs, out)
    }

    fn output<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::backend(self.role, format!("unreadable output: {e}")))
    }
}

impl Proposer for Adapter {
    fn propose(&mut self, image: &Image, iteration: usize) -> Result<ObjectProposal> {
        let (inp, out) = self.dirs()?;
        let (img, prompt) = (inp.join("image.png"), inp.join("prompt.txt"));
        save_image(image, &img)?;
        self.write_text(&prompt, AMODAL_SELECTION_PROMPT)?;
        self.run(&[img, prompt], &out).map_err(|e| e.at_iteration(iteration))?;
        let json = out.join("proposal.json");
        let parsed = if json.is_file() {
            std::fs::read_to_string(&json)
                .map_err(|e| Error::io(&json, e))
                .and_then(|t| Ok(serde_json::from_str::<ObjectProposal>(&t)?))
        } else {
            let reply = out.join("reply.txt");
            std::fs::read_to_string(&reply)
                .map_err(|e| Error::io(&reply, e))
                .and_then(|t| ObjectProposal::parse(&t))
        };
        let p = self.output(parsed).map_err(|e| e.at_iteration(iteration))?;
        p.validate()?;
        Ok(p)
    }
}

impl Segmenter for Adapter {
    fn segment(&mut self, image: &Image, label: &str, iteration: usize) -> Result<Mask> {
        let (inp, out) = self.dirs()?;
        let (img, lab) = (inp.join("image.png"), inp.join("label.txt"));
        save_image(image, &img)?;
        self.write_text(&lab, label)?;
        self.run(&[img, lab], &out).map_err(|e| e.at_iteration(iteration))?;
        self.output(load_mask(out.join("mask.png"))).map_err(|e| e.at_iteration(iteration))
    }
}

impl Remover for Adapter {
    fn remove(&mut self, image: &Image, mask: &Mask, label: &str, iteration: usize) -> Result<Image> {
        let (inp, out) = self.dirs()?;
        let (img, m, prompt) = (inp.join("image.png"), inp.join("mask.png"), inp.join("prompt.txt"));
        save_image(image, &img)?;
        save_mask(mask, &m)?;
        self.write_text(&prompt, &INPAINT_PROMPT.replace("{OBJ_NAME}", label))?;
        self.run(&[img, m, prompt], &out).map_err(|e| e.at_iteration(iteration))?;
        self.output(load_image(out.join("image.png"))).map_err(|e| e.at_iteration(iteration))
    }
}

impl DepthEstimator for Adapter {
    fn estimate_disparity(&mut self, image: &Image, layer: usize) -> Result<(DisparityGrid, Camera)> {
        let (inp, out) = self.dirs()?;
        let img = inp.join("image.png");
        save_image(image, &img)?;
        self.run(&[img], &out).map_err(|e| e.at_iteration(layer))?;
        let grid = self.output(load_disparity(out.join("disparity.pfm")))?;
        let cam_path = out.join("camera.json");
        let cam: Camera = self.output(
            std::fs::read_to_string(&cam_path)
                .map_err(|e| Error::io(&cam_path, e))
                .and_then(|t| Ok(serde_json::from_str(&t)?)),
        )?;
        cam.validate()?;
        Ok((grid, cam))
    }
}

impl MeshGenerator for Adapter {
    fn generate_mesh(&mut self, masked: &Image, _query: &ObjectQuery) -> Result<TriangleMesh> {
        let (inp, out) = self.dirs()?;
        let img = inp.join("masked.png");
        save_image(masked, &img)?;
        self.run(&[img], &out)?;
        self.output(load_obj(out.join("mesh.obj")))
    }
}

impl RotationEstimator for Adapter {
    fn estimate_rotation(&mut self, masked: &Image, mask: &Mask, query: &RotationQuery<'_>) -> Result<Matrix3<f64>> {
        let (inp, out) = self.dirs()?;
        let mut inputs = vec![inp.join("masked.png"), inp.join("mask.png")];
        save_image(masked, &inputs[0])?;
        save_mask(mask, &inputs[1])?;
        for (i, view) in query.sweep.iter().enumerate() {
            let p = inp.join(format!("sweep_{i:03}.png"));
            save_image(&view.image, &p)?;
            inputs.push(p);
        }
        self.run(&inputs, &out)?;
        let path = out.join("rotation.json");
        let rows: [[f64; 3]; 3] = self.output(
            std::fs::read_to_string(&path)
                .map_err(|e| Error::io(&path, e))
                .and_then(|t| Ok(serde_json::from_str(&t)?)),
        )?;
        Ok(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

impl Tracker for Adapter {
    fn track(&mut self, image: &Image, rendered: &Image, _query: &TrackQuery<'_>) -> Result<CorrespondenceSet> {
        let (inp, out) = self.dirs()?;
        let (a, b) = (inp.join("image.png"), inp.join("rendered.png"));
        save_image(image, &a)?;
        save_image(rendered, &b)?;
        self.run(&[a, b], &out)?;
        let path = out.join("tracks.json");
        let set: CorrespondenceSet = self.output(
            std::fs::read_to_string(&path)
                .map_err(|e| Error::io(&path, e))
                .and_then(|t| Ok(serde_json::from_str(&t)?)),
        )?;
        set.validate(image.dims())?;
        Ok(set)
    }
}

impl AdapterSuite {
    fn adapter(&self, role: &'static str, cmd: &Option<AdapterCommand>) -> Result<Adapter> {
        let command = cmd
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("no adapter configured for {role}")))?;
        Ok(Adapter {
            role,
            command,
            work_dir: self.work_dir.clone(),
            calls: 0,
        })
    }

    pub fn backends(&self) -> Result<BackendSuite> {
        let remover = self.adapter("remover", &self.remover)?;
        let remover: Box<dyn Remover> = match self.crop_margin {
            Some(m) => Box::new(CropInpaintRemover::new(remover, m)),
            None => Box::new(remover),
        };
        let rotation: Box<dyn RotationEstimator> = match &self.rotation {
            Some(_) => Box::new(self.adapter("rotation", &self.rotation)?),
            None => Box::new(SilhouetteRotation),
        };
        Ok(BackendSuite {
            proposer: Box::new(self.adapter("proposer", &self.proposer)?),
            segmenter: Box::new(self.adapter("segmenter", &self.segmenter)?),
            remover,
            depth: Box::new(self.adapter("depth", &self.depth)?),
            mesh_generator: Box::new(self.adapter("mesh_generator", &self.mesh_generator)?),
            rotation,
            tracker: Box::new(self.adapter("tracker", &self.tracker)?),
        })
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn script(dir: &Path, name: &str, body: &str) -> AdapterCommand {
        let path = dir.join(name);
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        AdapterCommand {
            program: "/bin/sh".into(),
            args: vec![path.to_string_lossy().into_owned()],
        }
    }

    #[test]
    fn proposer_reads_reply_text() {
        let tmp = tempfile::tempdir().unwrap();
        let cmd = script(
            tmp.path(),
            "propose.sh",
            r#"for last; do :; done; echo '{VISIBLE_OBJECT: [chair]}, {SECONDARY_OBJECTS: []}' > "$last/reply.txt""#,
        );
        let mut a = Adapter {
            role: "proposer",
            command: cmd,
            work_dir: tmp.path().join("work"),
            calls: 0,
        };
        let p = a.propose(&Image::filled(2, 2, [0.0; 3]), 0).unwrap();
        assert_eq!(p.visible_object, "chair");
        let prompt = std::fs::read_to_string(tmp.path().join("work/proposer_000/in/prompt.txt")).unwrap();
        assert_eq!(prompt, AMODAL_SELECTION_PROMPT);
    }

    #[test]
    fn failure_surfaces_stderr() {
        let tmp = tempfile::tempdir().unwrap();
        let mut a = Adapter {
            role: "segmenter",
            command: script(tmp.path(), "fail.sh", "echo 'model offline' >&2; exit 3"),
            work_dir: tmp.path().join("work"),
            calls: 0,
        };
        match a.segment(&Image::filled(2, 2, [0.0; 3]), "cup", 4) {
            Err(Error::Backend { role, iteration, message }) => {
                assert_eq!((role, iteration, message.as_str()), ("segmenter", 4, "model offline"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_roles_are_rejected() {
        assert!(AdapterSuite::default().backends().is_err());
    }
}
