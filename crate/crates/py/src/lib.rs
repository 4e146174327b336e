//! Python bindings: point-set alignment, metrics, and fixture runs.
//!
//! Point sets cross the boundary as sequences of `(x, y, z)` triples and
//! structured results as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use peel3d::align::{sim3_least_squares, IcpConfig, Sim3};
use peel3d::backends::{FixtureDir, FixtureSuite};
use peel3d::geometry::{volumetric_iou as voxel_iou, load_obj, PointSet, Vec3};
use peel3d::metrics::{evaluate_dirs, EvalConfig};
use peel3d::pipeline::{run, LayerSequence, PipelineConfig, RunInput};

fn to_py_err(e: peel3d::Error) -> PyErr {
    match e {
        peel3d::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn points(raw: Vec<[f64; 3]>) -> PointSet {
    PointSet::new(raw.into_iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn transform_dict<'py>(py: Python<'py>, t: &Sim3) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scale", t.scale)?;
    let rotation: Vec<[f64; 3]> = (0..3).map(|i| [t.rotation[(i, 0)], t.rotation[(i, 1)], t.rotation[(i, 2)]]).collect();
    d.set_item("rotation", rotation)?;
    d.set_item("translation", [t.translation.x, t.translation.y, t.translation.z])?;
    d.set_item("matrix", t.rows())?;
    Ok(d)
}

/// Closed-form similarity mapping `source` onto `target` (paired points).
#[pyfunction]
fn sim3_fit<'py>(py: Python<'py>, source: Vec<[f64; 3]>, target: Vec<[f64; 3]>) -> PyResult<Bound<'py, PyDict>> {
    let t = sim3_least_squares(&points(source), &points(target)).map_err(to_py_err)?;
    transform_dict(py, &t)
}

/// Trimmed scale-aware ICP from `source` onto `target` (unpaired clouds).
#[pyfunction]
#[pyo3(signature = (source, target, keep_ratio = 0.8, max_iterations = 50))]
fn trimmed_icp<'py>(
    py: Python<'py>,
    source: Vec<[f64; 3]>,
    target: Vec<[f64; 3]>,
    keep_ratio: f64,
    max_iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (src, dst) = (points(source), points(target));
    let cfg = IcpConfig {
        keep_ratio,
        max_iterations,
        ..IcpConfig::for_target(&dst)
    };
    let out = peel3d::align::trimmed_icp(&src, &dst, &cfg).map_err(to_py_err)?;
    let d = transform_dict(py, &out.transform)?;
    d.set_item("iterations", json_to_py(py, &out.iterations)?)?;
    d.set_item("stop", json_to_py(py, &out.stop)?)?;
    d.set_item("final_rms", out.final_rms())?;
    Ok(d)
}

/// Symmetric mean nearest-neighbour distance.
#[pyfunction]
fn chamfer(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    peel3d::metrics::chamfer(&points(a), &points(b)).map_err(to_py_err)
}

/// `(precision, recall, f1)` in percent at distance `tau`.
#[pyfunction]
fn fscore(pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>, tau: f64) -> PyResult<(f64, f64, f64)> {
    let f = peel3d::metrics::fscore(&points(pred), &points(gt), tau).map_err(to_py_err)?;
    Ok((f.precision, f.recall, f.f1))
}

/// Voxel IoU of two closed OBJ meshes.
#[pyfunction]
#[pyo3(signature = (a, b, resolution = 64))]
fn volumetric_iou(a: PathBuf, b: PathBuf, resolution: usize) -> PyResult<f64> {
    let (ma, mb) = (load_obj(a).map_err(to_py_err)?, load_obj(b).map_err(to_py_err)?);
    voxel_iou(&ma, &mb, resolution).map_err(to_py_err)
}

/// Score a predicted layout directory against a ground-truth one.
#[pyfunction]
#[pyo3(signature = (pred_dir, gt_dir, tau = 0.1, samples = 10_000, seed = 0))]
fn evaluate<'py>(py: Python<'py>, pred_dir: PathBuf, gt_dir: PathBuf, tau: f64, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = EvalConfig {
        tau,
        samples_per_object: samples,
        seed,
        ..EvalConfig::default()
    };
    let report = evaluate_dirs(&pred_dir, &gt_dir, &cfg, None).map_err(to_py_err)?;
    json_to_py(py, &report)
}

/// Reconstruct a stored fixture directory into `out_dir`; returns the run report.
#[pyfunction]
#[pyo3(signature = (scene_dir, out_dir, depth_align = true, filter = true))]
fn run_fixture<'py>(py: Python<'py>, scene_dir: PathBuf, out_dir: PathBuf, depth_align: bool, filter: bool) -> PyResult<Bound<'py, PyAny>> {
    let cfg = PipelineConfig {
        depth_align,
        filter,
        ..PipelineConfig::default()
    };
    let dir = FixtureDir::new(scene_dir);
    let layers = LayerSequence::load(&dir).map_err(to_py_err)?;
    let mut backends = FixtureSuite::open(dir).map_err(to_py_err)?.backends();
    let out = run(RunInput::Layers(layers), &mut backends, &cfg).map_err(to_py_err)?;
    out.save(&out_dir).map_err(to_py_err)?;
    json_to_py(py, &out.report)
}

#[pymodule]
fn peel3d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", peel3d::VERSION)?;
    m.add_function(wrap_pyfunction!(sim3_fit, m)?)?;
    m.add_function(wrap_pyfunction!(trimmed_icp, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(fscore, m)?)?;
    m.add_function(wrap_pyfunction!(volumetric_iou, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_fixture, m)?)?;
    Ok(())
}
