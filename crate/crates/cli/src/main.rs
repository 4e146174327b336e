use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use peel3d::backends::{
    generate_synthetic_scene, AdapterSuite, BackendSuite, FixtureDir, FixtureSuite, ObjectQuery, OracleOptions,
    OracleSuite, RotationEstimator, RotationQuery, SceneSpec, Shape, SilhouetteRotation, TrackQuery, Tracker,
};
use peel3d::fitting::{fit_object, CorrespondenceSet, FitConfig};
use peel3d::geometry::{load_obj, Camera};
use peel3d::metrics::{evaluate_dirs, EvalConfig};
use peel3d::pipeline::{capture_fixture, run, LayerSequence, PipelineConfig, RunInput};
use peel3d::raster::{load_disparity, load_image, load_mask, Image, Mask};
use peel3d::refine::{refine_disparities, save_refined, RefineConfig};

#[derive(Parser)]
#[command(name = "peel3d", version, about = "Structured scene reconstruction from a single image")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene as a fixture directory plus ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, value_delimiter = ',', default_value = "box,sphere")]
        shapes: Vec<Shape>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Objects resting on top of a floor box.
        #[arg(long, default_value_t = 0)]
        stacked: usize,
    },
    /// Decompose and reconstruct a scene.
    Run {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        backend: BackendKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_depth_align: bool,
        #[arg(long)]
        no_filter: bool,
    },
    /// Place one mesh into a disparity map.
    Fit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        disparity: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Row-major 3x3 rotation JSON; silhouette matching when absent.
        #[arg(long)]
        rotation: Option<PathBuf>,
        /// Correspondence JSON; trimmed ICP when absent.
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align the disparities of a stored layer sequence.
    RefineDepth {
        #[arg(long)]
        layers: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted layout directory against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        with_background: bool,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Oracle,
    Fixture,
    Adapter,
}

/// `run` configuration: pipeline fields at the top level, backend settings
/// in their own sections.
#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    #[serde(flatten)]
    pipeline: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleOptions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adapters: Option<AdapterSuite>,
}

/// Written into every output directory.
#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    output: String,
    versions: Versions,
}

#[derive(Serialize)]
struct Versions {
    peel3d: &'static str,
    cli: &'static str,
}

fn write_manifest(out: &Path, subcommand: &str, config: serde_json::Value, seed: Option<u64>, inputs: &[&Path]) -> Result<()> {
    let manifest = RunManifest {
        subcommand,
        config,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        output: out.display().to_string(),
        versions: Versions {
            peel3d: peel3d::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
        },
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn synth(out: &Path, objects: usize, shapes: Vec<Shape>, seed: u64, stacked: usize) -> Result<()> {
    let spec = SceneSpec {
        objects,
        shapes,
        seed,
        stacked,
        ..SceneSpec::default()
    };
    let scene = generate_synthetic_scene(&spec)?;
    create_dir(out)?;
    write_json(&out.join("scene.json"), &spec)?;
    let oracle = OracleSuite::new(
        scene.clone(),
        OracleOptions {
            seed,
            ..OracleOptions::default()
        },
    );
    let fixture = FixtureDir::new(out);
    capture_fixture(&scene.layers[0], oracle.backends(), &PipelineConfig::default(), &fixture)?;
    scene.ground_truth().save(out.join("ground_truth"))?;
    write_manifest(out, "synth", serde_json::to_value(&spec)?, Some(seed), &[])
}

/// Oracle runs regenerate the scene from `scene.json`; fixture runs replay
/// the stored sequence; adapter runs start from the first layer image.
fn open_backends(scene: &Path, kind: BackendKind, cfg: &RunConfig) -> Result<(RunInput, BackendSuite, Option<u64>)> {
    match kind {
        BackendKind::Oracle => {
            let spec: SceneSpec = read_json(&scene.join("scene.json"))?;
            let generated = generate_synthetic_scene(&spec)?;
            let options = cfg.oracle.unwrap_or(OracleOptions {
                seed: spec.seed,
                ..OracleOptions::default()
            });
            let input = generated.layers[0].clone();
            let suite = OracleSuite::new(generated, options);
            Ok((RunInput::Image(input), suite.backends(), Some(options.seed)))
        }
        BackendKind::Fixture => {
            let dir = FixtureDir::new(scene);
            let layers = LayerSequence::load(&dir)?;
            Ok((RunInput::Layers(layers), FixtureSuite::open(dir)?.backends(), None))
        }
        BackendKind::Adapter => {
            let Some(adapters) = &cfg.adapters else {
                bail!("the adapter backend needs an \"adapters\" section in --config");
            };
            let input = if scene.is_dir() {
                load_image(scene.join("layer_000.png"))?
            } else {
                load_image(scene)?
            };
            Ok((RunInput::Image(input), adapters.backends()?, None))
        }
    }
}

fn run_command(scene: &Path, kind: BackendKind, config: Option<&Path>, out: &Path, no_depth_align: bool, no_filter: bool) -> Result<()> {
    let mut cfg: RunConfig = read_config(config)?;
    cfg.pipeline.depth_align &= !no_depth_align;
    cfg.pipeline.filter &= !no_filter;
    cfg.pipeline.validate()?;
    let (input, mut backends, seed) = open_backends(scene, kind, &cfg)?;
    let output = run(input, &mut backends, &cfg.pipeline)?;
    create_dir(out)?;
    output.save(out)?;
    let mut snapshot = serde_json::to_value(&cfg)?;
    snapshot["backend"] = serde_json::to_value(kind)?;
    let mut inputs = vec![scene];
    inputs.extend(config);
    write_manifest(out, "run", snapshot, seed, &inputs)
}

/// Rotation answered from a file.
struct FixedRotation(nalgebra::Matrix3<f64>);

impl RotationEstimator for FixedRotation {
    fn estimate_rotation(&mut self, _: &Image, _: &Mask, _: &RotationQuery<'_>) -> peel3d::Result<nalgebra::Matrix3<f64>> {
        Ok(self.0)
    }
}

/// Correspondences answered from a file; none at all forces the ICP branch.
struct FixedTracks(CorrespondenceSet);

impl Tracker for FixedTracks {
    fn track(&mut self, _: &Image, _: &Image, _: &TrackQuery<'_>) -> peel3d::Result<CorrespondenceSet> {
        Ok(self.0.clone())
    }
}

#[derive(Serialize)]
struct FitOutput {
    transform: peel3d::align::Sim3,
    diagnostics: peel3d::fitting::FitDiagnostics,
}

#[allow(clippy::too_many_arguments)]
fn fit_command(
    image: &Path,
    mask: &Path,
    disparity: &Path,
    mesh: &Path,
    camera: &Path,
    rotation: Option<&Path>,
    tracks: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg: FitConfig = read_config(config)?;
    let img = load_image(image)?;
    let m = load_mask(mask)?;
    let d = load_disparity(disparity)?;
    let mesh_data = load_obj(mesh)?;
    let cam: Camera = read_json(camera)?;
    cam.validate()?;
    let mut rot: Box<dyn RotationEstimator> = match rotation {
        Some(p) => {
            let rows: [[f64; 3]; 3] = read_json(p)?;
            Box::new(FixedRotation(nalgebra::Matrix3::from_fn(|i, j| rows[i][j])))
        }
        None => Box::new(SilhouetteRotation),
    };
    let mut tracker = FixedTracks(match tracks {
        Some(p) => read_json(p)?,
        None => CorrespondenceSet::default(),
    });
    let query = ObjectQuery {
        index: 0,
        label: mesh.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
    };
    let outcome = fit_object(&img, &m, &d, &mesh_data, &cam, &query, rot.as_mut(), &mut tracker, &cfg)?;
    create_dir(out)?;
    write_json(
        &out.join("fit.json"),
        &FitOutput {
            transform: outcome.transform,
            diagnostics: outcome.diagnostics,
        },
    )?;
    let mut inputs = vec![image, mask, disparity, mesh, camera];
    inputs.extend(rotation);
    inputs.extend(tracks);
    write_manifest(out, "fit", serde_json::to_value(cfg)?, None, &inputs)
}

fn refine_command(layers: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    // same settings the pipeline uses unless a config file says otherwise
    let mut cfg = match config {
        Some(p) => read_json::<RefineConfig>(p)?,
        None => PipelineConfig::default().refine,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let seq = LayerSequence::load(&FixtureDir::new(layers))?;
    let outcome = refine_disparities(&seq.disparities, &seq.images, &seq.masks, &cfg)?;
    save_refined(out, &outcome, &cfg)?;
    write_manifest(out, "refine-depth", serde_json::to_value(cfg)?, Some(cfg.seed), &[layers])
}

#[allow(clippy::too_many_arguments)]
fn evaluate_command(
    pred: &Path,
    gt: &Path,
    out: &Path,
    config: Option<&Path>,
    tau: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
    with_background: bool,
) -> Result<()> {
    let mut cfg: EvalConfig = read_config(config)?;
    cfg.tau = tau.unwrap_or(cfg.tau);
    cfg.samples_per_object = samples.unwrap_or(cfg.samples_per_object);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.with_background |= with_background;
    evaluate_dirs(pred, gt, &cfg, Some(out))?;
    write_manifest(out, "evaluate", serde_json::to_value(cfg)?, Some(cfg.seed), &[pred, gt])
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            objects,
            shapes,
            seed,
            stacked,
        } => synth(&out, objects, shapes, seed, stacked),
        Command::Run {
            scene,
            backend,
            config,
            out,
            no_depth_align,
            no_filter,
        } => run_command(&scene, backend, config.as_deref(), &out, no_depth_align, no_filter),
        Command::Fit {
            image,
            mask,
            disparity,
            mesh,
            camera,
            rotation,
            tracks,
            config,
            out,
        } => fit_command(
            &image,
            &mask,
            &disparity,
            &mesh,
            &camera,
            rotation.as_deref(),
            tracks.as_deref(),
            config.as_deref(),
            &out,
        ),
        Command::RefineDepth {
            layers,
            config,
            seed,
            out,
        } => refine_command(&layers, config.as_deref(), seed, &out),
        Command::Evaluate {
            pred,
            gt,
            out,
            config,
            tau,
            samples,
            seed,
            with_background,
        } => evaluate_command(&pred, &gt, &out, config.as_deref(), tau, samples, seed, with_background),
    }
}

fn main() -> ExitCode {
    // clap prints usage errors itself and exits with status 2
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
