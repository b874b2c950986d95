//! Command-line front end for the SLD pipeline: batch landmark detection,
//! segmentation export, evaluation reports, and synthetic data generation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sld::config::PipelineConfig;
use sld::evaluation::{
    compute_metrics, render_report, AnnotationSet, EvalInput, ReportFormat, SdMode, SpineRegion,
};
use sld::landmarks::LandmarkSet;
use sld::mesh::io::{load_mesh, save_mesh};
use sld::pipeline::{fix_winding, run_pipeline, PipelineOutput};
use sld::preprocess::FrameHint;
use sld::segmentation::SegmentLabel;
use sld::synth::{make_synthetic_vertebra, SynthParams};
use sld::{Result, SldError, TriMesh};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "sld", version, about = "Spinal ligament landmark detection")]
struct Cli {
    /// Pipeline configuration file (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: current directory)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker count for batch processing (default: logical cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Plan the run and write the manifest without producing outputs
    #[arg(long, global = true)]
    dry_run: bool,

    /// Treat recoverable mismatches as fatal
    #[arg(long, global = true)]
    strict: bool,

    /// Axis sign convention: lps or ras (overrides the config file)
    #[arg(long, global = true)]
    frame_hint: Option<String>,

    /// Repair inconsistent face winding before processing
    #[arg(long, global = true)]
    fix_winding: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on meshes and write landmark sets
    Detect(DetectArgs),
    /// Segment meshes into anatomical regions and write labeled meshes
    Segment(SegmentArgs),
    /// Compare detected landmarks against annotations and write reports
    Evaluate(EvaluateArgs),
    /// Generate a synthetic vertebra with ground truth
    Synth(SynthArgs),
}

#[derive(Args)]
struct DetectArgs {
    /// Input mesh files (STL, OBJ, or PLY)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input mesh files (STL, OBJ, or PLY)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,

    /// Additionally write one OBJ sub-mesh per segment label
    #[arg(long)]
    export_parts: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Detected landmark JSON files
    #[arg(long, required = true, num_args = 1..)]
    landmarks: Vec<PathBuf>,

    /// Ground-truth annotation JSON files
    #[arg(long, required = true, num_args = 1..)]
    annotations: Vec<PathBuf>,

    /// Mesh files backing the annotation patches; matched to landmark
    /// sets by file stem == mesh id
    #[arg(long, required = true, num_args = 1..)]
    meshes: Vec<PathBuf>,

    /// Standard deviation mode: population or sample
    #[arg(long, default_value = "population")]
    sd_mode: String,
}

#[derive(Args)]
struct SynthArgs {
    /// RNG seed; also names the outputs (synth-<seed>.*)
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Grid resolution in mm (0.2 to 2.5)
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,

    /// Vertex noise amplitude in mm
    #[arg(long, default_value_t = 0.0)]
    noise_amplitude: f64,

    /// Break exact sagittal mirror symmetry
    #[arg(long)]
    asymmetric: bool,

    /// Omit the spinous process (drops SSL and ISL truth)
    #[arg(long)]
    no_spinous: bool,
}

// ------------------------------------------------------------- manifest

#[derive(Serialize)]
struct StageOutcome {
    stage: String,
    outcome: String,
    duration_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ManifestEntry {
    input: String,
    mesh_id: String,
    ok: bool,
    stages: Vec<StageOutcome>,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: String,
    config_hash: String,
    entries: Vec<ManifestEntry>,
}

// -------------------------------------------------------------- logging

fn log_enabled() -> bool {
    !matches!(
        std::env::var("SLD_LOG").as_deref(),
        Ok("off") | Ok("quiet") | Ok("none")
    )
}

fn log_record(fields: serde_json::Value) {
    if log_enabled() {
        eprintln!("{fields}");
    }
}

fn log_stage(mesh_id: &str, stage: &str, duration_ms: u64, outcome: &str) {
    log_record(serde_json::json!({
        "mesh": mesh_id,
        "stage": stage,
        "duration_ms": duration_ms,
        "outcome": outcome,
    }));
}

// ------------------------------------------------------------- plumbing

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(hint) = &cli.frame_hint {
        config.frame.hint = match hint.to_ascii_lowercase().as_str() {
            "lps" => FrameHint::Lps,
            "ras" => FrameHint::Ras,
            other => {
                return Err(SldError::Parameter(format!(
                    "unknown frame hint {other:?}; expected lps or ras"
                )))
            }
        };
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn mesh_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| SldError::Validation(format!("JSON encoding failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (std::result::Result<T, SldError>, u64) {
    let start = Instant::now();
    let result = f();
    (result, start.elapsed().as_millis() as u64)
}

fn failing_stage(err: &SldError, default: &str) -> String {
    match err {
        SldError::Stage { stage, .. } => stage.to_string(),
        _ => default.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SldError + '_ {
    move |source| SldError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs `process` over every input on the worker pool and assembles the
/// manifest in input order. Failures are isolated per mesh.
fn run_batch(
    cli: &Cli,
    config: &PipelineConfig,
    inputs: &[PathBuf],
    process: impl Fn(&Path, &str) -> std::result::Result<Vec<StageOutcome>, Vec<StageOutcome>> + Sync,
) -> Result<RunManifest> {
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SldError::Parameter(format!("worker pool: {e}")))?;
    let entries: Vec<ManifestEntry> = pool.install(|| {
        use rayon::prelude::*;
        inputs
            .par_iter()
            .map(|input| {
                let mesh_id = mesh_id_of(input);
                let (ok, stages) = match process(input, &mesh_id) {
                    Ok(stages) => (true, stages),
                    Err(stages) => (false, stages),
                };
                ManifestEntry {
                    input: input.to_string_lossy().into_owned(),
                    mesh_id,
                    ok,
                    stages,
                }
            })
            .collect()
    });
    Ok(RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash(),
        entries,
    })
}

fn finish_batch(manifest: &RunManifest, dir: &Path) -> Result<i32> {
    write_json(manifest, &dir.join("manifest.json"))?;
    let successes = manifest.entries.iter().filter(|e| e.ok).count();
    Ok(if successes > 0 || manifest.entries.is_empty() {
        0
    } else {
        2
    })
}

fn load_input_mesh(cli: &Cli, input: &Path) -> Result<TriMesh> {
    let mesh = load_mesh(input, None)?;
    if cli.fix_winding {
        fix_winding(&mesh)
    } else {
        Ok(mesh)
    }
}

// ----------------------------------------------------------- subcommands

fn run_stage<T>(
    mesh_id: &str,
    stage: &str,
    stages: &mut Vec<StageOutcome>,
    f: impl FnOnce() -> Result<T>,
) -> Option<T> {
    let (result, ms) = timed(f);
    match result {
        Ok(value) => {
            stages.push(StageOutcome {
                stage: stage.to_string(),
                outcome: "ok".to_string(),
                duration_ms: ms,
                error: None,
            });
            log_stage(mesh_id, stage, ms, "ok");
            Some(value)
        }
        Err(err) => {
            let name = failing_stage(&err, stage);
            stages.push(StageOutcome {
                stage: name.clone(),
                outcome: "failed".to_string(),
                duration_ms: ms,
                error: Some(err.to_string()),
            });
            log_stage(mesh_id, &name, ms, "failed");
            None
        }
    }
}

fn cmd_detect(cli: &Cli, args: &DetectArgs) -> Result<i32> {
    let config = load_config(cli)?;
    let dir = out_dir(cli)?;
    let manifest = run_batch(cli, &config, &args.inputs, |input, mesh_id| {
        let mut stages = Vec::new();
        let mesh = run_stage(mesh_id, "load", &mut stages, || load_input_mesh(cli, input))
            .ok_or_else(|| std::mem::take(&mut stages))?;
        let output: PipelineOutput = run_stage(mesh_id, "pipeline", &mut stages, || {
            run_pipeline(&mesh, &config, mesh_id)
        })
        .ok_or_else(|| std::mem::take(&mut stages))?;
        if !cli.dry_run {
            run_stage(mesh_id, "write", &mut stages, || {
                write_json(
                    &output.landmarks,
                    &dir.join(format!("{mesh_id}.landmarks.json")),
                )?;
                save_mesh(
                    &output.mesh,
                    &dir.join(format!("{mesh_id}.labeled.ply")),
                    None,
                )
            })
            .ok_or_else(|| std::mem::take(&mut stages))?;
        }
        Ok(stages)
    })?;
    finish_batch(&manifest, &dir)
}

fn label_slug(label: SegmentLabel) -> &'static str {
    match label {
        SegmentLabel::Body => "body",
        SegmentLabel::Lamina => "lamina",
        SegmentLabel::SpinousProcess => "spinous_process",
        SegmentLabel::TransverseL => "transverse_l",
        SegmentLabel::TransverseR => "transverse_r",
        SegmentLabel::ArticularSupL => "articular_sup_l",
        SegmentLabel::ArticularSupR => "articular_sup_r",
        SegmentLabel::ArticularInfL => "articular_inf_l",
        SegmentLabel::ArticularInfR => "articular_inf_r",
    }
}

/// Sub-mesh of all faces whose vertices carry `label`; empty when the
/// label does not appear.
fn part_mesh(mesh: &TriMesh, labels: &[SegmentLabel], label: SegmentLabel) -> Option<TriMesh> {
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for f in &mesh.faces {
        if f.iter().any(|&v| labels[v] != label) {
            continue;
        }
        let mut nf = [0usize; 3];
        for (slot, &v) in f.iter().enumerate() {
            let id = *remap.entry(v).or_insert_with(|| {
                vertices.push(mesh.vertices[v]);
                vertices.len() - 1
            });
            nf[slot] = id;
        }
        faces.push(nf);
    }
    if faces.is_empty() {
        return None;
    }
    TriMesh::new(vertices, faces).ok()
}

fn cmd_segment(cli: &Cli, args: &SegmentArgs) -> Result<i32> {
    let config = load_config(cli)?;
    let dir = out_dir(cli)?;
    let manifest = run_batch(cli, &config, &args.inputs, |input, mesh_id| {
        let mut stages = Vec::new();
        let mesh = run_stage(mesh_id, "load", &mut stages, || load_input_mesh(cli, input))
            .ok_or_else(|| std::mem::take(&mut stages))?;
        let seg = run_stage(mesh_id, "segment", &mut stages, || {
            let frame = sld::preprocess::estimate_frame(&mesh, config.frame.hint)
                .map_err(|e| e.at_stage("estimate_frame"))?;
            sld::segmentation::segment(&mesh, &frame, &config.segmentation)
        })
        .ok_or_else(|| std::mem::take(&mut stages))?;
        if !cli.dry_run {
            run_stage(mesh_id, "write", &mut stages, || {
                let labeled = mesh
                    .clone()
                    .with_labels(seg.segmentation.label_integers())?;
                save_mesh(&labeled, &dir.join(format!("{mesh_id}.labeled.ply")), None)?;
                if args.export_parts {
                    for label in SegmentLabel::ALL {
                        if let Some(part) = part_mesh(&mesh, &seg.segmentation.labels, label) {
                            save_mesh(
                                &part,
                                &dir.join(format!("{mesh_id}.{}.obj", label_slug(label))),
                                None,
                            )?;
                        }
                    }
                }
                Ok(())
            })
            .ok_or_else(|| std::mem::take(&mut stages))?;
        }
        Ok(stages)
    })?;
    finish_batch(&manifest, &dir)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| SldError::Validation(format!("{} is not valid JSON: {e}", path.display())))
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<i32> {
    let config = load_config(cli)?;
    let dir = out_dir(cli)?;
    let sd_mode: SdMode = args.sd_mode.parse()?;

    let landmark_sets: Vec<LandmarkSet> = args
        .landmarks
        .iter()
        .map(|p| read_json(p))
        .collect::<Result<_>>()?;
    let annotation_sets: Vec<AnnotationSet> = args
        .annotations
        .iter()
        .map(|p| read_json(p))
        .collect::<Result<_>>()?;
    let meshes: BTreeMap<String, TriMesh> = args
        .meshes
        .iter()
        .map(|p| Ok((mesh_id_of(p), load_mesh(p, None)?)))
        .collect::<Result<_>>()?;

    let mut inputs = Vec::new();
    for set in &landmark_sets {
        let mesh = meshes.get(&set.mesh_id).ok_or_else(|| {
            SldError::Validation(format!("no mesh supplied for mesh id {:?}", set.mesh_id))
        })?;
        let region = config
            .region_for(&set.mesh_id)
            .unwrap_or(SpineRegion::Lumbar);
        inputs.push(EvalInput {
            mesh,
            landmarks: set,
            region,
        });
    }
    let (report, warnings) = compute_metrics(&inputs, &annotation_sets, sd_mode, cli.strict)?;
    for w in &warnings {
        log_record(serde_json::json!({ "warning": w }));
    }
    if !cli.dry_run {
        let csv_path = dir.join("report.csv");
        std::fs::write(&csv_path, render_report(&report, ReportFormat::Csv))
            .map_err(io_err(&csv_path))?;
        let md_path = dir.join("report.md");
        std::fs::write(&md_path, render_report(&report, ReportFormat::Markdown))
            .map_err(io_err(&md_path))?;
    }
    print!("{}", render_report(&report, ReportFormat::Markdown));
    Ok(0)
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<i32> {
    let dir = out_dir(cli)?;
    let mut params = SynthParams {
        seed: args.seed,
        resolution: args.resolution,
        noise_amplitude: args.noise_amplitude,
        mirror: !args.asymmetric,
        ..SynthParams::default()
    };
    if args.no_spinous {
        params.omit_parts.push(SegmentLabel::SpinousProcess);
    }
    let (mesh, truth) = make_synthetic_vertebra(&params)?;
    if !cli.dry_run {
        let stem = format!("synth-{}", args.seed);
        save_mesh(&mesh, &dir.join(format!("{stem}.ply")), None)?;
        write_json(
            &truth.landmarks,
            &dir.join(format!("{stem}.landmarks.json")),
        )?;
        write_json(
            &truth.annotations,
            &dir.join(format!("{stem}.annotations.json")),
        )?;
    }
    log_record(serde_json::json!({
        "mesh": format!("synth-{}", args.seed),
        "vertices": mesh.vertices.len(),
        "faces": mesh.faces.len(),
        "groups": truth.landmarks.groups.len(),
    }));
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Detect(args) => cmd_detect(&cli, args),
        Command::Segment(args) => cmd_segment(&cli, args),
        Command::Evaluate(args) => cmd_evaluate(&cli, args),
        Command::Synth(args) => cmd_synth(&cli, args),
    };
    match code {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(2);
        }
    }
}
