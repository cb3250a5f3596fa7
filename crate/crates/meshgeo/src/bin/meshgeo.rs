use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use meshgeo::core::losses::{chamfer, optimize_vertices, FitConfig, LossWeights};
use meshgeo::core::metrics::{ap_box, chamfer_metric, ApReport, EvalConfig, RescaleMode, ThresholdDomain};
use meshgeo::core::refine::{make_icosphere, refine_mesh, subdivide_faces};
use meshgeo::core::rng::derive_seed;
use meshgeo::core::sampler::sample_points;
use meshgeo::core::{cubify_naive, CameraIntrinsics, CubifyConfig, DVec3, TriangleMesh};
use meshgeo::obj::{read_obj, write_obj};
use meshgeo::parallel::{ap_mesh_parallel, configure_threads, cubify_batch};
use meshgeo::records::{build_eval_set, read_detections, read_ground_truth};
use meshgeo::voxl::read_voxels;
use meshgeo::weights::{read_features, read_weights};
use meshgeo::{write_atomic, Error};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error: unknown flag, missing or invalid value
  3  I/O error: unreadable input or unwritable output
  4  format error: malformed OBJ, VOXL1, MWTS1, MFEA1 or JSONL input
  5  computation error: inputs rejected by a kernel (empty mesh, shape mismatch, ...)

Environment:
  MESHGEO_THREADS  worker thread count (default: all cores)";

#[derive(Parser)]
#[command(name = "meshgeo", version, about = "Voxel-to-mesh conversion, sampling, fitting and shape metrics")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a VOXL1 occupancy grid to watertight OBJ meshes.
    Cubify(CubifyArgs),
    /// Sample points and face normals from a mesh surface.
    Sample(SampleArgs),
    /// Chamfer distance, normal consistency and F1 between two meshes.
    Compare(CompareArgs),
    /// Deform a mesh toward a target by gradient descent on its vertices.
    Fit(FitArgs),
    /// Write an icosphere.
    Icosphere(IcosphereArgs),
    /// Split every face of a mesh into four.
    Subdivide(SubdivideArgs),
    /// Run refinement stages on a mesh with stored weights and feature maps.
    Refine(RefineArgs),
    /// Mesh (or box) average precision of detections against ground truth.
    EvalAp(EvalApArgs),
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct CubifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Occupancy threshold; cells with value > tau are occupied.
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    /// Output OBJ; a batch of N > 1 grids writes `<stem>_<n>.obj`.
    #[arg(long)]
    out: PathBuf,
    /// Use the per-voxel reference implementation.
    #[arg(long)]
    naive: bool,
    /// World units per cell edge.
    #[arg(long, default_value_t = 1.0)]
    voxel_size: f64,
    /// World position of the grid corner, as x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    origin: Option<Vec<f64>>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct SampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(short = 'n', long = "count", default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Text output, one `x y z nx ny nz` line per sample.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rescale {
    Longest10,
    Factor057,
    None,
}

impl From<Rescale> for RescaleMode {
    fn from(r: Rescale) -> Self {
        match r {
            Rescale::Longest10 => RescaleMode::LongestEdge10,
            Rescale::Factor057 => RescaleMode::Factor057,
            Rescale::None => RescaleMode::Identity,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Euclidean,
    Squared,
}

impl From<Domain> for ThresholdDomain {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Euclidean => ThresholdDomain::Euclidean,
            Domain::Squared => ThresholdDomain::Squared,
        }
    }
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct CompareArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "longest10")]
    rescale: Rescale,
    /// F1 thresholds, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "0.1,0.3,0.5")]
    tau: Vec<f64>,
    #[arg(long, value_enum, default_value = "euclidean")]
    domain: Domain,
    /// Points sampled from each mesh.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct FitArgs {
    /// Starting mesh: `icosphere:<level>` or an OBJ path.
    #[arg(long, default_value = "icosphere:2")]
    init: String,
    /// Target mesh; its surface is sampled once.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Gradient descent step size.
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// Loss weight preset.
    #[arg(long, value_enum, default_value = "shapenet")]
    weights: Preset,
    /// Overrides the preset's chamfer weight.
    #[arg(long)]
    lambda_chamfer: Option<f64>,
    /// Overrides the preset's edge weight.
    #[arg(long)]
    lambda_edge: Option<f64>,
    /// Points sampled from the deforming mesh at each step.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Points sampled from the target.
    #[arg(long, default_value_t = 10_000)]
    target_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write one `step total chamfer edge` line per step.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Shapenet,
    Pix3d,
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct IcosphereArgs {
    #[arg(long)]
    level: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct SubdivideArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct RefineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// MFEA1 feature maps with the image size.
    #[arg(long)]
    features: PathBuf,
    /// MWTS1 weights named `stage<k>.<matrix>`.
    #[arg(long)]
    weights: PathBuf,
    /// Camera intrinsics fx,fy,cx,cy in pixels.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    intrinsics: Vec<f64>,
    /// Stages (0-based) that subdivide the mesh before refining it.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    subdivide: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[command(after_help = EXIT_CODES)]
struct EvalApArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Box AP: every matched mesh counts.
    #[arg(long = "box")]
    box_ap: bool,
    #[arg(long, value_enum, default_value = "longest10")]
    rescale: Rescale,
    #[arg(long, value_enum, default_value = "euclidean")]
    domain: Domain,
    /// Distance threshold of the mesh F1.
    #[arg(long, default_value_t = 0.3)]
    f1_tau: f64,
    /// Minimum mesh F1 (fraction, strict) for a true positive.
    #[arg(long, default_value_t = 0.5)]
    f1_threshold: f64,
    /// Detections whose best box IoU is at most this are ignored.
    #[arg(long, default_value_t = 0.3)]
    iou_gate: f64,
    /// Minimum box IoU (strict) for matching.
    #[arg(long, default_value_t = 0.0)]
    match_iou: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<meshgeo::core::Error> for Failure {
    fn from(e: meshgeo::core::Error) -> Self {
        Failure::Run(Error::Core(e))
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

fn check<T>(r: meshgeo::core::Result<T>) -> CliResult<T> {
    r.map_err(|e| usage(e.to_string()))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn mesh_json(m: &TriangleMesh) -> Value {
    json!({"vertices": m.vertex_count(), "faces": m.face_count()})
}

fn batch_path(out: &Path, n: usize) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{n}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{n}"),
    };
    out.with_file_name(name)
}

fn run_cubify(a: CubifyArgs) -> CliResult {
    let origin = match a.origin.as_deref() {
        None => DVec3::ZERO,
        Some(&[x, y, z]) => DVec3::new(x, y, z),
        Some(v) => return Err(usage(format!("--origin needs 3 values, got {}", v.len()))),
    };
    let cfg = CubifyConfig {
        threshold: a.tau,
        voxel_size: a.voxel_size,
        origin,
    };
    check(cfg.validate())?;
    let grid = read_voxels(&a.input)?;
    let meshes = if a.naive {
        cubify_naive(&grid, &cfg)?
    } else {
        cubify_batch(&grid, &cfg)?
    };
    let mut written = Vec::new();
    for (n, m) in meshes.iter().enumerate() {
        let path = if meshes.len() == 1 { a.out.clone() } else { batch_path(&a.out, n) };
        write_obj(m, &path)?;
        let mut entry = mesh_json(m);
        entry["path"] = json!(path.display().to_string());
        written.push(entry);
    }
    if a.json {
        print_json(&json!({ "meshes": written }));
    } else {
        for w in &written {
            println!("{}: {} vertices, {} faces", w["path"].as_str().unwrap_or(""), w["vertices"], w["faces"]);
        }
    }
    Ok(())
}

fn run_sample(a: SampleArgs) -> CliResult {
    if a.count == 0 {
        return Err(usage("-n must be positive"));
    }
    let mesh = read_obj(&a.input)?;
    let s = sample_points(&mesh, a.count, a.seed)?;
    let mut text = String::with_capacity(a.count * 64);
    for (p, n) in s.points().iter().zip(s.normals()) {
        let _ = writeln!(text, "{:?} {:?} {:?} {:?} {:?} {:?}", p.x, p.y, p.z, n.x, n.y, n.z);
    }
    write_atomic(&a.out, |w| w.write_all(text.as_bytes()))?;
    Ok(())
}

fn run_compare(a: CompareArgs) -> CliResult {
    let cfg = EvalConfig {
        rescale: a.rescale.into(),
        sample_count: a.samples,
        thresholds: a.tau.clone(),
        domain: a.domain.into(),
        ..EvalConfig::default()
    };
    check(cfg.validate())?;
    let gt = read_obj(&a.gt)?;
    let pred = read_obj(&a.pred)?;
    let r = chamfer_metric(&gt, &pred, &cfg, a.seed)?;
    if a.json {
        let scores: Vec<Value> = r
            .f_scores
            .iter()
            .map(|(tau, f)| json!({"tau": tau, "precision": f.precision, "recall": f.recall, "f1": f.f1}))
            .collect();
        print_json(&json!({
            "chamfer": r.chamfer,
            "normal_consistency": r.normal_consistency,
            "f_scores": scores,
        }));
    } else {
        println!("chamfer {}", r.chamfer);
        println!("normal_consistency {}", r.normal_consistency);
        for (tau, f) in &r.f_scores {
            println!("f1@{tau} {} (precision {}, recall {})", f.f1, f.precision, f.recall);
        }
    }
    Ok(())
}

enum Init {
    Icosphere(u32),
    File(PathBuf),
}

fn parse_init(s: &str) -> CliResult<Init> {
    match s.strip_prefix("icosphere:") {
        Some(level) => {
            let level: u32 = level.parse().map_err(|_| usage(format!("bad icosphere level in --init {s:?}")))?;
            if level > 8 {
                return Err(usage(format!("icosphere level {level} is above 8")));
            }
            Ok(Init::Icosphere(level))
        }
        None => Ok(Init::File(PathBuf::from(s))),
    }
}

fn run_fit(a: FitArgs) -> CliResult {
    let init = parse_init(&a.init)?;
    let mut weights = match a.weights {
        Preset::Shapenet => LossWeights::SHAPENET,
        Preset::Pix3d => LossWeights::PIX3D,
    };
    if let Some(c) = a.lambda_chamfer {
        weights.chamfer = c;
    }
    if let Some(e) = a.lambda_edge {
        weights.edge = e;
    }
    check(weights.validate())?;
    if a.steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    if !(a.lr >= 0.0 && a.lr.is_finite()) {
        return Err(usage(format!("--lr must be a finite non-negative number, got {}", a.lr)));
    }
    if a.samples == 0 || a.target_samples == 0 {
        return Err(usage("sample counts must be positive"));
    }
    let init = match init {
        Init::Icosphere(level) => make_icosphere(level),
        Init::File(path) => read_obj(&path)?,
    };
    let target_mesh = read_obj(&a.target)?;
    let target = sample_points(&target_mesh, a.target_samples, derive_seed(a.seed, 0))?;
    let cfg = FitConfig {
        steps: a.steps,
        step_size: a.lr,
        samples: a.samples,
        seed: derive_seed(a.seed, 1),
    };
    let result = optimize_vertices(&init, &target, &weights, &cfg)?;
    let last = sample_points(&result.mesh, a.samples, derive_seed(cfg.seed, a.steps as u64))?;
    let final_chamfer = chamfer(last.points(), target.points())?.value;
    let initial_chamfer = result.trace[0].chamfer;

    write_obj(&result.mesh, &a.out)?;
    if let Some(path) = &a.trace {
        let mut text = String::from("step total chamfer edge\n");
        for (i, s) in result.trace.iter().enumerate() {
            let _ = writeln!(text, "{i} {:?} {:?} {:?}", s.total, s.chamfer, s.edge);
        }
        write_atomic(path, |w| w.write_all(text.as_bytes()))?;
    }
    if a.json {
        print_json(&json!({
            "steps": a.steps,
            "initial_chamfer": initial_chamfer,
            "final_chamfer": final_chamfer,
            "mesh": mesh_json(&result.mesh),
        }));
    } else {
        println!("chamfer {initial_chamfer} -> {final_chamfer} after {} steps", a.steps);
    }
    Ok(())
}

fn run_icosphere(a: IcosphereArgs) -> CliResult {
    if a.level > 8 {
        return Err(usage(format!("--level {} is above 8", a.level)));
    }
    write_obj(&make_icosphere(a.level), &a.out)?;
    Ok(())
}

fn run_subdivide(a: SubdivideArgs) -> CliResult {
    let mesh = read_obj(&a.input)?;
    write_obj(&subdivide_faces(&mesh), &a.out)?;
    Ok(())
}

fn run_refine(a: RefineArgs) -> CliResult {
    let camera = match a.intrinsics[..] {
        [fx, fy, cx, cy] => check(CameraIntrinsics::new(fx, fy, cx, cy))?,
        _ => return Err(usage(format!("--intrinsics needs 4 values, got {}", a.intrinsics.len()))),
    };
    let mesh = read_obj(&a.input)?;
    let features = read_features(&a.features)?;
    let stages = read_weights(&a.weights)?.to_stages(&a.subdivide).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: a.weights.clone(),
            message,
        },
        other => other,
    })?;
    let size = (features.image_width as f64, features.image_height as f64);
    let meshes = refine_mesh(&mesh, &features.maps, &camera, size, &stages)?;
    let out = meshes.last().expect("at least one stage");
    write_obj(out, &a.out)?;
    if a.json {
        print_json(&json!({"stages": stages.len(), "mesh": mesh_json(out)}));
    }
    Ok(())
}

fn report_json(r: &ApReport, box_ap: bool) -> Value {
    let categories: Vec<Value> = r
        .categories
        .iter()
        .map(|c| {
            json!({
                "category": c.category,
                "ap": c.ap,
                "ground_truth": c.ground_truth,
                "true_positives": c.true_positives,
                "false_positives": c.false_positives,
            })
        })
        .collect();
    json!({
        "kind": if box_ap { "box" } else { "mesh" },
        "categories": categories,
        "mean": r.mean,
    })
}

fn run_eval_ap(a: EvalApArgs) -> CliResult {
    let cfg = EvalConfig {
        rescale: a.rescale.into(),
        sample_count: a.samples,
        domain: a.domain.into(),
        f1_tau: a.f1_tau,
        f1_threshold: a.f1_threshold,
        iou_gate: a.iou_gate,
        match_iou: a.match_iou,
        ..EvalConfig::default()
    };
    check(cfg.validate())?;
    let dets = read_detections(&a.detections)?;
    let gts = read_ground_truth(&a.gt)?;
    let set = build_eval_set(&dets, &gts)?;
    let report = if a.box_ap {
        ap_box(&set.images, &set.categories, &cfg)?
    } else {
        ap_mesh_parallel(&set.images, &set.categories, &cfg, a.seed)?
    };
    let text = serde_json::to_string_pretty(&report_json(&report, a.box_ap)).expect("json values serialize");
    write_atomic(&a.out, |w| w.write_all(format!("{text}\n").as_bytes()))?;
    match report.mean {
        Some(m) => println!("mean AP {m}"),
        None => println!("mean AP undefined (no ground truth)"),
    }
    Ok(())
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) => 2,
        Failure::Run(Error::Io { .. }) => 3,
        Failure::Run(Error::Format { .. } | Error::Parse { .. }) => 4,
        Failure::Run(Error::Core(_)) => 5,
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Cubify(a) => run_cubify(a),
        Command::Sample(a) => run_sample(a),
        Command::Compare(a) => run_compare(a),
        Command::Fit(a) => run_fit(a),
        Command::Icosphere(a) => run_icosphere(a),
        Command::Subdivide(a) => run_subdivide(a),
        Command::Refine(a) => run_refine(a),
        Command::EvalAp(a) => run_eval_ap(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    // a panic is a bug; report it with the documented internal-error code
    let Ok(result) = std::panic::catch_unwind(|| run(cli.command)) else {
        return ExitCode::from(1);
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("meshgeo: error: {m}"),
                Failure::Run(e) => eprintln!("meshgeo: error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
