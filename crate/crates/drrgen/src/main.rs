//! Command-line front end: `info`, `render`, `dataset`, `analyze`.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error (malformed or
//! inconsistent volumes), 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use drrgen::analysis::{self, CrivHistogram};
use drrgen::dataset::{self, DatasetConfig};
use drrgen::error::Error;
use drrgen::export::{self, Window};
use drrgen::geometry::{sample_pose, ImagingGeometry, PoseRanges, RigidPose, ViewAxis};
use drrgen::projector::{render, ClassWeights, LabelThresholds};
use drrgen::volume::{load_ct, load_labels, CtVolume, IntensityMode, LabelCodeMap, LabelVolume};

#[derive(Parser)]
#[command(name = "drrgen", version, about = "Infection-aware DRR generation from labeled CT volumes")]
struct Cli {
    /// Worker threads (falls back to the DRR_THREADS env var, then all cores).
    /// Changes speed only, never output bytes.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a CT volume and, optionally, its label mask
    Info(InfoArgs),
    /// Render one DRR with explicit pose, weights and thresholds
    Render(RenderArgs),
    /// Build a full dataset from a JSON config
    Dataset(DatasetArgs),
    /// Per-case infection statistics and contribution-rate histograms
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct InfoArgs {
    /// CT volume (.nii or .rawvol)
    #[arg(long)]
    ct: PathBuf,
    /// Category mask paired with --ct
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Emit the summary as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ct: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Class weights as w0,w1,w2 (background, lung, infection)
    #[arg(long, value_parser = parse_weights)]
    weights: ClassWeights,
    /// Infection contribution threshold in [0, 1]
    #[arg(long, value_parser = parse_unit_interval)]
    t2: f64,
    /// Lung contribution threshold in [0, 1]
    #[arg(long, default_value_t = 0.0, value_parser = parse_unit_interval)]
    t1: f64,
    #[arg(long, value_enum, default_value_t = ViewArg::Front)]
    view: ViewArg,
    /// Pose as tx,ty,tz,rx,ry,rz (mm and degrees)
    #[arg(long, value_parser = parse_pose, default_value = "0,0,0,0,0,0")]
    pose: RigidPose,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
    /// Also write the pixel-label mask PNG
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Also write raw little-endian f64 intensities
    #[arg(long)]
    float_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Attenuation)]
    mode: ModeArg,
    /// Intensity window: "auto" or "lo,hi"
    #[arg(long, value_parser = parse_window, default_value = "auto")]
    window: Window,
}

#[derive(Args)]
struct DatasetArgs {
    /// JSON config (see README for the schema)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base_seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    ct: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// JSON file with an array of [w0, w1, w2] triples; defaults to the
    /// standard nine-point sweep
    #[arg(long)]
    weights_grid: Option<PathBuf>,
    /// Poses to render per weight tuple for the contribution histograms
    /// (0 skips rendering)
    #[arg(long, default_value_t = 0)]
    poses: usize,
    /// Histogram bin count
    #[arg(long, default_value_t = 50, value_parser = parse_positive_usize)]
    bins: usize,
    /// Seed for pose sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stats JSON output path; histograms land next to it as CSV
    #[arg(long)]
    out: PathBuf,
    /// Also print the stats JSON to stdout
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ViewArg {
    Front,
    Lateral,
}

impl From<ViewArg> for ViewAxis {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Front => ViewAxis::Front,
            ViewArg::Lateral => ViewAxis::Lateral,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Raw,
    Attenuation,
}

impl From<ModeArg> for IntensityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => IntensityMode::RawHu,
            ModeArg::Attenuation => IntensityMode::Attenuation,
        }
    }
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != n {
        return Err(format!("expected {n} comma-separated values, got {}", parts.len()));
    }
    Ok(parts)
}

fn parse_weights(s: &str) -> Result<ClassWeights, String> {
    let v = parse_floats(s, 3)?;
    ClassWeights::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
}

fn parse_pose(s: &str) -> Result<RigidPose, String> {
    let v = parse_floats(s, 6)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err("pose components must be finite".into());
    }
    Ok(RigidPose::new((v[0], v[1], v[2]), (v[3], v[4], v[5])))
}

fn parse_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("{v} is outside [0, 1]"));
    }
    Ok(v)
}

fn parse_positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

fn parse_window(s: &str) -> Result<Window, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Window::Auto);
    }
    let v = parse_floats(s, 2)?;
    let window = Window::Fixed { lo: v[0], hi: v[1] };
    window.validate().map_err(|e| e.to_string())?;
    Ok(window)
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Io(_) => 3,
        Error::EmptyDataset
        | Error::InvalidConfig(_)
        | Error::EmptyInput(_)
        | Error::Json(_)
        | Error::IndexOutOfRange { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let jobs = cli.jobs.or_else(|| {
        std::env::var("DRR_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Info(args) => cmd_info(args),
        Command::Render(args) => cmd_render(args),
        Command::Dataset(args) => cmd_dataset(args),
        Command::Analyze(args) => cmd_analyze(args),
    }
}

#[derive(Serialize)]
struct LabelSummary {
    path: PathBuf,
    background_voxels: usize,
    lung_voxels: usize,
    infected_voxels: usize,
    p: f64,
}

#[derive(Serialize)]
struct InfoSummary {
    ct: PathBuf,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    hu_range: [f32; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<LabelSummary>,
}

fn load_pair(ct_path: &PathBuf, labels_path: &PathBuf) -> Result<(CtVolume, LabelVolume), Error> {
    let ct = load_ct(ct_path)?;
    let labels = load_labels(labels_path, &ct, &LabelCodeMap::default())?;
    Ok((ct, labels))
}

fn cmd_info(args: InfoArgs) -> Result<(), Error> {
    let ct = load_ct(&args.ct)?;
    let (lo, hi) = ct.hu_range();
    let labels = match &args.labels {
        Some(path) => {
            let labels = load_labels(path, &ct, &LabelCodeMap::default())?;
            let counts = labels.category_counts();
            Some(LabelSummary {
                path: path.clone(),
                background_voxels: counts[0],
                lung_voxels: counts[1],
                infected_voxels: counts[2],
                p: analysis::infected_proportion(&labels)?,
            })
        }
        None => None,
    };

    let summary = InfoSummary {
        ct: args.ct.clone(),
        dims: [ct.dims().0, ct.dims().1, ct.dims().2],
        spacing: [ct.spacing().0, ct.spacing().1, ct.spacing().2],
        origin: [ct.origin().0, ct.origin().1, ct.origin().2],
        hu_range: [lo, hi],
        labels,
    };

    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("ct: {}", summary.ct.display());
        println!(
            "dims: {} x {} x {}",
            summary.dims[0], summary.dims[1], summary.dims[2]
        );
        println!(
            "spacing: {} x {} x {} mm",
            summary.spacing[0], summary.spacing[1], summary.spacing[2]
        );
        println!("hu range: [{}, {}]", summary.hu_range[0], summary.hu_range[1]);
        if let Some(labels) = &summary.labels {
            println!("labels: {}", labels.path.display());
            println!(
                "category voxels: background={} lung={} infection={}",
                labels.background_voxels, labels.lung_voxels, labels.infected_voxels
            );
            println!("p = {:.3}", labels.p);
        }
    }
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<(), Error> {
    let (ct, labels) = load_pair(&args.ct, &args.labels)?;
    let thresholds = LabelThresholds::new(args.t1, args.t2)?;
    let geom = ImagingGeometry::default().with_view(args.view.into());
    let image = render(
        &ct,
        &labels,
        &args.pose,
        &geom,
        &args.weights,
        &thresholds,
        args.mode.into(),
    )?;
    export::export_image(&image, &args.window, &args.out)?;
    if let Some(mask_out) = &args.mask_out {
        export::export_mask(&image, mask_out)?;
    }
    if let Some(float_out) = &args.float_out {
        export::export_float(&image, float_out)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_dataset(args: DatasetArgs) -> Result<(), Error> {
    let mut config = DatasetConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    let manifest = dataset::build_dataset(&config)?;
    println!(
        "wrote {} records under {} (manifest.json, config hash {})",
        manifest.records.len(),
        config.output_dir.display(),
        manifest.config_hash
    );
    Ok(())
}

#[derive(Serialize)]
struct HistogramReport {
    weights: ClassWeights,
    csv: PathBuf,
    #[serde(flatten)]
    histogram: CrivHistogram,
}

#[derive(Serialize)]
struct AnalyzeReport {
    case_stats: analysis::CaseStats,
    histograms: Vec<HistogramReport>,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let (ct, labels) = load_pair(&args.ct, &args.labels)?;

    let grid: Vec<ClassWeights> = match &args.weights_grid {
        None => dataset::default_weight_grid(),
        Some(path) => {
            let triples: Vec<[f64; 3]> = serde_json::from_slice(&std::fs::read(path)?)?;
            let mut grid = Vec::with_capacity(triples.len());
            for [w0, w1, w2] in triples {
                grid.push(ClassWeights::new(w0, w1, w2)?);
            }
            grid
        }
    };
    if grid.is_empty() {
        return Err(Error::EmptyInput("weights grid".into()));
    }

    let case_id = args
        .ct
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into());
    let stats = analysis::case_stats(&case_id, &labels, &grid)?;

    let mut histograms = Vec::new();
    if args.poses > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let ranges = PoseRanges::default();
        let poses: Vec<RigidPose> = (0..args.poses).map(|_| sample_pose(&mut rng, &ranges)).collect();
        let geom = ImagingGeometry::default();
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned());
        let stem = stem.unwrap_or_else(|| "stats".into());
        for weights in &grid {
            let histogram =
                analysis::criv_histogram(&ct, &labels, &poses, &geom, weights, args.bins)?;
            let csv_name = format!(
                "{stem}_criv_w{}-{}-{}.csv",
                weights.w0, weights.w1, weights.w2
            );
            let csv_path = match args.out.parent() {
                Some(parent) if !parent.as_os_str().is_empty() => parent.join(&csv_name),
                _ => PathBuf::from(&csv_name),
            };
            std::fs::write(&csv_path, histogram.to_csv())?;
            histograms.push(HistogramReport {
                weights: *weights,
                csv: csv_path,
                histogram,
            });
        }
    }

    let report = AnalyzeReport {
        case_stats: stats,
        histograms,
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&args.out, format!("{json}\n"))?;
    if args.json {
        println!("{json}");
    } else {
        println!("wrote {}", args.out.display());
    }
    Ok(())
}
