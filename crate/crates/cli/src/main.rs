//! `tvd` — detection streams in, tracked trajectories, violation events, and
//! notices out. Subcommands: `track`, `analyze`, `synth`, `plate`, `report`.
//!
//! Exit codes: 0 success, 2 input error, 3 missing dependency (e.g. a rule
//! needs frame images the scene does not have), 4 internal error.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tvd_core::config::RunConfig;
use tvd_core::ingest;
use tvd_core::pipeline::{self, analyze_scene, load_scene, AnalyzeOutcome, PipelineError};
use tvd_core::plate::{self, Quad, TemplateAtlas};
use tvd_core::report::Outbox;
use tvd_core::synth::{self, table1};
use tvd_core::violations::ViolationKind;

#[derive(Parser)]
#[command(name = "tvd", version, about = "Traffic violation detection engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a detection stream into trajectories
    Track(TrackArgs),
    /// Run the full analysis over one scene or a corpus of scenes
    Analyze(AnalyzeArgs),
    /// Generate synthetic scenes (a scenario file or the built-in corpus)
    Synth(SynthArgs),
    /// Rectify, segment, and read a license plate
    Plate(PlateArgs),
    /// Retry queued notice deliveries in an outbox
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (TOML); flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<timestamp>-seed<seed>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Detection stream file (tab-separated records)
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// One scene directory (meta.toml + detections.tsv [+ frames/ quads.tsv])
    #[arg(long, conflicts_with = "corpus")]
    scene: Option<PathBuf>,
    /// Directory of scene directories
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated rules or `all`
    #[arg(long, default_value = "all")]
    rules: String,
    /// Scenes processed in parallel
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Authority endpoint override (also TVD_AUTHORITY_ENDPOINT)
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Generate the built-in evaluation corpus (28 scene directories)
    #[arg(long, conflicts_with = "spec")]
    table1: bool,
    /// Scenario spec file (TOML)
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct PlateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    image: PathBuf,
    /// Plate corners `x1,y1,x2,y2,x3,y3,x4,y4` (TL,TR,BR,BL)
    #[arg(long, conflicts_with_all = ["quads", "frame"])]
    quad: Option<String>,
    /// Quad annotation file; use with --frame
    #[arg(long)]
    quads: Option<PathBuf>,
    #[arg(long)]
    frame: Option<u64>,
    /// Template atlas directory of <CHAR>.png files (default: built-in font)
    #[arg(long)]
    atlas: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    outbox: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
}

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn input(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    fn internal(msg: impl Into<String>) -> Self {
        Self { code: 4, msg: msg.into() }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(args) => cmd_track(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Plate(args) => cmd_plate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::input(e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(common: &CommonArgs, seed: Option<u64>) -> PathBuf {
    if let Some(dir) = &common.out {
        return dir.clone();
    }
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    match seed {
        Some(seed) => PathBuf::from(format!("runs/{stamp}-seed{seed}")),
        None => PathBuf::from(format!("runs/{stamp}")),
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    config: &'a RunConfig,
}

/// Echo the effective configuration so a run can be reproduced exactly.
fn write_manifest(out: &Path, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let manifest = RunManifest {
        command,
        argv: std::env::args().collect(),
        config: cfg,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| CliError::internal(format!("manifest: {e}")))?;
    std::fs::write(out.join("run_manifest.toml"), text)?;
    Ok(())
}

fn parse_rules(raw: &str) -> Result<Vec<ViolationKind>, CliError> {
    if raw.trim().eq_ignore_ascii_case("all") {
        return Ok(ViolationKind::ALL.to_vec());
    }
    raw.split(',')
        .map(|token| {
            ViolationKind::parse(token)
                .ok_or_else(|| CliError::input(format!("unknown rule `{token}`")))
        })
        .collect()
}

fn cmd_track(args: TrackArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let out = out_dir(&args.common, None);
    write_manifest(&out, "track", &cfg)?;

    let file = std::fs::File::open(&args.detections)
        .map_err(|e| CliError::input(format!("{}: {e}", args.detections.display())))?;
    let stream = ingest::parse_detection_stream(
        BufReader::new(file),
        args.fps,
        (args.width, args.height),
    )
    .map_err(|e| CliError::input(e.to_string()))?;

    let (snapshots, trajectories) = pipeline::run_tracker(&stream, &cfg)?;
    let path = out.join("tracks.tsv");
    pipeline::write_tracks(&path, &snapshots)?;
    println!(
        "{} confirmed tracks, {} snapshots -> {}",
        trajectories.len(),
        snapshots.len(),
        path.display()
    );
    Ok(())
}

fn scene_dirs(args: &AnalyzeArgs) -> Result<Vec<PathBuf>, CliError> {
    if let Some(scene) = &args.scene {
        return Ok(vec![scene.clone()]);
    }
    let corpus = args
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::input("pass --scene DIR or --corpus DIR"))?;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(corpus)
        .map_err(|e| CliError::input(format!("{}: {e}", corpus.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.toml").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::input(format!(
            "no scene directories under {}",
            corpus.display()
        )));
    }
    Ok(dirs)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(endpoint) = &args.endpoint {
        cfg.report.endpoint = Some(endpoint.clone());
    }
    let rules = parse_rules(&args.rules)?;
    let out = out_dir(&args.common, None);
    write_manifest(&out, "analyze", &cfg)?;

    let dirs = scene_dirs(&args)?;
    let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);

    // scenes are independent; a simple shared-index worker pool keeps the
    // output order deterministic by collecting into slots
    let slots: Vec<Mutex<Option<Result<AnalyzeOutcome, PipelineError>>>> =
        dirs.iter().map(|_| Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let workers = args.workers.clamp(1, dirs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= dirs.len() {
                    break;
                }
                let result = load_scene(&dirs[i]).and_then(|input| {
                    analyze_scene(
                        &input,
                        &rules,
                        &cfg,
                        &out.join(input.meta.scene_id.clone()),
                        &created_at,
                    )
                });
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut totals = vec![0usize; ViolationKind::ALL.len()];
    for slot in slots {
        let outcome = slot.into_inner().unwrap().expect("worker filled slot")?;
        let counts = outcome.rule_counts();
        let summary: Vec<String> = counts
            .iter()
            .filter(|(k, _)| rules.contains(k))
            .map(|(k, n)| format!("{k}={n}"))
            .collect();
        println!("{}: {}", outcome.scene_id, summary.join(" "));
        for (i, (_, n)) in counts.iter().enumerate() {
            totals[i] += n;
        }
    }
    let total_line: Vec<String> = ViolationKind::ALL
        .iter()
        .zip(&totals)
        .filter(|(k, _)| rules.contains(k))
        .map(|(k, n)| format!("{k}={n}"))
        .collect();
    println!("total: {}", total_line.join(" "));
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let out = out_dir(&args.common, Some(args.seed));
    write_manifest(&out, "synth", &cfg)?;

    let specs = if args.table1 {
        table1::build_table1_corpus(args.seed)
    } else {
        let path = args
            .spec
            .as_ref()
            .ok_or_else(|| CliError::input("pass --table1 or --spec FILE"))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let spec: synth::ScenarioSpec =
            toml::from_str(&text).map_err(|e| CliError::input(format!("spec: {e}")))?;
        vec![spec]
    };

    for spec in &specs {
        spec.validate().map_err(|e| CliError::input(e.to_string()))?;
        synth::self_check(spec, &cfg.violations).map_err(|e| CliError::input(e.to_string()))?;
        let scene = synth::generate_scene(spec).map_err(|e| CliError::input(e.to_string()))?;
        synth::write_scene(&scene, &out.join(&spec.scene_id))
            .map_err(|e| CliError::internal(e.to_string()))?;
        println!(
            "{}: {} frames, {} detections{}",
            spec.scene_id,
            spec.duration_frames,
            scene.stream.detection_count(),
            if scene.frames.is_empty() { "" } else { ", frames rendered" }
        );
    }
    println!("{} scenes -> {}", specs.len(), out.display());
    Ok(())
}

fn parse_quad_arg(raw: &str) -> Result<Quad, CliError> {
    let nums: Vec<f64> = raw
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("--quad: {e}")))?;
    if nums.len() != 8 {
        return Err(CliError::input("--quad needs 8 numbers"));
    }
    Ok(Quad::new([
        (nums[0], nums[1]),
        (nums[2], nums[3]),
        (nums[4], nums[5]),
        (nums[6], nums[7]),
    ]))
}

fn cmd_plate(args: PlateArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let image = image::open(&args.image)
        .map_err(|e| CliError::input(format!("{}: {e}", args.image.display())))?
        .to_rgb8();

    let quad = if let Some(raw) = &args.quad {
        parse_quad_arg(raw)?
    } else {
        let quads_path = args
            .quads
            .as_ref()
            .ok_or_else(|| CliError::input("pass --quad or --quads with --frame"))?;
        let frame = args
            .frame
            .ok_or_else(|| CliError::input("--quads needs --frame"))?;
        let file = std::fs::File::open(quads_path)
            .map_err(|e| CliError::input(format!("{}: {e}", quads_path.display())))?;
        let annotations = plate::parse_quad_file(BufReader::new(file))
            .map_err(|e| CliError::input(e.to_string()))?;
        annotations
            .iter()
            .find(|a| a.frame_index == frame)
            .map(|a| a.quad)
            .ok_or_else(|| CliError::input(format!("no quad at frame {frame}")))?
    };

    let atlas = match &args.atlas {
        Some(dir) => TemplateAtlas::load_dir(dir).map_err(|e| CliError::input(e.to_string()))?,
        None => TemplateAtlas::builtin(),
    };

    let out_dims = plate::natural_out_dims(&quad, cfg.plate_rectify_height);
    let rectified = plate::rectify_plate(&image, &quad, out_dims)
        .map_err(|e| CliError::input(e.to_string()))?;
    let crops = plate::segment_characters(&rectified, &cfg.segment);
    let readout = plate::recognize_characters(&crops, &atlas);

    println!("text: {}", readout.text);
    let scores: Vec<String> = readout
        .text
        .chars()
        .zip(&readout.scores)
        .map(|(c, s)| format!("{c}={s:.3}"))
        .collect();
    println!("scores: {}", scores.join(" "));
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(endpoint) = &args.endpoint {
        cfg.report.endpoint = Some(endpoint.clone());
    }
    let outbox = Outbox::create(&args.outbox).map_err(|e| CliError::input(e.to_string()))?;
    let receipts = outbox
        .retry_queued(&cfg.report)
        .map_err(|e| CliError::internal(e.to_string()))?;
    if receipts.is_empty() {
        println!("nothing to retry");
    }
    for r in receipts {
        println!("{}: {:?} (attempt {})", r.notice_id, r.state, r.attempts);
    }
    Ok(())
}
