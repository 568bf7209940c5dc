//! `bevocc` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime or I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bevocc_core::config::RunConfig;
use bevocc_core::gradcheck::{run_suite, GradReport};
use bevocc_core::head::{forward_pipeline, HeadWeights};
use bevocc_core::metrics::{bench_heads, emit_flops_table, emit_miou_table, emit_table, flops_report, miou, TableFormat};
use bevocc_core::scenegen::{
    add_feature_noise, camera_inputs, gen_scene, read_label_volume, read_scene, render_views, write_scene, RenderedView,
};
use bevocc_core::supervision::{loss_breakdown, total_loss, OccupancyVolume};
use bevocc_core::tensor::io::{write_tensor, DType};
use bevocc_core::tensor::set_parallel;
use bevocc_core::OccError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bevocc", version, about = "Collapsed-BEV semantic occupancy toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (tables go to stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format: csv or markdown.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    /// Overrides bench.repeats.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Enable deterministic parallel kernels.
    #[arg(long, global = true)]
    parallel: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded scene, render every camera and write the manifest.
    GenScene,
    /// Run the collapsed-BEV head on a generated scene and report the loss terms.
    Forward {
        /// Scene manifest or its directory; defaults to paths.scene_dir.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Weights manifest; overrides paths.weights.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Time the collapsed-2D head against the 3D FCN head.
    Bench,
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        /// Seeds per operation; defaults to gradcheck_seeds.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Per-class IoU and mIoU between two label volumes.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// Class count M; defaults to head.classes.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Analytic FLOPs per layer and stage.
    Flops,
    /// Write a weights manifest (seeded random, or all zero).
    InitWeights {
        #[arg(long)]
        zero: bool,
    },
    /// Print the default run config.
    DefaultConfig,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<OccError> for Failure {
    fn from(e: OccError) -> Self {
        let code = match e {
            OccError::InvalidInput(_) | OccError::Config(_) | OccError::Usage(_) | OccError::Format(_) => 1,
            OccError::Generation { .. } | OccError::Io(_) => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        OccError::Io(e).into()
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("bevocc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| with_path(e, path))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(r) = common.repeats {
        cfg.bench.repeats = r;
    }
    if common.parallel {
        cfg.bench.parallel = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let common = &cli.common;
    let format: TableFormat = common.format.parse()?;
    if let Command::DefaultConfig = cli.command {
        return emit(common, "config.json", &format!("{}\n", RunConfig::default().to_json()));
    }
    let cfg = load_config(common)?;
    set_parallel(cfg.bench.parallel);
    match &cli.command {
        Command::GenScene => cmd_gen_scene(&cfg, common),
        Command::Forward { scene, weights } => cmd_forward(&cfg, common, scene.as_deref(), weights.as_deref()),
        Command::Bench => cmd_bench(&cfg, common, format),
        Command::Gradcheck { seeds } => cmd_gradcheck(&cfg, common, seeds.unwrap_or(cfg.gradcheck_seeds), format),
        Command::Eval { pred, gt, classes } => cmd_eval(pred, gt, classes.unwrap_or(cfg.head.classes), common, format),
        Command::Flops => cmd_flops(&cfg, common, format),
        Command::InitWeights { zero } => cmd_init_weights(&cfg, common, *zero),
        Command::DefaultConfig => unreachable!(),
    }
}

fn extension(format: TableFormat) -> &'static str {
    match format {
        TableFormat::Csv => "csv",
        TableFormat::Markdown => "md",
    }
}

/// Writes `text` to `<out>/<file>` when `--out` is given, stdout otherwise.
fn emit(common: &Common, file: &str, text: &str) -> CliResult<()> {
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file);
            fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_gen_scene(cfg: &RunConfig, common: &Common) -> CliResult<()> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.paths.scene_dir.clone());
    let rig = cfg.rig.build()?;
    let scene = gen_scene(&cfg.scene_spec())?;
    let mut views = render_views(&scene.volume, &cfg.grid, &rig)?;
    if cfg.scene.noise_sigma > 0.0 {
        add_feature_noise(&mut views, cfg.scene.noise_sigma, cfg.seed);
    }
    let manifest = write_scene(&dir, cfg.seed, &cfg.grid, &scene, &rig, &views)?;
    println!("{}", manifest.display());
    Ok(())
}

fn with_path(e: OccError, path: &Path) -> Failure {
    let mut f = Failure::from(e);
    if f.code == 2 {
        f.message = format!("{}: {}", path.display(), f.message);
    }
    f
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

fn cmd_forward(cfg: &RunConfig, common: &Common, scene: Option<&Path>, weights: Option<&Path>) -> CliResult<()> {
    let scene_path = manifest_path(scene.unwrap_or(&cfg.paths.scene_dir));
    let loaded = read_scene(&scene_path).map_err(|e| with_path(e, &scene_path))?;
    if loaded.manifest.grid != cfg.grid {
        return Err(OccError::Config(format!("scene grid {:?} differs from the config grid", loaded.manifest.grid)).into());
    }
    if loaded.volume.classes() != cfg.head.classes {
        return Err(OccError::Config(format!(
            "scene has {} classes, head expects {}",
            loaded.volume.classes(),
            cfg.head.classes
        ))
        .into());
    }
    let rig = loaded.manifest.rig.clone();
    let weights = match weights.or(cfg.paths.weights.as_deref()) {
        Some(path) => {
            let path = manifest_path(path);
            HeadWeights::load(&path, &cfg.head, &cfg.grid).map_err(|e| with_path(e, &path))?
        }
        None => HeadWeights::seeded(&cfg.head, &cfg.grid, cfg.seed)?,
    };
    let views: Vec<RenderedView> = loaded
        .features
        .iter()
        .zip(&loaded.depths)
        .map(|(f, d)| RenderedView { features: f.clone(), depth: d.clone(), hits: Vec::new() })
        .collect();
    let inputs = camera_inputs(&views, &cfg.head, &cfg.depth_bins)?;
    let out = forward_pipeline(&inputs, &rig, &cfg.grid, &cfg.depth_bins, &cfg.head, &weights)?;

    let volume = &loaded.volume;
    let terms = loss_breakdown(&out.logits, &out.bev_logits, &inputs.depth_logits, &loaded.depths, &cfg.depth_bins, volume)?;
    let mut report = serde_json::Map::new();
    for (name, v) in terms.terms() {
        report.insert(name.into(), serde_json::json!(v));
    }
    report.insert("total".into(), serde_json::json!(total_loss(&terms)));

    let dir = common.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
    fs::create_dir_all(&dir)?;
    write_tensor(dir.join("logits.occt"), &out.logits, DType::F32)?;
    write_tensor(dir.join("bev_logits.occt"), &out.bev_logits, DType::F32)?;
    let pred: Vec<i64> = argmax_classes(&out.logits).into_iter().map(|c| c as i64).collect();
    bevocc_core::tensor::io::write_labels(dir.join("pred.occt"), &volume.dims(), &pred)?;
    fs::write(dir.join("loss.json"), to_json(&report))?;
    print!("{}", to_json(&report));
    Ok(())
}

/// Per-voxel argmax over the class axis; ties go to the lowest class.
fn argmax_classes(logits: &bevocc_core::tensor::Tensor) -> Vec<usize> {
    let m = logits.dims()[0];
    let n = logits.plane_len();
    let x = logits.data();
    (0..n)
        .map(|i| (1..m).fold(0, |best, c| if x[c * n + i] > x[best * n + i] { c } else { best }))
        .collect()
}

fn cmd_bench(cfg: &RunConfig, common: &Common, format: TableFormat) -> CliResult<()> {
    let rig = cfg.rig.build()?;
    let report = bench_heads(&cfg.head, &cfg.grid, &rig, &cfg.bench_options())?;
    eprintln!("bench: repeats {}, warmup {}, parallel {}", report.repeats, report.warmup, report.parallel);
    emit(common, &format!("bench.{}", extension(format)), &emit_table(&report, format))?;
    if common.out.is_some() {
        emit(common, "bench.json", &to_json(&report))?;
    }
    Ok(())
}

fn gradcheck_table(report: &GradReport, format: TableFormat) -> String {
    let header = ["op", "seeds", "max_rel_error", "worst_seed", "passed"];
    let rows: Vec<[String; 5]> = report
        .ops
        .iter()
        .map(|o| [o.op.clone(), o.seeds.to_string(), format!("{:.3e}", o.max_rel_error), o.worst_seed.to_string(), o.passed.to_string()])
        .collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(&header.join(","));
            out.push('\n');
            for r in &rows {
                out.push_str(&r.join(","));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            out.push_str(&format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len())));
            for r in &rows {
                out.push_str(&format!("| {} |\n", r.join(" | ")));
            }
        }
    }
    out
}

fn cmd_gradcheck(cfg: &RunConfig, common: &Common, seeds: usize, format: TableFormat) -> CliResult<()> {
    let report = run_suite(seeds, cfg.seed)?;
    emit(common, &format!("gradcheck.{}", extension(format)), &gradcheck_table(&report, format))?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure { code: 2, message: format!("gradient check failed for: {}", report.failing().join(", ")) })
    }
}

fn cmd_eval(pred: &Path, gt: &Path, classes: usize, common: &Common, format: TableFormat) -> CliResult<()> {
    let names = OccupancyVolume::default_names(classes);
    let p = read_label_volume(pred, names.clone()).map_err(|e| with_path(e, pred))?;
    let g = read_label_volume(gt, names.clone()).map_err(|e| with_path(e, gt))?;
    if p.dims() != g.dims() {
        return Err(OccError::InvalidInput(format!("prediction dims {:?} differ from ground truth {:?}", p.dims(), g.dims())).into());
    }
    let report = miou(p.labels(), g.labels(), classes, None)?;
    emit(common, &format!("eval.{}", extension(format)), &emit_miou_table(&report, &names, format))
}

fn cmd_flops(cfg: &RunConfig, common: &Common, format: TableFormat) -> CliResult<()> {
    let cameras = cfg.rig.build()?.len();
    let report = flops_report(&cfg.head, &cfg.grid, cameras)?;
    emit(common, &format!("flops.{}", extension(format)), &emit_flops_table(&report, format))
}

fn cmd_init_weights(cfg: &RunConfig, common: &Common, zero: bool) -> CliResult<()> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join("weights"));
    let weights = if zero {
        HeadWeights::zeros(&cfg.head, &cfg.grid)?
    } else {
        HeadWeights::seeded(&cfg.head, &cfg.grid, cfg.seed)?
    };
    println!("{}", weights.save(&dir)?.display());
    Ok(())
}
