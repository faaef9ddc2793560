//! `harbench`: ingest -> train -> evaluate -> compare.

mod config;
mod glob;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use harbench_core::backbones::{pretrained_file_checksum, BackboneError, Registry, WeightSource, WEIGHTS_DIR_ENV};
use harbench_core::dataset::{build_manifest, validate_manifest, CheckStatus, DatasetManifest, ManifestOptions, Split, SplitRatios};
use harbench_core::metrics::{evaluate, Aggregation, MetricsError};
use harbench_core::model::{train_on_manifest, Checkpoint, ClassifierModel, ReductionMode, TrainError};
use harbench_core::reporting::{compare_runs, plot_confusion, plot_history, plot_roc, render_table, write_table, TableFormat};

use config::{default_weights_dir, pick, required, resolve_run, CommonFlags, FileConfig, RunConfig, TrainFlags, WeightsMode, THREADS_ENV};

/// Bad invocation: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "harbench",
    about = "Frozen-backbone transfer learning for classroom activity recognition",
    disable_version_flag = true,
    arg_required_else_help = true,
    after_help = "Environment: HARBENCH_WEIGHTS_DIR (pretrained weights cache), HARBENCH_THREADS (worker threads).\nExit codes: 0 success, 1 runtime failure, 2 usage error."
)]
struct Cli {
    /// Print version and the backbone registry as JSON
    #[arg(long)]
    version: bool,

    /// Worker threads (0 = all cores)
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    /// JSON file with default settings; flags and environment override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan a folder-per-class corpus, split clips and extract frames
    Ingest(IngestArgs),
    /// Train a GAP + softmax head on a frozen backbone
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest
    Evaluate(EvaluateArgs),
    /// Build a comparison table from run reports
    Compare(CompareArgs),
    /// Inspect the backbone registry
    Backbones {
        #[command(subcommand)]
        action: BackbonesAction,
    },
}

#[derive(Subcommand, Debug)]
enum BackbonesAction {
    /// List registered backbones
    List {
        /// Emit JSON instead of a table
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct WeightArgs {
    /// Pretrained weights cache directory
    #[arg(long, env = WEIGHTS_DIR_ENV)]
    weights_dir: Option<PathBuf>,

    /// Where backbone parameters come from
    #[arg(long, value_enum)]
    weights: Option<WeightsMode>,

    /// Seed for stub backbone parameters
    #[arg(long)]
    stub_seed: Option<u64>,
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    SplitRatios::parse(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Corpus root with one sub-directory per class
    #[arg(long)]
    root: Option<PathBuf>,
    /// Output directory for manifest.json and frames/
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every n-th frame of each video
    #[arg(long)]
    stride: Option<usize>,
    /// At most this many frames per clip
    #[arg(long)]
    limit: Option<usize>,
    /// train,val,test fractions summing to 1
    #[arg(long, value_parser = parse_ratios)]
    ratios: Option<SplitRatios>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Registry id, or `all` for every registered backbone
    #[arg(long)]
    backbone: Option<String>,
    /// Runs go to <out>/<backbone>/
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Square input size fed to the backbone
    #[arg(long)]
    image_size: Option<usize>,
    /// Gradient reduction; sequential is bit-reproducible
    #[arg(long, value_parser = parse_reduction)]
    reduction: Option<ReductionMode>,
    /// Restore the epoch with the best validation accuracy
    #[arg(long)]
    keep_best_val: bool,
    /// Also write plots/history.svg
    #[arg(long)]
    plots: bool,
    #[command(flatten)]
    weights: WeightArgs,
}

fn parse_reduction(s: &str) -> Result<ReductionMode, String> {
    match s {
        "sequential" => Ok(ReductionMode::Sequential),
        "parallel" => Ok(ReductionMode::Parallel),
        other => Err(format!("unknown reduction {other:?} (sequential or parallel)")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// checkpoint.json written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split to evaluate
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    /// Output directory; defaults to the checkpoint's directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// How per-class metrics are averaged
    #[arg(long, value_parser = clap::value_parser!(Aggregation))]
    aggregation: Option<Aggregation>,
    /// Also write plots/confusion.svg and plots/roc.svg
    #[arg(long)]
    plots: bool,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// report.json paths or glob patterns (`*`, `?`, `**`)
    #[arg(required = true)]
    reports: Vec<String>,
    /// Output directory for comparison.{md,csv,json}
    #[arg(long)]
    out: PathBuf,
    /// markdown, csv or json; all three when omitted
    #[arg(long, value_parser = |s: &str| s.parse::<TableFormat>().map_err(|e| e.to_string()))]
    format: Option<TableFormat>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    Ok(match path {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    })
}

fn common_flags(cli_threads: Option<usize>, w: &WeightArgs) -> CommonFlags {
    CommonFlags {
        threads: cli_threads,
        weights_dir: w.weights_dir.clone(),
        weights: w.weights,
        stub_seed: w.stub_seed,
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn manifest_base(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn cmd_ingest(args: IngestArgs, file: &FileConfig) -> Result<()> {
    let root = required(args.root, file.root.clone(), "root")?;
    let out = required(args.out, file.out.clone(), "out")?;
    let ratios = pick(args.ratios, file.ratios, SplitRatios::default());
    ratios.validate().map_err(|e| UsageError(e.to_string()))?;
    let stride = pick(args.stride, file.stride, config::default_stride());
    if stride == 0 {
        return Err(UsageError("--stride must be at least 1".into()).into());
    }
    let opts = ManifestOptions {
        stride,
        limit: args.limit.or(file.limit),
        ratios,
        seed: pick(args.seed, file.seed, 0),
        created_at: None,
    };
    let (manifest, warnings) = build_manifest(&root, &out, &opts)?;
    for w in &warnings {
        eprintln!("warning [{}]: {}", w.code, w.message);
    }
    let report = validate_manifest(&manifest);
    for item in report.items.iter().filter(|i| i.status != CheckStatus::Pass) {
        eprintln!("{:?} {}: {}", item.status, item.check, item.message);
    }
    println!(
        "{}: {} classes, {} clips, {} frames (train {}, val {}, test {})",
        out.join(harbench_core::dataset::MANIFEST_FILE).display(),
        manifest.classes.len(),
        manifest.clips.len(),
        manifest.frames.len(),
        manifest.frames_in(Split::Train).count(),
        manifest.frames_in(Split::Val).count(),
        manifest.frames_in(Split::Test).count(),
    );
    if !report.passed() {
        anyhow::bail!("manifest failed validation");
    }
    Ok(())
}

fn check_backbone(registry: &Registry, id: &str) -> Result<Vec<String>> {
    if id == "all" {
        return Ok(registry.ids());
    }
    match registry.get(id) {
        Ok(_) => Ok(vec![id.to_string()]),
        Err(e) => Err(UsageError(e.to_string()).into()),
    }
}

fn train_one(run: &RunConfig, id: &str, manifest: &DatasetManifest, registry: &Registry) -> Result<PathBuf> {
    let source = run.weight_source();
    let backbone = registry.load(id, &source)?;
    let before = backbone.parameter_checksum();
    let model = ClassifierModel::build(backbone, manifest.classes.clone(), run.train.seed)?;
    log::info!(
        "{id}: {} trainable parameters, backbone {} ({})",
        model.trainable_parameter_count(),
        model.backbone.checksum(),
        model.backbone.weights_kind()
    );
    let (model, history) = train_on_manifest(model, manifest, &manifest_base(&run.manifest), &run.train)?;
    if model.backbone.parameter_checksum() != before {
        anyhow::bail!("backbone {id} parameters changed during training");
    }
    let dir = run.out.join(id);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let ck = Checkpoint::from_model(&model, &source, &run.train);
    let ck_path = dir.join("checkpoint.json");
    ck.save(&ck_path)?;
    write_json(&dir.join("history.json"), &history.without_timing())?;
    let timing: Vec<f64> = history.epochs.iter().map(|e| e.wall_time_s).collect();
    write_json(&dir.join("timing.json"), &timing)?;
    let mut echoed = run.clone();
    echoed.backbone = id.to_string();
    write_json(&dir.join("run.json"), &echoed)?;
    if run.plots {
        plot_history(&history, &dir.join("plots/history.svg"))?;
    }
    if let Some(last) = history.last() {
        println!(
            "{id}: train loss {:.4}, train acc {:.4}{} -> {}",
            last.train_loss,
            last.train_accuracy,
            last.val_accuracy.map(|a| format!(", val acc {a:.4}")).unwrap_or_default(),
            ck_path.display()
        );
    }
    Ok(ck_path)
}

fn cmd_train(args: TrainArgs, cli_threads: Option<usize>, file: &FileConfig) -> Result<()> {
    let common = common_flags(cli_threads, &args.weights);
    let flags = TrainFlags {
        manifest: args.manifest,
        backbone: args.backbone,
        out: args.out,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        image_size: args.image_size,
        reduction: args.reduction,
        keep_best_val: args.keep_best_val,
        plots: args.plots,
    };
    let run = resolve_run(&common, flags, file)?;
    let registry = Registry::default();
    let ids = check_backbone(&registry, &run.backbone)?;
    init_threads(run.threads)?;
    let manifest = load_manifest(&run.manifest)?;
    for id in ids {
        train_one(&run, &id, &manifest, &registry).with_context(|| format!("training {id}"))?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, cli_threads: Option<usize>, file: &FileConfig) -> Result<()> {
    let common = common_flags(cli_threads, &args.weights);
    init_threads(common.threads.or(file.threads))?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let manifest_path = required(args.manifest, file.manifest.clone(), "manifest")?;
    let split = pick(args.split, file.split, Split::Test);
    let aggregation = pick(args.aggregation, file.aggregation, Aggregation::Macro);
    let source = match ck.stub_source() {
        Some(stub) => stub,
        None => WeightSource::Pretrained {
            dir: pick(common.weights_dir, file.weights_dir.clone(), default_weights_dir()),
        },
    };
    let model = ck.into_model(&Registry::default(), &source)?;
    let manifest = load_manifest(&manifest_path)?;
    let eval = evaluate(
        &model,
        &manifest,
        &manifest_base(&manifest_path),
        split,
        ck.train_config.image_size,
        aggregation,
    )?;
    let out = args
        .out
        .unwrap_or_else(|| args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
    eval.persist(&out)?;
    if args.plots || file.plots.unwrap_or(false) {
        plot_confusion(&eval.confusion, &out.join("plots/confusion.svg"))?;
        let curves: Vec<_> = eval.roc.iter().filter_map(|r| r.curve.clone()).collect();
        plot_roc(&curves, &out.join("plots/roc.svg"))?;
    }
    for r in eval.roc.iter().filter(|r| r.curve.is_none()) {
        eprintln!("warning [degenerate-roc]: {}: {}", r.class, r.degenerate.as_deref().unwrap_or(""));
    }
    let rep = &eval.report;
    println!(
        "{} on {split}: accuracy {:.4}, {} precision {:.4}, recall {:.4}, F1 {:.4} -> {}",
        ck.backbone.id,
        rep.accuracy,
        rep.aggregation,
        rep.precision,
        rep.recall,
        rep.f1,
        out.join("report.json").display()
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = args.reports.iter().flat_map(|p| glob::expand(p)).collect();
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        anyhow::bail!("no reports match {:?}", args.reports);
    }
    let table = compare_runs(&paths)?;
    let formats = match args.format {
        Some(f) => vec![f],
        None => TableFormat::ALL.to_vec(),
    };
    for f in formats {
        let path = write_table(&table, f, &args.out)?;
        log::info!("wrote {}", path.display());
    }
    print!("{}", render_table(&table, TableFormat::Markdown));
    Ok(())
}

#[derive(Serialize)]
struct BackboneInfo {
    id: String,
    name: String,
    feature_channels: usize,
    min_input: usize,
    normalization: String,
    weight_source: String,
    stub_checksum: String,
    pretrained_checksum: Option<String>,
}

fn backbone_infos() -> Vec<BackboneInfo> {
    let registry = Registry::default();
    let dir = std::env::var_os(WEIGHTS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(default_weights_dir);
    registry
        .specs()
        .iter()
        .map(|s| BackboneInfo {
            id: s.id.clone(),
            name: s.display_name.clone(),
            feature_channels: s.feature_channels,
            min_input: s.min_input,
            normalization: format!("{:?}", s.normalization),
            weight_source: s.weight_source.clone(),
            stub_checksum: registry
                .load(&s.id, &WeightSource::Stub { seed: 0 })
                .map(|b| b.checksum().to_string())
                .unwrap_or_default(),
            pretrained_checksum: pretrained_file_checksum(&dir, &s.id),
        })
        .collect()
}

fn print_version() -> Result<()> {
    #[derive(Serialize)]
    struct Version {
        name: &'static str,
        version: &'static str,
        backbones: Vec<BackboneInfo>,
    }
    let v = Version {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        backbones: backbone_infos(),
    };
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn cmd_backbones(action: BackbonesAction) -> Result<()> {
    match action {
        BackbonesAction::List { json } => {
            let infos = backbone_infos();
            if json {
                println!("{}", serde_json::to_string_pretty(&infos)?);
            } else {
                println!("{:<12} {:<12} {:>8} {:>9}  weights", "id", "name", "channels", "min_input");
                for i in infos {
                    println!(
                        "{:<12} {:<12} {:>8} {:>9}  {}",
                        i.id,
                        i.name,
                        i.feature_channels,
                        i.min_input,
                        i.pretrained_checksum.as_deref().unwrap_or("not cached")
                    );
                }
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.version {
        return print_version();
    }
    let file = load_file_config(cli.config.as_deref())?;
    let threads = cli.threads;
    match cli.command {
        None => Err(UsageError("a subcommand is required (see --help)".into()).into()),
        Some(Command::Ingest(a)) => {
            init_threads(threads.or(file.threads))?;
            cmd_ingest(a, &file)
        }
        Some(Command::Train(a)) => cmd_train(a, threads, &file),
        Some(Command::Evaluate(a)) => cmd_evaluate(a, threads, &file),
        Some(Command::Compare(a)) => cmd_compare(a),
        Some(Command::Backbones { action }) => cmd_backbones(action),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(e.downcast_ref::<BackboneError>(), Some(BackboneError::UnknownBackbone { .. }))
            || matches!(
                e.downcast_ref::<TrainError>(),
                Some(TrainError::InvalidConfig(_)) | Some(TrainError::Backbone(BackboneError::UnknownBackbone { .. }))
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if matches!(err.downcast_ref::<MetricsError>(), Some(MetricsError::ClassMismatch { .. })) {
                eprintln!("hint: the checkpoint was trained on a different class set");
            }
            ExitCode::from(if is_usage(&err) { 2 } else { 1 })
        }
    }
}
