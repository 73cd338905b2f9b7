use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leantta_core::bench::{
    evaluate_stream, profile_ops, train_reference_model, AblationDirection, Arch, ClusterSpec, EvalMode, EvalTarget,
    PatternSpec, RunReport, SweepGrid, TrainConfig,
};
use leantta_core::graph::replace_norm_layers;
use leantta_core::quant::{calibrate, plan_partial_fusion, quantize_model, CalibrationTable, FusionPolicy};
use leantta_core::shift::{apply_corruption, plan_stream, ShiftKind, ShiftSpec, StreamMode, StreamSpec};
use leantta_core::{derive_seed, AdaptConfig, DistanceMode, ModelGraph};
use log::{debug, info};

use crate::error::{CliError, Result};
use crate::format::{self, AnyModel};
use crate::parallel;
use crate::report::{self, ReportFormat};

#[derive(Debug, Parser)]
#[command(name = "leantta", version, about = "Stateless per-sample test-time adaptation of normalization layers")]
pub struct Cli {
    /// Base seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for sweep and ablation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log filter; the LEANTTA_LOG environment variable takes precedence.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Train a reference model and save it with running statistics.
    Train(TrainArgs),
    /// Apply one corruption to every sample of a dataset.
    Corrupt(CorruptArgs),
    /// Build a shifted test stream from a base dataset.
    #[command(subcommand)]
    Stream(StreamCommand),
    /// Record activation ranges for int8 quantization.
    Calibrate(CalibrateArgs),
    /// Fuse and quantize a model under a partial-fusion policy.
    Quantize(QuantizeArgs),
    /// Classify a stream sample by sample and write a report.
    Eval(EvalArgs),
    /// Grid search over the source weight and distance scaler.
    Sweep(SweepArgs),
    /// Accuracy as adaptation is removed from or added to norm layers.
    Ablate(AblateArgs),
    /// Count operations of one forward pass.
    Profile(ProfileArgs),
    /// Read a report back, verify its aggregates and optionally convert it.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    Clusters,
    Patterns,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Clusters)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Feature count (clusters).
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Distance of class centers from the origin (clusters).
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    /// Per-feature standard deviation (clusters).
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Image channels (patterns).
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Image side length (patterns).
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    /// Pixel noise standard deviation (patterns).
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Sample draw index; class centers depend only on --seed, so splits with
    /// different indices share the same classes.
    #[arg(long, default_value_t = 0)]
    pub split: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArchArg {
    MlpBn,
    TinyCnn,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ArchArg::MlpBn)]
    pub arch: ArchArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Running-statistics momentum m in run ← m·run + (1−m)·batch.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Fraction of the data held out for the reported accuracy.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Hidden width (32 for mlp-bn, 8 for tiny-cnn when omitted).
    #[arg(long)]
    pub width: Option<usize>,
    /// Number of normalized hidden blocks.
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub kind: ShiftKind,
    #[arg(long, default_value_t = 3)]
    pub severity: u8,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum StreamCommand {
    /// Every (kind, severity) cell, shuffled together.
    Abrupt(StreamArgs),
    /// Severity 1→5→1 per kind, kinds in order.
    Gradual(StreamArgs),
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated corruption kinds.
    #[arg(long, value_delimiter = ',', default_value = "mean-shift,scale-shift")]
    pub kinds: Vec<ShiftKind>,
    /// Samples per (kind, severity) cell.
    #[arg(long, default_value_t = 40)]
    pub per_cell: usize,
    /// Capacity of the producer queue.
    #[arg(long, default_value_t = 64)]
    pub queue: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batches: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// all | none | deep-half | explicit:<ids>
    #[arg(long, default_value = "deep-half")]
    pub fusion: FusionPolicy,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceArg {
    Raw,
    ChannelMean,
}

#[derive(Debug, Clone, Args)]
pub struct DistanceArgs {
    #[arg(long, value_enum, default_value_t = DistanceArg::Raw)]
    pub distance_mode: DistanceArg,
    /// Added to the source variance before inversion in the distance.
    #[arg(long, default_value_t = 1e-5)]
    pub eps_inv: f64,
    /// Variance epsilon for normalization (default: each layer's own).
    #[arg(long)]
    pub eps_norm: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AdaptArgs {
    /// Source weight τ in [0, 1]; 1 keeps the source statistics.
    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,
    /// Distance scaler λ in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    pub lambda: f64,
    #[command(flatten)]
    pub distance: DistanceArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Source,
    Adapt,
    Naive,
    RunningAvg,
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Adapt)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    /// Momentum of the running-average baseline.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Norm layers of a float model that adapt: "all" or comma-separated ids
    /// (default: the model's adaptive layers, or all when it has none).
    #[arg(long)]
    pub adapt_layers: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Record per-layer divergences for every sample.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// csv | jsonl (default: from the output extension).
    #[arg(long)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub distance: DistanceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    DropShallow,
    AddDeep,
    Both,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
    pub direction: DirectionArg,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Stream position of the sample to profile.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[command(flatten)]
    pub mode: ModeArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Write the report again to this path.
    #[arg(long)]
    pub convert: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<ReportFormat>,
}

impl DistanceArgs {
    fn config(&self, tau: f64, lambda: f64) -> Result<AdaptConfig> {
        let mut cfg = AdaptConfig::new(tau, lambda)?.with_distance_mode(match self.distance_mode {
            DistanceArg::Raw => DistanceMode::RawSum,
            DistanceArg::ChannelMean => DistanceMode::ChannelMean,
        });
        cfg.eps_inv = self.eps_inv;
        cfg.eps_norm = self.eps_norm;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl AdaptArgs {
    fn config(&self) -> Result<AdaptConfig> {
        self.distance.config(self.tau, self.lambda)
    }
}

impl ModeArgs {
    fn eval_mode(&self) -> Result<EvalMode> {
        Ok(match self.mode {
            ModeArg::Source => EvalMode::Source,
            ModeArg::Adapt => EvalMode::Adapt(self.adapt.config()?),
            ModeArg::Naive => EvalMode::NaiveReplace,
            ModeArg::RunningAvg => EvalMode::RunningAvg { momentum: self.momentum },
        })
    }

    /// Float model with the requested adaptive layers.
    fn prepare(&self, model: ModelGraph) -> Result<ModelGraph> {
        match self.adapt_layers.as_deref() {
            None if !model.adaptive_layer_ids().is_empty() => Ok(model),
            None | Some("all") => Ok(model.with_adaptive_set(&model.norm_layer_ids())?),
            Some(list) => {
                let ids = list
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad layer id {t:?} in --adapt-layers"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(model.with_adaptive_set(&ids)?)
            }
        }
    }
}

fn init_logging(level: &str) {
    let filter = std::env::var("LEANTTA_LOG").unwrap_or_else(|_| level.to_string());
    let _ = env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).try_init();
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli.log_level);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

fn resolved_meta(cli: &Cli) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("seed".into(), cli.seed.to_string());
    m.insert("threads".into(), cli.threads.map_or_else(|| "auto".into(), |t| t.to_string()));
    m.insert("config".into(), format!("{:?}", cli.command));
    m
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Corrupt(a) => corrupt(cli, a),
        Command::Stream(StreamCommand::Abrupt(a)) => stream(cli, a, StreamMode::Abrupt),
        Command::Stream(StreamCommand::Gradual(a)) => stream(cli, a, StreamMode::Gradual),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Quantize(a) => quantize(a),
        Command::Eval(a) => eval(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Ablate(a) => ablate(cli, a),
        Command::Profile(a) => profile(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let data = match a.kind {
        SynthKind::Clusters => ClusterSpec { classes: a.classes, dim: a.dim, separation: a.separation, spread: a.spread, seed: cli.seed }
            .sample(a.per_class, a.split)?,
        SynthKind::Patterns => {
            PatternSpec { classes: a.classes, channels: a.channels, size: a.size, noise: a.noise, seed: cli.seed }.sample(a.per_class, a.split)?
        }
    };
    let shape = data.sample_shape().map(<[usize]>::to_vec).unwrap_or_default();
    format::write_dataset(&a.out, &data, &shape, None)?;
    println!("wrote {} samples of shape {shape:?} to {}", data.len(), a.out.display());
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let file = format::read_dataset(&a.data)?;
    let mut arch = match a.arch {
        ArchArg::MlpBn => Arch::mlp_bn(),
        ArchArg::TinyCnn => Arch::tiny_cnn(),
    }
    .with_blocks(a.blocks);
    if let Some(w) = a.width {
        arch = arch.with_width(w);
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        momentum: a.momentum,
        seed: cli.seed,
        holdout: a.holdout,
        ..Default::default()
    };
    let start = Instant::now();
    let out = train_reference_model(arch, &file.data, &cfg)?;
    info!("training took {:.1} ms", start.elapsed().as_secs_f64() * 1e3);
    for (e, l) in out.losses.iter().enumerate() {
        debug!("epoch {e}: loss {l:.6}");
    }
    format::save_model(&a.out, &out.model)?;
    println!("{}", out.summary());
    Ok(())
}

fn corrupt(cli: &Cli, a: &CorruptArgs) -> Result<()> {
    let file = format::read_dataset(&a.input)?;
    let spec = ShiftSpec::new(a.kind, a.severity)?;
    let inputs = file
        .data
        .inputs
        .iter()
        .enumerate()
        .map(|(i, x)| apply_corruption(x, spec, derive_seed(cli.seed, i as u64)))
        .collect::<leantta_core::Result<Vec<_>>>()?;
    let data = leantta_core::shift::LabeledDataset::new(inputs, file.data.labels.clone(), file.data.num_classes)?;
    format::write_dataset(&a.out, &data, &file.sample_shape, file.annotations.as_deref())?;
    println!("wrote {} {} (severity {}) samples to {}", data.len(), a.kind, a.severity, a.out.display());
    Ok(())
}

fn stream(cli: &Cli, a: &StreamArgs, mode: StreamMode) -> Result<()> {
    let file = format::read_dataset(&a.input)?;
    let spec = StreamSpec { mode, per_cell: a.per_cell, kinds: a.kinds.clone(), seed: cli.seed };
    let plan = plan_stream(file.data.len(), &spec)?;
    let classes = file.data.num_classes;
    let (rx, producer) = parallel::spawn_stream_producer(Arc::new(file.data), plan, a.queue);
    let items = rx.iter().collect::<leantta_core::Result<Vec<_>>>();
    producer.join().map_err(|_| leantta_core::Error::Unsupported("stream producer panicked".into()))?;
    let items = items?;
    format::write_stream(&a.out, &items, classes, &file.sample_shape)?;
    println!("wrote {} stream samples to {}", items.len(), a.out.display());
    Ok(())
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let model = format::load_model(&a.model)?;
    let file = format::read_dataset(&a.data)?;
    let table = calibrate(&model, &file.data.inputs, a.batches, a.batch_size)?;
    if !table.degenerate_edges.is_empty() {
        log::warn!("degenerate activation ranges at edges {:?}; scale floored", table.degenerate_edges);
    }
    let json = serde_json::to_string_pretty(&table).map_err(|e| leantta_core::Error::Unsupported(e.to_string()))?;
    format::write_bytes(&a.out, json.as_bytes())?;
    println!("calibrated {} edges on {} samples in {} batches", table.activations.len(), table.samples, table.batches);
    Ok(())
}

fn read_calibration(path: &Path) -> Result<CalibrationTable> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        offset: 0,
        detail: format!("calibration table: {e}"),
    })
}

fn quantize(a: &QuantizeArgs) -> Result<()> {
    let model = format::load_model(&a.model)?;
    let calib = read_calibration(&a.calibration)?;
    let plan = plan_partial_fusion(&model, &a.fusion)?;
    let line = format!(
        "fusion {}: {} of {} norm layers unfused {:?}, fused {:?}",
        a.fusion,
        plan.unfused.len(),
        plan.unfused.len() + plan.fused.len(),
        plan.unfused,
        plan.fused
    );
    info!("{line}");
    let q = quantize_model(&model, &plan, &calib)?;
    format::save_quantized(&a.out, &q)?;
    println!("{line}");
    Ok(())
}

enum Loaded {
    Float(ModelGraph),
    Quantized(leantta_core::quant::QuantizedModel),
}

impl Loaded {
    fn target(&self) -> EvalTarget<'_> {
        match self {
            Loaded::Float(m) => EvalTarget::Float(m),
            Loaded::Quantized(q) => EvalTarget::Quantized(q),
        }
    }
}

fn load_target(path: &Path, mode: &ModeArgs) -> Result<Loaded> {
    Ok(match format::load_any(path)? {
        AnyModel::Float(m) => Loaded::Float(if mode.mode == ModeArg::Source { m } else { mode.prepare(m)? }),
        AnyModel::Quantized(q) => Loaded::Quantized(q),
    })
}

fn summary(r: &RunReport) -> String {
    format!(
        "accuracy={} weighted_f1={} samples={} errors={}",
        r.accuracy.map_or_else(|| "n/a".into(), |a| format!("{a:.6}")),
        r.weighted_f1.map_or_else(|| "n/a".into(), |a| format!("{a:.6}")),
        r.records.len(),
        r.error_count()
    )
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let model = load_target(&a.model, &a.mode)?;
    let (items, _) = format::read_stream(&a.stream)?;
    let start = Instant::now();
    let mut report = evaluate_stream(model.target(), &items, a.mode.eval_mode()?, a.trace)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    report.wall_time_ms = Some(ms);
    info!("evaluated {} samples in {ms:.1} ms", items.len());
    report.meta.extend(resolved_meta(cli));
    let fmt = a.format.unwrap_or_else(|| ReportFormat::from_path(&a.out));
    report::write_report(&a.out, &report, fmt)?;
    println!("{}", summary(&report));
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let model = format::load_model(&a.model)?;
    let model = if model.adaptive_layer_ids().is_empty() { replace_norm_layers(&model, None)? } else { model };
    let (items, _) = format::read_stream(&a.stream)?;
    let grid = SweepGrid::new(&a.taus, &a.lambdas, a.distance.config(0.9, 0.9)?)?;
    let start = Instant::now();
    let result = parallel::parallel_sweep(EvalTarget::Float(&model), &items, &grid, cli.threads)?;
    info!("swept {} cells in {:.1} ms", grid.len(), start.elapsed().as_secs_f64() * 1e3);
    format::write_bytes(&a.out, report::encode_sweep_csv(&result, &resolved_meta(cli)).as_bytes())?;
    let (t, l, acc) = result.best();
    println!("cells={} source_accuracy={:.6} best tau={t} lambda={l} accuracy={acc:.6}", grid.len(), result.source_accuracy);
    Ok(())
}

fn ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let model = format::load_model(&a.model)?;
    let (items, _) = format::read_stream(&a.stream)?;
    let directions = match a.direction {
        DirectionArg::DropShallow => vec![AblationDirection::DropShallowFirst],
        DirectionArg::AddDeep => vec![AblationDirection::AddDeepProgressively],
        DirectionArg::Both => vec![AblationDirection::DropShallowFirst, AblationDirection::AddDeepProgressively],
    };
    let curves = parallel::parallel_ablation(&model, &items, &directions, a.adapt.config()?, cli.threads)?;
    format::write_bytes(&a.out, report::encode_ablation_csv(&curves, &resolved_meta(cli)).as_bytes())?;
    for c in &curves {
        let acc: Vec<String> = c.points.iter().map(|p| format!("{:.4}", p.accuracy)).collect();
        println!("{}: {}", c.direction, acc.join(" "));
    }
    Ok(())
}

fn profile(a: &ProfileArgs) -> Result<()> {
    let model = load_target(&a.model, &a.mode)?;
    let (items, _) = format::read_stream(&a.stream)?;
    let item = items
        .get(a.index)
        .ok_or_else(|| CliError::Usage(format!("--index {} outside a stream of {} samples", a.index, items.len())))?;
    let ops = profile_ops(model.target(), &item.input, a.mode.eval_mode()?)?;
    println!("float_mults={} int_mults={} dequant={} requant={}", ops.float_mults, ops.int_mults, ops.dequant, ops.requant);
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let r = report::read_report(&a.input)?;
    println!("{}", summary(&r));
    if let Some(out) = &a.convert {
        let fmt = a.format.unwrap_or_else(|| ReportFormat::from_path(out));
        report::write_report(out, &r, fmt)?;
    }
    Ok(())
}
