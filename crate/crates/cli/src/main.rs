//! `visionlink` command-line tool: generate datasets, render frames,
//! preprocess, train, evaluate and run experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use visionlink::dataset::{export_dataset, generate_dataset, import_dataset, split};
use visionlink::experiment::{
    builtin_specs, emit_report, network_input, read_report, resolve_spec, rmse, run_experiment, REPORT_FILE,
};
use visionlink::nn::{read_checkpoint, train, write_checkpoint, write_loss_curve, Split};
use visionlink::scene::label_snapshot;
use visionlink::vision::process_image;
use visionlink::{
    Condition, Dataset, GenerationConfig, ImageTensor, ModelConfig, PowerMode, Report, ScenarioConfig, SplitMode,
    SplitPart, SplitRatios, TrainConfig, VisionConfig, VisionMode,
};

#[derive(Parser)]
#[command(name = "visionlink", version, about = "Vision-aided mmWave V2I received power prediction lab")]
struct Cli {
    /// Seed override for the command's random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration file (scenario, training or experiment spec, by command).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data generation and experiment cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios and write a dataset directory.
    Generate(GenerateArgs),
    /// Render one snapshot with its annotations and label.
    Render(RenderArgs),
    /// Add preprocessed images to a dataset.
    Preprocess(PreprocessArgs),
    /// Train one model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a built-in experiment or a spec file and emit its report.
    Experiment(ExperimentArgs),
    /// Re-emit report files from a report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Built-in street presets to simulate (ignored with --config).
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    streets: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values = ["day"])]
    conditions: Vec<Condition>,
    /// Seconds simulated per scenario.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value = "incoherent")]
    power_mode: PowerMode,
    /// Preprocessed modes stored with each sample.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<VisionMode>,
    #[arg(long)]
    target_only: bool,
    /// Keep frames that do not show the target vehicle.
    #[arg(long)]
    keep_redundant: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, default_value_t = 1)]
    street: u32,
    #[arg(long, default_value = "day")]
    condition: Condition,
    /// Snapshot index within the scenario.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = visionlink::render::DEFAULT_RENDER_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = visionlink::render::DEFAULT_RENDER_HEIGHT)]
    height: usize,
    /// Also write these preprocessed versions.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<VisionMode>,
    #[arg(long)]
    target_only: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_values = ["bbox", "segmentation", "binary_mask"])]
    modes: Vec<VisionMode>,
    #[arg(long)]
    target_only: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "segmentation")]
    mode: VisionMode,
    /// Square network input size in pixels.
    #[arg(long, default_value_t = 64)]
    input_size: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    depth: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate only the test split drawn with the same seed as `train`.
    #[arg(long)]
    test_split: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Built-in experiment name or spec file (TOML or JSON).
    name: Option<String>,
    /// List built-in experiments and exit.
    #[arg(long)]
    list: bool,
    /// Print the resolved spec as TOML and exit.
    #[arg(long)]
    dump_spec: bool,
    /// Restrict to these modes.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<VisionMode>,
    /// Restrict to these ladder depths.
    #[arg(long, value_delimiter = ',')]
    depths: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Seconds simulated per scenario.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json file or the directory holding it.
    path: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { seed: cli.seed, config: cli.config, out: cli.out, threads: cli.threads.max(1) };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a).context("generate stage"),
        Command::Render(a) => render(&ctx, a).context("render stage"),
        Command::Preprocess(a) => preprocess(&ctx, a).context("preprocess stage"),
        Command::Train(a) => train_cmd(&ctx, a).context("train stage"),
        Command::Eval(a) => eval(&ctx, a).context("eval stage"),
        Command::Experiment(a) => experiment(&ctx, a).context("experiment stage"),
        Command::Report(a) => report(&ctx, a).context("report stage"),
    }
}

struct Ctx {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    threads: usize,
}

impl Ctx {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn scenario(ctx: &Ctx, street: u32, condition: Condition) -> Result<ScenarioConfig> {
    let mut cfg = match &ctx.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::street(street, condition),
    };
    if let Some(seed) = ctx.seed {
        cfg.seed = cfg.seed.wrapping_add(seed);
    }
    Ok(cfg)
}

fn generate(ctx: &Ctx, a: GenerateArgs) -> Result<()> {
    let mut configs = Vec::new();
    if ctx.config.is_some() {
        configs.push(scenario(ctx, 0, Condition::Day)?);
    } else {
        for &c in &a.conditions {
            for &s in &a.streets {
                configs.push(scenario(ctx, s, c)?);
            }
        }
    }
    for cfg in &mut configs {
        if let Some(d) = a.duration {
            cfg.duration_s = d;
        }
        if ctx.config.is_none() {
            cfg.power_mode = a.power_mode;
        }
    }
    let generation = GenerationConfig {
        modes: a.modes,
        target_only: a.target_only,
        filter_redundant: !a.keep_redundant,
        ..GenerationConfig::default()
    };
    let dataset = generate_dataset(&configs, &generation, ctx.threads)?;
    let out = ctx.out_or("dataset");
    export_dataset(&dataset, &out)?;
    println!("wrote {} samples from {} scenarios to {}", dataset.len(), configs.len(), out.display());
    Ok(())
}

fn render(ctx: &Ctx, a: RenderArgs) -> Result<()> {
    let mut cfg = scenario(ctx, a.street, a.condition)?;
    let rate = cfg.snapshot_rate_hz;
    cfg.duration_s = cfg.duration_s.max((a.index + 1) as f64 / rate);
    let snapshots = visionlink::scene::generate_scenario(&cfg)?;
    let snap = snapshots.get(a.index).with_context(|| format!("snapshot {} out of range", a.index))?;
    let (image, annotations) = visionlink::Renderer::new(&cfg).render(snap, a.width, a.height);
    let out = ctx.out_or(".");
    fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
    let stem = format!("street{}_{}_{:06}", cfg.street_id, cfg.condition.name(), a.index);
    image.write_netpbm(&out.join(format!("{stem}.ppm")))?;
    for mode in a.modes {
        let p = process_image(&image, &annotations, &VisionConfig::new(mode, a.target_only), a.index as u64);
        let ext = if p.tensor.channels() == 1 { "pgm" } else { "ppm" };
        p.tensor.write_netpbm(&out.join(format!("{stem}_{}.{ext}", mode.name())))?;
    }
    let label = label_snapshot(snap, &cfg)?;
    let meta = serde_json::json!({ "timestamp": snap.timestamp, "label": label, "annotations": annotations });
    let path = out.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&meta)?).with_context(|| path.display().to_string())?;
    println!("{}: {:.3} dB, {} annotated objects", stem, label.received_power_db, annotations.objects.len());
    Ok(())
}

fn load(dir: &Path) -> Result<Dataset> {
    import_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn preprocess(ctx: &Ctx, a: PreprocessArgs) -> Result<()> {
    let mut dataset = load(&a.dataset)?;
    dataset.target_only = a.target_only;
    for s in &mut dataset.samples {
        s.processed.clear();
        for &mode in &a.modes {
            let p =
                process_image(&s.original, &s.annotations, &VisionConfig::new(mode, a.target_only), s.sample_id as u64);
            s.processed.insert(mode, p.tensor);
        }
    }
    let out = ctx.out.clone().unwrap_or_else(|| a.dataset.clone());
    export_dataset(&dataset, &out)?;
    println!("preprocessed {} samples ({} modes) into {}", dataset.len(), a.modes.len(), out.display());
    Ok(())
}

/// Network input of one sample, preferring a stored preprocessed image.
fn input_of(dataset: &Dataset, s: &visionlink::Sample, mode: VisionMode, size: usize) -> ImageTensor {
    match s.processed.get(&mode) {
        Some(p) => visionlink::vision::resize(p, size, size),
        None => network_input(s, &VisionConfig::new(mode, dataset.target_only), size, size),
    }
}

fn inputs(dataset: &Dataset, ids: &[u32], args: &ModelArgs) -> (Vec<ImageTensor>, Vec<f64>) {
    let by_id: BTreeMap<u32, &visionlink::Sample> = dataset.samples.iter().map(|s| (s.sample_id, s)).collect();
    ids.iter()
        .map(|id| {
            let s = by_id[id];
            (input_of(dataset, s, args.mode, args.input_size), s.label.received_power_db)
        })
        .unzip()
}

fn split_seed(ctx: &Ctx) -> u64 {
    ctx.seed.unwrap_or(0)
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let dataset = load(&a.model.dataset)?;
    let assignment = split(&dataset.samples, SplitRatios::default(), split_seed(ctx), &SplitMode::PooledRandom)?;
    let mut cfg = match &ctx.config {
        Some(p) => toml::from_str::<TrainConfig>(&fs::read_to_string(p).with_context(|| p.display().to_string())?)
            .with_context(|| p.display().to_string())?,
        None => TrainConfig::default(),
    };
    cfg.seed = ctx.seed.unwrap_or(cfg.seed);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);

    let (tr_x, tr_y) = inputs(&dataset, &assignment.ids(SplitPart::Train), &a.model);
    let (va_x, va_y) = inputs(&dataset, &assignment.ids(SplitPart::Validation), &a.model);
    let (te_x, te_y) = inputs(&dataset, &assignment.ids(SplitPart::Test), &a.model);
    let model_cfg =
        ModelConfig::ladder(a.depth, a.model.input_size, a.model.input_size, a.model.mode.channels(), cfg.seed)?;
    let outcome = train(&model_cfg, Split::new(&tr_x, &tr_y)?, Split::new(&va_x, &va_y)?, &cfg)?;

    let out = ctx.out_or("model");
    fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
    write_checkpoint(&out.join("model.ckpt"), &outcome.model)?;
    write_loss_curve(&out.join("loss.csv"), &outcome.curve)?;
    let refs: Vec<&ImageTensor> = te_x.iter().collect();
    let preds = outcome.model.predict(&refs)?;
    let mean = tr_y.iter().sum::<f64>() / tr_y.len() as f64;
    println!(
        "depth {} {}: best epoch {}, test RMSE {:.3} dB (train-mean baseline {:.3} dB), checkpoint {}",
        a.depth,
        a.model.mode,
        outcome.best_epoch,
        rmse(&preds, &te_y)?,
        rmse(&vec![mean; te_y.len()], &te_y)?,
        out.join("model.ckpt").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow {
    sample_id: u32,
    truth_db: f64,
    prediction_db: f64,
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let dataset = load(&a.model.dataset)?;
    let model = read_checkpoint(&a.checkpoint)?;
    if model.config.input_channels != a.model.mode.channels() || model.config.input_width != a.model.input_size {
        bail!(
            "checkpoint expects {}x{}x{} inputs; {} at {} px gives {} channels",
            model.config.input_width,
            model.config.input_height,
            model.config.input_channels,
            a.model.mode,
            a.model.input_size,
            a.model.mode.channels()
        );
    }
    let ids: Vec<u32> = if a.test_split {
        split(&dataset.samples, SplitRatios::default(), split_seed(ctx), &SplitMode::PooledRandom)?.ids(SplitPart::Test)
    } else {
        dataset.samples.iter().map(|s| s.sample_id).collect()
    };
    let (x, y) = inputs(&dataset, &ids, &a.model);
    let refs: Vec<&ImageTensor> = x.iter().collect();
    let preds = model.predict(&refs)?;
    println!("{} samples, RMSE {:.4} dB", ids.len(), rmse(&preds, &y)?);
    if let Some(out) = &ctx.out {
        fs::create_dir_all(out).with_context(|| out.display().to_string())?;
        let path = out.join("predictions.csv");
        let mut w = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
        for ((&sample_id, &truth_db), &prediction_db) in ids.iter().zip(&y).zip(&preds) {
            w.serialize(PredictionRow { sample_id, truth_db, prediction_db })?;
        }
        w.flush()?;
    }
    Ok(())
}

fn experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<()> {
    if a.list {
        for s in builtin_specs() {
            println!("{:<26} {}", s.name, s.description);
        }
        return Ok(());
    }
    let mut spec = match (&a.name, &ctx.config) {
        (Some(name), _) => resolve_spec(name)?,
        (None, Some(path)) => visionlink::ExperimentSpec::from_file(path)?,
        (None, None) => bail!("give an experiment name, a spec file, or --config"),
    };
    if !a.modes.is_empty() || !a.depths.is_empty() {
        let modes = if a.modes.is_empty() { spec.modes.clone() } else { a.modes };
        let depths = if a.depths.is_empty() { spec.depths.clone() } else { a.depths };
        spec = spec.restricted(&modes, &depths, &spec.target_only.clone());
    }
    if let Some(seed) = ctx.seed {
        spec.split_seed = seed;
        spec.model_seed = seed;
        spec.train.seed = seed;
    }
    if let Some(e) = a.epochs {
        spec.train.epochs = e;
    }
    if let Some(d) = a.duration {
        for s in &mut spec.scenarios {
            s.duration_s = d;
        }
    }
    spec.validate()?;
    if a.dump_spec {
        print!("{}", spec.to_toml());
        return Ok(());
    }
    let report = run_experiment(&spec, ctx.threads)?;
    let out = ctx.out.clone().unwrap_or_else(|| PathBuf::from("reports").join(&spec.name));
    emit_report(&report, &out)?;
    print_summary(&report);
    println!("report written to {}", out.display());
    Ok(())
}

fn print_summary(report: &Report) {
    println!(
        "{}: {} samples (train {}, validation {}, test {}), {:.0} s",
        report.spec.name,
        report.sample_count,
        report.split_counts.get(&SplitPart::Train).unwrap_or(&0),
        report.split_counts.get(&SplitPart::Validation).unwrap_or(&0),
        report.split_counts.get(&SplitPart::Test).unwrap_or(&0),
        report.wall_clock_seconds
    );
    println!("{:<14} {:<8} {:<7} {:>10} {:>13}", "mode", "model", "target", "rmse_db", "baseline_db");
    for r in &report.results {
        println!(
            "{:<14} {:<8} {:<7} {:>10.4} {:>13.4}",
            r.cell.mode.name(),
            r.cell.model_name(),
            r.cell.target_only,
            r.rmse_db,
            r.baseline_rmse_db
        );
    }
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let path = if a.path.is_dir() { a.path.join(REPORT_FILE) } else { a.path.clone() };
    let report = read_report(&path)?;
    let out = ctx.out.clone().unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    emit_report(&report, &out)?;
    print_summary(&report);
    Ok(())
}
