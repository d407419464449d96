//! Experiment protocols, the RMSE metric and report emission.
//!
//! An experiment generates one dataset, splits it once, and trains one
//! model per cell: every combination of preprocessing mode, ladder depth and
//! interference-elimination flag. Cells are independent and may run on
//! several threads; results do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::PowerMode;
use crate::dataset::{
    generate_dataset, split, Dataset, DatasetError, GenerationConfig, Sample, ScenarioTag, SplitMode, SplitPart,
    SplitRatios,
};
use crate::image::ImageTensor;
use crate::nn::{train, write_loss_curve, EpochLoss, ModelConfig, NnError, Split, TrainConfig, LADDER_DEPTHS};
use crate::scene::{Condition, ScenarioConfig};
use crate::vision::{process_image, resize, VisionConfig, VisionMode};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_SAMPLE_FILE: &str = "per_sample.csv";
pub const REPORT_FILE: &str = "report.json";

/// Names of the built-in experiments, in protocol order.
pub const BUILTIN_NAMES: [&str; 5] =
    ["self-validation", "day-night", "scenario-cross", "network-scales", "interference-elimination"];

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("unknown experiment `{0}` (built-in: {names})", names = BUILTIN_NAMES.join(", "))]
    UnknownExperiment(String),
    #[error("spec file {path}: {message}")]
    SpecFile { path: String, message: String },
    #[error("metric: {0}")]
    Metric(String),
    #[error("dataset stage: {0}")]
    Dataset(#[from] DatasetError),
    #[error("training stage ({cell}): {source}")]
    Training { cell: String, source: NnError },
    #[error("report stage: {path}: {message}")]
    Report { path: String, message: String },
}

/// Root mean square error between predictions and truths, in dB.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64, ExperimentError> {
    if predictions.is_empty() {
        return Err(ExperimentError::Metric("rmse of an empty set".into()));
    }
    if predictions.len() != truths.len() {
        return Err(ExperimentError::Metric(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    let mse = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / predictions.len() as f64;
    Ok(mse.sqrt())
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub description: String,
    pub scenarios: Vec<ScenarioConfig>,
    pub generation: GenerationConfig,
    pub modes: Vec<VisionMode>,
    /// Interference-elimination settings to compare; `true` highlights the target only.
    pub target_only: Vec<bool>,
    pub split: SplitMode,
    pub ratios: SplitRatios,
    pub split_seed: u64,
    /// Network input size; processed images are resized to it.
    pub input_width: usize,
    pub input_height: usize,
    pub depths: Vec<usize>,
    pub model_seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            description: String::new(),
            scenarios: vec![ScenarioConfig::default()],
            generation: GenerationConfig::default(),
            modes: VisionMode::ALL.to_vec(),
            target_only: vec![false],
            split: SplitMode::PooledRandom,
            ratios: SplitRatios::default(),
            split_seed: 0,
            input_width: 64,
            input_height: 64,
            depths: vec![10],
            model_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(format!("{}: {m}", self.name)));
        if self.modes.is_empty() {
            return bad("at least one preprocessing mode is required".into());
        }
        if self.target_only.is_empty() {
            return bad("at least one target_only setting is required".into());
        }
        if self.depths.is_empty() {
            return bad("at least one ladder depth is required".into());
        }
        if let Some(d) = self.depths.iter().find(|d| !LADDER_DEPTHS.contains(d)) {
            return bad(format!("depth {d} is not in the ladder {LADDER_DEPTHS:?}"));
        }
        if self.scenarios.is_empty() {
            return bad("at least one scenario is required".into());
        }
        if self.input_width == 0 || self.input_height == 0 {
            return bad("input size must be positive".into());
        }
        for s in &self.scenarios {
            s.validate()
                .map_err(|e| ExperimentError::InvalidSpec(format!("{}: street {}: {e}", self.name, s.street_id)))?;
        }
        let mut tags: Vec<ScenarioTag> = self.scenarios.iter().map(ScenarioTag::of).collect();
        tags.sort();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return bad("scenario tags (street, condition) must be unique".into());
        }
        if let SplitMode::ByScenario { test } = &self.split {
            if test.is_empty() {
                return bad("by-scenario split needs at least one test scenario".into());
            }
            if let Some(t) = test.iter().find(|t| !tags.contains(t)) {
                return bad(format!("test scenario {t} is not generated"));
            }
        }
        self.ratios.validate()?;
        self.generation.validate()?;
        self.train.validate().map_err(|e| ExperimentError::InvalidSpec(format!("{}: {e}", self.name)))
    }

    /// Reads a spec from TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let err = |message: String| ExperimentError::SpecFile { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let spec: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec is always representable")
    }

    /// Same spec limited to the given cells.
    pub fn restricted(&self, modes: &[VisionMode], depths: &[usize], target_only: &[bool]) -> Self {
        Self {
            modes: self.modes.iter().copied().filter(|m| modes.contains(m)).collect(),
            depths: self.depths.iter().copied().filter(|d| depths.contains(d)).collect(),
            target_only: self.target_only.iter().copied().filter(|t| target_only.contains(t)).collect(),
            ..self.clone()
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &mode in &self.modes {
            for &depth in &self.depths {
                for &target_only in &self.target_only {
                    cells.push(Cell { mode, depth, target_only });
                }
            }
        }
        cells
    }
}

/// Snapshots per built-in scenario (125 s at 8 Hz).
const BUILTIN_DURATION_S: f64 = 125.0;

fn builtin_scenario(street: u32, condition: Condition) -> ScenarioConfig {
    ScenarioConfig {
        duration_s: BUILTIN_DURATION_S,
        power_mode: PowerMode::Incoherent,
        ..ScenarioConfig::street(street, condition)
    }
}

fn builtin_base(name: &str, description: &str, scenarios: Vec<ScenarioConfig>) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        description: description.into(),
        scenarios,
        split_seed: 11,
        model_seed: 1,
        train: TrainConfig { epochs: 20, seed: 1, ..TrainConfig::default() },
        ..ExperimentSpec::default()
    }
}

fn day_streets() -> Vec<ScenarioConfig> {
    (1..=3).map(|s| builtin_scenario(s, Condition::Day)).collect()
}

/// Desk-scale versions of the five experiment protocols.
pub fn builtin_specs() -> Vec<ExperimentSpec> {
    let day_night_scenarios: Vec<ScenarioConfig> = [Condition::Day, Condition::Night]
        .into_iter()
        .flat_map(|c| (1..=3).map(move |s| builtin_scenario(s, c)))
        .collect();
    vec![
        builtin_base(
            "self-validation",
            "Three day streets pooled and split 80/10/10 at random; one depth-10 model per preprocessing mode.",
            day_streets(),
        ),
        ExperimentSpec {
            split: SplitMode::ByScenario { test: (1..=3).map(|s| ScenarioTag::new(s, Condition::Night)).collect() },
            ..builtin_base(
                "day-night",
                "Train and validate on day renders of three streets, test on night renders of the same streets.",
                day_night_scenarios,
            )
        },
        ExperimentSpec {
            split: SplitMode::ByScenario { test: vec![ScenarioTag::new(3, Condition::Day)] },
            ..builtin_base("scenario-cross", "Train and validate on streets 1 and 2, test on the unseen street 3.", day_streets())
        },
        ExperimentSpec {
            modes: vec![VisionMode::Segmentation],
            depths: LADDER_DEPTHS.to_vec(),
            ..builtin_base("network-scales", "Segmentation inputs on the self-validation data across the whole depth ladder.", day_streets())
        },
        ExperimentSpec {
            target_only: vec![false, true],
            ..builtin_base(
                "interference-elimination",
                "Interferer arrival rate raised fourfold; every mode with all objects highlighted and with the target only.",
                day_streets()
                    .into_iter()
                    .map(|s| ScenarioConfig { interferer_rate_per_min: 4.0 * s.interferer_rate_per_min, ..s })
                    .collect(),
            )
        },
    ]
}

pub fn builtin_spec(name: &str) -> Result<ExperimentSpec, ExperimentError> {
    builtin_specs()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| ExperimentError::UnknownExperiment(name.to_string()))
}

/// A built-in name or a path to a spec file.
pub fn resolve_spec(name_or_path: &str) -> Result<ExperimentSpec, ExperimentError> {
    if BUILTIN_NAMES.contains(&name_or_path) {
        return builtin_spec(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        ExperimentSpec::from_file(path)
    } else {
        Err(ExperimentError::UnknownExperiment(name_or_path.to_string()))
    }
}

/// One trained model of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub mode: VisionMode,
    pub depth: usize,
    pub target_only: bool,
}

impl Cell {
    pub fn model_name(&self) -> String {
        format!("depth{}", self.depth)
    }

    /// File-name stem, e.g. `segmentation_depth10_all`.
    pub fn slug(&self) -> String {
        format!("{}_{}_{}", self.mode.name(), self.model_name(), if self.target_only { "target" } else { "all" })
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: u32,
    pub scenario: ScenarioTag,
    pub truth_db: f64,
    pub prediction_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub rmse_db: f64,
    /// RMSE of always predicting the training-label mean.
    pub baseline_rmse_db: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochLoss>,
    pub records: Vec<PredictionRecord>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub spec: ExperimentSpec,
    pub sample_count: usize,
    pub split_counts: BTreeMap<SplitPart, usize>,
    pub results: Vec<CellResult>,
    pub wall_clock_seconds: f64,
}

impl Report {
    pub fn result(&self, cell: Cell) -> Option<&CellResult> {
        self.results.iter().find(|r| r.cell == cell)
    }
}

/// Network input for one sample: preprocess, then resize.
pub fn network_input(sample: &Sample, vision: &VisionConfig, width: usize, height: usize) -> ImageTensor {
    let processed = process_image(&sample.original, &sample.annotations, vision, sample.sample_id as u64);
    resize(&processed.tensor, width, height)
}

/// Network inputs and labels of one split.
#[derive(Debug, Clone, Default)]
pub struct PreparedSplit {
    pub ids: Vec<u32>,
    pub tags: Vec<ScenarioTag>,
    pub images: Vec<ImageTensor>,
    pub labels: Vec<f64>,
}

impl PreparedSplit {
    pub fn as_split(&self) -> Split<'_> {
        Split { images: &self.images, labels: &self.labels }
    }
}

/// Prepares train, validation and test inputs for one preprocessing setting.
pub fn prepare_splits(
    dataset: &Dataset,
    parts: &crate::dataset::SplitAssignment,
    vision: &VisionConfig,
    width: usize,
    height: usize,
) -> BTreeMap<SplitPart, PreparedSplit> {
    let mut out: BTreeMap<SplitPart, PreparedSplit> =
        SplitPart::ALL.into_iter().map(|p| (p, PreparedSplit::default())).collect();
    for s in &dataset.samples {
        let Some(part) = parts.part_of(s.sample_id) else { continue };
        let split = out.get_mut(&part).expect("every part present");
        split.ids.push(s.sample_id);
        split.tags.push(s.scenario);
        split.images.push(network_input(s, vision, width, height));
        split.labels.push(s.label.received_power_db);
    }
    out
}

/// Runs every cell of `spec`, using up to `threads` threads for data
/// generation and cell training.
pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<Report, ExperimentError> {
    spec.validate()?;
    let started = Instant::now();
    let dataset = generate_dataset(&spec.scenarios, &spec.generation, threads)?;
    let assignment = split(&dataset.samples, spec.ratios, spec.split_seed, &spec.split)?;

    let mut prepared = BTreeMap::new();
    for &mode in &spec.modes {
        for &target_only in &spec.target_only {
            let vision = VisionConfig { mode, target_only, ..spec.generation.vision(mode) };
            prepared.insert(
                (mode, target_only),
                prepare_splits(&dataset, &assignment, &vision, spec.input_width, spec.input_height),
            );
        }
    }

    let cells = spec.cells();
    let slots: Vec<Mutex<Option<Result<CellResult, ExperimentError>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let cell = cells[i];
                let r = run_cell(spec, cell, &prepared[&(cell.mode, cell.target_only)]);
                *slots[i].lock().expect("no panics while held") = Some(r);
            });
        }
    });
    let results = slots
        .into_iter()
        .map(|s| s.into_inner().expect("no panics while held").expect("every cell ran"))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Report {
        spec: spec.clone(),
        sample_count: dataset.len(),
        split_counts: SplitPart::ALL.into_iter().map(|p| (p, assignment.count(p))).collect(),
        results,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

fn run_cell(
    spec: &ExperimentSpec,
    cell: Cell,
    splits: &BTreeMap<SplitPart, PreparedSplit>,
) -> Result<CellResult, ExperimentError> {
    let started = Instant::now();
    let training = |source: NnError| ExperimentError::Training { cell: cell.slug(), source };
    let (tr, va, te) = (&splits[&SplitPart::Train], &splits[&SplitPart::Validation], &splits[&SplitPart::Test]);
    let model_cfg =
        ModelConfig::ladder(cell.depth, spec.input_width, spec.input_height, cell.mode.channels(), spec.model_seed)
            .map_err(training)?;
    let outcome = train(&model_cfg, tr.as_split(), va.as_split(), &spec.train).map_err(training)?;
    let refs: Vec<&ImageTensor> = te.images.iter().collect();
    let predictions = outcome.model.predict(&refs).map_err(training)?;
    let train_mean = tr.labels.iter().sum::<f64>() / tr.labels.len() as f64;
    let records: Vec<PredictionRecord> = te
        .ids
        .iter()
        .zip(&te.tags)
        .zip(te.labels.iter().zip(&predictions))
        .map(|((&sample_id, &scenario), (&truth_db, &prediction_db))| PredictionRecord {
            sample_id,
            scenario,
            truth_db,
            prediction_db,
        })
        .collect();
    Ok(CellResult {
        cell,
        rmse_db: rmse(&predictions, &te.labels)?,
        baseline_rmse_db: rmse(&vec![train_mean; te.labels.len()], &te.labels)?,
        best_epoch: outcome.best_epoch,
        curve: outcome.curve,
        records,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    mode: &'a str,
    model: String,
    interference_eliminated: bool,
    rmse_db: f64,
    baseline_rmse_db: f64,
    test_samples: usize,
    best_epoch: usize,
}

#[derive(Serialize)]
struct PerSampleRow<'a> {
    mode: &'a str,
    model: String,
    interference_eliminated: bool,
    sample_id: u32,
    street_id: u32,
    condition: &'a str,
    truth_db: f64,
    prediction_db: f64,
}

fn report_error(path: &Path, message: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Report { path: path.display().to_string(), message: message.to_string() }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| report_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| report_error(path, e))?;
    }
    w.flush().map_err(|e| report_error(path, e))
}

/// Writes `summary.csv`, `per_sample.csv`, `loss/<cell>.csv`,
/// `scatter_<mode>.svg` and `report.json` under `dir`. Output depends only
/// on the report, so re-emitting gives identical bytes.
pub fn emit_report(report: &Report, dir: &Path) -> Result<(), ExperimentError> {
    let loss_dir = dir.join("loss");
    fs::create_dir_all(&loss_dir).map_err(|e| report_error(&loss_dir, e))?;

    write_csv(
        &dir.join(SUMMARY_FILE),
        report.results.iter().map(|r| SummaryRow {
            mode: r.cell.mode.name(),
            model: r.cell.model_name(),
            interference_eliminated: r.cell.target_only,
            rmse_db: r.rmse_db,
            baseline_rmse_db: r.baseline_rmse_db,
            test_samples: r.records.len(),
            best_epoch: r.best_epoch,
        }),
    )?;
    write_csv(
        &dir.join(PER_SAMPLE_FILE),
        report.results.iter().flat_map(|r| {
            r.records.iter().map(move |rec| PerSampleRow {
                mode: r.cell.mode.name(),
                model: r.cell.model_name(),
                interference_eliminated: r.cell.target_only,
                sample_id: rec.sample_id,
                street_id: rec.scenario.street_id,
                condition: rec.scenario.condition.name(),
                truth_db: rec.truth_db,
                prediction_db: rec.prediction_db,
            })
        }),
    )?;
    for r in &report.results {
        let path = loss_dir.join(format!("{}.csv", r.cell.slug()));
        write_loss_curve(&path, &r.curve).map_err(|e| report_error(&path, e))?;
    }
    for &mode in &report.spec.modes {
        let path = dir.join(format!("scatter_{}.svg", mode.name()));
        let results: Vec<&CellResult> = report.results.iter().filter(|r| r.cell.mode == mode).collect();
        fs::write(&path, scatter_svg(&format!("{}: {}", report.spec.name, mode.name()), &results))
            .map_err(|e| report_error(&path, e))?;
    }
    let path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(report).map_err(|e| report_error(&path, e))?;
    fs::write(&path, json).map_err(|e| report_error(&path, e))
}

pub fn read_report(path: &Path) -> Result<Report, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| report_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| report_error(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// Prediction-versus-truth scatter, one colour per cell, with the identity line.
pub fn scatter_svg(title: &str, results: &[&CellResult]) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 56.0;
    let values = results.iter().flat_map(|r| r.records.iter().flat_map(|p| [p.truth_db, p.prediction_db]));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { ((lo - 1.0).floor(), (hi + 1.0).ceil()) } else { (-1.0, 1.0) };
    let plot = SIZE - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + (v - lo) / (hi - lo) * plot;
    let sy = |v: f64| SIZE - MARGIN - (v - lo) / (hi - lo) * plot;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        SIZE / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        sx(lo),
        sy(lo),
        sx(hi),
        sy(hi)
    );
    for (v, label) in [(lo, lo), (hi, hi)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{label}</text>"#,
            sx(v),
            SIZE - MARGIN + 14.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{label}</text>"#,
            MARGIN - 4.0,
            sy(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">measured received power (dB)</text>"#,
        SIZE / 2.0,
        SIZE - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {0})">predicted received power (dB)</text>"#,
        SIZE / 2.0
    );
    for (k, r) in results.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.6" data-cell="{}">"#, r.cell.slug());
        for p in &r.records {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, sx(p.truth_db), sy(p.prediction_db));
        }
        let _ = writeln!(s, "</g>");
        let y = MARGIN + 14.0 + 14.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="8" height="8" fill="{color}"/>"#, MARGIN + 6.0, y - 8.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-size="10">{} (RMSE {:.3} dB)</text>"#,
            MARGIN + 18.0,
            xml_escape(&r.cell.slug()),
            r.rmse_db
        );
    }
    s.push_str("</svg>\n");
    s
}
