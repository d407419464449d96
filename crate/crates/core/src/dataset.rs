//! Paired image and channel-label datasets: generation, timestamp
//! synchronization, filtering, splitting and on-disk storage.
//!
//! A dataset directory holds `manifest.json`, a `labels.csv` mirror of the
//! labels, and netpbm images under `images/<mode>/NNNNNN.{ppm,pgm}` where
//! `<mode>` is `original`, `bbox`, `segmentation` or `binary_mask`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelLabel;
use crate::image::ImageTensor;
use crate::render::{AnnotationSet, Renderer, DEFAULT_RENDER_HEIGHT, DEFAULT_RENDER_WIDTH};
use crate::scene::{generate_scenario, label_snapshot, Condition, ScenarioConfig, SceneError};
use crate::vision::{
    process_image, DetectorNoiseModel, VisionConfig, VisionError, VisionMode, DEFAULT_MASK_HEIGHT, DEFAULT_MASK_WIDTH,
};

/// Half the 8 Hz label period.
pub const DEFAULT_SYNC_TOLERANCE_S: f64 = 0.0625;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FORMAT: &str = "visionlink-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{stream} timestamps are not sorted (index {index})")]
    Unsorted { stream: &'static str, index: usize },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("{0} split would receive no samples")]
    EmptySplit(SplitPart),
    #[error("duplicate sample id {0}")]
    DuplicateId(u32),
    #[error("sample {0} has a non-finite label")]
    NonFiniteLabel(u32),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Vision(#[from] VisionError),
}

fn file_error(path: &Path, message: impl fmt::Display) -> DatasetError {
    DatasetError::File { path: path.display().to_string(), message: message.to_string() }
}

/// Street and lighting condition a sample was recorded under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioTag {
    pub street_id: u32,
    pub condition: Condition,
}

impl ScenarioTag {
    pub fn new(street_id: u32, condition: Condition) -> Self {
        Self { street_id, condition }
    }

    pub fn of(config: &ScenarioConfig) -> Self {
        Self::new(config.street_id, config.condition)
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "street{}-{}", self.street_id, self.condition.name())
    }
}

/// One image paired with its channel label. `processed` holds any
/// preprocessed versions of `original`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: u32,
    pub timestamp: f64,
    pub scenario: ScenarioTag,
    pub label: ChannelLabel,
    pub annotations: AnnotationSet,
    pub original: ImageTensor,
    pub processed: BTreeMap<VisionMode, ImageTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Whether processed images highlight the target vehicle only.
    pub target_only: bool,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tags(&self) -> BTreeSet<ScenarioTag> {
        self.samples.iter().map(|s| s.scenario).collect()
    }

    /// Checks id uniqueness and label finiteness.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(s.sample_id) {
                return Err(DatasetError::DuplicateId(s.sample_id));
            }
            if !s.label.is_finite() || !s.timestamp.is_finite() {
                return Err(DatasetError::NonFiniteLabel(s.sample_id));
            }
        }
        Ok(())
    }
}

/// An image matched to a label by [`synchronize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncPair {
    pub image_index: usize,
    pub label_index: usize,
    pub image_time: f64,
    pub label_time: f64,
}

fn check_sorted(times: &[f64], stream: &'static str) -> Result<(), DatasetError> {
    for (i, t) in times.iter().enumerate() {
        if !t.is_finite() || (i > 0 && *t < times[i - 1]) {
            return Err(DatasetError::Unsorted { stream, index: i });
        }
    }
    Ok(())
}

/// Pairs each image with the nearest unused label within `tolerance_s`.
/// Equidistant labels resolve to the earlier one; unmatched images are dropped.
pub fn synchronize(image_times: &[f64], label_times: &[f64], tolerance_s: f64) -> Result<Vec<SyncPair>, DatasetError> {
    check_sorted(image_times, "image")?;
    check_sorted(label_times, "label")?;
    let mut pairs = Vec::new();
    let mut first_free = 0;
    for (image_index, &t) in image_times.iter().enumerate() {
        let free = &label_times[first_free..];
        let pos = free.partition_point(|&l| l < t);
        let candidates = [pos.checked_sub(1), (pos < free.len()).then_some(pos)];
        let best = candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (free[a] - t).abs().total_cmp(&(free[b] - t).abs()).then(a.cmp(&b)));
        if let Some(k) = best.filter(|&k| (free[k] - t).abs() <= tolerance_s) {
            let label_index = first_free + k;
            pairs.push(SyncPair { image_index, label_index, image_time: t, label_time: label_times[label_index] });
            first_free = label_index + 1;
        }
    }
    Ok(pairs)
}

/// Drops samples whose annotations contain no target vehicle; order is kept.
pub fn filter_redundant(samples: Vec<Sample>) -> Vec<Sample> {
    samples.into_iter().filter(|s| s.annotations.has_target()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl SplitPart {
    pub const ALL: [SplitPart; 3] = [SplitPart::Train, SplitPart::Validation, SplitPart::Test];

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for SplitPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(DatasetError::InvalidRatios(format!("{r:?} must all be positive")));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidRatios(format!("{r:?} must sum to 1")));
        }
        Ok(())
    }
}

/// How samples are divided among train, validation and test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitMode {
    /// All samples shuffled together and cut by ratio.
    PooledRandom,
    /// Samples of the listed scenarios form the test split; the rest are
    /// shuffled into train and validation by the train:validation ratio.
    ByScenario { test: Vec<ScenarioTag> },
}

/// Partition of sample ids into the three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub parts: BTreeMap<u32, SplitPart>,
}

impl SplitAssignment {
    pub fn ids(&self, part: SplitPart) -> Vec<u32> {
        self.parts.iter().filter(|(_, p)| **p == part).map(|(id, _)| *id).collect()
    }

    pub fn count(&self, part: SplitPart) -> usize {
        self.parts.values().filter(|p| **p == part).count()
    }

    pub fn part_of(&self, id: u32) -> Option<SplitPart> {
        self.parts.get(&id).copied()
    }
}

/// Floor of each share, then leftover units to the largest fractional
/// parts (lower index first on ties).
pub fn allocate_counts(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Splits `(sample_id, scenario)` entries. The result does not depend on
/// entry order.
pub fn split_entries(
    entries: &[(u32, ScenarioTag)],
    ratios: SplitRatios,
    seed: u64,
    mode: &SplitMode,
) -> Result<SplitAssignment, DatasetError> {
    ratios.validate()?;
    let mut ids: Vec<u32> = entries.iter().map(|e| e.0).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(DatasetError::DuplicateId(w[0]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = BTreeMap::new();
    match mode {
        SplitMode::PooledRandom => {
            ids.shuffle(&mut rng);
            let c = allocate_counts(ids.len(), &[ratios.train, ratios.validation, ratios.test]);
            for (k, id) in ids.into_iter().enumerate() {
                let part = if k < c[0] {
                    SplitPart::Train
                } else if k < c[0] + c[1] {
                    SplitPart::Validation
                } else {
                    SplitPart::Test
                };
                parts.insert(id, part);
            }
        }
        SplitMode::ByScenario { test } => {
            let test: BTreeSet<ScenarioTag> = test.iter().copied().collect();
            let mut rest: Vec<u32> = Vec::new();
            for &(id, tag) in entries {
                if test.contains(&tag) {
                    parts.insert(id, SplitPart::Test);
                } else {
                    rest.push(id);
                }
            }
            rest.sort_unstable();
            rest.shuffle(&mut rng);
            let c = allocate_counts(rest.len(), &[ratios.train, ratios.validation]);
            for (k, id) in rest.into_iter().enumerate() {
                parts.insert(id, if k < c[0] { SplitPart::Train } else { SplitPart::Validation });
            }
        }
    }
    let assignment = SplitAssignment { parts };
    for part in SplitPart::ALL {
        if assignment.count(part) == 0 {
            return Err(DatasetError::EmptySplit(part));
        }
    }
    Ok(assignment)
}

pub fn split(
    samples: &[Sample],
    ratios: SplitRatios,
    seed: u64,
    mode: &SplitMode,
) -> Result<SplitAssignment, DatasetError> {
    let entries: Vec<(u32, ScenarioTag)> = samples.iter().map(|s| (s.sample_id, s.scenario)).collect();
    split_entries(&entries, ratios, seed, mode)
}

/// Settings for turning scenarios into a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub render_width: usize,
    pub render_height: usize,
    /// Standard deviation of camera timestamp error; clamped to
    /// `sync_tolerance_s` so every frame keeps its label.
    pub camera_jitter_s: f64,
    pub sync_tolerance_s: f64,
    /// Drop frames that do not show the target vehicle.
    pub filter_redundant: bool,
    /// Preprocessed versions stored with each sample.
    pub modes: Vec<VisionMode>,
    pub target_only: bool,
    pub mask_width: usize,
    pub mask_height: usize,
    pub noise: Option<DetectorNoiseModel>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            render_width: DEFAULT_RENDER_WIDTH,
            render_height: DEFAULT_RENDER_HEIGHT,
            camera_jitter_s: 0.01,
            sync_tolerance_s: DEFAULT_SYNC_TOLERANCE_S,
            filter_redundant: true,
            modes: Vec::new(),
            target_only: false,
            mask_width: DEFAULT_MASK_WIDTH,
            mask_height: DEFAULT_MASK_HEIGHT,
            noise: None,
        }
    }
}

impl GenerationConfig {
    pub fn vision(&self, mode: VisionMode) -> VisionConfig {
        VisionConfig {
            mode,
            target_only: self.target_only,
            mask_width: self.mask_width,
            mask_height: self.mask_height,
            noise: self.noise,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.render_width == 0 || self.render_height == 0 {
            return Err(DatasetError::InvalidConfig("render size must be positive".into()));
        }
        if !(self.camera_jitter_s >= 0.0 && self.sync_tolerance_s >= 0.0) {
            return Err(DatasetError::InvalidConfig("jitter and tolerance must be non-negative".into()));
        }
        self.vision(VisionMode::Segmentation).validate()?;
        Ok(())
    }
}

/// Noise stream for one snapshot of one scenario.
pub fn image_stream(config: &ScenarioConfig, snapshot_index: usize) -> u64 {
    config.seed.wrapping_mul(1_000_003).wrapping_add(snapshot_index as u64)
}

/// Samples of one scenario with ids starting at zero. Camera timestamps
/// carry seeded jitter and are matched to labels by [`synchronize`].
pub fn generate_samples(config: &ScenarioConfig, generation: &GenerationConfig) -> Result<Vec<Sample>, DatasetError> {
    generation.validate()?;
    let snapshots = generate_scenario(config)?;
    let renderer = Renderer::new(config);
    let tag = ScenarioTag::of(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xca3e_7a5e);
    let bound = generation.sync_tolerance_s.min(0.5 / config.snapshot_rate_hz) * 0.999;
    let mut image_times = Vec::with_capacity(snapshots.len());
    let mut last = f64::NEG_INFINITY;
    for s in &snapshots {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let t = (s.timestamp + (z * generation.camera_jitter_s).clamp(-bound, bound)).max(last);
        image_times.push(t);
        last = t;
    }
    let label_times: Vec<f64> = snapshots.iter().map(|s| s.timestamp).collect();
    let pairs = synchronize(&image_times, &label_times, generation.sync_tolerance_s)?;

    let mut samples = Vec::with_capacity(pairs.len());
    for p in pairs {
        let snapshot = &snapshots[p.image_index];
        let label = label_snapshot(&snapshots[p.label_index], config)?;
        let (original, annotations) = renderer.render(snapshot, generation.render_width, generation.render_height);
        let processed = generation
            .modes
            .iter()
            .map(|&m| {
                let out =
                    process_image(&original, &annotations, &generation.vision(m), image_stream(config, snapshot.index));
                (m, out.tensor)
            })
            .collect();
        samples.push(Sample {
            sample_id: 0,
            timestamp: p.image_time,
            scenario: tag,
            label,
            annotations,
            original,
            processed,
        });
    }
    let mut samples = if generation.filter_redundant { filter_redundant(samples) } else { samples };
    for (i, s) in samples.iter_mut().enumerate() {
        s.sample_id = i as u32;
    }
    Ok(samples)
}

/// Dataset over several scenarios, numbered consecutively in config order.
/// Scenarios are generated on up to `threads` worker threads.
pub fn generate_dataset(
    configs: &[ScenarioConfig],
    generation: &GenerationConfig,
    threads: usize,
) -> Result<Dataset, DatasetError> {
    let results: Vec<Mutex<Option<Result<Vec<Sample>, DatasetError>>>> =
        configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let r = generate_samples(&configs[i], generation);
                *results[i].lock().expect("no panics while held") = Some(r);
            });
        }
    });
    let mut samples = Vec::new();
    for slot in results {
        let part = slot.into_inner().expect("no panics while held").expect("every scenario ran")?;
        samples.extend(part);
    }
    for (i, s) in samples.iter_mut().enumerate() {
        s.sample_id = i as u32;
    }
    Ok(Dataset { target_only: generation.target_only, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSample {
    sample_id: u32,
    timestamp: f64,
    scenario: ScenarioTag,
    label: ChannelLabel,
    annotations: AnnotationSet,
    /// Image path per mode (`original` plus processed modes), relative to the dataset root.
    images: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    target_only: bool,
    samples: Vec<ManifestSample>,
}

const ORIGINAL_KEY: &str = "original";

fn image_path(key: &str, id: u32, channels: usize) -> String {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    format!("images/{key}/{id:06}.{ext}")
}

#[derive(Serialize)]
struct LabelRow {
    sample_id: u32,
    timestamp: f64,
    rx_power_db: f64,
    pl_db: f64,
    tau_rms_ns: f64,
    los_flag: u8,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|e| file_error(path, e))
}

/// Writes the dataset under `dir`, creating it if needed.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    dataset.validate()?;
    let mut keys: BTreeSet<String> = BTreeSet::from([ORIGINAL_KEY.to_string()]);
    keys.extend(dataset.samples.iter().flat_map(|s| s.processed.keys().map(|m| m.name().to_string())));
    for key in &keys {
        let d = dir.join("images").join(key);
        fs::create_dir_all(&d).map_err(|e| file_error(&d, e))?;
    }

    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        target_only: dataset.target_only,
        samples: Vec::with_capacity(dataset.len()),
    };
    for s in &dataset.samples {
        let mut images = BTreeMap::new();
        let all = std::iter::once((ORIGINAL_KEY, &s.original)).chain(s.processed.iter().map(|(m, t)| (m.name(), t)));
        for (key, tensor) in all {
            let rel = image_path(key, s.sample_id, tensor.channels());
            write_file(&dir.join(&rel), &tensor.to_netpbm())?;
            images.insert(key.to_string(), rel);
        }
        manifest.samples.push(ManifestSample {
            sample_id: s.sample_id,
            timestamp: s.timestamp,
            scenario: s.scenario,
            label: s.label,
            annotations: s.annotations.clone(),
            images,
        });
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| file_error(&manifest_path, e))?;
    write_file(&manifest_path, text.as_bytes())?;

    let labels_path = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| file_error(&labels_path, e))?;
    for s in &dataset.samples {
        w.serialize(LabelRow {
            sample_id: s.sample_id,
            timestamp: s.timestamp,
            rx_power_db: s.label.received_power_db,
            pl_db: s.label.path_loss_db,
            tau_rms_ns: s.label.rms_delay_spread_s * 1e9,
            los_flag: s.label.los_flag as u8,
        })
        .map_err(|e| file_error(&labels_path, e))?;
    }
    w.flush().map_err(|e| file_error(&labels_path, e))
}

fn read_image(root: &Path, rel: &str) -> Result<ImageTensor, DatasetError> {
    let path = root.join(rel);
    ImageTensor::read_netpbm(&path).map_err(|e| match e {
        crate::image::ImageError::Io { source, .. } => file_error(&path, source),
        other => file_error(&path, other),
    })
}

/// Reads a directory written by [`export_dataset`].
pub fn import_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| file_error(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| file_error(&manifest_path, e))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(file_error(
            &manifest_path,
            format!("unsupported format {} version {}", manifest.format, manifest.version),
        ));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for m in manifest.samples {
        let original_rel = m
            .images
            .get(ORIGINAL_KEY)
            .ok_or_else(|| file_error(&manifest_path, format!("sample {} has no original image", m.sample_id)))?;
        let original = read_image(dir, original_rel)?;
        let mut processed = BTreeMap::new();
        for (key, rel) in &m.images {
            if key == ORIGINAL_KEY {
                continue;
            }
            let mode: VisionMode =
                key.parse().map_err(|e| file_error(&manifest_path, format!("sample {}: {e}", m.sample_id)))?;
            processed.insert(mode, read_image(dir, rel)?);
        }
        samples.push(Sample {
            sample_id: m.sample_id,
            timestamp: m.timestamp,
            scenario: m.scenario,
            label: m.label,
            annotations: m.annotations,
            original,
            processed,
        });
    }
    let dataset = Dataset { target_only: manifest.target_only, samples };
    dataset.validate()?;
    Ok(dataset)
}

/// One user-supplied frame listed in an external manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalFrame {
    pub timestamp: f64,
    /// Netpbm image path, relative to the manifest.
    pub path: String,
    pub street_id: u32,
    #[serde(default)]
    pub condition: Condition,
    /// Detections for the frame; empty when absent.
    #[serde(default)]
    pub annotations: Option<AnnotationSet>,
}

/// Manifest describing recorded frames and a received-power log.
///
/// The power CSV needs `timestamp` and `rx_power_db` columns; `pl_db`
/// (default `-rx_power_db`), `tau_rms_ns` (default 0) and `los_flag`
/// (default 1) are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalManifest {
    pub frames: Vec<ExternalFrame>,
    pub power_csv: String,
    #[serde(default = "default_tolerance")]
    pub tolerance_s: f64,
    #[serde(default)]
    pub target_only: bool,
}

fn default_tolerance() -> f64 {
    DEFAULT_SYNC_TOLERANCE_S
}

#[derive(Deserialize)]
struct PowerRow {
    timestamp: f64,
    rx_power_db: f64,
    pl_db: Option<f64>,
    tau_rms_ns: Option<f64>,
    los_flag: Option<u8>,
}

/// Loads real recordings: frames are synchronized against the power log
/// and numbered in time order. Frames without a label in tolerance are dropped.
pub fn import_external(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| file_error(manifest_path, e))?;
    let manifest: ExternalManifest = serde_json::from_str(&text).map_err(|e| file_error(manifest_path, e))?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));

    let csv_path = root.join(&manifest.power_csv);
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| file_error(&csv_path, e))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<PowerRow>() {
        rows.push(row.map_err(|e| file_error(&csv_path, e))?);
    }
    let label_times: Vec<f64> = rows.iter().map(|r| r.timestamp).collect();
    let image_times: Vec<f64> = manifest.frames.iter().map(|f| f.timestamp).collect();
    let pairs =
        synchronize(&image_times, &label_times, manifest.tolerance_s).map_err(|e| file_error(manifest_path, e))?;

    let mut samples = Vec::with_capacity(pairs.len());
    for (id, p) in pairs.into_iter().enumerate() {
        let frame = &manifest.frames[p.image_index];
        let row = &rows[p.label_index];
        let original = read_image(&root, &frame.path)?;
        let annotations =
            frame.annotations.clone().unwrap_or_else(|| AnnotationSet::empty(original.width(), original.height()));
        samples.push(Sample {
            sample_id: id as u32,
            timestamp: frame.timestamp,
            scenario: ScenarioTag::new(frame.street_id, frame.condition),
            label: ChannelLabel {
                received_power_db: row.rx_power_db,
                path_loss_db: row.pl_db.unwrap_or(-row.rx_power_db),
                rms_delay_spread_s: row.tau_rms_ns.unwrap_or(0.0) * 1e-9,
                los_flag: row.los_flag.unwrap_or(1) != 0,
            },
            annotations,
            original,
            processed: BTreeMap::new(),
        });
    }
    let dataset = Dataset { target_only: manifest.target_only, samples };
    dataset.validate().map_err(|e| file_error(&csv_path, e))?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn synchronize_examples() {
        let labels = [0.95, 1.02, 1.10];
        let p = synchronize(&[1.0], &labels, 0.06).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].label_index, 1);
        assert!(synchronize(&[1.0], &labels, 0.01).unwrap().is_empty());
        let tie = synchronize(&[1.0], &[0.98, 1.02], 0.06).unwrap();
        assert_eq!(tie[0].label_index, 0);
    }

    #[test]
    fn synchronize_rejects_unsorted_input() {
        assert!(matches!(synchronize(&[2.0, 1.0], &[1.0], 0.1), Err(DatasetError::Unsorted { stream: "image", .. })));
        assert!(matches!(synchronize(&[1.0], &[1.0, 0.5], 0.1), Err(DatasetError::Unsorted { stream: "label", .. })));
        assert!(synchronize(&[f64::NAN], &[1.0], 0.1).is_err());
    }

    #[test]
    fn synchronize_uses_each_label_once() {
        let p = synchronize(&[1.0, 1.001, 1.002], &[1.0], 0.1).unwrap();
        assert_eq!(p.len(), 1);
        let p = synchronize(&[1.0, 1.01], &[0.99, 1.0], 0.1).unwrap();
        assert_eq!(p.iter().map(|x| x.label_index).collect::<Vec<_>>(), vec![1]);
    }

    fn sorted(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        v.sort_by(f64::total_cmp);
        v
    }

    proptest! {
        #[test]
        fn synchronize_invariants(
            images in prop::collection::vec(0.0f64..20.0, 0..60).prop_map(sorted),
            labels in prop::collection::vec(0.0f64..20.0, 0..60).prop_map(sorted),
            tol in 0.0f64..0.5,
        ) {
            let pairs = synchronize(&images, &labels, tol).unwrap();
            let mut used = BTreeSet::new();
            let mut last_image = None;
            for p in &pairs {
                prop_assert!((p.image_time - p.label_time).abs() <= tol);
                prop_assert!(used.insert(p.label_index));
                prop_assert!(last_image < Some(p.image_index));
                last_image = Some(p.image_index);
                prop_assert_eq!(p.label_time, labels[p.label_index]);
            }
            // A dropped image has no free label within tolerance at its turn.
            for (i, &t) in images.iter().enumerate() {
                if pairs.iter().all(|p| p.image_index != i) {
                    let taken_before: BTreeSet<usize> = pairs.iter().filter(|p| p.image_index < i).map(|p| p.label_index).collect();
                    let floor = taken_before.iter().max().map_or(0, |m| m + 1);
                    prop_assert!(labels[floor..].iter().all(|l| (l - t).abs() > tol));
                }
            }
        }

        #[test]
        fn pooled_split_is_a_ratio_faithful_partition(n in 3usize..400, seed in 0u64..1000, a in 1u32..20, b in 1u32..20, c in 1u32..20) {
            let total = (a + b + c) as f64;
            let ratios = SplitRatios { train: a as f64 / total, validation: b as f64 / total, test: c as f64 / total };
            let entries: Vec<(u32, ScenarioTag)> = (0..n as u32).map(|i| (i * 3 + 1, ScenarioTag::new(i % 3, Condition::Day))).collect();
            match split_entries(&entries, ratios, seed, &SplitMode::PooledRandom) {
                Ok(s) => {
                    prop_assert_eq!(s.parts.len(), n);
                    prop_assert!(entries.iter().all(|e| s.parts.contains_key(&e.0)));
                    for (part, r) in SplitPart::ALL.into_iter().zip([ratios.train, ratios.validation, ratios.test]) {
                        prop_assert!((s.count(part) as f64 - n as f64 * r).abs() < 1.0);
                    }
                    let mut reversed = entries.clone();
                    reversed.reverse();
                    prop_assert_eq!(split_entries(&reversed, ratios, seed, &SplitMode::PooledRandom).unwrap(), s);
                }
                Err(DatasetError::EmptySplit(_)) => {
                    let counts = allocate_counts(n, &[ratios.train, ratios.validation, ratios.test]);
                    prop_assert!(counts.contains(&0));
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn scenario_split_never_straddles(n in 30usize..300, seed in 0u64..100, test_street in 0u32..3) {
            let entries: Vec<(u32, ScenarioTag)> = (0..n as u32).map(|i| (i, ScenarioTag::new(i % 3, Condition::Day))).collect();
            let mode = SplitMode::ByScenario { test: vec![ScenarioTag::new(test_street, Condition::Day)] };
            let s = split_entries(&entries, SplitRatios::default(), seed, &mode).unwrap();
            for (id, tag) in &entries {
                prop_assert_eq!(s.part_of(*id) == Some(SplitPart::Test), tag.street_id == test_street);
            }
        }
    }

    #[test]
    fn split_examples() {
        let entries: Vec<(u32, ScenarioTag)> = (0..100).map(|i| (i, ScenarioTag::new(1, Condition::Day))).collect();
        let s = split_entries(&entries, SplitRatios::default(), 7, &SplitMode::PooledRandom).unwrap();
        assert_eq!([s.count(SplitPart::Train), s.count(SplitPart::Validation), s.count(SplitPart::Test)], [80, 10, 10]);
        assert_eq!(allocate_counts(13905, &[0.8, 0.1, 0.1]), vec![11124, 1391, 1390]);
        let other = split_entries(&entries, SplitRatios::default(), 8, &SplitMode::PooledRandom).unwrap();
        assert_ne!(s, other);
        assert_eq!(s, split_entries(&entries, SplitRatios::default(), 7, &SplitMode::PooledRandom).unwrap());
    }

    #[test]
    fn split_errors() {
        let entries: Vec<(u32, ScenarioTag)> = (0..5).map(|i| (i, ScenarioTag::new(1, Condition::Day))).collect();
        let bad = SplitRatios { train: 0.8, validation: 0.1, test: 0.2 };
        assert!(matches!(
            split_entries(&entries, bad, 0, &SplitMode::PooledRandom),
            Err(DatasetError::InvalidRatios(_))
        ));
        let zero = SplitRatios { train: 1.0, validation: 0.0, test: 0.0 };
        assert!(split_entries(&entries, zero, 0, &SplitMode::PooledRandom).is_err());
        let few = split_entries(&entries[..2], SplitRatios::default(), 0, &SplitMode::PooledRandom);
        assert!(matches!(few, Err(DatasetError::EmptySplit(_))));
        let missing = SplitMode::ByScenario { test: vec![ScenarioTag::new(9, Condition::Night)] };
        assert!(matches!(
            split_entries(&entries, SplitRatios::default(), 0, &missing),
            Err(DatasetError::EmptySplit(SplitPart::Test))
        ));
        let dup = [(1, ScenarioTag::new(1, Condition::Day)); 4];
        assert!(matches!(
            split_entries(&dup, SplitRatios::default(), 0, &SplitMode::PooledRandom),
            Err(DatasetError::DuplicateId(1))
        ));
    }

    fn tiny_config(street: u32, condition: Condition) -> ScenarioConfig {
        ScenarioConfig { duration_s: 4.0, ..ScenarioConfig::street(street, condition) }
    }

    #[test]
    fn filter_keeps_target_frames_in_order() {
        let gen = GenerationConfig { filter_redundant: false, ..GenerationConfig::default() };
        let mut all = generate_samples(&tiny_config(1, Condition::Day), &gen).unwrap();
        let kept_ids: Vec<u32> = all.iter().filter(|s| s.annotations.has_target()).map(|s| s.sample_id).collect();
        assert_eq!(
            filter_redundant(all.clone()),
            all.iter().filter(|s| s.annotations.has_target()).cloned().collect::<Vec<_>>()
        );
        all[0].annotations.objects.clear();
        let filtered = filter_redundant(all.clone());
        assert!(filtered.iter().all(|s| s.sample_id != all[0].sample_id));
        assert_eq!(all.len() - filtered.len(), all.iter().filter(|s| !s.annotations.has_target()).count());
        assert!(kept_ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generated_samples_pair_every_frame_with_its_label() {
        let cfg = tiny_config(2, Condition::Day);
        let gen = GenerationConfig { filter_redundant: false, ..GenerationConfig::default() };
        let samples = generate_samples(&cfg, &gen).unwrap();
        assert_eq!(samples.len(), cfg.snapshot_count());
        let snaps = generate_scenario(&cfg).unwrap();
        for (s, snap) in samples.iter().zip(&snaps) {
            assert!((s.timestamp - snap.timestamp).abs() <= DEFAULT_SYNC_TOLERANCE_S);
            assert_eq!(s.label, label_snapshot(snap, &cfg).unwrap());
        }
    }

    #[test]
    fn generation_is_deterministic_and_numbered() {
        let configs = [tiny_config(1, Condition::Day), tiny_config(3, Condition::Night)];
        let gen = GenerationConfig { modes: VisionMode::ALL.to_vec(), ..GenerationConfig::default() };
        let a = generate_dataset(&configs, &gen, 2).unwrap();
        let b = generate_dataset(&configs, &gen, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().enumerate().all(|(i, s)| s.sample_id == i as u32));
        assert_eq!(a.tags().len(), 2);
        assert!(a.samples.iter().all(|s| s.annotations.has_target() && s.processed.len() == 3));
        let mask = &a.samples[0].processed[&VisionMode::BinaryMask];
        assert_eq!((mask.width(), mask.height(), mask.channels()), (DEFAULT_MASK_WIDTH, DEFAULT_MASK_HEIGHT, 1));
    }

    fn small_dataset() -> Dataset {
        let gen =
            GenerationConfig { modes: VisionMode::ALL.to_vec(), target_only: true, ..GenerationConfig::default() };
        generate_dataset(&[tiny_config(1, Condition::Day)], &gen, 1).unwrap()
    }

    fn dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn export_import_round_trip() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let back = import_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let again = tempfile::tempdir().unwrap();
        export_dataset(&back, again.path()).unwrap();
        assert_eq!(dir_bytes(dir.path()), dir_bytes(again.path()));
        let first = &ds.samples[0];
        let ppm = fs::read(dir.path().join(format!("images/segmentation/{:06}.ppm", first.sample_id))).unwrap();
        assert_eq!(ppm, first.processed[&VisionMode::Segmentation].to_netpbm());
        assert!(dir.path().join(format!("images/binary_mask/{:06}.pgm", first.sample_id)).exists());
    }

    #[test]
    fn labels_csv_mirrors_labels() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join(LABELS_FILE)).unwrap();
        assert_eq!(
            r.headers().unwrap(),
            vec!["sample_id", "timestamp", "rx_power_db", "pl_db", "tau_rms_ns", "los_flag"]
        );
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), ds.len());
        for (row, s) in rows.iter().zip(&ds.samples) {
            assert_eq!(row[0].parse::<u32>().unwrap(), s.sample_id);
            assert_eq!(row[2].parse::<f64>().unwrap(), s.label.received_power_db);
            assert_eq!(&row[5], if s.label.los_flag { "1" } else { "0" });
        }
    }

    #[test]
    fn import_errors_name_the_path() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join("images/bbox/000001.ppm");
        fs::remove_file(&victim).unwrap();
        let err = import_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000001.ppm"), "{err}");

        fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
        let err = import_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains(MANIFEST_FILE), "{err}");

        let empty = tempfile::tempdir().unwrap();
        let err = import_dataset(empty.path()).unwrap_err().to_string();
        assert!(err.contains(MANIFEST_FILE), "{err}");
    }

    #[test]
    fn corrupt_image_is_reported() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join("images/original/000000.ppm");
        fs::write(&victim, b"P6\n4 4\n255\nxx").unwrap();
        let err = import_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000000.ppm"), "{err}");
    }

    #[test]
    fn external_import_synchronizes_frames() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("frames")).unwrap();
        let img = ImageTensor::filled(8, 6, &[10, 20, 30]).unwrap();
        for name in ["a", "b", "c"] {
            img.write_netpbm(&dir.path().join(format!("frames/{name}.ppm"))).unwrap();
        }
        fs::write(
            dir.path().join("power.csv"),
            "timestamp,rx_power_db,los_flag\n0.95,-61.5,1\n1.02,-60.25,0\n1.10,-62.0,1\n",
        )
        .unwrap();
        let manifest = r#"{
            "frames": [
                {"timestamp": 1.0, "path": "frames/a.ppm", "street_id": 4},
                {"timestamp": 1.11, "path": "frames/b.ppm", "street_id": 4, "condition": "night"},
                {"timestamp": 3.0, "path": "frames/c.ppm", "street_id": 4}
            ],
            "power_csv": "power.csv",
            "tolerance_s": 0.06
        }"#;
        let path = dir.path().join("external.json");
        fs::write(&path, manifest).unwrap();
        let ds = import_external(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].label.received_power_db, -60.25);
        assert!(!ds.samples[0].label.los_flag);
        assert_eq!(ds.samples[0].label.path_loss_db, 60.25);
        assert_eq!(ds.samples[1].label.received_power_db, -62.0);
        assert_eq!(ds.samples[1].scenario, ScenarioTag::new(4, Condition::Night));
        assert_eq!(ds.samples[1].original, img);
        assert!(ds.samples[1].annotations.objects.is_empty());

        fs::remove_file(dir.path().join("frames/a.ppm")).unwrap();
        let err = import_external(&path).unwrap_err().to_string();
        assert!(err.contains("a.ppm"), "{err}");
    }
}
