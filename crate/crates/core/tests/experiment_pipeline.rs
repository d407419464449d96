use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use visionlink::dataset::{generate_dataset, ScenarioTag, SplitMode, SplitPart};
use visionlink::experiment::{
    emit_report, read_report, rmse, run_experiment, ExperimentSpec, PER_SAMPLE_FILE, REPORT_FILE, SUMMARY_FILE,
};
use visionlink::nn::TrainConfig;
use visionlink::scene::{Condition, ScenarioConfig};
use visionlink::vision::VisionMode;

fn tiny_spec(split: SplitMode) -> ExperimentSpec {
    let scenarios =
        (1..=3).map(|s| ScenarioConfig { duration_s: 5.0, ..ScenarioConfig::street(s, Condition::Day) }).collect();
    ExperimentSpec {
        name: "tiny".into(),
        scenarios,
        modes: vec![VisionMode::Bbox, VisionMode::BinaryMask],
        target_only: vec![false, true],
        split,
        input_width: 16,
        input_height: 16,
        train: TrainConfig { epochs: 2, batch_size: 16, seed: 3, ..TrainConfig::default() },
        ..ExperimentSpec::default()
    }
}

fn read_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn tiny_experiment_report_is_consistent() {
    let spec = tiny_spec(SplitMode::PooledRandom);
    let report = run_experiment(&spec, 2).unwrap();
    assert_eq!(report.results.len(), 4);
    let serial = run_experiment(&spec, 1).unwrap();
    for (a, b) in report.results.iter().zip(&serial.results) {
        assert_eq!(a.rmse_db.to_bits(), b.rmse_db.to_bits());
        assert_eq!(a.records, b.records);
        assert_eq!(a.curve, b.curve);
    }

    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let again = tempfile::tempdir().unwrap();
    emit_report(&report, again.path()).unwrap();
    assert_eq!(read_files(dir.path()), read_files(again.path()));

    let mut summary = csv::Reader::from_path(dir.path().join(SUMMARY_FILE)).unwrap();
    let headers = summary.headers().unwrap().clone();
    assert_eq!(&headers[0], "mode");
    assert_eq!(&headers[1], "model");
    assert_eq!(&headers[3], "rmse_db");
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), spec.modes.len() * spec.depths.len() * spec.target_only.len());

    let mut per_sample = csv::Reader::from_path(dir.path().join(PER_SAMPLE_FILE)).unwrap();
    let samples: Vec<csv::StringRecord> = per_sample.records().map(Result::unwrap).collect();
    for row in &rows {
        let (preds, truths): (Vec<f64>, Vec<f64>) = samples
            .iter()
            .filter(|s| s[0] == row[0] && s[1] == row[1] && s[2] == row[2])
            .map(|s| (s[7].parse::<f64>().unwrap(), s[6].parse::<f64>().unwrap()))
            .unzip();
        let recomputed = rmse(&preds, &truths).unwrap();
        assert!((recomputed - row[3].parse::<f64>().unwrap()).abs() < 1e-9);
    }

    for mode in &spec.modes {
        let svg = fs::read_to_string(dir.path().join(format!("scatter_{}.svg", mode.name()))).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let points = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
        assert_eq!(
            points,
            report.results.iter().filter(|r| r.cell.mode == *mode).map(|r| r.records.len()).sum::<usize>()
        );
    }
    for r in &report.results {
        let curve = fs::read_to_string(dir.path().join("loss").join(format!("{}.csv", r.cell.slug()))).unwrap();
        assert_eq!(curve.lines().count(), 1 + spec.train.epochs);
    }
    assert_eq!(read_report(&dir.path().join(REPORT_FILE)).unwrap(), report);
}

#[test]
fn cross_validation_keeps_test_scenarios_out_of_training() {
    let test_tag = ScenarioTag::new(3, Condition::Day);
    let spec = ExperimentSpec {
        modes: vec![VisionMode::Segmentation],
        target_only: vec![false],
        ..tiny_spec(SplitMode::ByScenario { test: vec![test_tag] })
    };
    let report = run_experiment(&spec, 1).unwrap();
    let r = &report.results[0];
    assert!(!r.records.is_empty());
    assert!(r.records.iter().all(|p| p.scenario == test_tag));
    let test_ids: BTreeSet<u32> = r.records.iter().map(|p| p.sample_id).collect();
    assert_eq!(test_ids.len(), report.split_counts[&SplitPart::Test]);
    let dataset = generate_dataset(&spec.scenarios, &spec.generation, 1).unwrap();
    let street3: BTreeSet<u32> =
        dataset.samples.iter().filter(|s| s.scenario == test_tag).map(|s| s.sample_id).collect();
    assert_eq!(test_ids, street3);
    assert_eq!(report.split_counts.values().sum::<usize>(), report.sample_count);
}

#[test]
fn unwritable_report_directory_is_an_error() {
    let spec = ExperimentSpec {
        modes: vec![VisionMode::BinaryMask],
        target_only: vec![true],
        ..tiny_spec(SplitMode::PooledRandom)
    };
    let report = run_experiment(&spec, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = emit_report(&report, &blocker.join("out")).unwrap_err().to_string();
    assert!(err.contains("report stage"), "{err}");
}

#[test]
fn invalid_spec_is_rejected_before_any_work() {
    let spec = ExperimentSpec { depths: vec![11], ..tiny_spec(SplitMode::PooledRandom) };
    let err = run_experiment(&spec, 1).unwrap_err().to_string();
    assert!(err.contains("depth 11"), "{err}");
}
