//! Shared fixtures for the benchmarks.

use visionlink::scene::{generate_scenario, SceneSnapshot};
use visionlink::{Condition, ImageTensor, ScenarioConfig};

/// Street 1 by day, shortened to `seconds`.
pub fn street(seconds: f64) -> ScenarioConfig {
    ScenarioConfig { duration_s: seconds, ..ScenarioConfig::street(1, Condition::Day) }
}

pub fn snapshots(config: &ScenarioConfig) -> Vec<SceneSnapshot> {
    generate_scenario(config).expect("preset scenario is valid")
}

/// Deterministic pseudo-random images of the given shape.
pub fn noise_images(count: usize, width: usize, height: usize, channels: usize) -> Vec<ImageTensor> {
    (0..count)
        .map(|k| {
            let data = (0..width * height * channels).map(|i| ((i * 2_654_435_761 + k * 97) >> 7) as u8).collect();
            ImageTensor::new(width, height, channels, data).expect("sized from dimensions")
        })
        .collect()
}
