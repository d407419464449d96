//! Vision-aided received power prediction for mmWave vehicle-to-infrastructure links.

pub mod channel;
pub mod dataset;
pub mod experiment;
pub mod image;
pub mod nn;
pub mod render;
pub mod scene;
pub mod vision;

pub use channel::{ChannelLabel, PowerMode};
pub use dataset::{Dataset, GenerationConfig, Sample, ScenarioTag, SplitMode, SplitPart, SplitRatios};
pub use experiment::{ExperimentSpec, Report};
pub use image::ImageTensor;
pub use nn::{ModelConfig, TrainConfig, TrainedModel};
pub use render::{AnnotationSet, Renderer};
pub use scene::{Condition, ScenarioConfig};
pub use vision::{VisionConfig, VisionMode};
