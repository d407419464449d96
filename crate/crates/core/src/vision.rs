//! Image processing applied before regression: box outlines, segmentation
//! fills, binary masks, a noisy-detector surrogate and bilinear resizing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::render::{AnnotationSet, ObjectAnnotation, PixelRect};
use crate::scene::ObjectClass;

pub const TARGET_COLOR: [u8; 3] = [0, 255, 0];
pub const VEHICLE_COLOR: [u8; 3] = [255, 0, 0];
pub const PEDESTRIAN_COLOR: [u8; 3] = [0, 0, 255];

pub const DEFAULT_MASK_WIDTH: usize = 80;
pub const DEFAULT_MASK_HEIGHT: usize = 48;

/// Object ids handed to injected false positives count down from here.
pub const FALSE_POSITIVE_ID_BASE: u32 = u32::MAX;

#[derive(Debug, thiserror::Error)]
pub enum VisionError {
    #[error("invalid detector noise model: {0}")]
    InvalidNoise(String),
    #[error("unknown vision mode `{0}` (expected bbox, segmentation or binary_mask)")]
    UnknownMode(String),
    #[error("invalid vision config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisionMode {
    Bbox,
    Segmentation,
    BinaryMask,
}

impl VisionMode {
    pub const ALL: [VisionMode; 3] = [VisionMode::Bbox, VisionMode::Segmentation, VisionMode::BinaryMask];

    pub fn name(self) -> &'static str {
        match self {
            VisionMode::Bbox => "bbox",
            VisionMode::Segmentation => "segmentation",
            VisionMode::BinaryMask => "binary_mask",
        }
    }

    pub fn channels(self) -> usize {
        if self == VisionMode::BinaryMask {
            1
        } else {
            3
        }
    }
}

impl std::fmt::Display for VisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VisionMode {
    type Err = VisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bbox" => Ok(VisionMode::Bbox),
            "segmentation" => Ok(VisionMode::Segmentation),
            "binary_mask" | "mask" => Ok(VisionMode::BinaryMask),
            other => Err(VisionError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessedImage {
    pub mode: VisionMode,
    pub tensor: ImageTensor,
    pub interference_eliminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoiseModel {
    pub miss_probability: f64,
    pub box_jitter_sigma: f64,
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Default for DetectorNoiseModel {
    fn default() -> Self {
        Self { miss_probability: 0.0, box_jitter_sigma: 0.0, false_positive_rate: 0.0, seed: 0 }
    }
}

impl DetectorNoiseModel {
    pub fn validate(&self) -> Result<(), VisionError> {
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(VisionError::InvalidNoise(format!(
                "miss_probability {} outside [0, 1]",
                self.miss_probability
            )));
        }
        if !(self.box_jitter_sigma >= 0.0 && self.box_jitter_sigma.is_finite()) {
            return Err(VisionError::InvalidNoise(format!("box_jitter_sigma {} must be >= 0", self.box_jitter_sigma)));
        }
        if !(self.false_positive_rate >= 0.0 && self.false_positive_rate.is_finite()) {
            return Err(VisionError::InvalidNoise(format!(
                "false_positive_rate {} must be >= 0",
                self.false_positive_rate
            )));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.miss_probability == 0.0 && self.box_jitter_sigma == 0.0 && self.false_positive_rate == 0.0
    }

    /// Same model with a seed mixed with `stream`, for per-image draws.
    pub fn for_stream(&self, stream: u64) -> Self {
        Self { seed: self.seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17), ..*self }
    }
}

/// Complete stage configuration used by dataset preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionConfig {
    pub mode: VisionMode,
    pub target_only: bool,
    pub mask_width: usize,
    pub mask_height: usize,
    pub noise: Option<DetectorNoiseModel>,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            mode: VisionMode::Segmentation,
            target_only: false,
            mask_width: DEFAULT_MASK_WIDTH,
            mask_height: DEFAULT_MASK_HEIGHT,
            noise: None,
        }
    }
}

impl VisionConfig {
    pub fn new(mode: VisionMode, target_only: bool) -> Self {
        Self { mode, target_only, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        if self.mask_width == 0 || self.mask_height == 0 {
            return Err(VisionError::InvalidConfig("mask dimensions must be positive".into()));
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }
}

fn overlay_color(class: ObjectClass) -> [u8; 3] {
    match class {
        ObjectClass::TargetVehicle => TARGET_COLOR,
        ObjectClass::Vehicle => VEHICLE_COLOR,
        ObjectClass::Pedestrian => PEDESTRIAN_COLOR,
    }
}

fn selected(annotations: &AnnotationSet, target_only: bool) -> impl Iterator<Item = &ObjectAnnotation> {
    annotations.objects.iter().filter(move |o| !target_only || o.class == ObjectClass::TargetVehicle)
}

/// Clips a rectangle to `width x height`; `None` when nothing remains.
fn clip(r: PixelRect, width: usize, height: usize) -> Option<PixelRect> {
    let c =
        PixelRect { x0: r.x0.max(0), y0: r.y0.max(0), x1: r.x1.min(width as i32 - 1), y1: r.y1.min(height as i32 - 1) };
    (c.x0 <= c.x1 && c.y0 <= c.y1).then_some(c)
}

/// Pixels on the 1-pixel outline of a rectangle, each listed once.
pub fn outline_pixels(r: PixelRect) -> Vec<(i32, i32)> {
    let mut px = Vec::new();
    for x in r.x0..=r.x1 {
        px.push((x, r.y0));
        if r.y1 != r.y0 {
            px.push((x, r.y1));
        }
    }
    for y in r.y0 + 1..r.y1 {
        px.push((r.x0, y));
        if r.x1 != r.x0 {
            px.push((r.x1, y));
        }
    }
    px
}

/// Whether pixel `(x, y)` lies inside or on the boundary of a closed polygon
/// whose vertices are pixel coordinates.
pub fn polygon_contains(polygon: &[[i32; 2]], x: i32, y: i32) -> bool {
    let n = polygon.len();
    if n == 0 {
        return false;
    }
    let (px, py) = (x as i64, y as i64);
    let mut inside = false;
    for k in 0..n {
        let [ax, ay] = polygon[k].map(i64::from);
        let [bx, by] = polygon[(k + 1) % n].map(i64::from);
        let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if cross == 0 && px >= ax.min(bx) && px <= ax.max(bx) && py >= ay.min(by) && py <= ay.max(by) {
            return true;
        }
        if (ay > py) != (by > py) {
            // x coordinate of the edge at height py, compared without division.
            let lhs = (px - ax) * (by - ay);
            let rhs = (bx - ax) * (py - ay);
            if (by > ay && lhs < rhs) || (by < ay && lhs > rhs) {
                inside = !inside;
            }
        }
    }
    inside
}

fn for_each_polygon_pixel(o: &ObjectAnnotation, width: usize, height: usize, mut f: impl FnMut(usize, usize)) {
    let Some(bounds) = PixelRect::bounding(&o.polygon).and_then(|b| clip(b, width, height)) else { return };
    for y in bounds.y0..=bounds.y1 {
        for x in bounds.x0..=bounds.x1 {
            if polygon_contains(&o.polygon, x, y) {
                f(x as usize, y as usize);
            }
        }
    }
}

fn rgb_copy(image: &ImageTensor) -> ImageTensor {
    if image.channels() == 3 {
        return image.clone();
    }
    let data = image.data().iter().flat_map(|&v| [v, v, v]).collect();
    ImageTensor::new(image.width(), image.height(), 3, data).expect("same dimensions")
}

pub fn apply_bbox(image: &ImageTensor, annotations: &AnnotationSet, target_only: bool) -> ProcessedImage {
    let mut out = rgb_copy(image);
    for o in selected(annotations, target_only) {
        let Some(r) = clip(o.bbox, out.width(), out.height()) else { continue };
        let color = overlay_color(o.class);
        for (x, y) in outline_pixels(r) {
            out.set_pixel(x as usize, y as usize, &color);
        }
    }
    ProcessedImage { mode: VisionMode::Bbox, tensor: out, interference_eliminated: target_only }
}

pub fn apply_segmentation(image: &ImageTensor, annotations: &AnnotationSet, target_only: bool) -> ProcessedImage {
    let mut out = rgb_copy(image);
    let (w, h) = (out.width(), out.height());
    for o in selected(annotations, target_only) {
        let color = overlay_color(o.class);
        for_each_polygon_pixel(o, w, h, |x, y| out.set_pixel(x, y, &color));
    }
    ProcessedImage { mode: VisionMode::Segmentation, tensor: out, interference_eliminated: target_only }
}

/// Mask at `out_w x out_h`. Polygons are rasterized at the annotation
/// resolution, then an output pixel is set when any source pixel overlapping
/// it is set.
pub fn apply_binary_mask(annotations: &AnnotationSet, target_only: bool, out_w: usize, out_h: usize) -> ProcessedImage {
    assert!(out_w > 0 && out_h > 0, "mask dimensions must be positive");
    let (w, h) = (annotations.width, annotations.height);
    let mut src = vec![false; w * h];
    for o in selected(annotations, target_only) {
        for_each_polygon_pixel(o, w, h, |x, y| src[y * w + x] = true);
    }
    let mut out = vec![0u8; out_w * out_h];
    let span = |p: usize, src_len: usize, dst_len: usize| {
        // Output cells overlapping source cell [p, p + 1).
        let lo = p * dst_len / src_len;
        let hi = ((p + 1) * dst_len).div_ceil(src_len).min(dst_len);
        lo..hi
    };
    for y in 0..h {
        for x in 0..w {
            if src[y * w + x] {
                for oy in span(y, h, out_h) {
                    for ox in span(x, w, out_w) {
                        out[oy * out_w + ox] = 255;
                    }
                }
            }
        }
    }
    ProcessedImage {
        mode: VisionMode::BinaryMask,
        tensor: ImageTensor::new(out_w, out_h, 1, out).expect("sized from dimensions"),
        interference_eliminated: target_only,
    }
}

/// Runs the configured mode, applying detector noise first when present.
/// `stream` distinguishes images so each gets independent noise.
pub fn process_image(
    image: &ImageTensor,
    annotations: &AnnotationSet,
    config: &VisionConfig,
    stream: u64,
) -> ProcessedImage {
    let degraded;
    let ann = match &config.noise {
        Some(n) if !n.is_noiseless() => {
            degraded = degrade_annotations(annotations, &n.for_stream(stream));
            &degraded
        }
        _ => annotations,
    };
    match config.mode {
        VisionMode::Bbox => apply_bbox(image, ann, config.target_only),
        VisionMode::Segmentation => apply_segmentation(image, ann, config.target_only),
        VisionMode::BinaryMask => apply_binary_mask(ann, config.target_only, config.mask_width, config.mask_height),
    }
}

pub fn degrade_annotations(annotations: &AnnotationSet, noise: &DetectorNoiseModel) -> AnnotationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let (w, h) = (annotations.width as i32, annotations.height as i32);
    let jitter =
        (noise.box_jitter_sigma > 0.0).then(|| Normal::new(0.0, noise.box_jitter_sigma).expect("sigma validated"));
    let mut objects = Vec::with_capacity(annotations.objects.len());
    for o in &annotations.objects {
        if noise.miss_probability > 0.0 && rng.random_bool(noise.miss_probability.min(1.0)) {
            continue;
        }
        let mut o = o.clone();
        if let Some(j) = &jitter {
            let dx = j.sample(&mut rng).round() as i32;
            let dy = j.sample(&mut rng).round() as i32;
            for v in &mut o.polygon {
                v[0] = (v[0] + dx).clamp(0, w - 1);
                v[1] = (v[1] + dy).clamp(0, h - 1);
            }
            o.bbox = PixelRect::bounding(&o.polygon).unwrap_or(o.bbox);
        }
        objects.push(o);
    }
    if noise.false_positive_rate > 0.0 {
        let count = Poisson::new(noise.false_positive_rate).expect("rate validated").sample(&mut rng) as u32;
        for k in 0..count {
            let bw = rng.random_range(2..=(w / 4).max(2));
            let bh = rng.random_range(2..=(h / 4).max(2));
            let x0 = rng.random_range(0..=(w - bw).max(0));
            let y0 = rng.random_range(0..=(h - bh).max(0));
            let bbox = PixelRect { x0, y0, x1: (x0 + bw - 1).min(w - 1), y1: (y0 + bh - 1).min(h - 1) };
            objects.push(ObjectAnnotation {
                object_id: FALSE_POSITIVE_ID_BASE - k,
                class: ObjectClass::Vehicle,
                bbox,
                polygon: bbox.polygon(),
            });
        }
    }
    AnnotationSet { width: annotations.width, height: annotations.height, objects }
}

/// Bilinear resize with pixel centers at half-integer coordinates and
/// round-half-up quantization.
pub fn resize(image: &ImageTensor, out_w: usize, out_h: usize) -> ImageTensor {
    assert!(out_w > 0 && out_h > 0, "resize target must be positive");
    let (w, h, c) = (image.width(), image.height(), image.channels());
    if (w, h) == (out_w, out_h) {
        return image.clone();
    }
    let axis = |dst: usize, src: usize, dst_len: usize| {
        let s = ((dst as f64 + 0.5) * src as f64 / dst_len as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| axis(x, w, out_w)).collect();
    let src = image.data();
    let mut out = Vec::with_capacity(out_w * out_h * c);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, h, out_h);
        for &(x0, x1, fx) in &xs {
            for k in 0..c {
                let p = |xx: usize, yy: usize| src[(yy * w + xx) * c + k] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageTensor::new(out_w, out_h, c, out).expect("sized from dimensions")
}
