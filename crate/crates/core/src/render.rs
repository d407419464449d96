//! Flat-shaded rasterizer producing camera images and ground-truth annotations.
//!
//! The camera sits at the receiver position and is a plain pinhole with the
//! configured heading, elevation and horizontal field of view. The static
//! background (sky, road, sidewalks, one row of buildings) is ray cast per
//! pixel; dynamic objects are drawn back to front as the screen-space
//! rectangles bounding their projected boxes. Annotations describe the part
//! of each object left visible after occlusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::scene::{Condition, ObjectClass, ScenarioConfig, SceneObject, SceneSnapshot, Vec3};

/// Default original-image size (16:9).
pub const DEFAULT_RENDER_WIDTH: usize = 96;
pub const DEFAULT_RENDER_HEIGHT: usize = 54;

/// Render samples are kept inside this range so that saturated overlay
/// colors never occur in an original image.
const SAMPLE_MIN: f64 = 6.0;
const SAMPLE_MAX: f64 = 249.0;

const NEAR_PLANE: f64 = 0.05;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl PixelRect {
    pub fn width(&self) -> i32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Corner vertices, clockwise from top-left.
    pub fn polygon(&self) -> Vec<[i32; 2]> {
        vec![[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]]
    }

    /// Tightest rectangle around a vertex list.
    pub fn bounding(points: &[[i32; 2]]) -> Option<Self> {
        let first = points.first()?;
        let mut r = Self { x0: first[0], y0: first[1], x1: first[0], y1: first[1] };
        for p in points {
            r.x0 = r.x0.min(p[0]);
            r.y0 = r.y0.min(p[1]);
            r.x1 = r.x1.max(p[0]);
            r.y1 = r.y1.max(p[1]);
        }
        Some(r)
    }
}

/// One visible object. Polygon vertices are pixel-center coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub object_id: u32,
    pub class: ObjectClass,
    pub bbox: PixelRect,
    pub polygon: Vec<[i32; 2]>,
}

/// Annotations of one image, ordered back to front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ObjectAnnotation>,
}

impl AnnotationSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, objects: Vec::new() }
    }

    pub fn has_target(&self) -> bool {
        self.objects.iter().any(|o| o.class == ObjectClass::TargetVehicle)
    }

    /// Structural checks: boxes inside the image, polygon boxes equal declared boxes.
    pub fn is_consistent(&self) -> bool {
        self.objects.iter().all(|o| {
            o.bbox.x0 >= 0
                && o.bbox.y0 >= 0
                && o.bbox.x1 < self.width as i32
                && o.bbox.y1 < self.height as i32
                && o.bbox.x0 <= o.bbox.x1
                && o.bbox.y0 <= o.bbox.y1
                && PixelRect::bounding(&o.polygon) == Some(o.bbox)
        })
    }
}

/// Pinhole camera with square pixels.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    position: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    focal_px: f64,
    cx: f64,
    cy: f64,
}

impl Camera {
    pub fn new(position: Vec3, yaw_deg: f64, pitch_deg: f64, fov_deg: f64, width: usize, height: usize) -> Self {
        let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
        let forward = Vec3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
        let right = Vec3::new(yaw.sin(), -yaw.cos(), 0.0);
        let up = right.cross(forward);
        let cx = width as f64 / 2.0;
        Self {
            position,
            forward,
            right,
            up,
            focal_px: cx / (fov_deg.to_radians() / 2.0).tan(),
            cx,
            cy: height as f64 / 2.0,
        }
    }

    /// Continuous image coordinates and depth, or `None` behind the near plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let d = p - self.position;
        let depth = d.dot(self.forward);
        if depth < NEAR_PLANE {
            return None;
        }
        let u = self.cx + self.focal_px * d.dot(self.right) / depth;
        let v = self.cy - self.focal_px * d.dot(self.up) / depth;
        Some((u, v, depth))
    }

    /// World-space direction through the center of pixel `(i, j)`.
    fn ray(&self, i: usize, j: usize) -> Vec3 {
        let a = (i as f64 + 0.5 - self.cx) / self.focal_px;
        let b = (j as f64 + 0.5 - self.cy) / self.focal_px;
        self.forward + self.right.scale(a) - self.up.scale(b)
    }
}

#[derive(Debug, Clone)]
struct Building {
    x0: f64,
    x1: f64,
    height: f64,
    color: [f64; 3],
}

/// Renders snapshots of one street.
#[derive(Debug, Clone)]
pub struct Renderer {
    config: ScenarioConfig,
    buildings: Vec<Building>,
}

type Rgb = [f64; 3];

const SKY_TOP: Rgb = [92.0, 140.0, 214.0];
const SKY_HORIZON: Rgb = [168.0, 198.0, 232.0];
const ASPHALT: Rgb = [88.0, 88.0, 94.0];
const MARKING: Rgb = [226.0, 224.0, 212.0];
const SIDEWALK: Rgb = [158.0, 154.0, 146.0];
const VERGE: Rgb = [98.0, 128.0, 84.0];
const LAMP_GLOW: Rgb = [255.0, 206.0, 140.0];
const HEADLIGHT_GLOW: Rgb = [255.0, 244.0, 214.0];
const NIGHT_GAIN: f64 = 0.5;

const VEHICLE_COLORS: [Rgb; 6] = [
    [128.0, 128.0, 134.0],
    [58.0, 60.0, 70.0],
    [186.0, 176.0, 150.0],
    [132.0, 52.0, 48.0],
    [64.0, 104.0, 84.0],
    [200.0, 168.0, 64.0],
];
const CLOTHING_COLORS: [Rgb; 4] = [[60.0, 64.0, 110.0], [150.0, 70.0, 60.0], [40.0, 40.0, 44.0], [170.0, 160.0, 120.0]];

impl Renderer {
    pub fn new(config: &ScenarioConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + config.street_id as u64);
        let mut buildings = Vec::new();
        let mut x = -40.0;
        while x < config.street_length_m + 120.0 {
            let w = rng.random_range(8.0..22.0);
            let tone = rng.random_range(0.7..1.1);
            let base = [[172.0, 150.0, 128.0], [140.0, 140.0, 146.0], [190.0, 176.0, 150.0], [120.0, 96.0, 84.0]]
                [rng.random_range(0..4)];
            buildings.push(Building {
                x0: x,
                x1: x + w,
                height: rng.random_range(6.0..20.0),
                color: base.map(|c: f64| c * tone),
            });
            x += w + rng.random_range(0.0..3.0);
        }
        Self { config: config.clone(), buildings }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn camera(&self, snapshot: &SceneSnapshot, width: usize, height: usize) -> Camera {
        Camera::new(
            snapshot.rx_position,
            self.config.camera_yaw_deg,
            self.config.camera_pitch_deg,
            self.config.camera_fov_deg,
            width,
            height,
        )
    }

    fn facade_y(&self) -> f64 {
        self.config.road_width_m() + self.config.sidewalk_width_m + 2.0
    }

    fn background(&self, cam: &Camera, i: usize, j: usize, height: usize, night: bool) -> Rgb {
        let dir = cam.ray(i, j);
        let origin = cam.position;
        let ground_t = if dir.z < 0.0 { Some(-origin.z / dir.z) } else { None };
        if dir.y > 0.0 {
            let t = (self.facade_y() - origin.y) / dir.y;
            if ground_t.is_none_or(|g| t < g) {
                let hit = origin + dir.scale(t);
                if let Some(b) = self.buildings.iter().find(|b| hit.x >= b.x0 && hit.x < b.x1) {
                    if hit.z >= 0.0 && hit.z <= b.height {
                        return facade_color(b, hit, night);
                    }
                }
            }
        }
        if let Some(t) = ground_t {
            let hit = origin + dir.scale(t);
            return self.ground_color(hit.x, hit.y);
        }
        let frac = j as f64 / height as f64;
        mix(SKY_TOP, SKY_HORIZON, frac.clamp(0.0, 1.0))
    }

    fn ground_color(&self, x: f64, y: f64) -> Rgb {
        let c = &self.config;
        let road = c.road_width_m();
        if (0.0..=road).contains(&y) {
            let edge = y.abs() < 0.12 || (y - road).abs() < 0.12;
            let divider =
                (1..c.lane_count).any(|k| (y - k as f64 * c.lane_width_m).abs() < 0.1) && x.rem_euclid(6.0) < 3.0;
            if edge || divider {
                MARKING
            } else {
                ASPHALT
            }
        } else if (-c.sidewalk_width_m..0.0).contains(&y) || (road..road + c.sidewalk_width_m).contains(&y) {
            // Paving joints every 2 m.
            if x.rem_euclid(2.0) < 0.1 {
                SIDEWALK.map(|v| v * 0.85)
            } else {
                SIDEWALK
            }
        } else {
            VERGE
        }
    }

    fn lamp_heads(&self) -> Vec<Vec3> {
        let c = &self.config;
        let mut lamps = Vec::new();
        let mut x = 5.0;
        while x <= c.street_length_m + 40.0 {
            lamps.push(Vec3::new(x, c.road_width_m() + 0.6, 6.0));
            lamps.push(Vec3::new(x + 10.0, -0.6, 6.0));
            x += 20.0;
        }
        lamps
    }

    /// Renders the snapshot at `width x height`; deterministic.
    pub fn render(&self, snapshot: &SceneSnapshot, width: usize, height: usize) -> (ImageTensor, AnnotationSet) {
        assert!(width > 0 && height > 0, "render size must be positive");
        let cam = self.camera(snapshot, width, height);
        let night = snapshot.condition == Condition::Night;
        let mut buf: Vec<Rgb> = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                buf.push(self.background(&cam, i, j, height, night));
            }
        }

        let mut visible: Vec<(f64, &SceneObject, PixelRect)> = snapshot
            .objects
            .iter()
            .filter_map(|o| project_box(&cam, o, width, height).map(|(r, depth)| (depth, o, r)))
            .collect();
        // Back to front; ties broken by id so the order is total.
        visible.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.object_id.cmp(&b.1.object_id)));

        let mut owner = vec![usize::MAX; width * height];
        for (k, &(_, obj, rect)) in visible.iter().enumerate() {
            let color = self.object_color(obj);
            for y in rect.y0..=rect.y1 {
                let frac = (y - rect.y0) as f64 / rect.height().max(1) as f64;
                let shade = object_shade(obj.class, frac);
                for x in rect.x0..=rect.x1 {
                    buf[y as usize * width + x as usize] = shade(color);
                    owner[y as usize * width + x as usize] = k;
                }
            }
        }

        if night {
            for px in &mut buf {
                *px = px.map(|v| v * NIGHT_GAIN);
            }
            for lamp in self.lamp_heads() {
                paint_disc(&mut buf, &cam, width, height, lamp, 0.3, 1.0, glow(LAMP_GLOW));
            }
            for &(_, obj, _) in &visible {
                if obj.class != ObjectClass::Pedestrian {
                    for lamp in headlights(obj) {
                        paint_disc(&mut buf, &cam, width, height, lamp, 0.15, 0.75, glow(HEADLIGHT_GLOW));
                    }
                }
            }
        }

        let data = buf.iter().flat_map(|px| px.map(|v| v.clamp(SAMPLE_MIN, SAMPLE_MAX).round() as u8)).collect();
        let image = ImageTensor::new(width, height, 3, data).expect("buffer sized from dimensions");
        let annotations = AnnotationSet {
            width,
            height,
            objects: visible
                .iter()
                .enumerate()
                .filter_map(|(k, &(_, o, r))| {
                    let mask: Vec<bool> = (r.y0..=r.y1)
                        .flat_map(|y| (r.x0..=r.x1).map(move |x| (x, y)))
                        .map(|(x, y)| owner[y as usize * width + x as usize] == k)
                        .collect();
                    let local = outline_polygon(&mask, r.width() as usize, r.height() as usize)?;
                    let polygon: Vec<[i32; 2]> = local.iter().map(|p| [p[0] + r.x0, p[1] + r.y0]).collect();
                    let bbox = PixelRect::bounding(&polygon)?;
                    Some(ObjectAnnotation { object_id: o.object_id, class: o.class, bbox, polygon })
                })
                .collect(),
        };
        (image, annotations)
    }

    fn object_color(&self, obj: &SceneObject) -> Rgb {
        match obj.class {
            ObjectClass::TargetVehicle => self.config.target_color.map(f64::from),
            ObjectClass::Vehicle => {
                // Tall vehicles are buses and vans in a fixed livery.
                if obj.footprint.max.z > 2.8 {
                    VEHICLE_COLORS[5]
                } else {
                    VEHICLE_COLORS[id_hash(obj.object_id) % 5]
                }
            }
            ObjectClass::Pedestrian => CLOTHING_COLORS[id_hash(obj.object_id) % CLOTHING_COLORS.len()],
        }
    }
}

fn id_hash(id: u32) -> usize {
    (id.wrapping_mul(2_654_435_761) >> 16) as usize
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn facade_color(b: &Building, hit: Vec3, night: bool) -> Rgb {
    let wx = hit.x.rem_euclid(3.0);
    let wz = hit.z.rem_euclid(3.0);
    let window = hit.z > 2.0 && (0.8..2.2).contains(&wx) && (1.0..2.2).contains(&wz);
    if !window {
        return b.color;
    }
    let cell = ((hit.x / 3.0).floor() as i64 * 31 + (hit.z / 3.0).floor() as i64 * 17).rem_euclid(7);
    if night && cell < 3 {
        // Lit window; divided by the night gain applied afterwards.
        [230.0, 196.0, 120.0].map(|v| v / NIGHT_GAIN * 0.6)
    } else {
        b.color.map(|v| v * 0.45)
    }
}

fn object_shade(class: ObjectClass, frac: f64) -> impl Fn(Rgb) -> Rgb {
    move |c: Rgb| {
        let gradient = 1.0 - 0.18 * frac;
        let band = match class {
            ObjectClass::Pedestrian if frac < 0.18 => return [196.0, 160.0, 130.0],
            ObjectClass::Pedestrian => 1.0,
            _ if frac < 0.35 => 0.55,
            _ if frac > 0.88 => 0.35,
            _ => 1.0,
        };
        c.map(|v| v * gradient * band)
    }
}

/// Front light positions for a vehicle, based on its direction of travel.
fn headlights(obj: &SceneObject) -> [Vec3; 2] {
    let f = &obj.footprint;
    let front_x = if obj.velocity[0] >= 0.0 { f.max.x } else { f.min.x };
    let cy = (f.min.y + f.max.y) / 2.0;
    let half = (f.max.y - f.min.y) * 0.35;
    [Vec3::new(front_x, cy - half, 0.6), Vec3::new(front_x, cy + half, 0.6)]
}

fn glow(color: Rgb) -> impl Fn(&mut Rgb, f64) {
    move |px, w| {
        for k in 0..3 {
            px[k] += color[k] * w;
        }
    }
}

/// Calls `f` with every pixel of a disc of world radius `size_m` (at least
/// `min_px` pixels) around `at`, and a weight falling from 1 at the centre to
/// 0 at the rim.
#[allow(clippy::too_many_arguments)]
fn paint_disc(
    buf: &mut [Rgb],
    cam: &Camera,
    width: usize,
    height: usize,
    at: Vec3,
    size_m: f64,
    min_px: f64,
    mut f: impl FnMut(&mut Rgb, f64),
) {
    let Some((u, v, depth)) = cam.project(at) else { return };
    let r = (cam.focal_px * size_m / depth).max(min_px);
    let (x0, x1) = ((u - r).floor().max(0.0) as i64, (u + r).ceil().min(width as f64 - 1.0) as i64);
    let (y0, y1) = ((v - r).floor().max(0.0) as i64, (v + r).ceil().min(height as f64 - 1.0) as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 + 0.5 - u).powi(2) + (y as f64 + 0.5 - v).powi(2)).sqrt() / r;
            if d < 1.0 {
                f(&mut buf[y as usize * width + x as usize], (1.0 - d) * (1.0 - d));
            }
        }
    }
}

/// Screen rectangle covered by an object's box and the depth of its center.
/// Pixel `i` is covered when its center `i + 0.5` lies inside the projection.
fn project_box(cam: &Camera, obj: &SceneObject, width: usize, height: usize) -> Option<(PixelRect, f64)> {
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for corner in obj.footprint.corners() {
        let (u, v, _) = cam.project(corner)?;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let (_, _, depth) = cam.project(obj.footprint.center())?;
    let x0 = ((umin - 0.5).ceil() as i64).max(0);
    let x1 = ((umax - 0.5).floor() as i64).min(width as i64 - 1);
    let y0 = ((vmin - 0.5).ceil() as i64).max(0);
    let y1 = ((vmax - 0.5).floor() as i64).min(height as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((PixelRect { x0: x0 as i32, y0: y0 as i32, x1: x1 as i32, y1: y1 as i32 }, depth))
}

const NEIGHBOURS: [[i32; 2]; 8] = [[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]];

/// Labels the 8-connected components of a row-major mask and returns the
/// pixels of the largest one (earliest in raster order on ties).
fn largest_component(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut label = vec![0u32; mask.len()];
    let (mut best, mut best_size, mut next) = (0u32, 0usize, 0u32);
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % width) as i32, (i / width) as i32);
            for [dx, dy] in NEIGHBOURS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as i32 || ny >= height as i32 {
                    continue;
                }
                let n = ny as usize * width + nx as usize;
                if mask[n] && label[n] == 0 {
                    label[n] = next;
                    stack.push(n);
                }
            }
        }
        if size > best_size {
            best_size = size;
            best = next;
        }
    }
    label.iter().map(|&l| l != 0 && l == best).collect()
}

/// Outline of the largest 8-connected region of a row-major mask, as a
/// clockwise list of pixel-center vertices with collinear points removed.
/// Holes are not represented, so the polygon covers the region with its
/// holes filled. Returns `None` for an empty mask.
pub fn outline_polygon(mask: &[bool], width: usize, height: usize) -> Option<Vec<[i32; 2]>> {
    assert_eq!(mask.len(), width * height, "mask size must match dimensions");
    let region = largest_component(mask, width, height);
    let start = region.iter().position(|&v| v)?;
    let inside = |p: [i32; 2]| {
        p[0] >= 0
            && p[1] >= 0
            && (p[0] as usize) < width
            && (p[1] as usize) < height
            && region[p[1] as usize * width + p[0] as usize]
    };
    let s = [(start % width) as i32, (start / width) as i32];

    // Moore-neighbour tracing; the pixel west of the raster-first pixel is
    // always outside the region.
    let step = |cur: [i32; 2], back: usize| {
        (1..=8).map(|i| (back + i) % 8).find_map(|d| {
            let n = [cur[0] + NEIGHBOURS[d][0], cur[1] + NEIGHBOURS[d][1]];
            inside(n).then(|| {
                let prev = (d + 7) % 8;
                let b = [cur[0] + NEIGHBOURS[prev][0] - n[0], cur[1] + NEIGHBOURS[prev][1] - n[1]];
                (n, NEIGHBOURS.iter().position(|&o| o == b).expect("neighbouring pixels"))
            })
        })
    };
    let mut contour = vec![s];
    let Some(first) = step(s, 4) else {
        return Some(contour);
    };
    let (mut cur, mut back) = first;
    let limit = 4 * region.len() + 8;
    while contour.len() <= limit {
        contour.push(cur);
        let (n, b) = step(cur, back).expect("traced pixel has a neighbour");
        if cur == s && n == first.0 {
            break;
        }
        (cur, back) = (n, b);
    }
    contour.pop();

    let len = contour.len();
    if len < 3 {
        return Some(contour);
    }
    let kept: Vec<[i32; 2]> = (0..len)
        .filter(|&i| {
            let (a, p, c) = (contour[(i + len - 1) % len], contour[i], contour[(i + 1) % len]);
            let (u, v) = ([p[0] - a[0], p[1] - a[1]], [c[0] - p[0], c[1] - p[1]]);
            u[0] * v[1] - u[1] * v[0] != 0 || u[0] * v[0] + u[1] * v[1] <= 0
        })
        .map(|i| contour[i])
        .collect();
    Some(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, Aabb};

    fn busy_config() -> ScenarioConfig {
        ScenarioConfig { duration_s: 30.0, interferer_rate_per_min: 30.0, ..ScenarioConfig::default() }
    }

    fn facing_config() -> ScenarioConfig {
        ScenarioConfig { camera_yaw_deg: 90.0, camera_pitch_deg: 0.0, rx_height_m: 0.75, ..ScenarioConfig::default() }
    }

    fn lone_target(cfg: &ScenarioConfig, at: Vec3, size: [f64; 3]) -> SceneSnapshot {
        SceneSnapshot {
            index: 0,
            timestamp: 0.0,
            rx_position: cfg.rx_position(),
            tx_position: Vec3::new(at.x, at.y, 1.6),
            objects: vec![SceneObject {
                object_id: 0,
                class: ObjectClass::TargetVehicle,
                footprint: Aabb::on_ground(at.x, at.y, size[0], size[1], size[2]),
                velocity: [0.0, 0.0],
            }],
            condition: Condition::Day,
        }
    }

    #[test]
    fn render_is_deterministic_and_annotations_consistent() {
        let cfg = busy_config();
        let r = Renderer::new(&cfg);
        let snaps = generate_scenario(&cfg).unwrap();
        let mut seen_interferer = false;
        for s in snaps.iter().step_by(7) {
            let (a, ann) = r.render(s, 96, 54);
            let (b, ann2) = r.render(s, 96, 54);
            assert_eq!(a, b);
            assert_eq!(ann, ann2);
            assert!(ann.is_consistent());
            seen_interferer |= ann.objects.iter().any(|o| o.class != ObjectClass::TargetVehicle);
        }
        assert!(seen_interferer);
    }

    #[test]
    fn target_outside_view_gives_empty_annotations() {
        let cfg = ScenarioConfig::default();
        // Behind the camera.
        let s = lone_target(&cfg, Vec3::new(-30.0, -20.0, 0.0), cfg.target_size_m);
        let (_, ann) = Renderer::new(&cfg).render(&s, 96, 54);
        assert!(ann.objects.is_empty());
    }

    #[test]
    fn halving_distance_doubles_box_height() {
        let cfg = facing_config();
        let r = Renderer::new(&cfg);
        let size = [1.5, 0.2, 1.5];
        // Reference distance chosen so the far box spans 8.2 pixels of height.
        let focal = 192.0 / 55f64.to_radians().tan();
        let far_depth = 1.5 * focal / 8.2;
        let place = |depth: f64| lone_target(&cfg, Vec3::new(0.0, cfg.rx_position().y + depth + 0.1, 0.0), size);
        let h_far = r.render(&place(far_depth), 384, 216).1.objects[0].bbox.height();
        let h_near = r.render(&place(far_depth / 2.0), 384, 216).1.objects[0].bbox.height();
        assert!((h_near - 2 * h_far).abs() <= 1, "near {h_near} far {h_far}");
    }

    #[test]
    fn night_is_darker_with_identical_annotations() {
        let cfg = busy_config();
        let r = Renderer::new(&cfg);
        for s in generate_scenario(&cfg).unwrap().iter().step_by(11) {
            let mut n = s.clone();
            n.condition = Condition::Night;
            let (day, a_day) = r.render(s, 96, 54);
            let (night, a_night) = r.render(&n, 96, 54);
            assert_eq!(a_day, a_night);
            assert!(night.mean_value() < day.mean_value());
        }
    }

    #[test]
    fn no_saturated_overlay_colors_in_renders() {
        let cfg = busy_config();
        let r = Renderer::new(&cfg);
        for s in generate_scenario(&cfg).unwrap().iter().step_by(13) {
            for cond in [Condition::Day, Condition::Night] {
                let mut s = s.clone();
                s.condition = cond;
                let (img, _) = r.render(&s, 96, 54);
                assert!(img.data().iter().all(|&v| (6..=249).contains(&v)));
            }
        }
    }

    #[test]
    fn rect_polygon_bounding() {
        let r = PixelRect { x0: 2, y0: 3, x1: 5, y1: 3 };
        assert_eq!(PixelRect::bounding(&r.polygon()), Some(r));
        assert_eq!(r.width(), 4);
        assert_eq!(r.height(), 1);
        assert_eq!(PixelRect::bounding(&[]), None);
    }

    /// Region pixels plus every outside pixel that cannot reach the border
    /// through 4-connected outside pixels.
    fn filled(region: &[bool], w: usize, h: usize) -> Vec<bool> {
        let mut reached = vec![false; region.len()];
        let mut stack: Vec<(i32, i32)> = (0..w as i32).flat_map(|x| [(x, 0), (x, h as i32 - 1)]).collect();
        stack.extend((0..h as i32).flat_map(|y| [(0, y), (w as i32 - 1, y)]));
        while let Some((x, y)) = stack.pop() {
            if x < 0 || y < 0 || x >= w as i32 || y >= h as i32 {
                continue;
            }
            let i = y as usize * w + x as usize;
            if region[i] || reached[i] {
                continue;
            }
            reached[i] = true;
            stack.extend([(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]);
        }
        reached.iter().map(|r| !r).collect()
    }

    fn check_outline(mask: &[bool], w: usize, h: usize) {
        let Some(poly) = outline_polygon(mask, w, h) else {
            assert!(mask.iter().all(|v| !v));
            return;
        };
        let region = largest_component(mask, w, h);
        assert!(region.iter().zip(mask).all(|(r, m)| !r || *m));
        let expect = filled(&region, w, h);
        for y in 0..h {
            for x in 0..w {
                let inside = crate::vision::polygon_contains(&poly, x as i32, y as i32);
                assert_eq!(inside, expect[y * w + x], "pixel ({x}, {y}) polygon {poly:?}");
            }
        }
    }

    #[test]
    fn outline_of_full_rect_is_its_corners() {
        assert_eq!(outline_polygon(&[true; 12], 4, 3), Some(PixelRect { x0: 0, y0: 0, x1: 3, y1: 2 }.polygon()));
        assert_eq!(outline_polygon(&[false, true, false], 3, 1), Some(vec![[1, 0]]));
        assert_eq!(outline_polygon(&[false; 4], 2, 2), None);
        assert_eq!(outline_polygon(&[true; 3], 1, 3), Some(vec![[0, 0], [0, 2]]));
    }

    proptest::proptest! {
        #[test]
        fn outline_covers_largest_region_with_holes(
            w in 1usize..12,
            h in 1usize..12,
            bits in proptest::collection::vec(proptest::bool::weighted(0.6), 144),
        ) {
            check_outline(&bits[..w * h], w, h);
        }

        #[test]
        fn outline_of_occluded_rect(
            cuts in proptest::collection::vec((0i32..14, 0i32..10, 0i32..14, 0i32..10), 0..4),
        ) {
            let (w, h) = (14usize, 10usize);
            let mut mask = vec![true; w * h];
            for (x0, y0, x1, y1) in cuts {
                for y in y0.min(y1)..=y0.max(y1) {
                    for x in x0.min(x1)..=x0.max(x1) {
                        mask[y as usize * w + x as usize] = false;
                    }
                }
            }
            check_outline(&mask, w, h);
        }
    }

    #[test]
    fn occluded_target_is_annotated_by_its_visible_part() {
        let cfg = facing_config();
        let r = Renderer::new(&cfg);
        let y = cfg.rx_position().y;
        let mut s = lone_target(&cfg, Vec3::new(0.0, y + 20.0, 0.0), [4.0, 2.0, 1.5]);
        let (_, alone) = r.render(&s, 96, 54);
        let mut blocker = s.objects[0].clone();
        blocker.object_id = 9;
        blocker.class = ObjectClass::Pedestrian;
        blocker.footprint = Aabb { min: Vec3::new(-2.0, y + 10.0, 0.0), max: Vec3::new(0.0, y + 10.5, 3.0) };
        s.objects.push(blocker);
        let (_, ann) = r.render(&s, 96, 54);
        assert!(ann.is_consistent());
        let before = &alone.objects[0];
        let after = ann.objects.iter().find(|o| o.class == ObjectClass::TargetVehicle).unwrap();
        assert!(after.bbox.width() < before.bbox.width());
        assert!(after.bbox.x0 == before.bbox.x0 || after.bbox.x1 == before.bbox.x1);
        let ped = ann.objects.iter().find(|o| o.object_id == 9).unwrap();
        for yy in after.bbox.y0..=after.bbox.y1 {
            for xx in after.bbox.x0..=after.bbox.x1 {
                if crate::vision::polygon_contains(&after.polygon, xx, yy) {
                    assert!(!ped.bbox.contains(xx, yy));
                }
            }
        }

        s.objects[1].footprint = Aabb { min: Vec3::new(-5.0, y + 10.0, 0.0), max: Vec3::new(5.0, y + 10.5, 5.0) };
        let (_, hidden) = r.render(&s, 96, 54);
        assert!(hidden.objects.iter().all(|o| o.class != ObjectClass::TargetVehicle));
    }
}
