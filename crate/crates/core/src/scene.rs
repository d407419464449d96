//! Synthetic V2I street scenarios and the propagation oracle that labels them.
//!
//! World frame: `x` runs along the street (0 at the receiver end), `y` runs
//! across it with the near curb at `y = 0` and the lanes at positive `y`, and
//! `z` is height above the ground plane. The base station (receiver and
//! camera) stands on the near side at `y = -rx_offset_m`.
//!
//! The transmitter vehicle drives back and forth in one lane. Interferers
//! arrive as a Poisson process and stay for one to two seconds: vehicles
//! passing through the stretch of a neighbouring lane that the line of sight
//! crosses, and pedestrians crossing anywhere along the street. The default
//! rate gives roughly 90% line-of-sight snapshots and 80% frames showing the
//! transmitter alone.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::channel::{
    fspl_db, ChannelError, ChannelImpulseResponse, ChannelLabel, MultipathComponent, PowerMode, SPEED_OF_LIGHT,
};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("transmitter and receiver coincide")]
    CoincidentAntennas,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("{path}: {message}")]
    ConfigFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Box standing on the ground, centered at `(x, y)` in plan.
    pub fn on_ground(x: f64, y: f64, length: f64, width: f64, height: f64) -> Self {
        Self {
            min: Vec3::new(x - length / 2.0, y - width / 2.0, 0.0),
            max: Vec3::new(x + length / 2.0, y + width / 2.0, height),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max).scale(0.5)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    pub fn has_positive_extent(&self) -> bool {
        self.max.x > self.min.x && self.max.y > self.min.y && self.max.z > self.min.z
    }

    /// Slab test for the closed segment `from -> to`.
    pub fn intersects_segment(&self, from: Vec3, to: Vec3) -> bool {
        let d = to - from;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for (o, dir, lo, hi) in [
            (from.x, d.x, self.min.x, self.max.x),
            (from.y, d.y, self.min.y, self.max.y),
            (from.z, d.z, self.min.z, self.max.z),
        ] {
            if dir.abs() < 1e-15 {
                if o < lo || o > hi {
                    return false;
                }
            } else {
                let (mut a, mut b) = ((lo - o) / dir, (hi - o) / dir);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    TargetVehicle,
    Vehicle,
    Pedestrian,
}

impl ObjectClass {
    pub fn name(self) -> &'static str {
        match self {
            Self::TargetVehicle => "target_vehicle",
            Self::Vehicle => "vehicle",
            Self::Pedestrian => "pedestrian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    #[default]
    Day,
    Night,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Self::Day => "day",
            Self::Night => "night",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(Self::Day),
            "night" => Ok(Self::Night),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: u32,
    pub class: ObjectClass,
    pub footprint: Aabb,
    /// Plan velocity (m/s) along x and y.
    pub velocity: [f64; 2],
}

/// World state at one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub index: usize,
    pub timestamp: f64,
    pub rx_position: Vec3,
    pub tx_position: Vec3,
    pub objects: Vec<SceneObject>,
    pub condition: Condition,
}

impl SceneSnapshot {
    pub fn target(&self) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.class == ObjectClass::TargetVehicle)
    }

    pub fn interferers(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| o.class != ObjectClass::TargetVehicle)
    }

    /// True when the transmitter vehicle is the only dynamic object present.
    pub fn is_target_only(&self) -> bool {
        self.interferers().next().is_none()
    }
}

/// Scenario parameters. Defaults mirror a 60 GHz roadside measurement setup at reduced scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Street identifier used for scenario tags.
    pub street_id: u32,
    pub street_length_m: f64,
    pub lane_count: u32,
    pub lane_width_m: f64,
    pub sidewalk_width_m: f64,
    /// Receiver distance behind the near curb.
    pub rx_offset_m: f64,
    /// Receiver position along the street.
    pub rx_along_m: f64,
    pub rx_height_m: f64,
    /// Camera heading, degrees from +x toward +y.
    pub camera_yaw_deg: f64,
    /// Camera elevation, degrees (negative looks down).
    pub camera_pitch_deg: f64,
    /// Horizontal field of view, degrees.
    pub camera_fov_deg: f64,
    pub snapshot_rate_hz: f64,
    pub duration_s: f64,
    /// Lane (0 = nearest the receiver) the transmitter drives in.
    pub tx_lane: u32,
    pub tx_antenna_height_m: f64,
    pub tx_speed_mps: f64,
    /// Turnaround distance from each street end.
    pub tx_margin_m: f64,
    /// Transmitter vehicle length, width, height.
    pub target_size_m: [f64; 3],
    pub target_color: [u8; 3],
    pub interferer_rate_per_min: f64,
    /// Probability that an arrival is a vehicle rather than a pedestrian.
    pub vehicle_share: f64,
    pub frequency_hz: f64,
    /// Reference level for labels; received power is relative to it.
    pub tx_power_db: f64,
    pub reflection_coefficient: f64,
    /// Attenuation per blocking object.
    pub blockage_db: f64,
    pub blockage_cap_db: f64,
    pub power_mode: PowerMode,
    pub condition: Condition,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            street_id: 1,
            street_length_m: 100.0,
            lane_count: 2,
            lane_width_m: 3.5,
            sidewalk_width_m: 3.0,
            rx_offset_m: 5.0,
            rx_along_m: 0.0,
            rx_height_m: 3.0,
            camera_yaw_deg: 35.0,
            camera_pitch_deg: -8.0,
            camera_fov_deg: 110.0,
            snapshot_rate_hz: 8.0,
            duration_s: 375.0,
            tx_lane: 1,
            tx_antenna_height_m: 1.6,
            tx_speed_mps: 11.0,
            tx_margin_m: 5.0,
            target_size_m: [4.5, 1.8, 1.5],
            target_color: [214, 210, 200],
            interferer_rate_per_min: 8.0,
            vehicle_share: 0.8,
            frequency_hz: 60e9,
            tx_power_db: 0.0,
            reflection_coefficient: -0.7,
            blockage_db: 15.0,
            blockage_cap_db: 30.0,
            power_mode: PowerMode::Coherent,
            condition: Condition::Day,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Preset geometry for one of three built-in streets. Streets differ in
    /// receiver setback, transmitter vehicle and seed.
    pub fn street(id: u32, condition: Condition) -> Self {
        let base = Self { street_id: id, condition, ..Self::default() };
        let seed_base = 1000 * id as u64 + if condition == Condition::Night { 500 } else { 0 };
        match id {
            2 => Self {
                rx_offset_m: 7.0,
                camera_yaw_deg: 38.0,
                target_size_m: [4.8, 1.9, 1.6],
                target_color: [70, 96, 170],
                seed: seed_base,
                ..base
            },
            3 => Self {
                rx_offset_m: 11.0,
                rx_height_m: 3.5,
                camera_yaw_deg: 42.0,
                camera_pitch_deg: -7.0,
                target_size_m: [5.2, 2.0, 1.9],
                target_color: [170, 60, 52],
                seed: seed_base,
                ..base
            },
            _ => Self { seed: seed_base, ..base },
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidConfig(m));
        if !(self.camera_fov_deg > 0.0 && self.camera_fov_deg < 180.0) {
            return bad(format!("camera_fov_deg {} outside (0, 180)", self.camera_fov_deg));
        }
        if !(self.snapshot_rate_hz > 0.0) {
            return bad(format!("snapshot_rate_hz {} must be positive", self.snapshot_rate_hz));
        }
        if !(self.duration_s > 0.0) || self.snapshot_count() == 0 {
            return bad(format!("duration_s {} yields no snapshots", self.duration_s));
        }
        if self.lane_count == 0 || self.tx_lane >= self.lane_count {
            return bad(format!("tx_lane {} invalid for {} lanes", self.tx_lane, self.lane_count));
        }
        for (name, v) in [
            ("street_length_m", self.street_length_m),
            ("lane_width_m", self.lane_width_m),
            ("rx_height_m", self.rx_height_m),
            ("tx_antenna_height_m", self.tx_antenna_height_m),
            ("tx_speed_mps", self.tx_speed_mps),
            ("frequency_hz", self.frequency_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.target_size_m.iter().any(|&s| !(s > 0.0)) {
            return bad("target_size_m must be positive on every axis".into());
        }
        if 2.0 * self.tx_margin_m >= self.street_length_m || self.tx_margin_m < 0.0 {
            return bad("tx_margin_m leaves no room to drive".into());
        }
        if !(self.interferer_rate_per_min >= 0.0) || !(0.0..=1.0).contains(&self.vehicle_share) {
            return bad("interferer rate must be >= 0 and vehicle_share in [0, 1]".into());
        }
        if !(self.blockage_db >= 0.0 && self.blockage_cap_db >= 0.0) {
            return bad("blockage attenuation must be non-negative".into());
        }
        Ok(())
    }

    pub fn snapshot_count(&self) -> usize {
        (self.duration_s * self.snapshot_rate_hz).round().max(0.0) as usize
    }

    pub fn road_width_m(&self) -> f64 {
        self.lane_count as f64 * self.lane_width_m
    }

    pub fn lane_center_y(&self, lane: u32) -> f64 {
        (lane as f64 + 0.5) * self.lane_width_m
    }

    pub fn rx_position(&self) -> Vec3 {
        Vec3::new(self.rx_along_m, -self.rx_offset_m, self.rx_height_m)
    }

    /// Reads a `key = value` scenario file; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SceneError::ConfigFile { path: path.display().to_string(), message: e.to_string() })?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| SceneError::ConfigFile { path: path.display().to_string(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable")
    }

    /// Transmitter plan position (x) and signed speed at time `t`.
    fn tx_track(&self, t: f64) -> (f64, f64) {
        let x_min = self.tx_margin_m;
        let span = self.street_length_m - 2.0 * self.tx_margin_m;
        let s = (self.tx_speed_mps * t).rem_euclid(2.0 * span);
        if s < span {
            (x_min + s, self.tx_speed_mps)
        } else {
            (x_min + 2.0 * span - s, -self.tx_speed_mps)
        }
    }
}

/// One interferer with a linear trajectory over its lifetime.
#[derive(Debug, Clone)]
struct Arrival {
    id: u32,
    class: ObjectClass,
    spawn_t: f64,
    lifetime: f64,
    origin: [f64; 2],
    velocity: [f64; 2],
    size: [f64; 3],
}

impl Arrival {
    fn object_at(&self, t: f64) -> Option<SceneObject> {
        let age = t - self.spawn_t;
        if age < 0.0 || age >= self.lifetime {
            return None;
        }
        let x = self.origin[0] + self.velocity[0] * age;
        let y = self.origin[1] + self.velocity[1] * age;
        Some(SceneObject {
            object_id: self.id,
            class: self.class,
            footprint: Aabb::on_ground(x, y, self.size[0], self.size[1], self.size[2]),
            velocity: self.velocity,
        })
    }
}

fn sample_arrivals(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Arrival> {
    let mut out = Vec::new();
    if cfg.interferer_rate_per_min <= 0.0 {
        return out;
    }
    let gap = Exp::new(cfg.interferer_rate_per_min / 60.0).expect("positive rate");
    let rx = cfg.rx_position();
    let tx_y = cfg.lane_center_y(cfg.tx_lane);
    let mut t = 0.0;
    let horizon = cfg.snapshot_count() as f64 / cfg.snapshot_rate_hz;
    loop {
        t += gap.sample(rng);
        if t >= horizon {
            break;
        }
        let id = out.len() as u32 + 1;
        if rng.random::<f64>() < cfg.vehicle_share {
            // Traffic passing the transmitter in a neighbouring lane, entering
            // the frame near where that lane crosses the line of sight.
            let lanes: Vec<u32> = (0..cfg.lane_count).filter(|&l| l != cfg.tx_lane).collect();
            let lane = if lanes.is_empty() { cfg.tx_lane } else { lanes[rng.random_range(0..lanes.len())] };
            let lane_y = cfg.lane_center_y(lane);
            let (tx_x, tx_v) = cfg.tx_track(t);
            let crossing = rx.x + (lane_y - rx.y) / (tx_y - rx.y) * (tx_x - rx.x);
            let offset = rng.random_range(-3.5..3.5);
            let relative = rng.random_range(-2.5..2.5);
            let kind = rng.random::<f64>();
            let size = if kind < 0.3 {
                [4.4, 1.8, 1.5]
            } else if kind < 0.75 {
                [5.6, 2.0, rng.random_range(2.3..2.7)]
            } else {
                [rng.random_range(8.0..11.0), 2.5, rng.random_range(2.9..3.3)]
            };
            out.push(Arrival {
                id,
                class: ObjectClass::Vehicle,
                spawn_t: t,
                lifetime: rng.random_range(0.75..2.25),
                origin: [crossing + offset, lane_y],
                velocity: [tx_v + relative, 0.0],
                size,
            });
        } else {
            let x = rng.random_range(0.0..cfg.street_length_m);
            let speed = rng.random_range(1.0..1.8);
            let y0 = rng.random_range(-cfg.sidewalk_width_m..cfg.road_width_m() + cfg.sidewalk_width_m);
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            out.push(Arrival {
                id,
                class: ObjectClass::Pedestrian,
                spawn_t: t,
                lifetime: rng.random_range(0.75..2.25),
                origin: [x, y0],
                velocity: [0.0, dir * speed],
                size: [0.5, 0.5, rng.random_range(1.6..1.9)],
            });
        }
    }
    out
}

/// Generates the snapshot sequence for a scenario; deterministic in `(config, seed)`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Vec<SceneSnapshot>, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arrivals = sample_arrivals(config, &mut rng);
    let rx = config.rx_position();
    let tx_y = config.lane_center_y(config.tx_lane);
    let [len, wid, hgt] = config.target_size_m;

    let count = config.snapshot_count();
    let mut snapshots = Vec::with_capacity(count);
    let mut first_live = 0usize;
    for k in 0..count {
        let t = k as f64 / config.snapshot_rate_hz;
        let (tx_x, tx_v) = config.tx_track(t);
        let mut objects = vec![SceneObject {
            object_id: 0,
            class: ObjectClass::TargetVehicle,
            footprint: Aabb::on_ground(tx_x, tx_y, len, wid, hgt),
            velocity: [tx_v, 0.0],
        }];
        while first_live < arrivals.len() && arrivals[first_live].spawn_t + arrivals[first_live].lifetime <= t {
            first_live += 1;
        }
        objects.extend(arrivals[first_live..].iter().take_while(|a| a.spawn_t <= t).filter_map(|a| a.object_at(t)));
        snapshots.push(SceneSnapshot {
            index: k,
            timestamp: t,
            rx_position: rx,
            tx_position: Vec3::new(tx_x, tx_y, config.tx_antenna_height_m),
            objects,
            condition: config.condition,
        });
    }
    Ok(snapshots)
}

/// Whether the receiver-transmitter segment crosses any non-target object.
/// Returns the ids of every crossing object, ascending.
pub fn los_blocked(snapshot: &SceneSnapshot) -> (bool, Vec<u32>) {
    let mut blockers: Vec<u32> = snapshot
        .interferers()
        .filter(|o| o.footprint.intersects_segment(snapshot.rx_position, snapshot.tx_position))
        .map(|o| o.object_id)
        .collect();
    blockers.sort_unstable();
    (!blockers.is_empty(), blockers)
}

/// Total blockage attenuation for `blockers` objects on the link.
pub fn blockage_attenuation_db(config: &ScenarioConfig, blockers: usize) -> f64 {
    (config.blockage_db * blockers as f64).min(config.blockage_cap_db)
}

/// Direct ray plus ground reflection, both attenuated by any blockage on the direct segment.
pub fn propagate(snapshot: &SceneSnapshot, config: &ScenarioConfig) -> Result<ChannelImpulseResponse, SceneError> {
    let rx = snapshot.rx_position;
    let tx = snapshot.tx_position;
    let direct = (tx - rx).norm();
    if direct < 1e-9 {
        return Err(SceneError::CoincidentAntennas);
    }
    let image = Vec3::new(tx.x, tx.y, -tx.z);
    let reflected = (image - rx).norm();

    let (_, blockers) = los_blocked(snapshot);
    let shadow = 10f64.powf(-blockage_attenuation_db(config, blockers.len()) / 20.0);

    let f = config.frequency_hz;
    let gamma = config.reflection_coefficient;
    let flip = if gamma < 0.0 { std::f64::consts::PI } else { 0.0 };
    let ray = |length: f64, gain: f64, extra_phase: f64| -> Result<MultipathComponent, SceneError> {
        let amplitude = gain * 10f64.powf(-fspl_db(length, f)? / 20.0) * shadow;
        let phase = (TAU * f * length / SPEED_OF_LIGHT).rem_euclid(TAU) + extra_phase;
        Ok(MultipathComponent::new(amplitude, phase, length / SPEED_OF_LIGHT)?)
    };
    Ok(ChannelImpulseResponse::new(
        snapshot.timestamp,
        vec![ray(direct, 1.0, 0.0)?, ray(reflected, gamma.abs(), flip)?],
    ))
}

/// Ground-truth channel label for a snapshot.
pub fn label_snapshot(snapshot: &SceneSnapshot, config: &ScenarioConfig) -> Result<ChannelLabel, SceneError> {
    let cir = propagate(snapshot, config)?;
    let (blocked, _) = los_blocked(snapshot);
    Ok(ChannelLabel::from_cir(&cir, config.power_mode, config.tx_power_db, !blocked)?)
}

/// Summary statistics of a generated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub snapshots: usize,
    pub los_fraction: f64,
    pub target_only_fraction: f64,
}

pub fn scenario_stats(snapshots: &[SceneSnapshot]) -> ScenarioStats {
    let n = snapshots.len().max(1) as f64;
    ScenarioStats {
        snapshots: snapshots.len(),
        los_fraction: snapshots.iter().filter(|s| !los_blocked(s).0).count() as f64 / n,
        target_only_fraction: snapshots.iter().filter(|s| s.is_target_only()).count() as f64 / n,
    }
}
