//! Multipath channel impulse responses and the characteristics derived from them.
//!
//! A CIR is a discrete sum of delayed, attenuated and phase-shifted rays,
//! `h(t, τ) = Σ α_l e^{-jφ_l} δ(τ - τ_l)`. Everything in this module is a pure
//! function of the ray list.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Linear power below which the received power is reported at the floor.
pub const LINEAR_POWER_FLOOR: f64 = 1e-30;

/// Floor value in dB (relative to the reference) matching [`LINEAR_POWER_FLOOR`].
pub const POWER_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("undefined delay spread: CIR is empty or carries zero power")]
    UndefinedDelaySpread,
    #[error("free-space path loss needs positive distance and frequency (got d={distance_m} m, f={frequency_hz} Hz)")]
    NonPositiveFspl { distance_m: f64, frequency_hz: f64 },
    #[error("invalid multipath component: {0}")]
    InvalidComponent(String),
}

/// One propagation path: linear voltage gain, phase (radians) and delay (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathComponent {
    amplitude: f64,
    phase: f64,
    delay: f64,
}

impl MultipathComponent {
    /// Builds a component, normalizing the phase into `[0, 2π)`.
    pub fn new(amplitude: f64, phase: f64, delay: f64) -> Result<Self, ChannelError> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(ChannelError::InvalidComponent(format!("amplitude {amplitude}")));
        }
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(ChannelError::InvalidComponent(format!("delay {delay}")));
        }
        if !phase.is_finite() {
            return Err(ChannelError::InvalidComponent(format!("phase {phase}")));
        }
        Ok(Self { amplitude, phase: wrap_phase(phase), delay })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    /// Complex gain `α e^{-jφ}`.
    pub fn gain(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, -self.phase)
    }

    /// Same ray with its amplitude multiplied by `factor` (clamped at zero).
    pub fn scaled(&self, factor: f64) -> Self {
        Self { amplitude: (self.amplitude * factor).max(0.0), ..*self }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs.
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Channel impulse response at one time snapshot; components are kept sorted by delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelImpulseResponse {
    timestamp: f64,
    components: Vec<MultipathComponent>,
}

impl ChannelImpulseResponse {
    pub fn new(timestamp: f64, mut components: Vec<MultipathComponent>) -> Self {
        components.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        Self { timestamp, components }
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn components(&self) -> &[MultipathComponent] {
        &self.components
    }

    /// Number of rays `L`.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// CIR with component `index` removed.
    pub fn without(&self, index: usize) -> Self {
        let mut components = self.components.clone();
        components.remove(index);
        Self { timestamp: self.timestamp, components }
    }
}

/// How received power is extracted from the ray sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    /// `|Σ α_l e^{-jφ_l}|²`: narrowband power including interference between rays.
    #[default]
    Coherent,
    /// `Σ α_l²`: power summed ray by ray.
    Incoherent,
}

impl std::str::FromStr for PowerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coherent" => Ok(Self::Coherent),
            "incoherent" => Ok(Self::Incoherent),
            other => Err(format!("unknown power mode `{other}`")),
        }
    }
}

/// Linear received power (relative to a unit-power transmitter).
pub fn linear_power(cir: &ChannelImpulseResponse, mode: PowerMode) -> f64 {
    match mode {
        PowerMode::Coherent => cir.components.iter().map(MultipathComponent::gain).sum::<Complex64>().norm_sqr(),
        PowerMode::Incoherent => cir.components.iter().map(|c| c.amplitude * c.amplitude).sum(),
    }
}

/// Received power in dB relative to `reference_db`, floored at `reference_db - 300`.
pub fn received_power_db(cir: &ChannelImpulseResponse, mode: PowerMode, reference_db: f64) -> f64 {
    let p = linear_power(cir, mode);
    if p < LINEAR_POWER_FLOOR {
        POWER_FLOOR_DB + reference_db
    } else {
        reference_db + 10.0 * p.log10()
    }
}

/// RMS delay spread: second central moment of the power-delay profile.
pub fn rms_delay_spread(cir: &ChannelImpulseResponse) -> Result<f64, ChannelError> {
    let total: f64 = cir.components.iter().map(|c| c.amplitude * c.amplitude).sum();
    if cir.is_empty() || total <= 0.0 {
        return Err(ChannelError::UndefinedDelaySpread);
    }
    // Moments are taken about the first arrival; the spread is shift invariant
    // and this keeps absolute delays of a few hundred ns from eating precision.
    let origin = cir.components[0].delay;
    let (mut m1, mut m2) = (0.0, 0.0);
    for c in &cir.components {
        let w = c.amplitude * c.amplitude / total;
        let t = c.delay - origin;
        m1 += w * t;
        m2 += w * t * t;
    }
    Ok((m2 - m1 * m1).max(0.0).sqrt())
}

/// Channel transfer function `H(f) = Σ α_l e^{-jφ_l} e^{-j2πfτ_l}`.
pub fn transfer_function(cir: &ChannelImpulseResponse, frequencies: &[f64]) -> Vec<Complex64> {
    frequencies
        .iter()
        .map(|&f| {
            cir.components.iter().map(|c| Complex64::from_polar(c.amplitude, -(c.phase + 2.0 * PI * f * c.delay))).sum()
        })
        .collect()
}

/// Free-space path loss `20 log10(4π d f / c)` in dB.
pub fn fspl_db(distance_m: f64, frequency_hz: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0 && frequency_hz > 0.0) || !distance_m.is_finite() || !frequency_hz.is_finite() {
        return Err(ChannelError::NonPositiveFspl { distance_m, frequency_hz });
    }
    Ok(20.0 * (4.0 * PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10())
}

/// Channel characteristics predicted per snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelLabel {
    pub received_power_db: f64,
    pub path_loss_db: f64,
    pub rms_delay_spread_s: f64,
    pub los_flag: bool,
}

impl ChannelLabel {
    /// Derives every characteristic from one CIR; `tx_power_db` is the reference level.
    pub fn from_cir(
        cir: &ChannelImpulseResponse,
        mode: PowerMode,
        tx_power_db: f64,
        los_flag: bool,
    ) -> Result<Self, ChannelError> {
        let received_power_db = received_power_db(cir, mode, tx_power_db);
        Ok(Self {
            received_power_db,
            path_loss_db: tx_power_db - received_power_db,
            rms_delay_spread_s: rms_delay_spread(cir)?,
            los_flag,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.received_power_db.is_finite() && self.path_loss_db.is_finite() && self.rms_delay_spread_s.is_finite()
    }
}
