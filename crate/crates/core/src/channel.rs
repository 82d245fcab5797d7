//! Environmental drift of the field link and the static fiber model.
//!
//! Each drifting quantity is an Ornstein-Uhlenbeck process around its mean
//! plus a 24 h sinusoid. The relaxing part is kept separate from the diurnal
//! term so the sinusoid does not feed back into the relaxation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::timebin::db_to_transmittance;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Declarative parameters of one drift process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSpec {
    pub mean: f64,
    pub relaxation_time_s: f64,
    pub stationary_sigma: f64,
    pub diurnal_amplitude: f64,
    pub diurnal_phase_s: f64,
    /// Starting value of the relaxing part; defaults to `mean`.
    pub initial: Option<f64>,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            mean: 0.0,
            relaxation_time_s: 3600.0,
            stationary_sigma: 0.0,
            diurnal_amplitude: 0.0,
            diurnal_phase_s: 0.0,
            initial: None,
        }
    }
}

impl DriftSpec {
    pub fn frozen(value: f64) -> Self {
        Self {
            mean: value,
            ..Self::default()
        }
    }

    pub fn validate(&self, name: &str, errors: &mut Vec<String>) {
        if !(self.relaxation_time_s > 0.0) {
            errors.push(format!("{name}.relaxation_time_s must be > 0"));
        }
        if !(self.stationary_sigma >= 0.0) {
            errors.push(format!("{name}.stationary_sigma must be >= 0"));
        }
        if !(self.diurnal_amplitude >= 0.0) {
            errors.push(format!("{name}.diurnal_amplitude must be >= 0"));
        }
        for (field, v) in [
            ("mean", self.mean),
            ("diurnal_phase_s", self.diurnal_phase_s),
            ("initial", self.initial.unwrap_or(0.0)),
        ] {
            if !v.is_finite() {
                errors.push(format!("{name}.{field} must be finite"));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftProcess {
    pub mean: f64,
    pub relaxation_time_s: f64,
    pub stationary_sigma: f64,
    pub diurnal_amplitude: f64,
    pub diurnal_phase_s: f64,
    /// Relaxing (OU) component.
    pub ou_value: f64,
    /// `ou_value` plus the diurnal term at the last update time.
    pub current_value: f64,
}

impl DriftProcess {
    /// Builds the process at simulation time `t0_s`.
    pub fn new(spec: &DriftSpec, t0_s: f64) -> Self {
        let ou = spec.initial.unwrap_or(spec.mean);
        let mut p = Self {
            mean: spec.mean,
            relaxation_time_s: spec.relaxation_time_s,
            stationary_sigma: spec.stationary_sigma,
            diurnal_amplitude: spec.diurnal_amplitude,
            diurnal_phase_s: spec.diurnal_phase_s,
            ou_value: ou,
            current_value: ou,
        };
        p.current_value = ou + p.diurnal(t0_s);
        p
    }

    pub fn diurnal(&self, sim_time_s: f64) -> f64 {
        if self.diurnal_amplitude == 0.0 {
            return 0.0;
        }
        let angle = 2.0 * std::f64::consts::PI * (sim_time_s + self.diurnal_phase_s) / SECONDS_PER_DAY;
        self.diurnal_amplitude * angle.sin()
    }

    /// One exact OU transition of length `dt_s` ending at `sim_time_s`, with the
    /// noise amplitude scaled by `sigma_scale`.
    pub fn step(&self, dt_s: f64, sim_time_s: f64, noise: f64, sigma_scale: f64) -> Self {
        debug_assert!(dt_s > 0.0);
        let a = (-dt_s / self.relaxation_time_s).exp();
        let sigma = self.stationary_sigma * sigma_scale;
        let ou = self.mean + (self.ou_value - self.mean) * a + sigma * (1.0 - a * a).sqrt() * noise;
        Self {
            ou_value: ou,
            current_value: ou + self.diurnal(sim_time_s),
            ..*self
        }
    }
}

/// Advances `process` by `dt_s` to `sim_time_s` given a standard normal draw.
pub fn drift_step(process: &DriftProcess, dt_s: f64, sim_time_s: f64, noise: f64) -> DriftProcess {
    process.step(dt_s, sim_time_s, noise, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberModel {
    pub length_km: f64,
    pub loss_db: f64,
    /// Multiplier on the polarization noise amplitude during daylight.
    pub polarization_daylight_boost: f64,
}

impl Default for FiberModel {
    fn default() -> Self {
        Self {
            length_km: 22.0,
            loss_db: 12.6,
            polarization_daylight_boost: 3.0,
        }
    }
}

impl FiberModel {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.loss_db >= 0.0) {
            errors.push("fiber.loss_db must be >= 0".into());
        }
        if !(self.length_km >= 0.0) {
            errors.push("fiber.length_km must be >= 0".into());
        }
        if !(self.polarization_daylight_boost >= 1.0) {
            errors.push("fiber.polarization_daylight_boost must be >= 1".into());
        }
    }
}

pub fn fiber_transmittance(fiber: &FiberModel) -> Result<f64> {
    db_to_transmittance(fiber.loss_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaylightWindow {
    pub start_hour: f64,
    pub end_hour: f64,
    /// Time of day (seconds after midnight) at simulation time zero.
    pub start_time_of_day_s: f64,
}

impl Default for DaylightWindow {
    fn default() -> Self {
        Self {
            start_hour: 6.0,
            end_hour: 18.0,
            start_time_of_day_s: 0.0,
        }
    }
}

impl DaylightWindow {
    pub fn is_daylight(&self, sim_time_s: f64) -> bool {
        let tod = (self.start_time_of_day_s + sim_time_s).rem_euclid(SECONDS_PER_DAY);
        let hour = tod / 3600.0;
        hour >= self.start_hour && hour < self.end_hour
    }
}

/// Drift parameters of every environmental quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub enabled: bool,
    pub fiber_delay_ps: DriftSpec,
    pub polarization_rad: DriftSpec,
    pub amzi_temp_error_k: DriftSpec,
    pub bias_drift: DriftSpec,
    pub daylight: DaylightWindow,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            // 50 ps peak-to-peak daily swing, peaking mid-afternoon.
            fiber_delay_ps: DriftSpec {
                relaxation_time_s: 3600.0,
                stationary_sigma: 2.0,
                diurnal_amplitude: 25.0,
                diurnal_phase_s: -32_400.0,
                ..DriftSpec::default()
            },
            polarization_rad: DriftSpec {
                relaxation_time_s: 600.0,
                stationary_sigma: 0.3,
                ..DriftSpec::default()
            },
            amzi_temp_error_k: DriftSpec {
                relaxation_time_s: 14_400.0,
                stationary_sigma: 0.02,
                ..DriftSpec::default()
            },
            bias_drift: DriftSpec {
                relaxation_time_s: 7200.0,
                stationary_sigma: 0.1,
                ..DriftSpec::default()
            },
            daylight: DaylightWindow::default(),
        }
    }
}

impl EnvironmentConfig {
    pub fn frozen() -> Self {
        Self {
            enabled: false,
            fiber_delay_ps: DriftSpec::frozen(0.0),
            polarization_rad: DriftSpec::frozen(0.0),
            amzi_temp_error_k: DriftSpec::frozen(0.0),
            bias_drift: DriftSpec::frozen(0.0),
            daylight: DaylightWindow::default(),
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        self.fiber_delay_ps.validate("environment.fiber_delay_ps", errors);
        self.polarization_rad.validate("environment.polarization_rad", errors);
        self.amzi_temp_error_k.validate("environment.amzi_temp_error_k", errors);
        self.bias_drift.validate("environment.bias_drift", errors);
        let d = &self.daylight;
        if !(0.0..=24.0).contains(&d.start_hour) || !(0.0..=24.0).contains(&d.end_hour) {
            errors.push("environment.daylight hours must lie in [0, 24]".into());
        } else if d.start_hour > d.end_hour {
            errors.push("environment.daylight.start_hour must not exceed end_hour".into());
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub fiber_delay_ps: f64,
    pub polarization_angle_rad: f64,
    pub amzi_temp_error_k: f64,
    pub bias_drift: f64,
    pub sim_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSet {
    pub fiber_delay: DriftProcess,
    pub polarization: DriftProcess,
    pub amzi_temp: DriftProcess,
    pub bias: DriftProcess,
}

impl DriftSet {
    pub fn new(cfg: &EnvironmentConfig, t0_s: f64) -> Self {
        Self {
            fiber_delay: DriftProcess::new(&cfg.fiber_delay_ps, t0_s),
            polarization: DriftProcess::new(&cfg.polarization_rad, t0_s),
            amzi_temp: DriftProcess::new(&cfg.amzi_temp_error_k, t0_s),
            bias: DriftProcess::new(&cfg.bias_drift, t0_s),
        }
    }

    pub fn state_at(&self, sim_time_s: f64) -> EnvironmentState {
        EnvironmentState {
            fiber_delay_ps: self.fiber_delay.current_value,
            polarization_angle_rad: self.polarization.current_value,
            amzi_temp_error_k: self.amzi_temp.current_value,
            bias_drift: self.bias.current_value,
            sim_time_s,
        }
    }
}

/// Independent random streams, one per drift process.
///
/// The fiber, polarization and interferometer streams depend only on the
/// master seed, so every channel worker reproduces the same shared link
/// trajectory. The bias stream is keyed by channel (each channel has its own
/// modulator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStreams {
    pub fiber_delay: ChaCha8Rng,
    pub polarization: ChaCha8Rng,
    pub amzi_temp: ChaCha8Rng,
    pub bias: ChaCha8Rng,
}

pub(crate) fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

impl DriftStreams {
    pub fn new(seed: u64, channel_index: u8) -> Self {
        Self {
            fiber_delay: stream(seed, 0x100),
            polarization: stream(seed, 0x101),
            amzi_temp: stream(seed, 0x102),
            bias: stream(seed, 0x200 + u64::from(channel_index)),
        }
    }
}

/// Advances every drift process by `dt_s`. The polarization noise amplitude is
/// multiplied by the fiber's daylight boost when the step starts in daylight.
pub fn advance_environment(
    env: &EnvironmentState,
    processes: &DriftSet,
    fiber: &FiberModel,
    daylight: &DaylightWindow,
    dt_s: f64,
    streams: &mut DriftStreams,
) -> (EnvironmentState, DriftSet) {
    let t = env.sim_time_s + dt_s;
    let boost = if daylight.is_daylight(env.sim_time_s) {
        fiber.polarization_daylight_boost
    } else {
        1.0
    };
    let draw = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let next = DriftSet {
        fiber_delay: processes
            .fiber_delay
            .step(dt_s, t, draw(&mut streams.fiber_delay), 1.0),
        polarization: processes
            .polarization
            .step(dt_s, t, draw(&mut streams.polarization), boost),
        amzi_temp: processes
            .amzi_temp
            .step(dt_s, t, draw(&mut streams.amzi_temp), 1.0),
        bias: processes.bias.step(dt_s, t, draw(&mut streams.bias), 1.0),
    };
    (next.state_at(t), next)
}

/// Stateful environment for one channel worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub state: EnvironmentState,
    pub processes: DriftSet,
    pub streams: DriftStreams,
    pub fiber: FiberModel,
    pub daylight: DaylightWindow,
    pub enabled: bool,
}

impl Environment {
    pub fn new(cfg: &EnvironmentConfig, fiber: FiberModel, seed: u64, channel_index: u8) -> Self {
        let processes = DriftSet::new(cfg, 0.0);
        Self {
            state: processes.state_at(0.0),
            processes,
            streams: DriftStreams::new(seed, channel_index),
            fiber,
            daylight: cfg.daylight,
            enabled: cfg.enabled,
        }
    }

    /// Advances by `dt_s`. A disabled environment only advances its clock.
    pub fn advance(&mut self, dt_s: f64) -> &EnvironmentState {
        if self.enabled {
            let (state, processes) = advance_environment(
                &self.state,
                &self.processes,
                &self.fiber,
                &self.daylight,
                dt_s,
                &mut self.streams,
            );
            self.state = state;
            self.processes = processes;
        } else {
            self.state.sim_time_s += dt_s;
        }
        &self.state
    }
}
