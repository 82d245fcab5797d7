//! Per-gate detection model of one wavelength channel and epoch simulation.
//!
//! The transmitter interferometer prepares pulse pairs, the link and receiver
//! attenuate them, and the receiver interferometer plus gated detectors turn
//! them into clicks. Misalignment enters in two places: the detection-timing
//! offset reduces the click probability through a Gaussian gate window, and
//! the interferometer phase mismatch, encoder bias and (for polarization
//! dependent interferometers) the fiber polarization raise the conditional
//! error of a signal click.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::bits::BitBuf;
use crate::channel::EnvironmentState;
use crate::error::{Error, Result};
use crate::timebin::{Basis, EpochStats, SystemOperatingPoint, WavelengthChannel};

/// Count-rate fraction retained at the reference timing offset.
pub const TIMING_REFERENCE_FACTOR: f64 = 0.8;
pub const TIMING_REFERENCE_OFFSET_PS: f64 = 50.0;

/// Gate-window width that retains 80 % of the count rate at 50 ps offset.
pub fn calibrated_timing_sigma_ps() -> f64 {
    TIMING_REFERENCE_OFFSET_PS / (2.0 * (1.0 / TIMING_REFERENCE_FACTOR).ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceModel {
    pub clock_rate_hz: f64,
    pub mean_photon_number: f64,
    pub pulse_pair_delay_ps: f64,
    /// Whether `mean_photon_number` counts photons per pulse pair (true) or per
    /// individual pulse (false, the pair then carries twice as many).
    pub mu_per_pulse_pair: bool,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            clock_rate_hz: 1.24e9,
            mean_photon_number: 0.5,
            pulse_pair_delay_ps: 400.0,
            mu_per_pulse_pair: true,
        }
    }
}

impl SourceModel {
    pub fn photons_per_pair(&self) -> f64 {
        if self.mu_per_pulse_pair {
            self.mean_photon_number
        } else {
            2.0 * self.mean_photon_number
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferometerModel {
    pub extinction_ratio_db: f64,
    pub temp_to_phase_rad_per_k: f64,
    pub polarization_independent: bool,
    /// Error gain of the polarization angle; only used when not polarization independent.
    pub pol_sensitivity: f64,
}

impl Default for InterferometerModel {
    fn default() -> Self {
        Self {
            extinction_ratio_db: 20.0,
            temp_to_phase_rad_per_k: 2.0 * std::f64::consts::PI / 0.25,
            polarization_independent: true,
            pol_sensitivity: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub quantum_efficiency: f64,
    pub dark_count_rate_hz: f64,
    pub timing_sigma_ps: f64,
    pub dead_time_s: f64,
    /// Detectors whose dark counts land in a gate.
    pub active_detectors: u32,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            quantum_efficiency: 0.125,
            dark_count_rate_hz: 1.5e3,
            timing_sigma_ps: calibrated_timing_sigma_ps(),
            dead_time_s: 0.0,
            active_detectors: 2,
        }
    }
}

/// Hardware of one wavelength channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelOptics {
    pub source: SourceModel,
    pub interferometer: InterferometerModel,
    pub detector: DetectorModel,
    /// Receiver excess transmittance lumping every loss not modeled explicitly.
    pub receiver_transmittance: f64,
    /// Static phase mismatch of this wavelength in the shared interferometer.
    pub phase_offset_rad: f64,
    /// Quadratic error coefficient of the encoder bias.
    pub bias_error_gain: f64,
}

impl Default for ChannelOptics {
    fn default() -> Self {
        Self {
            source: SourceModel::default(),
            interferometer: InterferometerModel::default(),
            detector: DetectorModel::default(),
            receiver_transmittance: 0.1474,
            phase_offset_rad: 0.0,
            bias_error_gain: 0.05,
        }
    }
}

impl ChannelOptics {
    pub fn validate(&self, name: &str, errors: &mut Vec<String>) {
        let s = &self.source;
        if !(s.clock_rate_hz > 0.0) {
            errors.push(format!("{name}.source.clock_rate_hz must be > 0"));
        }
        if !(s.mean_photon_number > 0.0 && s.mean_photon_number <= 1.0) {
            errors.push(format!("{name}.source.mean_photon_number must be in (0, 1]"));
        }
        if !(s.pulse_pair_delay_ps > 0.0) {
            errors.push(format!("{name}.source.pulse_pair_delay_ps must be > 0"));
        }
        if !(self.interferometer.extinction_ratio_db > 0.0) {
            errors.push(format!("{name}.interferometer.extinction_ratio_db must be > 0"));
        }
        if !self.interferometer.temp_to_phase_rad_per_k.is_finite() {
            errors.push(format!("{name}.interferometer.temp_to_phase_rad_per_k must be finite"));
        }
        if !(self.interferometer.pol_sensitivity >= 0.0) {
            errors.push(format!("{name}.interferometer.pol_sensitivity must be >= 0"));
        }
        let d = &self.detector;
        if !(0.0..=1.0).contains(&d.quantum_efficiency) {
            errors.push(format!("{name}.detector.quantum_efficiency must be in [0, 1]"));
        }
        if !(d.dark_count_rate_hz >= 0.0) {
            errors.push(format!("{name}.detector.dark_count_rate_hz must be >= 0"));
        }
        if !(d.timing_sigma_ps > 0.0) {
            errors.push(format!("{name}.detector.timing_sigma_ps must be > 0"));
        }
        if !(d.dead_time_s >= 0.0) {
            errors.push(format!("{name}.detector.dead_time_s must be >= 0"));
        }
        if !(self.receiver_transmittance > 0.0 && self.receiver_transmittance <= 1.0) {
            errors.push(format!("{name}.receiver_transmittance must be in (0, 1]"));
        }
        if !self.phase_offset_rad.is_finite() {
            errors.push(format!("{name}.phase_offset_rad must be finite"));
        }
        if !(self.bias_error_gain >= 0.0) {
            errors.push(format!("{name}.bias_error_gain must be >= 0"));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbabilities {
    pub p_signal_click: f64,
    pub p_dark_click: f64,
    pub p_sift_keep: f64,
    pub conditional_error: f64,
}

impl OutcomeProbabilities {
    pub fn p_click(&self) -> f64 {
        self.p_signal_click + self.p_dark_click
    }
}

/// Fraction of the count rate kept with the gate `offset_ps` away from the pulse.
pub fn timing_factor(offset_ps: f64, timing_sigma_ps: f64) -> f64 {
    (-offset_ps * offset_ps / (2.0 * timing_sigma_ps * timing_sigma_ps)).exp()
}

pub fn fringe_visibility(extinction_ratio_db: f64) -> f64 {
    if extinction_ratio_db.is_infinite() {
        return 1.0;
    }
    let er = 10f64.powf(extinction_ratio_db / 10.0);
    (er - 1.0) / (er + 1.0)
}

/// Error probability of an interferometric measurement with the given
/// extinction ratio and phase mismatch.
pub fn interference_error(extinction_ratio_db: f64, phase_mismatch_rad: f64) -> f64 {
    let v = fringe_visibility(extinction_ratio_db);
    ((1.0 - v * phase_mismatch_rad.cos()) / 2.0).clamp(0.0, 1.0)
}

/// Total phase mismatch seen by the channel at this operating point.
pub fn phase_mismatch(optics: &ChannelOptics, op: &SystemOperatingPoint, env: &EnvironmentState) -> f64 {
    optics.interferometer.temp_to_phase_rad_per_k * (op.amzi_temperature_k + env.amzi_temp_error_k)
        + (optics.phase_offset_rad - op.phase_comp_amplitude_rad)
}

pub fn outcome_probabilities(
    optics: &ChannelOptics,
    fiber_transmittance: f64,
    op: &SystemOperatingPoint,
    env: &EnvironmentState,
) -> Result<OutcomeProbabilities> {
    if !(optics.receiver_transmittance > 0.0 && optics.receiver_transmittance <= 1.0) {
        return Err(Error::Config(format!(
            "receiver excess transmittance {} outside (0, 1]",
            optics.receiver_transmittance
        )));
    }
    let det = &optics.detector;
    let ifm = &optics.interferometer;
    let offset = op.detection_timing_offset_ps + env.fiber_delay_ps;
    let mean_detected = optics.source.photons_per_pair()
        * fiber_transmittance
        * optics.receiver_transmittance
        * det.quantum_efficiency
        * timing_factor(offset, det.timing_sigma_ps);
    let mut p_signal = -(-mean_detected).exp_m1();
    let mut p_dark = f64::from(det.active_detectors) * det.dark_count_rate_hz / optics.source.clock_rate_hz;

    if det.dead_time_s > 0.0 {
        let rate = (p_signal + p_dark) * optics.source.clock_rate_hz;
        let keep = 1.0 / (1.0 + rate * det.dead_time_s);
        p_signal *= keep;
        p_dark *= keep;
    }

    let bias = op.encoder_bias + env.bias_drift;
    let pol_error = if ifm.polarization_independent {
        0.0
    } else {
        ifm.pol_sensitivity * env.polarization_angle_rad.sin().powi(2)
    };
    let conditional_error = (interference_error(ifm.extinction_ratio_db, phase_mismatch(optics, op, env))
        + optics.bias_error_gain * bias * bias
        + pol_error)
        .clamp(0.0, 0.5);

    Ok(OutcomeProbabilities {
        p_signal_click: p_signal,
        p_dark_click: p_dark.min(1.0),
        p_sift_keep: 0.5,
        conditional_error,
    })
}

/// Expected QBER of the sifted key: signal clicks err with the conditional
/// error, dark clicks are random.
pub fn epoch_qber(probs: &OutcomeProbabilities) -> Result<f64> {
    let total = probs.p_click();
    if total <= 0.0 {
        return Err(Error::EmptyChannel);
    }
    Ok((probs.conditional_error * probs.p_signal_click + 0.5 * probs.p_dark_click) / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    PulseMc,
    RateLevel,
}

impl std::str::FromStr for SimMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pulse_mc" => Ok(SimMode::PulseMc),
            "rate_level" => Ok(SimMode::RateLevel),
            other => Err(Error::Parse(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimMode::PulseMc => "pulse_mc",
            SimMode::RateLevel => "rate_level",
        })
    }
}

/// Default ceiling on gates simulated one by one.
pub const DEFAULT_PULSE_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSpec {
    pub mode: SimMode,
    pub duration_s: f64,
    pub clock_rate_hz: f64,
    pub pulse_cap: u64,
    /// Whether to return per-detection bit and basis records.
    pub record_bits: bool,
    pub epoch_index: u64,
    pub channel: WavelengthChannel,
}

/// Raw detection record: one entry per click, both parties.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionRecord {
    pub alice_bits: BitBuf,
    pub bob_bits: BitBuf,
    pub alice_bases: Vec<Basis>,
    pub bob_bases: Vec<Basis>,
}

impl DetectionRecord {
    fn with_capacity(n: usize) -> Self {
        Self {
            alice_bits: BitBuf::with_capacity(n),
            bob_bits: BitBuf::with_capacity(n),
            alice_bases: Vec::with_capacity(n),
            bob_bases: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, alice_bit: bool, bob_bit: bool, alice_basis: Basis, bob_basis: Basis) {
        self.alice_bits.push(alice_bit);
        self.bob_bits.push(bob_bit);
        self.alice_bases.push(alice_basis);
        self.bob_bases.push(bob_basis);
    }

    pub fn len(&self) -> usize {
        self.alice_bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub stats: EpochStats,
    pub record: Option<DetectionRecord>,
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial parameters").sample(rng)
}

fn other(b: Basis) -> Basis {
    match b {
        Basis::Time => Basis::Phase,
        Basis::Phase => Basis::Time,
    }
}

/// Simulates one epoch of gated transmission on a channel.
pub fn simulate_epoch<R: Rng + ?Sized>(
    spec: &EpochSpec,
    probs: &OutcomeProbabilities,
    rng: &mut R,
) -> Result<EpochOutcome> {
    if !(spec.duration_s > 0.0) {
        return Err(Error::Domain(format!("epoch duration {} s", spec.duration_s)));
    }
    let gates = (spec.duration_s * spec.clock_rate_hz).round() as u64;
    let mut stats = EpochStats::empty(spec.epoch_index, spec.channel);
    stats.gated_pulses = gates;

    let record = match spec.mode {
        SimMode::PulseMc => {
            if gates > spec.pulse_cap {
                return Err(Error::CapExceeded {
                    gates,
                    cap: spec.pulse_cap,
                });
            }
            pulse_level(gates, probs, spec.record_bits, &mut stats, rng)
        }
        SimMode::RateLevel => rate_level(gates, probs, spec.record_bits, &mut stats, rng),
    };

    if stats.sifted_bits > 0 {
        stats.qber = stats.sifted_errors as f64 / stats.sifted_bits as f64;
    }
    stats.sifted_rate_bps = stats.sifted_bits as f64 / spec.duration_s;
    Ok(EpochOutcome { stats, record })
}

fn pulse_level<R: Rng + ?Sized>(
    gates: u64,
    probs: &OutcomeProbabilities,
    record_bits: bool,
    stats: &mut EpochStats,
    rng: &mut R,
) -> Option<DetectionRecord> {
    let p_sig = probs.p_signal_click;
    let p_any = p_sig + (1.0 - p_sig) * probs.p_dark_click;
    let mut record = record_bits.then(DetectionRecord::default);
    for _ in 0..gates {
        let u: f64 = rng.random();
        if u >= p_any {
            continue;
        }
        let signal = u < p_sig;
        if signal {
            stats.signal_clicks += 1;
        } else {
            stats.dark_clicks += 1;
        }
        let alice_bit: bool = rng.random();
        let alice_basis = Basis::from_bit(rng.random());
        let bob_basis = if rng.random::<f64>() < probs.p_sift_keep {
            alice_basis
        } else {
            other(alice_basis)
        };
        let bob_bit = if bob_basis != alice_basis || !signal {
            rng.random()
        } else {
            alice_bit ^ (rng.random::<f64>() < probs.conditional_error)
        };
        if bob_basis == alice_basis {
            stats.sifted_bits += 1;
            if bob_bit != alice_bit {
                stats.sifted_errors += 1;
            }
        }
        if let Some(r) = record.as_mut() {
            r.push(alice_bit, bob_bit, alice_basis, bob_basis);
        }
    }
    record
}

fn rate_level<R: Rng + ?Sized>(
    gates: u64,
    probs: &OutcomeProbabilities,
    record_bits: bool,
    stats: &mut EpochStats,
    rng: &mut R,
) -> Option<DetectionRecord> {
    let signal = binomial(rng, gates, probs.p_signal_click);
    let dark = binomial(rng, gates - signal, probs.p_dark_click);
    let sifted_signal = binomial(rng, signal, probs.p_sift_keep);
    let sifted_dark = binomial(rng, dark, probs.p_sift_keep);
    let errors_signal = binomial(rng, sifted_signal, probs.conditional_error);
    let errors_dark = binomial(rng, sifted_dark, 0.5);

    stats.signal_clicks = signal;
    stats.dark_clicks = dark;
    stats.sifted_bits = sifted_signal + sifted_dark;
    stats.sifted_errors = errors_signal + errors_dark;

    if !record_bits {
        return None;
    }
    // Lay out the drawn counts, then shuffle so sifted positions and errors
    // land uniformly at random among the detections.
    let clicks = (signal + dark) as usize;
    let sifted = stats.sifted_bits as usize;
    let errors = stats.sifted_errors as usize;
    let mut kinds: Vec<u8> = Vec::with_capacity(clicks);
    kinds.extend(std::iter::repeat_n(2u8, errors));
    kinds.extend(std::iter::repeat_n(1u8, sifted - errors));
    kinds.extend(std::iter::repeat_n(0u8, clicks - sifted));
    kinds.shuffle(rng);

    let mut record = DetectionRecord::with_capacity(clicks);
    for kind in kinds {
        let alice_bit: bool = rng.random();
        let alice_basis = Basis::from_bit(rng.random());
        match kind {
            0 => record.push(alice_bit, rng.random(), alice_basis, other(alice_basis)),
            1 => record.push(alice_bit, alice_bit, alice_basis, alice_basis),
            _ => record.push(alice_bit, !alice_bit, alice_basis, alice_basis),
        }
    }
    Some(record)
}

/// Noise-free counterpart of [`simulate_epoch`]: expected click rate and QBER.
pub fn expected_observation(probs: &OutcomeProbabilities, clock_rate_hz: f64) -> (f64, f64) {
    let count_rate = probs.p_click() * clock_rate_hz;
    let qber = epoch_qber(probs).unwrap_or(0.5);
    (count_rate, qber)
}
