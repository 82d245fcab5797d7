//! Shared domain types, unit conversions and information-theoretic helpers.
//!
//! Unit conventions: times in picoseconds or seconds as suffixed, temperatures
//! in kelvin offsets from the nominal set point, phases in radians, encoder
//! bias in normalized (dimensionless) volts. Every operating-point field is an
//! offset from the perfectly aligned nominal point, which is all zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Lowest ITU-T 100 GHz grid frequency used by the system (1550.92 nm).
pub const GRID_BASE_THZ: f64 = 193.3;
pub const GRID_SPACING_THZ: f64 = 0.1;
pub const MAX_CHANNELS: usize = 8;
const GRID_TOLERANCE_NM: f64 = 0.02;

/// One WDM slot on the 100 GHz grid between 1545.32 and 1550.92 nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthChannel {
    pub index: u8,
    pub wavelength_nm: f64,
}

impl WavelengthChannel {
    pub fn new(index: u8, wavelength_nm: f64) -> Result<Self> {
        if usize::from(index) >= MAX_CHANNELS {
            return Err(Error::Domain(format!(
                "channel index {index} outside 0..{MAX_CHANNELS}"
            )));
        }
        if grid_slot(wavelength_nm).is_none() {
            return Err(Error::Domain(format!(
                "{wavelength_nm} nm is not a 100 GHz grid point between {:.2} and {:.2} nm",
                slot_wavelength_nm(MAX_CHANNELS - 1),
                slot_wavelength_nm(0)
            )));
        }
        Ok(Self {
            index,
            wavelength_nm,
        })
    }

    pub fn grid_slot(&self) -> usize {
        grid_slot(self.wavelength_nm).expect("validated at construction")
    }
}

/// Wavelength of grid slot `slot` (0 = 1550.92 nm, 7 = 1545.32 nm).
pub fn slot_wavelength_nm(slot: usize) -> f64 {
    let f_thz = GRID_BASE_THZ + GRID_SPACING_THZ * slot as f64;
    SPEED_OF_LIGHT_M_PER_S / (f_thz * 1e12) * 1e9
}

/// Grid slot matching `wavelength_nm`, if any.
pub fn grid_slot(wavelength_nm: f64) -> Option<usize> {
    (0..MAX_CHANNELS).find(|&s| (slot_wavelength_nm(s) - wavelength_nm).abs() <= GRID_TOLERANCE_NM)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Time,
    Phase,
}

impl Basis {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Basis::Phase
        } else {
            Basis::Time
        }
    }
}

/// The four parameters the stabilizer tunes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    DetectionTiming,
    EncoderBias,
    AmziTemperature,
    PhaseCompAmplitude,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [
        Parameter::DetectionTiming,
        Parameter::EncoderBias,
        Parameter::AmziTemperature,
        Parameter::PhaseCompAmplitude,
    ];
}

impl std::fmt::Display for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Parameter::DetectionTiming => "detection_timing",
            Parameter::EncoderBias => "encoder_bias",
            Parameter::AmziTemperature => "amzi_temperature",
            Parameter::PhaseCompAmplitude => "phase_comp_amplitude",
        })
    }
}

/// Quantization steps of the four controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizationGrid {
    pub timing_ps: f64,
    pub bias: f64,
    pub temperature_k: f64,
    pub phase_rad: f64,
}

impl Default for QuantizationGrid {
    fn default() -> Self {
        Self {
            timing_ps: 12.5,
            bias: 0.01,
            temperature_k: 0.01,
            phase_rad: 0.01,
        }
    }
}

impl QuantizationGrid {
    pub fn step(&self, p: Parameter) -> f64 {
        match p {
            Parameter::DetectionTiming => self.timing_ps,
            Parameter::EncoderBias => self.bias,
            Parameter::AmziTemperature => self.temperature_k,
            Parameter::PhaseCompAmplitude => self.phase_rad,
        }
    }
}

/// Snaps `value` to the nearest multiple of `step`.
pub fn quantize(value: f64, step: f64) -> f64 {
    if step > 0.0 {
        (value / step).round() * step
    } else {
        value
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemOperatingPoint {
    pub detection_timing_offset_ps: f64,
    pub encoder_bias: f64,
    pub amzi_temperature_k: f64,
    pub phase_comp_amplitude_rad: f64,
}

impl SystemOperatingPoint {
    pub const NOMINAL: SystemOperatingPoint = SystemOperatingPoint {
        detection_timing_offset_ps: 0.0,
        encoder_bias: 0.0,
        amzi_temperature_k: 0.0,
        phase_comp_amplitude_rad: 0.0,
    };

    pub fn get(&self, p: Parameter) -> f64 {
        match p {
            Parameter::DetectionTiming => self.detection_timing_offset_ps,
            Parameter::EncoderBias => self.encoder_bias,
            Parameter::AmziTemperature => self.amzi_temperature_k,
            Parameter::PhaseCompAmplitude => self.phase_comp_amplitude_rad,
        }
    }

    /// Returns a copy with `p` set to `value` snapped to the grid.
    pub fn with(&self, p: Parameter, value: f64, grid: &QuantizationGrid) -> Self {
        let mut out = *self;
        let v = quantize(value, grid.step(p));
        match p {
            Parameter::DetectionTiming => out.detection_timing_offset_ps = v,
            Parameter::EncoderBias => out.encoder_bias = v,
            Parameter::AmziTemperature => out.amzi_temperature_k = v,
            Parameter::PhaseCompAmplitude => out.phase_comp_amplitude_rad = v,
        }
        out
    }

    pub fn quantized(&self, grid: &QuantizationGrid) -> Self {
        Parameter::ALL
            .iter()
            .fold(*self, |op, &p| op.with(p, op.get(p), grid))
    }

    pub fn is_on_grid(&self, grid: &QuantizationGrid) -> bool {
        Parameter::ALL.iter().all(|&p| {
            let step = grid.step(p);
            let v = self.get(p);
            (v / step - (v / step).round()).abs() * step <= 1e-9
        })
    }
}

/// Per-epoch, per-channel counting statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch_index: u64,
    pub channel: WavelengthChannel,
    pub gated_pulses: u64,
    pub signal_clicks: u64,
    pub dark_clicks: u64,
    pub sifted_bits: u64,
    pub sifted_errors: u64,
    pub qber: f64,
    pub sifted_rate_bps: f64,
    pub secure_rate_bps: f64,
}

impl EpochStats {
    pub fn empty(epoch_index: u64, channel: WavelengthChannel) -> Self {
        Self {
            epoch_index,
            channel,
            gated_pulses: 0,
            signal_clicks: 0,
            dark_clicks: 0,
            sifted_bits: 0,
            sifted_errors: 0,
            qber: 0.0,
            sifted_rate_bps: 0.0,
            secure_rate_bps: 0.0,
        }
    }

    pub fn clicks(&self) -> u64 {
        self.signal_clicks + self.dark_clicks
    }

    pub fn is_consistent(&self) -> bool {
        self.sifted_errors <= self.sifted_bits
            && self.sifted_bits <= self.clicks()
            && (0.0..=1.0).contains(&self.qber)
            && (self.sifted_bits == 0
                || (self.qber - self.sifted_errors as f64 / self.sifted_bits as f64).abs() < 1e-12)
    }
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("binary entropy of {p}")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Linear power transmittance of a `loss_db` attenuation.
pub fn db_to_transmittance(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(Error::Domain(format!("negative loss {loss_db} dB")));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

pub fn qber_from_counts(errors: u64, sifted: u64) -> Result<f64> {
    if sifted == 0 {
        return Err(Error::EmptyBlock("no sifted bits in epoch"));
    }
    if errors > sifted {
        return Err(Error::Domain(format!("{errors} errors in {sifted} sifted bits")));
    }
    Ok(errors as f64 / sifted as f64)
}
