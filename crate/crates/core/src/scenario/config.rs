//! Scenario configuration: TOML file with `[run]`, `[fiber]`, `[environment]`,
//! `[stabilizer]`, `[distill]`, `[rate]` tables and one `[[channel]]` table per
//! wavelength. Every key is optional; omitted keys take the documented defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{EnvironmentConfig, FiberModel};
use crate::distill::{PipelineConfig, RateFormulaConfig};
use crate::error::{Error, Result};
use crate::optics::{ChannelOptics, DetectorModel, InterferometerModel, SimMode, SourceModel, DEFAULT_PULSE_CAP};
use crate::stabilizer::{Objective, TunableParameter};
use crate::timebin::{grid_slot, Parameter, SystemOperatingPoint, WavelengthChannel, MAX_CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub duration_s: f64,
    pub epoch_s: f64,
    pub mode: SimMode,
    pub seed: u64,
    pub pulse_cap: u64,
    /// Simulated time between checkpoints.
    pub checkpoint_interval_s: f64,
    /// Write every n-th epoch to the time-series CSV.
    pub csv_stride: u64,
    /// Default output directory when none is given on the command line.
    pub output_dir: Option<String>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            duration_s: 7200.0,
            epoch_s: 1.0,
            mode: SimMode::RateLevel,
            seed: 1,
            pulse_cap: DEFAULT_PULSE_CAP,
            checkpoint_interval_s: 3600.0,
            csv_stride: 1,
            output_dir: None,
        }
    }
}

/// Optional overrides of one tunable parameter's defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterSettings {
    pub step: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub objective: Option<Objective>,
    pub dwell_epochs: Option<u32>,
}

impl ParameterSettings {
    pub fn resolve(&self, id: Parameter) -> TunableParameter {
        let d = TunableParameter::default_for(id);
        TunableParameter {
            id,
            step: self.step.unwrap_or(d.step),
            min: self.min.unwrap_or(d.min),
            max: self.max.unwrap_or(d.max),
            objective: self.objective.unwrap_or(d.objective),
            dwell_epochs: self.dwell_epochs.unwrap_or(d.dwell_epochs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizerSettings {
    pub enabled: bool,
    /// Simulated time between the starts of consecutive trial phases.
    pub trial_period_s: f64,
    /// Round-robin tuning order.
    pub order: Vec<Parameter>,
    pub detection_timing: ParameterSettings,
    pub encoder_bias: ParameterSettings,
    pub amzi_temperature: ParameterSettings,
    pub phase_comp_amplitude: ParameterSettings,
}

impl Default for StabilizerSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            trial_period_s: 10.0,
            order: Parameter::ALL.to_vec(),
            detection_timing: ParameterSettings::default(),
            encoder_bias: ParameterSettings::default(),
            amzi_temperature: ParameterSettings::default(),
            phase_comp_amplitude: ParameterSettings::default(),
        }
    }
}

impl StabilizerSettings {
    pub fn parameters(&self) -> Vec<TunableParameter> {
        self.order
            .iter()
            .map(|&id| {
                let s = match id {
                    Parameter::DetectionTiming => &self.detection_timing,
                    Parameter::EncoderBias => &self.encoder_bias,
                    Parameter::AmziTemperature => &self.amzi_temperature,
                    Parameter::PhaseCompAmplitude => &self.phase_comp_amplitude,
                };
                s.resolve(id)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub wavelength_nm: f64,
    pub source: SourceModel,
    pub interferometer: InterferometerModel,
    pub detector: DetectorModel,
    pub receiver_transmittance: f64,
    pub phase_offset_rad: f64,
    pub bias_error_gain: f64,
    pub initial_point: SystemOperatingPoint,
    /// Per-channel override of `rate.kappa`.
    pub kappa: Option<f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let o = ChannelOptics::default();
        Self {
            wavelength_nm: 1547.72,
            source: o.source,
            interferometer: o.interferometer,
            detector: o.detector,
            receiver_transmittance: o.receiver_transmittance,
            phase_offset_rad: o.phase_offset_rad,
            bias_error_gain: o.bias_error_gain,
            initial_point: SystemOperatingPoint::NOMINAL,
            kappa: None,
        }
    }
}

impl ChannelConfig {
    pub fn optics(&self) -> ChannelOptics {
        ChannelOptics {
            source: self.source,
            interferometer: self.interferometer,
            detector: self.detector,
            receiver_transmittance: self.receiver_transmittance,
            phase_offset_rad: self.phase_offset_rad,
            bias_error_gain: self.bias_error_gain,
        }
    }

    pub fn rate(&self, base: &RateFormulaConfig) -> RateFormulaConfig {
        RateFormulaConfig {
            kappa: self.kappa.unwrap_or(base.kappa),
            ..*base
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSettings,
    pub fiber: FiberModel,
    pub environment: EnvironmentConfig,
    pub stabilizer: StabilizerSettings,
    pub distill: PipelineConfig,
    pub rate: RateFormulaConfig,
    #[serde(rename = "channel")]
    pub channels: Vec<ChannelConfig>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Parse("configuration file is empty".into()));
        }
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let run = &self.run;
        if !(run.epoch_s > 0.0 && run.epoch_s.is_finite()) {
            errors.push("run.epoch_s must be > 0".into());
        }
        if !(run.duration_s >= run.epoch_s) {
            errors.push("run.duration_s must be >= run.epoch_s".into());
        }
        if !(run.checkpoint_interval_s > 0.0) {
            errors.push("run.checkpoint_interval_s must be > 0".into());
        }
        if run.csv_stride == 0 {
            errors.push("run.csv_stride must be >= 1".into());
        }
        if run.pulse_cap == 0 {
            errors.push("run.pulse_cap must be >= 1".into());
        }

        if self.channels.is_empty() || self.channels.len() > MAX_CHANNELS {
            errors.push(format!(
                "between 1 and {MAX_CHANNELS} [[channel]] sections are required, found {}",
                self.channels.len()
            ));
        }
        let mut slots = Vec::new();
        for (i, ch) in self.channels.iter().enumerate() {
            let name = format!("channel[{i}]");
            match grid_slot(ch.wavelength_nm) {
                Some(slot) if slots.contains(&slot) => {
                    errors.push(format!("{name}.wavelength_nm {} duplicates another channel", ch.wavelength_nm))
                }
                Some(slot) => slots.push(slot),
                None => errors.push(format!(
                    "{name}.wavelength_nm {} is not on the 100 GHz grid",
                    ch.wavelength_nm
                )),
            }
            ch.optics().validate(&name, &mut errors);
            if let Some(k) = ch.kappa {
                if !(k > 0.0 && k <= 1.0) {
                    errors.push(format!("{name}.kappa must be in (0, 1]"));
                }
            }
            if run.mode == SimMode::PulseMc && run.epoch_s > 0.0 {
                let gates = (run.epoch_s * ch.source.clock_rate_hz).round() as u64;
                if gates > run.pulse_cap {
                    errors.push(format!(
                        "{name}: pulse_mc epoch of {gates} gates exceeds run.pulse_cap {}; use rate_level or a shorter epoch",
                        run.pulse_cap
                    ));
                }
            }
        }

        self.fiber.validate(&mut errors);
        self.environment.validate(&mut errors);
        self.distill.validate(&mut errors);
        self.rate.validate("rate", &mut errors);
        let st = &self.stabilizer;
        if !(st.trial_period_s > 0.0) {
            errors.push("stabilizer.trial_period_s must be > 0".into());
        }
        let mut seen = Vec::new();
        for p in &st.order {
            if seen.contains(p) {
                errors.push(format!("stabilizer.order lists {p} twice"));
            }
            seen.push(*p);
        }
        for p in st.parameters() {
            p.validate(&mut errors);
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn wavelength_channels(&self) -> Result<Vec<WavelengthChannel>> {
        self.channels
            .iter()
            .enumerate()
            .map(|(i, c)| WavelengthChannel::new(i as u8, c.wavelength_nm))
            .collect()
    }

    pub fn total_epochs(&self) -> u64 {
        (self.run.duration_s / self.run.epoch_s + 1e-9).floor() as u64
    }

    /// Converts a simulated duration to a whole number of epochs (at least one).
    pub fn epochs_for(&self, seconds: f64) -> u64 {
        ((seconds / self.run.epoch_s).round() as u64).max(1)
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = ScenarioConfig::parse(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_channels() -> &'static str {
        r#"
        [run]
        duration_s = 20

        [[channel]]
        wavelength_nm = 1547.72
        receiver_transmittance = 0.1474

        [[channel]]
        wavelength_nm = 1550.92
        receiver_transmittance = 0.0782
        kappa = 0.648
        "#
    }

    #[test]
    fn parses_with_defaults() {
        let cfg = ScenarioConfig::parse(two_channels()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.channels.len(), 2);
        assert_eq!(cfg.run.epoch_s, 1.0);
        assert_eq!(cfg.fiber.loss_db, 12.6);
        assert_eq!(cfg.channels[1].rate(&cfg.rate).kappa, 0.648);
        assert_eq!(cfg.channels[0].rate(&cfg.rate).kappa, 0.640);
        assert_eq!(cfg.stabilizer.parameters().len(), 4);
        let chans = cfg.wavelength_channels().unwrap();
        assert_eq!(chans[1].grid_slot(), 0);
        assert_eq!(cfg.total_epochs(), 20);
    }

    #[test]
    fn empty_text_is_a_parse_error() {
        assert!(matches!(ScenarioConfig::parse(" \n"), Err(Error::Parse(_))));
        assert!(matches!(ScenarioConfig::parse("[run]\nbogus = 1"), Err(Error::Parse(_))));
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut cfg = ScenarioConfig::parse(two_channels()).unwrap();
        cfg.run.duration_s = 0.5;
        cfg.channels[1].wavelength_nm = 1547.72;
        cfg.channels[0].receiver_transmittance = 0.0;
        let Err(Error::Validation(errs)) = cfg.validate() else {
            panic!("expected validation error")
        };
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn nine_channels_rejected() {
        let mut cfg = ScenarioConfig::parse(two_channels()).unwrap();
        cfg.channels = (0..9)
            .map(|s| ChannelConfig {
                wavelength_nm: crate::timebin::slot_wavelength_nm(s % 8),
                ..ChannelConfig::default()
            })
            .collect();
        let Err(Error::Validation(errs)) = cfg.validate() else {
            panic!("expected validation error")
        };
        assert!(errs.iter().any(|e| e.contains("between 1 and 8")));
    }

    #[test]
    fn pulse_mc_epoch_over_cap_is_rejected() {
        let mut cfg = ScenarioConfig::parse(two_channels()).unwrap();
        cfg.run.mode = SimMode::PulseMc;
        assert!(cfg.validate().is_err());
        cfg.run.epoch_s = 1e-3;
        cfg.run.duration_s = 1e-2;
        cfg.validate().unwrap();
    }

    #[test]
    fn digest_tracks_content() {
        let a = ScenarioConfig::parse(two_channels()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.run.seed += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
