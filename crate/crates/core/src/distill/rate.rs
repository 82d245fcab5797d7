//! Asymptotic secure-fraction formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebin::binary_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFormulaKind {
    /// Single-photon BB84: 1 − f·h(e) − h(e).
    IdealBb84,
    /// Multiphoton-tagged bound for a weak coherent source without decoys.
    GllpMultiphoton,
    /// Ideal BB84 scaled by a fitted efficiency `kappa`.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateFormulaConfig {
    pub kind: RateFormulaKind,
    pub ec_inefficiency_f: f64,
    pub kappa: f64,
    pub mu: f64,
    /// Gain Q: probability of a detection per sent pulse pair.
    pub detection_prob_per_pulse: f64,
    /// Whether distillation subtracts the actual Cascade leakage from the key
    /// length. Unset means: yes, except for `Calibrated`, whose fitted kappa
    /// already covers it.
    pub subtract_leakage: Option<bool>,
}

impl Default for RateFormulaConfig {
    fn default() -> Self {
        Self {
            kind: RateFormulaKind::Calibrated,
            ec_inefficiency_f: 1.1,
            kappa: 0.640,
            mu: 0.5,
            detection_prob_per_pulse: 5e-4,
            subtract_leakage: None,
        }
    }
}

impl RateFormulaConfig {
    pub fn subtracts_leakage(&self) -> bool {
        self.subtract_leakage
            .unwrap_or(self.kind != RateFormulaKind::Calibrated)
    }

    pub fn validate(&self, name: &str, errors: &mut Vec<String>) {
        if !(self.ec_inefficiency_f >= 1.0) {
            errors.push(format!("{name}.ec_inefficiency_f must be >= 1"));
        }
        if self.kind == RateFormulaKind::Calibrated && !(self.kappa > 0.0 && self.kappa <= 1.0) {
            errors.push(format!("{name}.kappa must be in (0, 1]"));
        }
        if !(self.mu >= 0.0) {
            errors.push(format!("{name}.mu must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.detection_prob_per_pulse) {
            errors.push(format!("{name}.detection_prob_per_pulse must be in [0, 1]"));
        }
    }
}

/// Probability that a Poissonian pulse with mean `mu` carries two or more photons.
pub fn multiphoton_probability(mu: f64) -> f64 {
    1.0 - (-mu).exp() * (1.0 + mu)
}

/// Fraction of key bits that survive error correction and privacy amplification.
pub fn secure_fraction(config: &RateFormulaConfig, qber: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&qber) {
        return Err(Error::Domain(format!("secure fraction needs QBER in [0, 0.5), got {qber}")));
    }
    let h = binary_entropy(qber)?;
    let f = config.ec_inefficiency_f;
    let fraction = match config.kind {
        RateFormulaKind::IdealBb84 => 1.0 - f * h - h,
        RateFormulaKind::Calibrated => config.kappa * (1.0 - f * h - h).max(0.0),
        RateFormulaKind::GllpMultiphoton => {
            let q = config.detection_prob_per_pulse;
            let omega = if q > 0.0 {
                (1.0 - multiphoton_probability(config.mu) / q).max(0.0)
            } else {
                0.0
            };
            let single = if omega > 0.0 {
                omega * (1.0 - binary_entropy((qber / omega).min(0.5))?)
            } else {
                0.0
            };
            single - f * h
        }
    };
    Ok(fraction.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(kind: RateFormulaKind) -> RateFormulaConfig {
        RateFormulaConfig {
            kind,
            ..RateFormulaConfig::default()
        }
    }

    #[test]
    fn ideal_examples() {
        let mut c = cfg(RateFormulaKind::IdealBb84);
        assert_eq!(secure_fraction(&c, 0.0).unwrap(), 1.0);
        assert!((secure_fraction(&c, 0.0161).unwrap() - 0.750).abs() < 0.002);
        assert_eq!(secure_fraction(&c, 0.11).unwrap(), 0.0);
        c.ec_inefficiency_f = 1.0;
        assert!(secure_fraction(&c, 0.5).is_err());
    }

    #[test]
    fn calibrated_kappa_reproduces_first_channel_ratio() {
        let ideal = secure_fraction(&cfg(RateFormulaKind::IdealBb84), 0.0161).unwrap();
        let kappa = (151.5 / 315.3) / ideal;
        assert!((kappa - 0.640).abs() < 0.001, "{kappa}");
        let c = RateFormulaConfig {
            kappa,
            ..cfg(RateFormulaKind::Calibrated)
        };
        assert!((secure_fraction(&c, 0.0161).unwrap() - 0.4805).abs() < 1e-4);
    }

    #[test]
    fn gllp_without_decoys_vanishes_at_field_gain() {
        // At mu = 0.5 the multiphoton probability (~9 %) dwarfs a 5e-4 gain.
        let c = cfg(RateFormulaKind::GllpMultiphoton);
        assert!((multiphoton_probability(0.5) - 0.09020).abs() < 1e-5);
        assert_eq!(secure_fraction(&c, 0.0161).unwrap(), 0.0);
        let high_gain = RateFormulaConfig {
            mu: 0.1,
            detection_prob_per_pulse: 0.1,
            ..c
        };
        let v = secure_fraction(&high_gain, 0.01).unwrap();
        assert!(v > 0.0 && v < secure_fraction(&cfg(RateFormulaKind::IdealBb84), 0.01).unwrap());
    }

    proptest! {
        #[test]
        fn non_increasing_in_qber(a in 0.0f64..0.499, b in 0.0f64..0.499, mu in 0.01f64..1.0, q in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for kind in [RateFormulaKind::IdealBb84, RateFormulaKind::GllpMultiphoton, RateFormulaKind::Calibrated] {
                let c = RateFormulaConfig { kind, mu, detection_prob_per_pulse: q, ..RateFormulaConfig::default() };
                prop_assert!(secure_fraction(&c, hi).unwrap() <= secure_fraction(&c, lo).unwrap() + 1e-12);
            }
        }
    }
}
