//! Classical post-processing: sifting, QBER estimation, Cascade
//! reconciliation, Toeplitz privacy amplification and secure-rate formulas.

pub mod cascade;
pub mod rate;
pub mod sift;
pub mod toeplitz;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitBuf;
use crate::error::{Error, Result};

pub use cascade::{cascade_reconcile, cascade_with_block_size, first_block_size, CascadeRun, ReconciledBlock};
pub use rate::{secure_fraction, RateFormulaConfig, RateFormulaKind};
pub use sift::{estimate_qber, sift, synthetic_block, QberEstimate, SiftedBlock};
pub use toeplitz::{toeplitz_amplify, toeplitz_hash, SecureKeyBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    /// Distill one representative block per period and scale its yield to the
    /// period's sifted total.
    Sampled,
    /// Distill every sifted bit.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_fraction: f64,
    pub sample_floor: usize,
    pub block_size: usize,
    /// Lower clamp on the QBER used to size Cascade's first pass.
    pub min_cascade_qber: f64,
    pub mode: DistillMode,
    pub period_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_fraction: 0.05,
            sample_floor: 100,
            block_size: 100_000,
            min_cascade_qber: 0.002,
            mode: DistillMode::Sampled,
            period_s: 300.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.sample_fraction > 0.0 && self.sample_fraction < 1.0) {
            errors.push("distill.sample_fraction must be in (0, 1)".into());
        }
        if self.block_size == 0 {
            errors.push("distill.block_size must be > 0".into());
        }
        if !(self.min_cascade_qber > 0.0 && self.min_cascade_qber <= cascade::MAX_CASCADE_QBER) {
            errors.push("distill.min_cascade_qber must be in (0, 0.11]".into());
        }
        if !(self.period_s > 0.0) {
            errors.push("distill.period_s must be > 0".into());
        }
    }
}

/// Bookkeeping for one distilled block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillAccounting {
    pub sifted_bits: u64,
    /// Mismatches actually present in the sifted block (known to the simulator only).
    pub actual_errors: u64,
    pub disclosed_sample_bits: u64,
    pub estimated_qber: f64,
    pub reconciled_bits: u64,
    pub leaked_bits: u64,
    pub secure_fraction: f64,
    pub secure_bits: u64,
    pub reconciliation_failed: bool,
}

/// Runs estimate → Cascade → Toeplitz on one sifted block.
///
/// The key length is `floor(base · fraction − leakage)`, clamped to
/// `[0, reconciled length]`. The base is the remaining (undisclosed) length,
/// except under the calibrated formula whose kappa is fitted per sifted bit.
/// A non-positive fraction yields an empty key without reconciling.
pub fn distill_block<R: Rng + ?Sized>(
    sifted: &SiftedBlock,
    rate: &RateFormulaConfig,
    pipeline: &PipelineConfig,
    rng: &mut R,
) -> Result<(SecureKeyBlock, DistillAccounting)> {
    if sifted.is_empty() {
        return Err(Error::EmptyBlock("distillation of an empty sifted block"));
    }
    let mut acct = DistillAccounting {
        sifted_bits: sifted.len() as u64,
        actual_errors: sifted.mismatches() as u64,
        ..DistillAccounting::default()
    };
    let est = estimate_qber(sifted, pipeline.sample_fraction, pipeline.sample_floor, rng)?;
    acct.disclosed_sample_bits = est.disclosed as u64;
    acct.estimated_qber = est.estimated_qber;

    let empty = SecureKeyBlock {
        bits: BitBuf::new(),
        toeplitz_seed: BitBuf::new(),
    };
    let fraction = if est.estimated_qber < 0.5 {
        secure_fraction(rate, est.estimated_qber)?
    } else {
        0.0
    };
    acct.secure_fraction = fraction;
    if fraction <= 0.0 || est.estimated_qber > cascade::MAX_CASCADE_QBER {
        return Ok((empty, acct));
    }

    let cascade_qber = est.estimated_qber.max(pipeline.min_cascade_qber);
    let mut reconciled = cascade_reconcile(&est.remaining, cascade_qber, rng)?;
    reconciled.disclosed_sample_bits = est.disclosed as u64;
    reconciled.estimated_qber = est.estimated_qber;
    acct.reconciled_bits = reconciled.bits.len() as u64;
    acct.leaked_bits = reconciled.leaked_bits;

    let base = if rate.kind == RateFormulaKind::Calibrated {
        sifted.len()
    } else {
        est.remaining.len()
    } as f64;
    let leakage = if rate.subtracts_leakage() {
        reconciled.leaked_bits as f64
    } else {
        0.0
    };
    let m = (base * fraction - leakage).floor().clamp(0.0, reconciled.bits.len() as f64) as usize;
    if m == 0 {
        return Ok((empty, acct));
    }
    let seed = BitBuf::random(reconciled.bits.len() + m - 1, rng);
    let key = toeplitz_amplify(&reconciled, m, &seed)?;
    acct.secure_bits = m as u64;
    Ok((key, acct))
}
