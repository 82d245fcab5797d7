//! Run aggregates and the channel-loss normalized key metric.

use serde::{Deserialize, Serialize};

use crate::timebin::db_to_transmittance;

/// Seconds in a 30-day month.
pub const THIRTY_DAYS_S: f64 = 30.0 * 86_400.0;

/// Bits delivered by a constant rate over a duration.
pub fn total_secure_bits(rate_bps: f64, duration_s: f64) -> f64 {
    rate_bps * duration_s
}

/// Total key divided by the linear channel transmittance 10^(−L/10).
pub fn normalized_secure_bits(total_bits: f64, channel_loss_db: f64) -> f64 {
    let t = db_to_transmittance(channel_loss_db).unwrap_or(f64::NAN);
    total_bits / t
}

/// Raw counters accumulated by one channel worker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelTotals {
    pub channel: u8,
    pub wavelength_nm: f64,
    pub epochs: u64,
    pub gated_pulses: u64,
    pub clicks: u64,
    pub sifted_bits: u64,
    pub sifted_errors: u64,
    pub secure_bits: u64,
    pub distilled_blocks: u64,
    pub failed_blocks: u64,
    pub max_epoch_qber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: u8,
    pub wavelength_nm: f64,
    pub qber_avg: f64,
    pub max_epoch_qber: f64,
    pub sifted_bps_avg: f64,
    pub secure_bps_avg: f64,
    pub secure_to_sifted: f64,
    pub sifted_bits_total: u64,
    pub sifted_errors_total: u64,
    pub secure_bits_total: u64,
    pub distilled_blocks: u64,
    pub failed_blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    /// Sifted-bit weighted mean over all channels.
    pub qber_avg: f64,
    pub sifted_bps_avg: f64,
    pub secure_bps_avg: f64,
    pub secure_bits_total: u64,
}

/// Summary written to `summary.json`. Wall-clock runtime is kept out of the
/// serialized form so identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub per_channel: Vec<ChannelReport>,
    pub totals: Totals,
    pub channel_loss_db: f64,
    pub normalized_secure_bits: f64,
    pub simulated_duration_s: f64,
    pub uninterrupted_span_s: f64,
    pub interruptions: u32,
    pub completed: bool,
    pub config_digest: String,
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Inputs to [`summarize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryInputs<'a> {
    pub channels: &'a [ChannelTotals],
    pub simulated_duration_s: f64,
    pub channel_loss_db: f64,
    /// Simulated-time spans run without a process restart.
    pub segments: &'a [(f64, f64)],
    pub completed: bool,
    pub config_digest: &'a str,
    pub runtime_s: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn summarize(inputs: &SummaryInputs<'_>) -> RunReport {
    let dur = inputs.simulated_duration_s;
    let per_channel: Vec<ChannelReport> = inputs
        .channels
        .iter()
        .map(|c| ChannelReport {
            channel: c.channel,
            wavelength_nm: c.wavelength_nm,
            qber_avg: ratio(c.sifted_errors as f64, c.sifted_bits as f64),
            max_epoch_qber: c.max_epoch_qber,
            sifted_bps_avg: ratio(c.sifted_bits as f64, dur),
            secure_bps_avg: ratio(c.secure_bits as f64, dur),
            secure_to_sifted: ratio(c.secure_bits as f64, c.sifted_bits as f64),
            sifted_bits_total: c.sifted_bits,
            sifted_errors_total: c.sifted_errors,
            secure_bits_total: c.secure_bits,
            distilled_blocks: c.distilled_blocks,
            failed_blocks: c.failed_blocks,
        })
        .collect();
    let sifted: u64 = inputs.channels.iter().map(|c| c.sifted_bits).sum();
    let errors: u64 = inputs.channels.iter().map(|c| c.sifted_errors).sum();
    let secure: u64 = inputs.channels.iter().map(|c| c.secure_bits).sum();
    let totals = Totals {
        qber_avg: ratio(errors as f64, sifted as f64),
        sifted_bps_avg: per_channel.iter().map(|c| c.sifted_bps_avg).sum(),
        secure_bps_avg: per_channel.iter().map(|c| c.secure_bps_avg).sum(),
        secure_bits_total: secure,
    };
    let span = inputs
        .segments
        .iter()
        .map(|(a, b)| b - a)
        .fold(0.0, f64::max);
    RunReport {
        per_channel,
        totals,
        channel_loss_db: inputs.channel_loss_db,
        normalized_secure_bits: normalized_secure_bits(secure as f64, inputs.channel_loss_db),
        simulated_duration_s: dur,
        uninterrupted_span_s: span,
        interruptions: inputs.segments.len().saturating_sub(1) as u32,
        completed: inputs.completed,
        config_digest: inputs.config_digest.to_string(),
        runtime_s: inputs.runtime_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_sums() {
        let chans = [
            ChannelTotals {
                channel: 0,
                sifted_bits: 1000,
                sifted_errors: 16,
                secure_bits: 480,
                ..ChannelTotals::default()
            },
            ChannelTotals {
                channel: 1,
                sifted_bits: 500,
                sifted_errors: 10,
                secure_bits: 230,
                ..ChannelTotals::default()
            },
        ];
        let r = summarize(&SummaryInputs {
            channels: &chans,
            simulated_duration_s: 10.0,
            channel_loss_db: 10.0,
            segments: &[(0.0, 4.0), (4.0, 10.0)],
            completed: true,
            config_digest: "x",
            runtime_s: 0.0,
        });
        assert_eq!(r.totals.secure_bits_total, 710);
        assert!((r.totals.sifted_bps_avg - 150.0).abs() < 1e-12);
        assert!((r.totals.secure_bps_avg - 71.0).abs() < 1e-12);
        assert!((r.totals.qber_avg - 26.0 / 1500.0).abs() < 1e-15);
        assert!((r.normalized_secure_bits - 7100.0).abs() < 1e-9);
        assert_eq!(r.uninterrupted_span_s, 6.0);
        assert_eq!(r.interruptions, 1);
    }

    #[test]
    fn empty_channel_reports_zeros() {
        let r = summarize(&SummaryInputs {
            channels: &[ChannelTotals::default()],
            simulated_duration_s: 1.0,
            channel_loss_db: 0.0,
            segments: &[(0.0, 1.0)],
            completed: true,
            config_digest: "",
            runtime_s: 0.0,
        });
        assert_eq!(r.totals.qber_avg, 0.0);
        assert_eq!(r.per_channel[0].secure_to_sifted, 0.0);
    }
}
