//! Side-by-side statistics of two runs' time series.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{read_timeseries, OutputPaths, TimeSeriesRecord};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub channel: u8,
    pub rows: usize,
    /// Sifted-rate weighted mean QBER.
    pub mean_qber: f64,
    pub max_epoch_qber: f64,
    /// Largest mean QBER over consecutive windows of `window_s`.
    pub max_window_qber: f64,
    pub mean_sifted_bps: f64,
    pub mean_secure_bps: f64,
}

/// Per-channel statistics of one time series, averaging over windows of
/// `window_s` simulated seconds.
pub fn series_stats(records: &[TimeSeriesRecord], window_s: f64) -> Vec<SeriesStats> {
    let mut by_channel: BTreeMap<u8, Vec<&TimeSeriesRecord>> = BTreeMap::new();
    for r in records {
        by_channel.entry(r.channel).or_default().push(r);
    }
    by_channel
        .into_iter()
        .map(|(channel, rows)| {
            let weighted = |rs: &[&TimeSeriesRecord]| {
                let w: f64 = rs.iter().map(|r| r.sifted_rate_bps).sum();
                if w > 0.0 {
                    rs.iter().map(|r| r.qber * r.sifted_rate_bps).sum::<f64>() / w
                } else {
                    0.0
                }
            };
            let mut max_window_qber: f64 = 0.0;
            let mut start = 0;
            while start < rows.len() {
                let t0 = rows[start].sim_time_s;
                let mut end = start + 1;
                while end < rows.len() && rows[end].sim_time_s - t0 < window_s {
                    end += 1;
                }
                max_window_qber = max_window_qber.max(weighted(&rows[start..end]));
                start = end;
            }
            let n = rows.len() as f64;
            SeriesStats {
                channel,
                rows: rows.len(),
                mean_qber: weighted(&rows),
                max_epoch_qber: rows.iter().map(|r| r.qber).fold(0.0, f64::max),
                max_window_qber,
                mean_sifted_bps: rows.iter().map(|r| r.sifted_rate_bps).sum::<f64>() / n,
                mean_secure_bps: rows.iter().map(|r| r.secure_rate_bps).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub window_s: f64,
    pub a: Vec<SeriesStats>,
    pub b: Vec<SeriesStats>,
}

impl Comparison {
    pub fn mean_qber(stats: &[SeriesStats]) -> f64 {
        let w: f64 = stats.iter().map(|s| s.mean_sifted_bps).sum();
        if w > 0.0 {
            stats.iter().map(|s| s.mean_qber * s.mean_sifted_bps).sum::<f64>() / w
        } else {
            0.0
        }
    }

    pub fn max_epoch_qber(stats: &[SeriesStats]) -> f64 {
        stats.iter().map(|s| s.max_epoch_qber).fold(0.0, f64::max)
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<4} {:>3} {:>10} {:>10} {:>12} {:>14} {:>14}",
            "run", "ch", "mean_qber", "max_qber", "max_win_qber", "sifted_bps", "secure_bps"
        )?;
        for (label, stats) in [("A", &self.a), ("B", &self.b)] {
            for s in stats.iter() {
                writeln!(
                    f,
                    "{:<4} {:>3} {:>9.3}% {:>9.3}% {:>11.3}% {:>14.1} {:>14.1}",
                    label,
                    s.channel,
                    100.0 * s.mean_qber,
                    100.0 * s.max_epoch_qber,
                    100.0 * s.max_window_qber,
                    s.mean_sifted_bps,
                    s.mean_secure_bps
                )?;
            }
        }
        writeln!(f, "window: {} s", self.window_s)?;
        write!(
            f,
            "overall mean QBER  A {:.3}%  B {:.3}%; max epoch QBER  A {:.3}%  B {:.3}%",
            100.0 * Self::mean_qber(&self.a),
            100.0 * Self::mean_qber(&self.b),
            100.0 * Self::max_epoch_qber(&self.a),
            100.0 * Self::max_epoch_qber(&self.b)
        )
    }
}

/// Compares the time series of two output directories.
pub fn compare_runs(dir_a: impl AsRef<Path>, dir_b: impl AsRef<Path>, window_s: f64) -> Result<Comparison> {
    let a = read_timeseries(OutputPaths::new(dir_a.as_ref()).timeseries())?;
    let b = read_timeseries(OutputPaths::new(dir_b.as_ref()).timeseries())?;
    Ok(Comparison {
        window_s,
        a: series_stats(&a, window_s),
        b: series_stats(&b, window_s),
    })
}
