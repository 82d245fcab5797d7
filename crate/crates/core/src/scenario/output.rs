//! Run artifacts: per-epoch CSV, JSON summary, JSON-lines event log and
//! checkpoints, all inside one output directory.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::RunReport;
use super::run::RunState;
use crate::distill::DistillAccounting;
use crate::error::{Error, Result};
use crate::stabilizer::Decision;

pub const CSV_HEADER: &str = "sim_time_s,channel,qber,sifted_rate_bps,secure_rate_bps,timing_offset_ps,\
encoder_bias,amzi_temp_K,phase_comp_rad,fiber_delay_ps,polarization_rad";

/// One CSV row: a channel's state at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub sim_time_s: f64,
    pub channel: u8,
    pub qber: f64,
    pub sifted_rate_bps: f64,
    pub secure_rate_bps: f64,
    pub timing_offset_ps: f64,
    pub encoder_bias: f64,
    pub amzi_temp_k: f64,
    pub phase_comp_rad: f64,
    pub fiber_delay_ps: f64,
    pub polarization_rad: f64,
}

impl TimeSeriesRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.sim_time_s,
            self.channel,
            self.qber,
            self.sifted_rate_bps,
            self.secure_rate_bps,
            self.timing_offset_ps,
            self.encoder_bias,
            self.amzi_temp_k,
            self.phase_comp_rad,
            self.fiber_delay_ps,
            self.polarization_rad
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<Self> {
        let mut it = line.trim_end().split(',');
        let mut next = || it.next()?.parse::<f64>().ok();
        let rec = Self {
            sim_time_s: next()?,
            channel: {
                let c = next()?;
                if c < 0.0 || c > 255.0 || c.fract() != 0.0 {
                    return None;
                }
                c as u8
            },
            qber: next()?,
            sifted_rate_bps: next()?,
            secure_rate_bps: next()?,
            timing_offset_ps: next()?,
            encoder_bias: next()?,
            amzi_temp_k: next()?,
            phase_comp_rad: next()?,
            fiber_delay_ps: next()?,
            polarization_rad: next()?,
        };
        Some(rec)
    }
}

/// Entries of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Stabilizer {
        sim_time_s: f64,
        channel: u8,
        decision: Decision,
    },
    Distillation {
        sim_time_s: f64,
        channel: u8,
        period_start_s: f64,
        /// Sifted bits and errors accumulated over the period.
        batch_sifted_bits: u64,
        batch_errors: u64,
        /// Accounting of the block actually run through the pipeline.
        block: DistillAccounting,
        /// Secure bits credited for the whole batch.
        secure_bits: u64,
        note: Option<String>,
    },
    Interrupted {
        sim_time_s: f64,
    },
    Resumed {
        sim_time_s: f64,
    },
}

impl Event {
    pub fn secure_bits(&self) -> u64 {
        match self {
            Event::Distillation { secure_bits, .. } => *secure_bits,
            _ => 0,
        }
    }
}

/// File layout of an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn timeseries(&self) -> PathBuf {
        self.dir.join("timeseries.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }

    pub fn events(&self) -> PathBuf {
        self.dir.join("events.jsonl")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn run_info(&self) -> PathBuf {
        self.dir.join("run_info.json")
    }
}

/// Receiver of everything a run produces.
pub trait RunSink {
    fn record(&mut self, record: &TimeSeriesRecord) -> Result<()>;
    fn event(&mut self, event: &Event) -> Result<()>;
    /// Called after every checkpoint interval with the resumable state.
    fn checkpoint(&mut self, _state: &RunState) -> Result<()> {
        Ok(())
    }
    fn finish(&mut self, _report: &RunReport) -> Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<TimeSeriesRecord>,
    pub events: Vec<Event>,
    pub checkpoints: Vec<RunState>,
}

impl RunSink for MemorySink {
    fn record(&mut self, record: &TimeSeriesRecord) -> Result<()> {
        self.records.push(*record);
        Ok(())
    }

    fn event(&mut self, event: &Event) -> Result<()> {
        self.events.push(event.clone());
        Ok(())
    }

    fn checkpoint(&mut self, state: &RunState) -> Result<()> {
        self.checkpoints.push(state.clone());
        Ok(())
    }
}

/// Resumable state plus the artifact lengths it corresponds to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: RunState,
    pub csv_bytes: u64,
    pub events_bytes: u64,
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

struct CountingWriter {
    inner: BufWriter<File>,
    path: PathBuf,
    bytes: u64,
}

impl CountingWriter {
    fn open(path: PathBuf, truncate_to: Option<u64>) -> Result<Self> {
        let (file, bytes) = match truncate_to {
            None => (File::create(&path).map_err(|e| Error::io(&path, e))?, 0),
            Some(len) => {
                let file = OpenOptions::new()
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                file.set_len(len).map_err(|e| Error::io(&path, e))?;
                (file, len)
            }
        };
        Ok(Self {
            inner: BufWriter::new(file),
            path,
            bytes,
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        self.inner
            .write_all(text.as_bytes())
            .and_then(|_| self.inner.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))?;
        self.bytes += text.len() as u64 + 1;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    // Write then rename so a crash never leaves a half-written file behind.
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Streams artifacts into an output directory.
pub struct FileSink {
    paths: OutputPaths,
    csv: CountingWriter,
    events: CountingWriter,
}

impl FileSink {
    /// Starts fresh artifacts, replacing any previous ones.
    pub fn create(paths: OutputPaths) -> Result<Self> {
        fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
        let mut csv = CountingWriter::open(paths.timeseries(), None)?;
        csv.line(CSV_HEADER)?;
        let events = CountingWriter::open(paths.events(), None)?;
        Ok(Self { paths, csv, events })
    }

    /// Reopens artifacts for appending, dropping anything written after the checkpoint.
    pub fn resume(paths: OutputPaths, checkpoint: &Checkpoint) -> Result<Self> {
        let csv = CountingWriter::open(paths.timeseries(), Some(checkpoint.csv_bytes))?;
        let events = CountingWriter::open(paths.events(), Some(checkpoint.events_bytes))?;
        Ok(Self { paths, csv, events })
    }

    pub fn paths(&self) -> &OutputPaths {
        &self.paths
    }
}

impl RunSink for FileSink {
    fn record(&mut self, record: &TimeSeriesRecord) -> Result<()> {
        self.csv.line(&record.to_csv_line())
    }

    fn event(&mut self, event: &Event) -> Result<()> {
        let path = self.paths.events();
        let line = serde_json::to_string(event).map_err(|e| Error::format(&path, e))?;
        self.events.line(&line)
    }

    fn checkpoint(&mut self, state: &RunState) -> Result<()> {
        self.csv.flush()?;
        self.events.flush()?;
        let ckpt = Checkpoint {
            state: state.clone(),
            csv_bytes: self.csv.bytes,
            events_bytes: self.events.bytes,
        };
        write_json(&self.paths.checkpoint(), &ckpt)
    }

    fn finish(&mut self, report: &RunReport) -> Result<()> {
        self.csv.flush()?;
        self.events.flush()?;
        write_json(&self.paths.summary(), report)?;
        write_json(
            &self.paths.run_info(),
            &serde_json::json!({
                "runtime_s": report.runtime_s,
                "completed": report.completed,
            }),
        )
    }
}

/// Writes a complete set of artifacts from in-memory results.
pub fn emit_outputs(records: &[TimeSeriesRecord], events: &[Event], report: &RunReport, paths: &OutputPaths) -> Result<()> {
    let mut sink = FileSink::create(paths.clone())?;
    for r in records {
        sink.record(r)?;
    }
    for e in events {
        sink.event(e)?;
    }
    sink.finish(report)
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub fn read_timeseries(path: impl AsRef<Path>) -> Result<Vec<TimeSeriesRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line.trim_end() != CSV_HEADER {
                return Err(Error::format(path, "unexpected CSV header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let rec = TimeSeriesRecord::parse_csv_line(&line)
            .ok_or_else(|| Error::format(path, format!("malformed row {}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(ev);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64) -> TimeSeriesRecord {
        TimeSeriesRecord {
            sim_time_s: t,
            channel: 1,
            qber: 0.0161,
            sifted_rate_bps: 315_300.0,
            secure_rate_bps: 151_500.25,
            timing_offset_ps: -12.5,
            encoder_bias: 0.01,
            amzi_temp_k: -0.02,
            phase_comp_rad: 0.1 + 0.2,
            fiber_delay_ps: 1.0 / 3.0,
            polarization_rad: -1e-17,
        }
    }

    #[test]
    fn csv_line_round_trips_exactly() {
        let r = rec(12.0);
        assert_eq!(TimeSeriesRecord::parse_csv_line(&r.to_csv_line()), Some(r));
        assert_eq!(CSV_HEADER.split(',').count(), 11);
        assert!(TimeSeriesRecord::parse_csv_line("1,2,3").is_none());
    }

    #[test]
    fn event_json_is_tagged() {
        let ev = Event::Resumed { sim_time_s: 3600.0 };
        let s = serde_json::to_string(&ev).unwrap();
        assert_eq!(s, r#"{"kind":"resumed","sim_time_s":3600.0}"#);
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), ev);
    }

    #[test]
    fn file_sink_writes_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let paths = OutputPaths::new(dir.path());
        let mut sink = FileSink::create(paths.clone()).unwrap();
        for t in 1..=3 {
            sink.record(&rec(t as f64)).unwrap();
        }
        sink.event(&Event::Interrupted { sim_time_s: 3.0 }).unwrap();
        sink.csv.flush().unwrap();
        sink.events.flush().unwrap();
        let back = read_timeseries(paths.timeseries()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2], rec(3.0));
        assert_eq!(read_events(paths.events()).unwrap().len(), 1);
        let on_disk = fs::metadata(paths.timeseries()).unwrap().len();
        assert_eq!(on_disk, sink.csv.bytes);
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = read_summary("/nonexistent/summary.json").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/summary.json"));
    }
}
