//! Multi-channel scenario orchestration: configuration, the simulation loop,
//! run artifacts and summary metrics.

pub mod compare;
pub mod config;
pub mod output;
pub mod report;
pub mod run;

pub use compare::{compare_runs, series_stats, Comparison, SeriesStats};
pub use config::{load_config, ChannelConfig, ParameterSettings, RunSettings, ScenarioConfig, StabilizerSettings};
pub use output::{
    emit_outputs, read_checkpoint, read_events, read_summary, read_timeseries, Checkpoint, Event, FileSink,
    MemorySink, OutputPaths, RunSink, TimeSeriesRecord, CSV_HEADER,
};
pub use report::{
    normalized_secure_bits, summarize, total_secure_bits, ChannelReport, ChannelTotals, RunReport, SummaryInputs,
    Totals, THIRTY_DAYS_S,
};
pub use run::{run_scenario, RunOptions, RunState};
