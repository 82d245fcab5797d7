use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use wdmqkd_core::channel::{fiber_transmittance, Environment};
use wdmqkd_core::distill::DistillMode;
use wdmqkd_core::optics::{epoch_qber, outcome_probabilities, SimMode};
use wdmqkd_core::scenario::*;
use wdmqkd_core::Error;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn field_cfg(duration_s: f64) -> ScenarioConfig {
    let mut cfg = load_config(config_path("paper_2ch.cfg")).unwrap();
    cfg.run.duration_s = duration_s;
    cfg
}

fn run_to_dir(cfg: &ScenarioConfig, dir: &std::path::Path) -> RunReport {
    let mut sink = FileSink::create(OutputPaths::new(dir)).unwrap();
    run_scenario(cfg, RunOptions::default(), &mut sink).unwrap()
}

#[test]
fn shipped_configs_load() {
    let cfg = load_config(config_path("paper_2ch.cfg")).unwrap();
    let wl: Vec<f64> = cfg.channels.iter().map(|c| c.wavelength_nm).collect();
    assert_eq!(wl, vec![1547.72, 1550.92]);
    assert_eq!(cfg.fiber.loss_db, 12.6);
    assert_eq!(cfg.run.mode, SimMode::RateLevel);
    // The annotated file spells out the built-in defaults.
    let bare = ScenarioConfig::parse("[[channel]]\nwavelength_nm = 1547.72\n").unwrap();
    assert_eq!(cfg.environment, bare.environment);
    assert_eq!(cfg.distill, bare.distill);
    assert_eq!(cfg.stabilizer.parameters(), bare.stabilizer.parameters());
    assert_eq!(cfg.channels[0].optics(), bare.channels[0].optics());

    let month = load_config(config_path("paper_2ch_30day.cfg")).unwrap();
    assert_eq!(month.run.duration_s, THIRTY_DAYS_S);
    assert_eq!(month.channels, cfg.channels);
    assert_eq!(month.environment, cfg.environment);

    let design = load_config(config_path("design_8ch_10db.cfg")).unwrap();
    assert_eq!(design.channels.len(), 8);
}

#[test]
fn nine_channels_and_empty_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let nine = dir.path().join("nine.cfg");
    let mut text = String::new();
    for i in 0..9 {
        text.push_str(&format!("[[channel]]\nwavelength_nm = {}\n", wdmqkd_core::timebin::slot_wavelength_nm(i % 8)));
    }
    std::fs::write(&nine, text).unwrap();
    match load_config(&nine) {
        Err(Error::Validation(errs)) => assert!(errs.iter().any(|e| e.contains("between 1 and 8")), "{errs:?}"),
        other => panic!("expected validation error, got {other:?}"),
    }

    let empty = dir.path().join("empty.cfg");
    std::fs::write(&empty, "").unwrap();
    assert!(matches!(load_config(&empty), Err(Error::Parse(_))));
    assert!(matches!(load_config(dir.path().join("missing.cfg")), Err(Error::Io { .. })));
}

#[test]
fn single_epoch_guard() {
    let mut cfg = field_cfg(1.0);
    cfg.run.epoch_s = 1.0;
    let mut sink = MemorySink::default();
    let report = run_scenario(&cfg, RunOptions::default(), &mut sink).unwrap();
    assert_eq!(sink.records.len(), cfg.channels.len());
    assert!(sink.records.iter().all(|r| r.sim_time_s == 1.0));
    assert!(report.completed);
}

#[test]
fn ten_epoch_row_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = field_cfg(10.0);
    run_to_dir(&cfg, dir.path());
    let text = std::fs::read_to_string(OutputPaths::new(dir.path()).timeseries()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(
        CSV_HEADER,
        "sim_time_s,channel,qber,sifted_rate_bps,secure_rate_bps,timing_offset_ps,encoder_bias,amzi_temp_K,\
         phase_comp_rad,fiber_delay_ps,polarization_rad"
    );
    assert_eq!(lines.len(), 1 + 10 * cfg.channels.len());

    let records = read_timeseries(OutputPaths::new(dir.path()).timeseries()).unwrap();
    for ch in 0..cfg.channels.len() as u8 {
        let times: Vec<f64> = records.iter().filter(|r| r.channel == ch).map(|r| r.sim_time_s).collect();
        assert_eq!(times.len(), 10);
        assert!(times.windows(2).all(|w| w[1] > w[0]), "sim time must increase per channel");
    }
}

#[test]
fn csv_stride_thins_rows() {
    let mut cfg = field_cfg(20.0);
    cfg.run.csv_stride = 5;
    let mut sink = MemorySink::default();
    run_scenario(&cfg, RunOptions::default(), &mut sink).unwrap();
    assert_eq!(sink.records.len(), 4 * cfg.channels.len());
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

#[test]
fn summary_round_trips_and_conserves_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = field_cfg(1200.0);
    let report = run_to_dir(&cfg, dir.path());
    let paths = OutputPaths::new(dir.path());

    let back = read_summary(paths.summary()).unwrap();
    assert_eq!(back.per_channel.len(), report.per_channel.len());
    for (a, b) in report.per_channel.iter().zip(&back.per_channel) {
        for (x, y) in [
            (a.qber_avg, b.qber_avg),
            (a.sifted_bps_avg, b.sifted_bps_avg),
            (a.secure_bps_avg, b.secure_bps_avg),
            (a.secure_to_sifted, b.secure_to_sifted),
        ] {
            assert!(close(x, y), "{x} vs {y}");
        }
        assert_eq!(a.secure_bits_total, b.secure_bits_total);
    }
    assert!(close(report.normalized_secure_bits, back.normalized_secure_bits));
    assert!(close(report.totals.qber_avg, back.totals.qber_avg));
    assert_eq!(report.config_digest, back.config_digest);
    assert_eq!(report.config_digest, cfg.digest());

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(paths.summary()).unwrap()).unwrap();
    for key in [
        "per_channel",
        "totals",
        "channel_loss_db",
        "normalized_secure_bits",
        "uninterrupted_span_s",
        "config_digest",
    ] {
        assert!(json.get(key).is_some(), "summary lacks {key}");
    }
    for key in ["qber_avg", "sifted_bps_avg", "secure_bps_avg", "secure_bits_total"] {
        assert!(json["totals"].get(key).is_some(), "totals lack {key}");
    }
    assert!(json.get("runtime_s").is_none());

    // Conservation: the event log's credited bits add up to the reported totals.
    let events = read_events(paths.events()).unwrap();
    let logged: u64 = events.iter().map(Event::secure_bits).sum();
    assert_eq!(logged, report.totals.secure_bits_total);
    for c in &report.per_channel {
        let per: u64 = events
            .iter()
            .filter(|e| matches!(e, Event::Distillation { channel, .. } if *channel == c.channel))
            .map(Event::secure_bits)
            .sum();
        assert_eq!(per, c.secure_bits_total);
    }
    assert!(events.iter().any(|e| matches!(e, Event::Stabilizer { .. })));

    // Totals are sums of the per-channel figures.
    let sum_secure: u64 = report.per_channel.iter().map(|c| c.secure_bits_total).sum();
    assert_eq!(sum_secure, report.totals.secure_bits_total);
    let sum_rate: f64 = report.per_channel.iter().map(|c| c.secure_bps_avg).sum();
    assert!(close(sum_rate, report.totals.secure_bps_avg));

    // Normalized metric, recomputed independently: bits × 10^(L/10).
    let independent = report.totals.secure_bits_total as f64 * 10f64.powf(report.channel_loss_db / 10.0);
    assert!(close(independent, report.normalized_secure_bits));
    assert_eq!(report.uninterrupted_span_s, 1200.0);
}

#[test]
fn field_trial_total_qber_is_sifted_weighted() {
    // Per-channel 30-day field-trial figures, as counts over 30 days.
    let rows = [(0.0161, 315.3e3, 151.5e3), (0.0186, 168.0e3, 78.3e3)];
    let chans: Vec<ChannelTotals> = rows
        .iter()
        .enumerate()
        .map(|(i, &(q, sifted, secure))| {
            let bits = (sifted * THIRTY_DAYS_S).round() as u64;
            ChannelTotals {
                channel: i as u8,
                sifted_bits: bits,
                sifted_errors: (q * bits as f64).round() as u64,
                secure_bits: (secure * THIRTY_DAYS_S).round() as u64,
                ..ChannelTotals::default()
            }
        })
        .collect();
    let report = summarize(&SummaryInputs {
        channels: &chans,
        simulated_duration_s: THIRTY_DAYS_S,
        channel_loss_db: 12.6,
        segments: &[(0.0, THIRTY_DAYS_S)],
        completed: true,
        config_digest: "",
        runtime_s: 0.0,
    });
    assert!((100.0 * report.totals.qber_avg - 1.70).abs() < 0.005, "{}", report.totals.qber_avg);
    assert!((report.totals.sifted_bps_avg / 1e3 - 483.3).abs() < 0.05);
    assert!((report.totals.secure_bps_avg / 1e3 - 229.8).abs() < 0.05);
    assert!((report.totals.secure_bits_total as f64 / 1e9 - 595.6).abs() / 595.6 < 0.001);
    assert!((report.normalized_secure_bits / 1e12 - 10.8).abs() / 10.8 < 0.01);
}

#[test]
fn interrupted_run_resumes_to_identical_series() {
    let mut cfg = field_cfg(3.0 * 600.0);
    cfg.run.checkpoint_interval_s = 600.0;
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    let parts = dir.path().join("parts");
    let full_report = run_to_dir(&cfg, &whole);

    // Stop requested up front: the first interval completes, then the run halts.
    let stop = Arc::new(AtomicBool::new(true));
    let mut sink = FileSink::create(OutputPaths::new(&parts)).unwrap();
    let first = run_scenario(
        &cfg,
        RunOptions {
            stop: Some(stop),
            ..RunOptions::default()
        },
        &mut sink,
    )
    .unwrap();
    drop(sink);
    assert!(!first.completed);
    assert_eq!(first.simulated_duration_s, 600.0);

    // Anything written after the checkpoint is discarded on resume.
    let paths = OutputPaths::new(&parts);
    let ckpt = read_checkpoint(paths.checkpoint()).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(paths.timeseries())
        .and_then(|mut f| std::io::Write::write_all(&mut f, b"999,0,garbage\n"))
        .unwrap();
    let mut sink = FileSink::resume(paths.clone(), &ckpt).unwrap();
    let resumed = run_scenario(
        &cfg,
        RunOptions {
            resume: Some(ckpt.state),
            ..RunOptions::default()
        },
        &mut sink,
    )
    .unwrap();
    drop(sink);

    assert!(resumed.completed);
    assert_eq!(
        std::fs::read(OutputPaths::new(&whole).timeseries()).unwrap(),
        std::fs::read(paths.timeseries()).unwrap()
    );
    assert_eq!(resumed.totals, full_report.totals);
    assert_eq!(resumed.interruptions, 1);
    assert_eq!(resumed.uninterrupted_span_s, 1200.0);
    let events = read_events(paths.events()).unwrap();
    assert!(events.iter().any(|e| matches!(e, Event::Interrupted { sim_time_s } if *sim_time_s == 600.0)));
    assert!(events.iter().any(|e| matches!(e, Event::Resumed { sim_time_s } if *sim_time_s == 600.0)));
}

#[test]
fn resume_rejects_a_different_configuration() {
    let mut cfg = field_cfg(1200.0);
    cfg.run.checkpoint_interval_s = 600.0;
    let mut sink = MemorySink::default();
    run_scenario(&cfg, RunOptions::default(), &mut sink).unwrap();
    let state = sink.checkpoints[0].clone();
    cfg.run.seed += 1;
    let err = run_scenario(
        &cfg,
        RunOptions {
            resume: Some(state),
            ..RunOptions::default()
        },
        &mut MemorySink::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

/// Deterministic expectation of the uncontrolled link: the environment's
/// trajectory fed through the closed-form QBER at the initial operating point.
fn open_loop_expected_qber(cfg: &ScenarioConfig, channel: usize, epochs: u64) -> Vec<f64> {
    let cc = &cfg.channels[channel];
    let optics = cc.optics();
    let fiber_t = fiber_transmittance(&cfg.fiber).unwrap();
    let mut env = Environment::new(&cfg.environment, cfg.fiber, cfg.run.seed, channel as u8);
    (0..epochs)
        .map(|_| {
            let state = *env.advance(cfg.run.epoch_s);
            epoch_qber(&outcome_probabilities(&optics, fiber_t, &cc.initial_point, &state).unwrap()).unwrap()
        })
        .collect()
}

#[test]
fn uncontrolled_drift_follows_open_loop_expectation() {
    let mut cfg = field_cfg(86_400.0);
    cfg.stabilizer.enabled = false;
    let oracle = open_loop_expected_qber(&cfg, 0, 86_400);
    let oracle_max = oracle.iter().cloned().fold(0.0, f64::max);
    assert!(oracle_max > 0.05, "expected open-loop QBER peaks at {oracle_max}");

    // Simulated counts track the expectation epoch by epoch over six hours.
    cfg.run.duration_s = 6.0 * 3600.0;
    let mut sink = MemorySink::default();
    run_scenario(&cfg, RunOptions::default(), &mut sink).unwrap();
    let sim: Vec<f64> = sink.records.iter().filter(|r| r.channel == 0).map(|r| r.qber).collect();
    assert_eq!(sim.len(), 21_600);
    let worst = sim
        .iter()
        .zip(&oracle)
        .map(|(s, o)| (s - o).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.005, "simulated QBER strays {worst} from the expectation");
}

#[test]
fn pulse_level_scenario_runs_short_epochs() {
    let mut cfg = field_cfg(0.01);
    cfg.run.mode = SimMode::PulseMc;
    cfg.run.epoch_s = 1e-3;
    cfg.stabilizer.enabled = false;
    let mut sink = MemorySink::default();
    let report = run_scenario(&cfg, RunOptions::default(), &mut sink).unwrap();
    assert_eq!(sink.records.len(), 10 * 2);
    let expected = 315.3e3 * 0.01;
    let got = report.per_channel[0].sifted_bits_total as f64;
    assert!((got - expected).abs() < 5.0 * expected.sqrt(), "{got} vs {expected}");
}

#[test]
fn full_distillation_matches_sampled_yield() {
    let mut cfg = field_cfg(6.0);
    cfg.stabilizer.enabled = false;
    cfg.distill.period_s = 3.0;
    cfg.distill.mode = DistillMode::Full;
    let mut sink = MemorySink::default();
    let full = run_scenario(&cfg, RunOptions::default(), &mut sink).unwrap();
    let logged: u64 = sink.events.iter().map(Event::secure_bits).sum();
    assert_eq!(logged, full.totals.secure_bits_total);
    let blocks = sink
        .events
        .iter()
        .filter(|e| matches!(e, Event::Distillation { .. }))
        .count();
    let sifted: u64 = full.per_channel.iter().map(|c| c.sifted_bits_total).sum();
    assert_eq!(blocks as u64, full.per_channel.iter().map(|c| c.sifted_bits_total.div_ceil(100_000)).sum::<u64>());
    assert!(sifted > 2_000_000);

    cfg.distill.mode = DistillMode::Sampled;
    let sampled = run_scenario(&cfg, RunOptions::default(), &mut MemorySink::default()).unwrap();
    for (f, s) in full.per_channel.iter().zip(&sampled.per_channel) {
        assert!((f.secure_to_sifted - s.secure_to_sifted).abs() < 0.02, "{f:?} vs {s:?}");
    }
}
