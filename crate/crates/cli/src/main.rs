use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use wdmqkd_core::optics::SimMode;
use wdmqkd_core::scenario::{
    compare_runs, load_config, normalized_secure_bits, read_checkpoint, read_events, read_summary, run_scenario,
    FileSink, OutputPaths, RunOptions,
};

#[derive(Parser)]
#[command(name = "wdmqkd", version, about = "WDM time-bin QKD link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        mode: Option<SimMode>,
        #[arg(long)]
        no_stabilizer: bool,
        /// Output directory (default: the config's run.output_dir, else ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print and cross-check the summary of a finished run.
    Summarize { dir: PathBuf },
    /// Compare the time series of two runs (e.g. stabilizer on vs off).
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Averaging window in simulated seconds.
        #[arg(long, default_value_t = 600.0)]
        window: f64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            duration,
            mode,
            no_stabilizer,
            out,
            resume,
            threads,
        } => run(&config, seed, duration, mode, no_stabilizer, out, resume, threads),
        Command::Summarize { dir } => summarize(&dir),
        Command::Compare {
            dir_a,
            dir_b,
            window,
            json,
        } => {
            let cmp = compare_runs(&dir_a, &dir_b, window)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&cmp)?);
            } else {
                println!("A = {}\nB = {}", dir_a.display(), dir_b.display());
                println!("{cmp}");
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    seed: Option<u64>,
    duration: Option<f64>,
    mode: Option<SimMode>,
    no_stabilizer: bool,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(d) = duration {
        cfg.run.duration_s = d;
    }
    if let Some(m) = mode {
        cfg.run.mode = m;
    }
    if no_stabilizer {
        cfg.stabilizer.enabled = false;
    }
    cfg.validate()?;

    let checkpoint = resume
        .as_ref()
        .map(|p| read_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()?;
    let dir = match (out, &resume, &cfg.run.output_dir) {
        (Some(d), _, _) => d,
        (None, Some(ckpt), _) => ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None, Some(d)) => PathBuf::from(d),
        (None, None, None) => PathBuf::from("out"),
    };
    let paths = OutputPaths::new(&dir);
    let mut sink = match &checkpoint {
        Some(c) => FileSink::resume(paths, c)?,
        None => FileSink::create(paths)?,
    };

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || {
            if stop.swap(true, Ordering::SeqCst) {
                std::process::exit(130);
            }
            eprintln!("interrupt: finishing the current interval and checkpointing (press again to abort)");
        })
        .context("installing interrupt handler")?;
    }

    let opts = RunOptions {
        stop: Some(stop),
        threads,
        resume: checkpoint.map(|c| c.state),
    };
    let report = run_scenario(&cfg, opts, &mut sink)?;

    for c in &report.per_channel {
        println!(
            "ch{} {:.2} nm  QBER {:.3}%  sifted {:.1} kbps  secure {:.1} kbps  secure bits {}",
            c.channel,
            c.wavelength_nm,
            100.0 * c.qber_avg,
            c.sifted_bps_avg / 1e3,
            c.secure_bps_avg / 1e3,
            c.secure_bits_total
        );
    }
    let t = &report.totals;
    println!(
        "total  QBER {:.3}%  sifted {:.1} kbps  secure {:.1} kbps  secure bits {}",
        100.0 * t.qber_avg,
        t.sifted_bps_avg / 1e3,
        t.secure_bps_avg / 1e3,
        t.secure_bits_total
    );
    println!(
        "normalized secure bits {:.4e} at {} dB; simulated {} s (longest uninterrupted {} s); wall clock {:.2} s",
        report.normalized_secure_bits,
        report.channel_loss_db,
        report.simulated_duration_s,
        report.uninterrupted_span_s,
        report.runtime_s
    );
    println!("outputs in {}", dir.display());
    if !report.completed {
        println!(
            "run interrupted; continue with --resume {}",
            OutputPaths::new(&dir).checkpoint().display()
        );
    }
    Ok(())
}

fn summarize(dir: &Path) -> Result<()> {
    let paths = OutputPaths::new(dir);
    let report = read_summary(paths.summary())?;
    let events = read_events(paths.events())?;

    let logged: u64 = events.iter().map(|e| e.secure_bits()).sum();
    let recomputed = normalized_secure_bits(report.totals.secure_bits_total as f64, report.channel_loss_db);
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!(
        "total secure bits {} ({:.4} Gbits); normalized {:.4} Tbits at {} dB",
        report.totals.secure_bits_total,
        report.totals.secure_bits_total as f64 / 1e9,
        recomputed / 1e12,
        report.channel_loss_db
    );
    if logged != report.totals.secure_bits_total {
        bail!(
            "event log credits {logged} secure bits but the summary reports {}",
            report.totals.secure_bits_total
        );
    }
    if (recomputed - report.normalized_secure_bits).abs() > 1e-9 * recomputed.abs().max(1.0) {
        bail!("normalized metric in the summary does not match total / 10^(-L/10)");
    }
    println!("checks: event log totals and normalized metric consistent");
    Ok(())
}
