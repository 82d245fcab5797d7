//! The time-stepped simulation loop.
//!
//! Every channel owns a worker holding its environment copy, controller,
//! random streams and counters. Workers advance in lockstep chunks of one
//! checkpoint interval on the rayon pool; their outputs are then merged in
//! (epoch, channel) order by a single writer, so artifacts do not depend on
//! the number of threads.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rand_distr::Hypergeometric;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::output::{Event, RunSink, TimeSeriesRecord};
use super::report::{summarize, ChannelTotals, RunReport, SummaryInputs};
use crate::bits::BitBuf;
use crate::channel::{fiber_transmittance, stream, Environment};
use crate::distill::{
    distill_block, secure_fraction, sift, synthetic_block, DistillAccounting, DistillMode, PipelineConfig,
    RateFormulaConfig, RateFormulaKind, SiftedBlock,
};
use crate::error::{Error, Result};
use crate::optics::{outcome_probabilities, simulate_epoch, ChannelOptics, EpochSpec};
use crate::stabilizer::{Controller, Observation};
use crate::timebin::WavelengthChannel;

/// Sifted material awaiting the next distillation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Batch {
    start_epoch: u64,
    sifted_bits: u64,
    errors: u64,
    /// Recorded key material, full distillation mode only.
    alice: Option<BitBuf>,
    bob: Option<BitBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChannelWorker {
    channel: WavelengthChannel,
    optics: ChannelOptics,
    rate: RateFormulaConfig,
    fiber_t: f64,
    env: Environment,
    controller: Controller,
    sim_rng: ChaCha8Rng,
    distill_rng: ChaCha8Rng,
    totals: ChannelTotals,
    batch: Batch,
}

/// Everything needed to continue a run from an epoch boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config_digest: String,
    pub next_epoch: u64,
    /// Simulated-time spans completed without a restart.
    pub segments: Vec<(f64, f64)>,
    workers: Vec<ChannelWorker>,
}

impl RunState {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let fiber_t = fiber_transmittance(&cfg.fiber)?;
        let params = cfg.stabilizer.parameters();
        let trial_period = cfg.epochs_for(cfg.stabilizer.trial_period_s).min(u64::from(u32::MAX)) as u32;
        let seed = cfg.run.seed;
        let workers = cfg
            .wavelength_channels()?
            .into_iter()
            .zip(&cfg.channels)
            .map(|(channel, cc)| {
                let idx = u64::from(channel.index);
                let grid = crate::timebin::QuantizationGrid::default();
                ChannelWorker {
                    channel,
                    optics: cc.optics(),
                    rate: cc.rate(&cfg.rate),
                    fiber_t,
                    env: Environment::new(&cfg.environment, cfg.fiber, seed, channel.index),
                    controller: Controller::new(
                        params.clone(),
                        cc.initial_point.quantized(&grid),
                        trial_period,
                        cfg.stabilizer.enabled,
                    ),
                    sim_rng: stream(seed, 0x300 + idx),
                    distill_rng: stream(seed, 0x400 + idx),
                    totals: ChannelTotals {
                        channel: channel.index,
                        wavelength_nm: channel.wavelength_nm,
                        ..ChannelTotals::default()
                    },
                    batch: Batch::default(),
                }
            })
            .collect();
        Ok(Self {
            config_digest: cfg.digest(),
            next_epoch: 0,
            segments: vec![(0.0, 0.0)],
            workers,
        })
    }

    pub fn channel_totals(&self) -> Vec<ChannelTotals> {
        self.workers.iter().map(|w| w.totals).collect()
    }
}

/// Settings shared by all workers during a chunk.
struct Context<'a> {
    cfg: &'a ScenarioConfig,
    total_epochs: u64,
    distill_period: u64,
}

#[derive(Default)]
struct ChunkOutput {
    records: Vec<(u64, TimeSeriesRecord)>,
    events: Vec<(u64, Event)>,
}

fn end_time(cfg: &ScenarioConfig, epoch: u64) -> f64 {
    (epoch + 1) as f64 * cfg.run.epoch_s
}

/// Expected secure yield per sifted bit at the given QBER, before leakage.
fn expected_secure_ratio(rate: &RateFormulaConfig, pipeline: &PipelineConfig, qber: f64) -> f64 {
    let fraction = secure_fraction(rate, qber.min(0.499)).unwrap_or(0.0);
    if rate.kind == RateFormulaKind::Calibrated {
        fraction
    } else {
        fraction * (1.0 - pipeline.sample_fraction)
    }
}

impl ChannelWorker {
    fn run_chunk(&mut self, start: u64, end: u64, ctx: &Context<'_>) -> Result<ChunkOutput> {
        let cfg = ctx.cfg;
        let dt = cfg.run.epoch_s;
        let full = cfg.distill.mode == DistillMode::Full;
        let mut out = ChunkOutput::default();
        for epoch in start..end {
            let t = end_time(cfg, epoch);
            self.env.advance(dt);
            let op = self.controller.current_point();
            let probs = outcome_probabilities(&self.optics, self.fiber_t, &op, &self.env.state)?;
            let spec = EpochSpec {
                mode: cfg.run.mode,
                duration_s: dt,
                clock_rate_hz: self.optics.source.clock_rate_hz,
                pulse_cap: cfg.run.pulse_cap,
                record_bits: full,
                epoch_index: epoch,
                channel: self.channel,
            };
            let outcome = simulate_epoch(&spec, &probs, &mut self.sim_rng)?;
            let stats = outcome.stats;
            if let Some(decision) = self.controller.observe(&Observation::from_stats(&stats, dt)) {
                out.events.push((
                    epoch,
                    Event::Stabilizer {
                        sim_time_s: t,
                        channel: self.channel.index,
                        decision,
                    },
                ));
            }

            let tot = &mut self.totals;
            tot.epochs += 1;
            tot.gated_pulses += stats.gated_pulses;
            tot.clicks += stats.clicks();
            tot.sifted_bits += stats.sifted_bits;
            tot.sifted_errors += stats.sifted_errors;
            if stats.sifted_bits > 0 {
                tot.max_epoch_qber = tot.max_epoch_qber.max(stats.qber);
            }
            self.batch.sifted_bits += stats.sifted_bits;
            self.batch.errors += stats.sifted_errors;
            if let Some(rec) = outcome.record {
                if let Some(block) = sift(
                    &rec.alice_bits,
                    &rec.alice_bases,
                    &rec.bob_bits,
                    &rec.bob_bases,
                    self.channel,
                    (epoch, epoch),
                )? {
                    let a = self.batch.alice.get_or_insert_with(BitBuf::new);
                    block.alice.iter().for_each(|b| a.push(b));
                    let b = self.batch.bob.get_or_insert_with(BitBuf::new);
                    block.bob.iter().for_each(|x| b.push(x));
                }
            }

            let last = epoch + 1 == ctx.total_epochs;
            if (epoch + 1) % ctx.distill_period == 0 || last {
                for ev in self.distill_batch(epoch, last, ctx)? {
                    out.events.push((epoch, ev));
                }
            }

            if epoch % cfg.run.csv_stride == 0 {
                let ratio = expected_secure_ratio(&self.rate, &cfg.distill, stats.qber);
                let env = &self.env.state;
                out.records.push((
                    epoch,
                    TimeSeriesRecord {
                        sim_time_s: t,
                        channel: self.channel.index,
                        qber: stats.qber,
                        sifted_rate_bps: stats.sifted_rate_bps,
                        secure_rate_bps: stats.sifted_rate_bps * ratio,
                        timing_offset_ps: op.detection_timing_offset_ps,
                        encoder_bias: op.encoder_bias,
                        amzi_temp_k: op.amzi_temperature_k,
                        phase_comp_rad: op.phase_comp_amplitude_rad,
                        fiber_delay_ps: env.fiber_delay_ps,
                        polarization_rad: env.polarization_angle_rad,
                    },
                ));
            }
        }
        Ok(out)
    }

    /// Distills the pending batch. Returns one event per processed block.
    fn distill_batch(&mut self, epoch: u64, last: bool, ctx: &Context<'_>) -> Result<Vec<Event>> {
        let cfg = ctx.cfg;
        let pipeline = &cfg.distill;
        let t = end_time(cfg, epoch);
        let period_start = self.batch.start_epoch as f64 * cfg.run.epoch_s;
        let mut events = Vec::new();
        match pipeline.mode {
            DistillMode::Sampled => {
                let (n_total, e_total) = (self.batch.sifted_bits, self.batch.errors);
                if n_total > 0 {
                    let n = n_total.min(pipeline.block_size as u64);
                    let e = if n == n_total {
                        e_total
                    } else {
                        let h = Hypergeometric::new(n_total, e_total, n)
                            .map_err(|err| Error::Domain(format!("hypergeometric draw: {err}")))?;
                        h.sample(&mut self.distill_rng)
                    };
                    let block = synthetic_block(
                        n as usize,
                        e as usize,
                        self.channel,
                        (self.batch.start_epoch, epoch),
                        &mut self.distill_rng,
                    )?;
                    let (acct, note) = self.run_block(&block, pipeline)?;
                    let secure = if n == n_total {
                        acct.secure_bits
                    } else {
                        (u128::from(n_total) * u128::from(acct.secure_bits) / u128::from(n)) as u64
                    };
                    events.push(self.credit(t, period_start, n_total, e_total, acct, secure, note));
                }
                self.batch = Batch {
                    start_epoch: epoch + 1,
                    ..Batch::default()
                };
            }
            DistillMode::Full => {
                let alice = self.batch.alice.take().unwrap_or_default();
                let bob = self.batch.bob.take().unwrap_or_default();
                let size = pipeline.block_size;
                let mut offset = 0;
                while alice.len() - offset >= size || (last && offset < alice.len()) {
                    let len = size.min(alice.len() - offset);
                    let range = offset..offset + len;
                    let a: BitBuf = range.clone().map(|i| alice.get(i)).collect();
                    let b: BitBuf = range.map(|i| bob.get(i)).collect();
                    let block = SiftedBlock::new(a, b, self.channel, (self.batch.start_epoch, epoch))?;
                    let errors = block.mismatches() as u64;
                    let (acct, note) = self.run_block(&block, pipeline)?;
                    let secure = acct.secure_bits;
                    events.push(self.credit(t, period_start, len as u64, errors, acct, secure, note));
                    offset += len;
                }
                let rest = alice.len() - offset;
                let carried_errors = (offset..alice.len()).filter(|&i| alice.get(i) != bob.get(i)).count() as u64;
                self.batch = Batch {
                    start_epoch: if rest > 0 { self.batch.start_epoch } else { epoch + 1 },
                    sifted_bits: rest as u64,
                    errors: carried_errors,
                    alice: Some((offset..alice.len()).map(|i| alice.get(i)).collect()),
                    bob: Some((offset..bob.len()).map(|i| bob.get(i)).collect()),
                };
            }
        }
        Ok(events)
    }

    fn run_block(
        &mut self,
        block: &SiftedBlock,
        pipeline: &PipelineConfig,
    ) -> Result<(DistillAccounting, Option<String>)> {
        let base = DistillAccounting {
            sifted_bits: block.len() as u64,
            actual_errors: block.mismatches() as u64,
            ..DistillAccounting::default()
        };
        match distill_block(block, &self.rate, pipeline, &mut self.distill_rng) {
            Ok((_, acct)) => {
                self.totals.distilled_blocks += 1;
                Ok((acct, None))
            }
            Err(Error::BlockTooSmall { sample, floor }) => Ok((
                base,
                Some(format!("sample of {sample} bits below the floor of {floor}; block discarded")),
            )),
            Err(Error::ReconciliationFailed { passes }) => {
                self.totals.failed_blocks += 1;
                Ok((
                    DistillAccounting {
                        reconciliation_failed: true,
                        ..base
                    },
                    Some(format!("residual errors after {passes} Cascade passes; block discarded")),
                ))
            }
            Err(e) => Err(e),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn credit(
        &mut self,
        t: f64,
        period_start: f64,
        batch_bits: u64,
        batch_errors: u64,
        block: DistillAccounting,
        secure: u64,
        note: Option<String>,
    ) -> Event {
        self.totals.secure_bits += secure;
        Event::Distillation {
            sim_time_s: t,
            channel: self.channel.index,
            period_start_s: period_start,
            batch_sifted_bits: batch_bits,
            batch_errors,
            block,
            secure_bits: secure,
            note,
        }
    }
}

/// Knobs that do not change the simulated physics.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Checked between checkpoint intervals; when set, the run stops early,
    /// flushes and checkpoints.
    pub stop: Option<Arc<AtomicBool>>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Continue from a checkpointed state instead of starting over.
    pub resume: Option<RunState>,
}

/// Runs (or resumes) a scenario, streaming artifacts into `sink`.
pub fn run_scenario(cfg: &ScenarioConfig, opts: RunOptions, sink: &mut dyn RunSink) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let total_epochs = cfg.total_epochs();
    let digest = cfg.digest();
    let mut state = match opts.resume {
        Some(mut state) => {
            if state.config_digest != digest {
                return Err(Error::Config(
                    "checkpoint was written for a different configuration (digest mismatch)".into(),
                ));
            }
            let t = state.next_epoch as f64 * cfg.run.epoch_s;
            state.segments.push((t, t));
            sink.event(&Event::Resumed { sim_time_s: t })?;
            state
        }
        None => RunState::new(cfg)?,
    };
    let ctx = Context {
        cfg,
        total_epochs,
        distill_period: cfg.epochs_for(cfg.distill.period_s),
    };
    let chunk = cfg.epochs_for(cfg.run.checkpoint_interval_s);
    let pool = match opts.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let stopped = || opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst));

    while state.next_epoch < total_epochs {
        let start = state.next_epoch;
        let end = (start + chunk).min(total_epochs);
        let work = |workers: &mut Vec<ChannelWorker>| -> Vec<Result<ChunkOutput>> {
            workers.par_iter_mut().map(|w| w.run_chunk(start, end, &ctx)).collect()
        };
        let outputs = match &pool {
            Some(p) => p.install(|| work(&mut state.workers)),
            None => work(&mut state.workers),
        };
        let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
        merge_into(sink, outputs)?;
        state.next_epoch = end;
        let t_end = end as f64 * cfg.run.epoch_s;
        if let Some(seg) = state.segments.last_mut() {
            seg.1 = t_end;
        }
        // The interruption marker precedes the checkpoint so a resume keeps it.
        let halt = end < total_epochs && stopped();
        if halt {
            sink.event(&Event::Interrupted { sim_time_s: t_end })?;
        }
        sink.checkpoint(&state)?;
        if halt {
            break;
        }
    }

    let totals = state.channel_totals();
    let report = summarize(&SummaryInputs {
        channels: &totals,
        simulated_duration_s: state.next_epoch as f64 * cfg.run.epoch_s,
        channel_loss_db: cfg.fiber.loss_db,
        segments: &state.segments,
        completed: state.next_epoch == total_epochs,
        config_digest: &digest,
        runtime_s: started.elapsed().as_secs_f64(),
    });
    sink.finish(&report)?;
    Ok(report)
}

/// Writes chunk outputs in (epoch, channel) order.
fn merge_into(sink: &mut dyn RunSink, outputs: Vec<ChunkOutput>) -> Result<()> {
    let mut records: Vec<(u64, usize, TimeSeriesRecord)> = Vec::new();
    let mut events: Vec<(u64, usize, usize, Event)> = Vec::new();
    for (ch, out) in outputs.into_iter().enumerate() {
        records.extend(out.records.into_iter().map(|(e, r)| (e, ch, r)));
        events.extend(out.events.into_iter().enumerate().map(|(i, (e, ev))| (e, ch, i, ev)));
    }
    records.sort_by_key(|&(e, ch, _)| (e, ch));
    events.sort_by_key(|(e, ch, i, _)| (*e, *ch, *i));
    for (_, _, r) in &records {
        sink.record(r)?;
    }
    for (_, _, _, ev) in &events {
        sink.event(ev)?;
    }
    Ok(())
}
