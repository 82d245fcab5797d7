//! Perturb-and-observe stabilization of the four operating-point controls.
//!
//! For the active parameter the controller measures the channel at the
//! committed value displaced by −step, 0 and +step, commits whichever scored
//! best (staying put on ties), then moves on to the next parameter in
//! round-robin order.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::timebin::{quantize, EpochStats, Parameter, QuantizationGrid, SystemOperatingPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaximizeCounts,
    MinimizeQber,
}

impl Objective {
    /// Whether score `a` is strictly better than `b`. NaN never wins.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::MaximizeCounts => a > b,
            Objective::MinimizeQber => a < b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunableParameter {
    pub id: Parameter,
    pub step: f64,
    pub min: f64,
    pub max: f64,
    pub objective: Objective,
    pub dwell_epochs: u32,
}

impl TunableParameter {
    pub fn default_for(id: Parameter) -> Self {
        let grid = QuantizationGrid::default();
        let (min, max, objective) = match id {
            Parameter::DetectionTiming => (-400.0, 400.0, Objective::MaximizeCounts),
            Parameter::EncoderBias => (-1.0, 1.0, Objective::MinimizeQber),
            Parameter::AmziTemperature => (-0.5, 0.5, Objective::MinimizeQber),
            Parameter::PhaseCompAmplitude => (-std::f64::consts::PI, std::f64::consts::PI, Objective::MinimizeQber),
        };
        Self {
            id,
            step: grid.step(id),
            min,
            max,
            objective,
            dwell_epochs: 3,
        }
    }

    pub fn defaults() -> Vec<Self> {
        Parameter::ALL.iter().map(|&p| Self::default_for(p)).collect()
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        let name = format!("stabilizer.{}", self.id);
        if !(self.step > 0.0) {
            errors.push(format!("{name}.step must be > 0"));
        }
        if !(self.min <= self.max) {
            errors.push(format!("{name}: bounds must be ordered (min <= max)"));
        }
        if self.dwell_epochs < 1 {
            errors.push(format!("{name}.dwell_epochs must be >= 1"));
        }
    }

    /// Nearest grid value to `value` inside the bounds.
    pub fn snap(&self, value: f64) -> f64 {
        let mut q = quantize(value.clamp(self.min, self.max), self.step);
        if q > self.max + 1e-12 {
            q -= self.step;
        }
        if q < self.min - 1e-12 {
            q += self.step;
        }
        q
    }

    pub fn apply(&self, op: &SystemOperatingPoint, value: f64) -> SystemOperatingPoint {
        let mut grid = QuantizationGrid::default();
        match self.id {
            Parameter::DetectionTiming => grid.timing_ps = self.step,
            Parameter::EncoderBias => grid.bias = self.step,
            Parameter::AmziTemperature => grid.temperature_k = self.step,
            Parameter::PhaseCompAmplitude => grid.phase_rad = self.step,
        }
        op.with(self.id, self.snap(value), &grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialPhase {
    TrialMinus,
    TrialCenter,
    TrialPlus,
    Commit,
}

impl TrialPhase {
    fn next(self) -> Self {
        match self {
            TrialPhase::TrialMinus => TrialPhase::TrialCenter,
            TrialPhase::TrialCenter => TrialPhase::TrialPlus,
            TrialPhase::TrialPlus | TrialPhase::Commit => TrialPhase::Commit,
        }
    }

    fn slot(self) -> Option<usize> {
        match self {
            TrialPhase::TrialMinus => Some(0),
            TrialPhase::TrialCenter => Some(1),
            TrialPhase::TrialPlus => Some(2),
            TrialPhase::Commit => None,
        }
    }

    fn multiplier(self) -> f64 {
        match self {
            TrialPhase::TrialMinus => -1.0,
            TrialPhase::TrialPlus => 1.0,
            TrialPhase::TrialCenter | TrialPhase::Commit => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Index of the active parameter in the controller's parameter list.
    pub active: usize,
    pub phase: TrialPhase,
    pub trial_scores: [Option<f64>; 3],
    pub cycle_count: u64,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            active: 0,
            phase: TrialPhase::TrialMinus,
            trial_scores: [None; 3],
            cycle_count: 0,
        }
    }
}

impl ControllerState {
    /// Stores the score of the current trial phase and advances the phase.
    pub fn record(&self, score: f64) -> Self {
        let mut next = *self;
        if let Some(slot) = self.phase.slot() {
            next.trial_scores[slot] = Some(score);
        }
        next.phase = self.phase.next();
        next
    }
}

/// What the controller sees of one measurement epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub count_rate_hz: f64,
    pub qber: f64,
}

impl Observation {
    /// Empty sifted keys score as a random channel.
    pub fn from_stats(stats: &EpochStats, duration_s: f64) -> Self {
        let qber = if stats.sifted_bits > 0 {
            stats.sifted_errors as f64 / stats.sifted_bits as f64
        } else {
            0.5
        };
        Self {
            count_rate_hz: stats.clicks() as f64 / duration_s,
            qber,
        }
    }

    pub fn score(&self, objective: Objective) -> f64 {
        match objective {
            Objective::MaximizeCounts => self.count_rate_hz,
            Objective::MinimizeQber => self.qber,
        }
    }
}

/// Operating point to measure during the current trial phase.
pub fn propose_trial(
    state: &ControllerState,
    params: &[TunableParameter],
    op: &SystemOperatingPoint,
) -> SystemOperatingPoint {
    let param = &params[state.active];
    let center = op.get(param.id);
    let target = center + state.phase.multiplier() * param.step;
    if target > param.max + 1e-12 || target < param.min - 1e-12 {
        return *op;
    }
    param.apply(op, target)
}

/// Picks the best of the three trial scores and advances to the next parameter.
///
/// Returns the new state and the chosen displacement (−step, 0 or +step).
pub fn record_and_select(
    state: &ControllerState,
    params: &[TunableParameter],
    scores: [f64; 3],
) -> (ControllerState, f64) {
    let param = &params[state.active];
    let mut best = 1usize;
    for side in [0usize, 2] {
        if param.objective.better(scores[side], scores[best]) {
            best = side;
        }
    }
    let offset = (best as f64 - 1.0) * param.step;
    let active = (state.active + 1) % params.len();
    let next = ControllerState {
        active,
        phase: TrialPhase::TrialMinus,
        trial_scores: [None; 3],
        cycle_count: state.cycle_count + u64::from(active == 0),
    };
    (next, offset)
}

/// Commits `offset` on the active parameter of `state`.
pub fn commit(param: &TunableParameter, op: &SystemOperatingPoint, offset: f64) -> SystemOperatingPoint {
    param.apply(op, op.get(param.id) + offset)
}

/// Source of per-epoch measurements at a requested operating point.
pub trait ChannelProbe {
    fn measure(&mut self, op: &SystemOperatingPoint) -> Result<Observation>;
}

impl<F> ChannelProbe for F
where
    F: FnMut(&SystemOperatingPoint) -> Result<Observation>,
{
    fn measure(&mut self, op: &SystemOperatingPoint) -> Result<Observation> {
        self(op)
    }
}

/// One full propose/measure/select cycle over every parameter in order.
pub fn stabilization_round<P: ChannelProbe + ?Sized>(
    op: &SystemOperatingPoint,
    probe: &mut P,
    params: &[TunableParameter],
) -> Result<SystemOperatingPoint> {
    let mut op = *op;
    let mut state = ControllerState::default();
    for _ in 0..params.len() {
        let param = params[state.active];
        while state.phase != TrialPhase::Commit {
            let trial = propose_trial(&state, params, &op);
            let mut sum = 0.0;
            for _ in 0..param.dwell_epochs {
                sum += probe.measure(&trial)?.score(param.objective);
            }
            state = state.record(sum / f64::from(param.dwell_epochs));
        }
        let scores = state.trial_scores.map(|s| s.expect("all trials measured"));
        let (next, offset) = record_and_select(&state, params, scores);
        op = commit(&param, &op, offset);
        state = next;
    }
    Ok(op)
}

/// A committed parameter change, logged to the run's event stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub parameter: Parameter,
    pub scores: [f64; 3],
    pub chosen_offset: f64,
    pub committed_value: f64,
    pub cycle: u64,
}

/// Epoch-driven controller used by the scenario loop.
///
/// Trials start every `trial_period_epochs`; a trial occupies the first
/// `dwell_epochs` of its slot and the channel sits at the committed point for
/// the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    params: Vec<TunableParameter>,
    state: ControllerState,
    committed: SystemOperatingPoint,
    trial_period_epochs: u32,
    slot_epoch: u32,
    dwell_sum: f64,
    enabled: bool,
}

impl Controller {
    pub fn new(
        params: Vec<TunableParameter>,
        initial: SystemOperatingPoint,
        trial_period_epochs: u32,
        enabled: bool,
    ) -> Self {
        let enabled = enabled && !params.is_empty();
        Self {
            params,
            state: ControllerState::default(),
            committed: initial,
            trial_period_epochs,
            slot_epoch: 0,
            dwell_sum: 0.0,
            enabled,
        }
    }

    pub fn committed(&self) -> &SystemOperatingPoint {
        &self.committed
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    fn dwell(&self) -> u32 {
        self.params[self.state.active].dwell_epochs
    }

    fn in_trial(&self) -> bool {
        self.enabled && self.slot_epoch < self.dwell()
    }

    /// Operating point the channel runs at during the next epoch.
    pub fn current_point(&self) -> SystemOperatingPoint {
        if self.in_trial() {
            propose_trial(&self.state, &self.params, &self.committed)
        } else {
            self.committed
        }
    }

    /// Feeds the observation of the epoch run at [`Self::current_point`].
    pub fn observe(&mut self, obs: &Observation) -> Option<Decision> {
        if !self.enabled {
            return None;
        }
        let mut decision = None;
        if self.in_trial() {
            let param = self.params[self.state.active];
            self.dwell_sum += obs.score(param.objective);
            if self.slot_epoch + 1 == param.dwell_epochs {
                let score = self.dwell_sum / f64::from(param.dwell_epochs);
                self.dwell_sum = 0.0;
                self.state = self.state.record(score);
                if self.state.phase == TrialPhase::Commit {
                    let scores = self.state.trial_scores.map(|s| s.expect("all trials measured"));
                    let (next, offset) = record_and_select(&self.state, &self.params, scores);
                    self.committed = commit(&param, &self.committed, offset);
                    decision = Some(Decision {
                        parameter: param.id,
                        scores,
                        chosen_offset: offset,
                        committed_value: self.committed.get(param.id),
                        cycle: self.state.cycle_count,
                    });
                    self.state = next;
                }
            }
        }
        let period = self.trial_period_epochs.max(self.params[self.state.active].dwell_epochs);
        self.slot_epoch += 1;
        if self.slot_epoch >= period {
            self.slot_epoch = 0;
        }
        decision
    }
}
