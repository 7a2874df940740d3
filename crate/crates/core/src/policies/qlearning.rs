//! Tabular Q-learning update agent.

use std::io::{self, BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::state::{PolicyState, StateEncoder};
use super::{DecisionContext, Learned, SpawnChoice, SpawnContext, Transition, UpdateAgent};
use crate::rng::SimRng;

/// Weights of the delay / destabilization / accuracy reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Trade-off between the penalized and the rewarded terms.
    pub alpha: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 0.025,
            w2: 1.0,
            w3: 2.0,
            alpha: 0.5,
        }
    }
}

/// What the reward is computed from: one completed request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub total_delay_ms: f64,
    pub delay_budget_ms: f64,
    pub stability: f64,
    pub accuracy: f64,
}

/// `-(1-alpha)(w1 psi + w2 sigma) + alpha w3 upsilon` with
/// `psi = delay / budget`, `sigma = 1 - stability`, `upsilon = accuracy`.
pub fn reward(inputs: &RewardInputs, w: &RewardWeights) -> f64 {
    let psi = inputs.total_delay_ms / inputs.delay_budget_ms;
    let sigma = 1.0 - inputs.stability;
    let upsilon = inputs.accuracy;
    -(1.0 - w.alpha) * (w.w1 * psi + w.w2 * sigma) + w.alpha * w.w3 * upsilon
}

/// Multiplicative exploration decay that reaches `min` after half of the
/// scheduled events and holds there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub min: f64,
    pub decay: f64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, min: f64, total_events: u64) -> Self {
        let half = (total_events as f64 / 2.0).max(1.0);
        let decay = if start > min { (min / start).powf(1.0 / half) } else { 1.0 };
        Self { start, min, decay }
    }

    /// Value after one more event.
    pub fn step(&self, eps: f64) -> f64 {
        if eps > self.min {
            (eps * self.decay).max(self.min)
        } else {
            self.min
        }
    }

    /// Closed form after `events` events.
    pub fn at(&self, events: u64) -> f64 {
        (self.start * self.decay.powf(events as f64)).max(self.min).min(self.start)
    }
}

#[derive(Debug, Error)]
pub enum QTableError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dense state-action value table. Unvisited entries read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    encoder: StateEncoder,
    values: Vec<f64>,
    visits: Vec<u64>,
}

/// Values around one Q update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QStep {
    pub before: f64,
    pub next_max: f64,
    pub after: f64,
}

impl QTable {
    pub fn new(encoder: StateEncoder) -> Self {
        let n = encoder.state_count() * 2;
        Self {
            encoder,
            values: vec![0.0; n],
            visits: vec![0; n],
        }
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    fn slot(&self, s: &PolicyState, update: bool) -> usize {
        self.encoder.index(s) * 2 + usize::from(update)
    }

    pub fn get(&self, s: &PolicyState, update: bool) -> f64 {
        self.values[self.slot(s, update)]
    }

    pub fn set(&mut self, s: &PolicyState, update: bool, v: f64) {
        let i = self.slot(s, update);
        self.values[i] = v;
    }

    pub fn visits(&self, s: &PolicyState, update: bool) -> u64 {
        self.visits[self.slot(s, update)]
    }

    /// Best value over the actions available in `s` (no update is the only
    /// action when nothing newer is published).
    pub fn max_value(&self, s: &PolicyState) -> f64 {
        let hold = self.get(s, false);
        if s.has_newer() {
            hold.max(self.get(s, true))
        } else {
            hold
        }
    }

    /// Greedy action; ties go to updating.
    pub fn greedy(&self, s: &PolicyState) -> bool {
        s.has_newer() && self.get(s, true) >= self.get(s, false)
    }

    /// One-step target `Q += lr (r + gamma max Q(s') - Q)`.
    pub fn update(&mut self, s: &PolicyState, update: bool, r: f64, next: &PolicyState, lr: f64, gamma: f64) -> QStep {
        let next_max = self.max_value(next);
        let i = self.slot(s, update);
        let before = self.values[i];
        let after = before + lr * (r + gamma * next_max - before);
        self.values[i] = after;
        self.visits[i] += 1;
        QStep {
            before,
            next_max,
            after,
        }
    }

    /// States with a newer version available that were decided in at least
    /// once.
    pub fn visited_decision_states(&self) -> Vec<PolicyState> {
        (0..self.encoder.state_count())
            .map(|i| self.encoder.state_at(i))
            .filter(|s| s.has_newer() && (self.visits(s, false) + self.visits(s, true)) > 0)
            .collect()
    }

    /// CSV: `load_bin,queue_bin,model,gap_bin,action,visits,value`, one line
    /// per touched entry.
    pub fn export<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "load_bin,queue_bin,model,gap_bin,action,visits,value")?;
        for i in 0..self.values.len() {
            if self.visits[i] == 0 && self.values[i] == 0.0 {
                continue;
            }
            let s = self.encoder.state_at(i / 2);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.load_bin,
                s.queue_bin,
                s.model,
                s.gap_bin,
                i % 2,
                self.visits[i],
                self.values[i]
            )?;
        }
        Ok(())
    }

    /// Loads entries written by [`QTable::export`] into a zero table.
    pub fn import<R: BufRead>(encoder: StateEncoder, input: R) -> Result<Self, QTableError> {
        let mut t = QTable::new(encoder);
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| QTableError::Parse { line: lineno, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, got {}", f.len())));
            }
            let int = |k: usize| f[k].trim().parse::<u64>().map_err(|e| err(format!("field {}: {e}", k + 1)));
            let s = PolicyState {
                load_bin: int(0)? as u8,
                queue_bin: int(1)? as u8,
                model: int(2)? as u16,
                gap_bin: int(3)? as u8,
            };
            if !t.encoder.is_valid(&s) {
                return Err(err(format!("state {s:?} outside the configured bins")));
            }
            let action = match int(4)? {
                0 => false,
                1 => true,
                a => return Err(err(format!("action must be 0 or 1, got {a}"))),
            };
            let visits = int(5)?;
            let value: f64 = f[6].trim().parse().map_err(|e| err(format!("value: {e}")))?;
            let i = t.slot(&s, action);
            t.values[i] = value;
            t.visits[i] = visits;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearningConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub reward: RewardWeights,
    pub bins: super::state::StateBins,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            discount: 0.99,
            epsilon_start: 1.0,
            epsilon_min: 0.001,
            reward: RewardWeights::default(),
            bins: Default::default(),
        }
    }
}

/// Epsilon-greedy tabular agent. Exploration decays once per simulation
/// event.
#[derive(Debug, Clone)]
pub struct QLearningAgent {
    table: QTable,
    cfg: QLearningConfig,
    schedule: EpsilonSchedule,
    epsilon: f64,
    rng: SimRng,
}

impl QLearningAgent {
    pub fn new(cfg: QLearningConfig, models: usize, total_events: u64, rng: SimRng) -> Self {
        let table = QTable::new(StateEncoder::new(cfg.bins.clone(), models));
        Self::with_table(cfg, table, total_events, rng)
    }

    pub fn with_table(cfg: QLearningConfig, table: QTable, total_events: u64, rng: SimRng) -> Self {
        let schedule = EpsilonSchedule::new(cfg.epsilon_start, cfg.epsilon_min, total_events);
        Self {
            table,
            epsilon: cfg.epsilon_start,
            cfg,
            schedule,
            rng,
        }
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn into_table(self) -> QTable {
        self.table
    }

    pub fn schedule(&self) -> &EpsilonSchedule {
        &self.schedule
    }

    fn choose(&mut self, s: &PolicyState) -> bool {
        if !s.has_newer() {
            return false;
        }
        if self.rng.random::<f64>() < self.epsilon {
            self.rng.random_bool(0.5)
        } else {
            self.table.greedy(s)
        }
    }
}

impl UpdateAgent for QLearningAgent {
    fn name(&self) -> &str {
        "rl"
    }

    fn decide(&mut self, ctx: &DecisionContext) -> bool {
        self.choose(&ctx.state)
    }

    fn spawn_version(&mut self, ctx: &SpawnContext) -> SpawnChoice {
        if ctx.production >= ctx.latest {
            return SpawnChoice {
                version: ctx.latest,
                action: None,
            };
        }
        let update = self.choose(&ctx.state);
        SpawnChoice {
            version: if update { ctx.latest } else { ctx.production },
            action: Some(update),
        }
    }

    fn learns(&self) -> bool {
        true
    }

    fn state_encoder(&self) -> Option<&StateEncoder> {
        Some(self.table.encoder())
    }

    fn learn(&mut self, t: &Transition) -> Option<Learned> {
        let r = reward(&t.inputs, &self.cfg.reward);
        let step = self.table.update(
            &t.state,
            t.update,
            r,
            &t.next_state,
            self.cfg.learning_rate,
            self.cfg.discount,
        );
        Some(Learned { reward: r, step })
    }

    fn on_event(&mut self) {
        self.epsilon = self.schedule.step(self.epsilon);
    }

    fn epsilon(&self) -> Option<f64> {
        Some(self.epsilon)
    }

    fn q_table(&self) -> Option<&QTable> {
        Some(&self.table)
    }

    fn take_q_table(self: Box<Self>) -> Option<QTable> {
        Some(self.table)
    }
}
