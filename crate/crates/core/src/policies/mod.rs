//! Update agents: decide whether a replica moves to a fresher release and
//! which release a scaled-out replica starts with.

pub mod qlearning;
pub mod state;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::VersionId;
use crate::rng::{substream, SimRng};

pub use qlearning::{
    reward, EpsilonSchedule, QLearningAgent, QLearningConfig, QStep, QTable, QTableError, RewardInputs,
    RewardWeights,
};
pub use state::{PolicyState, StateBins, StateEncoder};

/// Input to an update decision for a replica behind the latest release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionContext {
    pub model: usize,
    pub state: PolicyState,
    /// CPU load of the node hosting the replica.
    pub node_load: f64,
    pub current: VersionId,
    pub latest: VersionId,
}

/// Input to the version choice for a scale-out replica.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnContext {
    pub model: usize,
    pub state: PolicyState,
    /// Newest version among the model's running replicas.
    pub production: VersionId,
    pub latest: VersionId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpawnChoice {
    pub version: VersionId,
    /// Action to credit when the agent learns from this choice.
    pub action: Option<bool>,
}

/// One state transition handed to a learning agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: PolicyState,
    pub update: bool,
    pub inputs: RewardInputs,
    pub next_state: PolicyState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Learned {
    pub reward: f64,
    pub step: QStep,
}

pub trait UpdateAgent: Send {
    fn name(&self) -> &str;

    /// `true` replaces the replica with a fresher release. Only called when
    /// one exists.
    fn decide(&mut self, ctx: &DecisionContext) -> bool;

    fn spawn_version(&mut self, ctx: &SpawnContext) -> SpawnChoice;

    fn learns(&self) -> bool {
        false
    }

    fn state_encoder(&self) -> Option<&StateEncoder> {
        None
    }

    fn learn(&mut self, _t: &Transition) -> Option<Learned> {
        None
    }

    /// Called once per processed simulation event.
    fn on_event(&mut self) {}

    fn epsilon(&self) -> Option<f64> {
        None
    }

    fn q_table(&self) -> Option<&QTable> {
        None
    }

    fn take_q_table(self: Box<Self>) -> Option<QTable> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Always,
    Never,
    Random,
    LoadBased,
    Rl,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Always,
        PolicyKind::Never,
        PolicyKind::Random,
        PolicyKind::LoadBased,
        PolicyKind::Rl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Always => "always",
            PolicyKind::Never => "never",
            PolicyKind::Random => "random",
            PolicyKind::LoadBased => "load-based",
            PolicyKind::Rl => "rl",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected always, never, random, load-based or rl)"))
    }
}

/// Version a never-updating policy gives scale-out replicas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeverSpawn {
    #[default]
    Initial,
    Production,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    /// Node CPU load below which the load-based agent updates.
    pub load_threshold: f64,
    pub random_update_probability: f64,
    pub never_spawn: NeverSpawn,
    pub rl: QLearningConfig,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            load_threshold: 0.5,
            random_update_probability: 0.5,
            never_spawn: NeverSpawn::Initial,
            rl: QLearningConfig::default(),
        }
    }
}

pub struct AlwaysUpdate;

impl UpdateAgent for AlwaysUpdate {
    fn name(&self) -> &str {
        "always"
    }

    fn decide(&mut self, _ctx: &DecisionContext) -> bool {
        true
    }

    fn spawn_version(&mut self, ctx: &SpawnContext) -> SpawnChoice {
        SpawnChoice {
            version: ctx.latest,
            action: None,
        }
    }
}

pub struct NeverUpdate {
    pub spawn: NeverSpawn,
}

impl UpdateAgent for NeverUpdate {
    fn name(&self) -> &str {
        "never"
    }

    fn decide(&mut self, _ctx: &DecisionContext) -> bool {
        false
    }

    fn spawn_version(&mut self, ctx: &SpawnContext) -> SpawnChoice {
        let version = match self.spawn {
            NeverSpawn::Initial => VersionId::ZERO,
            NeverSpawn::Production => ctx.production,
        };
        SpawnChoice { version, action: None }
    }
}

fn uniform_published(rng: &mut SimRng, latest: VersionId) -> VersionId {
    VersionId(rng.random_range(0..=latest.0))
}

pub struct RandomUpdate {
    pub probability: f64,
    rng: SimRng,
}

impl RandomUpdate {
    pub fn new(probability: f64, rng: SimRng) -> Self {
        Self { probability, rng }
    }
}

impl UpdateAgent for RandomUpdate {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, _ctx: &DecisionContext) -> bool {
        self.rng.random_bool(self.probability)
    }

    fn spawn_version(&mut self, ctx: &SpawnContext) -> SpawnChoice {
        SpawnChoice {
            version: uniform_published(&mut self.rng, ctx.latest),
            action: None,
        }
    }
}

/// Updates while the hosting node is lightly loaded. New replicas get a
/// uniformly drawn published release since their node is not known yet.
pub struct LoadBased {
    pub threshold: f64,
    rng: SimRng,
}

impl LoadBased {
    pub fn new(threshold: f64, rng: SimRng) -> Self {
        Self { threshold, rng }
    }
}

impl UpdateAgent for LoadBased {
    fn name(&self) -> &str {
        "load-based"
    }

    fn decide(&mut self, ctx: &DecisionContext) -> bool {
        ctx.node_load < self.threshold
    }

    fn spawn_version(&mut self, ctx: &SpawnContext) -> SpawnChoice {
        SpawnChoice {
            version: uniform_published(&mut self.rng, ctx.latest),
            action: None,
        }
    }
}

/// Builds an agent with its own random substream of `seed`.
pub fn build_agent(
    kind: PolicyKind,
    params: &PolicyParams,
    seed: u64,
    models: usize,
    total_events: u64,
    warm_start: Option<QTable>,
) -> Box<dyn UpdateAgent> {
    let rng = substream(seed, "policy", kind as u64);
    match kind {
        PolicyKind::Always => Box::new(AlwaysUpdate),
        PolicyKind::Never => Box::new(NeverUpdate {
            spawn: params.never_spawn,
        }),
        PolicyKind::Random => Box::new(RandomUpdate::new(params.random_update_probability, rng)),
        PolicyKind::LoadBased => Box::new(LoadBased::new(params.load_threshold, rng)),
        PolicyKind::Rl => match warm_start {
            Some(t) => Box::new(QLearningAgent::with_table(params.rl.clone(), t, total_events, rng)),
            None => Box::new(QLearningAgent::new(params.rl.clone(), models, total_events, rng)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(load: f64) -> DecisionContext {
        DecisionContext {
            model: 0,
            state: PolicyState {
                load_bin: 0,
                queue_bin: 0,
                model: 0,
                gap_bin: 1,
            },
            node_load: load,
            current: VersionId(3),
            latest: VersionId(4),
        }
    }

    fn spawn_ctx(latest: u32) -> SpawnContext {
        SpawnContext {
            model: 0,
            state: ctx(0.0).state,
            production: VersionId(latest.saturating_sub(1)),
            latest: VersionId(latest),
        }
    }

    #[test]
    fn baselines_decide() {
        assert!(AlwaysUpdate.decide(&ctx(0.9)));
        assert!(!NeverUpdate { spawn: NeverSpawn::Initial }.decide(&ctx(0.0)));
        let mut lb = LoadBased::new(0.5, substream(1, "policy", 3));
        assert!(lb.decide(&ctx(0.4)));
        assert!(!lb.decide(&ctx(0.6)));
        assert!(!lb.decide(&ctx(0.5)));
    }

    #[test]
    fn spawn_versions() {
        assert_eq!(AlwaysUpdate.spawn_version(&spawn_ctx(7)).version, VersionId(7));
        let mut never = NeverUpdate { spawn: NeverSpawn::Initial };
        assert_eq!(never.spawn_version(&spawn_ctx(7)).version, VersionId(0));
        never.spawn = NeverSpawn::Production;
        assert_eq!(never.spawn_version(&spawn_ctx(7)).version, VersionId(6));

        let mut lb = LoadBased::new(0.5, substream(1, "policy", 3));
        let mut seen = [0usize; 5];
        for _ in 0..5000 {
            let v = lb.spawn_version(&spawn_ctx(4)).version.0 as usize;
            seen[v] += 1;
        }
        assert!(seen.iter().all(|&c| (850..1150).contains(&c)), "{seen:?}");
    }

    #[test]
    fn random_is_fair_and_replayable() {
        let run = |seed| {
            let mut p = RandomUpdate::new(0.5, substream(seed, "policy", 2));
            (0..10_000).map(|_| p.decide(&ctx(0.0))).collect::<Vec<_>>()
        };
        let a = run(5);
        assert_eq!(a, run(5));
        let ones = a.iter().filter(|&&x| x).count();
        assert!((4700..5300).contains(&ones), "{ones}");
    }

    #[test]
    fn parse_kind() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>(), Ok(k));
        }
        assert!("sometimes".parse::<PolicyKind>().is_err());
    }
}
