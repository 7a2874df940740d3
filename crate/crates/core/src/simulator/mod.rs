//! Discrete-event engine.
//!
//! Requests arrive per model with exponential gaps, join the replica with
//! the shortest backlog and are served FIFO with exponential service times
//! drawn from the serving release. After every completion the update agent
//! may replace the replica with a fresher release; arrivals and completions
//! also drive the scaling rule. Releases are events in the same queue.

pub mod event;
pub mod record;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{Cluster, InService, QueuedRequest, ReplicaId, ReplicaLoad, ScalingAction};
use crate::domain::{apply_update, VersionId};
use crate::policies::{
    build_agent, DecisionContext, PolicyKind, PolicyState, QTable, RewardInputs, SpawnContext, StateEncoder,
    Transition, UpdateAgent,
};
use crate::repository::{RepositoryError, VersionRepository};
use crate::rng::{exponential, substream, SimRng};
use crate::scenario::{Horizon, Scenario};

pub use event::{Event, EventKind, EventQueue};
pub use record::{DelayBreakdown, LearnEntry, LogKind, PolicyLogEntry, RequestRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon must be positive")]
    HorizonZero,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Check capacity, conservation and clock monotonicity after every event.
    pub audit: bool,
    pub policy_log: bool,
    /// Starting Q-table for the learning agent.
    pub warm_start: Option<QTable>,
}

/// Counters for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    /// Arrivals and departures; the event horizon and the exploration
    /// schedule count these.
    pub events: u64,
    /// Every processed event including releases and spawn completions.
    pub all_events: u64,
    pub arrivals: u64,
    pub completions: u64,
    pub rejected: u64,
    pub in_system_at_end: u64,
    pub spawns: u64,
    pub removals: u64,
    pub updates: u64,
    pub update_placement_failures: u64,
    pub spawn_placement_failures: u64,
    pub releases: u64,
    pub end_time_ms: f64,
    pub violations: u64,
    pub first_violation: Option<String>,
    pub final_epsilon: Option<f64>,
    pub latest_versions: Vec<u32>,
}

pub struct RunOutput {
    pub policy: PolicyKind,
    pub seed: u64,
    pub records: Vec<RequestRecord>,
    pub policy_log: Vec<PolicyLogEntry>,
    pub stats: RunStats,
    pub q_table: Option<QTable>,
}

/// Pending learning step for a replica: the state and action taken at its
/// last decision point.
#[derive(Debug, Clone, Copy)]
struct Pending {
    state: PolicyState,
    update: bool,
}

/// Shortest backlog wins; ties go to the lowest id.
pub fn dispatch(backlogs: &[(ReplicaId, usize)]) -> Option<ReplicaId> {
    backlogs.iter().min_by_key(|(id, n)| (*n, *id)).map(|(id, _)| *id)
}

struct Engine<'a> {
    sc: &'a Scenario,
    now: f64,
    queue: EventQueue,
    cluster: Cluster,
    repo: VersionRepository,
    agent: Box<dyn UpdateAgent>,
    encoder: Option<StateEncoder>,
    arrival_rng: Vec<SimRng>,
    service_rng: Vec<SimRng>,
    next_request: u64,
    records: Vec<RequestRecord>,
    log: Vec<PolicyLogEntry>,
    log_enabled: bool,
    pending: BTreeMap<ReplicaId, Pending>,
    stats: RunStats,
}

/// Runs one `(scenario, policy, seed)` replication to its horizon.
pub fn run(sc: &Scenario, policy: PolicyKind, seed: u64, opts: RunOptions) -> Result<RunOutput, SimError> {
    match sc.horizon {
        Horizon::Events(0) => return Err(SimError::HorizonZero),
        Horizon::TimeMs(t) if t.is_nan() || t <= 0.0 => return Err(SimError::HorizonZero),
        _ => {}
    }
    if sc.models.is_empty() || sc.nodes.is_empty() {
        return Err(SimError::InvalidScenario("needs at least one model and one node".into()));
    }
    let k = sc.models.len();
    let agent = build_agent(policy, &sc.params, seed, k, sc.scheduled_events(), opts.warm_start);
    let encoder = agent
        .state_encoder()
        .cloned()
        .or_else(|| Some(StateEncoder::new(sc.params.rl.bins.clone(), k)));
    let mut e = Engine {
        sc,
        now: 0.0,
        queue: EventQueue::new(),
        cluster: Cluster::new(sc.nodes.clone(), k),
        repo: VersionRepository::new(sc.models.clone(), sc.attributes)?,
        agent,
        encoder,
        arrival_rng: (0..k).map(|m| substream(seed, "arrival", m as u64)).collect(),
        service_rng: (0..k).map(|m| substream(seed, "service", m as u64)).collect(),
        next_request: 0,
        records: Vec::new(),
        log: Vec::new(),
        log_enabled: opts.policy_log,
        pending: BTreeMap::new(),
        stats: RunStats::default(),
    };
    e.start(seed);
    e.run_loop(opts.audit);
    let q_table = e.agent.q_table().cloned();
    e.stats.final_epsilon = e.agent.epsilon();
    e.stats.latest_versions = (0..k).map(|m| e.repo.latest_version(m).map(|v| v.0).unwrap_or(0)).collect();
    e.stats.in_system_at_end = e.cluster.replicas().map(|r| r.outstanding() as u64).sum();
    Ok(RunOutput {
        policy,
        seed,
        records: e.records,
        policy_log: e.log,
        stats: e.stats,
        q_table,
    })
}

impl Engine<'_> {
    fn start(&mut self, seed: u64) {
        let schedule = self.sc.release_schedule();
        for m in 0..self.sc.models.len() {
            for _ in 0..self.sc.initial_replicas {
                let fp = self.sc.models[m].footprint_at(VersionId::ZERO);
                match self.cluster.spawn(m, VersionId::ZERO, fp, 0.0, 0.0) {
                    Ok(_) => self.stats.spawns += 1,
                    Err(_) => self.stats.spawn_placement_failures += 1,
                }
            }
            let gap = exponential(&mut self.arrival_rng[m], self.sc.models[m].mean_interarrival_ms);
            self.queue.schedule(gap, EventKind::Arrival { model: m });
            let mut rng = substream(seed, "release", m as u64);
            for (t, version) in schedule.generate(&mut rng) {
                self.queue.schedule(t, EventKind::Release { model: m, version });
            }
        }
    }

    fn run_loop(&mut self, audit: bool) {
        loop {
            match self.sc.horizon {
                Horizon::Events(n) if self.stats.events >= n => break,
                Horizon::TimeMs(t) if self.queue.peek_time().is_none_or(|next| next > t) => break,
                _ => {}
            }
            let Some(ev) = self.queue.pop() else { break };
            if audit && ev.time_ms < self.now {
                self.violation(format!("clock went back from {} to {}", self.now, ev.time_ms));
            }
            self.now = ev.time_ms;
            let request_event = matches!(ev.kind, EventKind::Arrival { .. } | EventKind::Departure { .. });
            match ev.kind {
                EventKind::Arrival { model } => self.on_arrival(model),
                EventKind::Departure { replica, request } => self.on_departure(replica, request),
                EventKind::Release { model, version } => self.on_release(model, version),
                EventKind::SpawnComplete { replica } => self.on_spawn_complete(replica),
            }
            self.stats.all_events += 1;
            if request_event {
                self.stats.events += 1;
                self.agent.on_event();
            }
            if audit {
                self.audit();
            }
        }
        self.stats.end_time_ms = self.now;
    }

    fn violation(&mut self, msg: String) {
        self.stats.violations += 1;
        if self.stats.first_violation.is_none() {
            self.stats.first_violation = Some(format!("t={} ms: {msg}", self.now));
        }
    }

    fn audit(&mut self) {
        if let Some(v) = self.cluster.violations().into_iter().next() {
            self.violation(v);
        }
        let in_system: u64 = self.cluster.replicas().map(|r| r.outstanding() as u64).sum();
        if self.stats.arrivals != self.stats.completions + in_system + self.stats.rejected {
            let msg = format!(
                "conservation: {} arrivals vs {} completed + {} in system + {} rejected",
                self.stats.arrivals, self.stats.completions, in_system, self.stats.rejected
            );
            self.violation(msg);
        }
    }

    fn latest(&self, model: usize) -> VersionId {
        self.repo.latest_version(model).expect("model index from scenario")
    }

    fn waiting(&self, model: usize) -> usize {
        self.cluster
            .replicas_of(model)
            .iter()
            .filter_map(|id| self.cluster.replica(*id))
            .map(|r| r.queue.len())
            .sum()
    }

    fn encode(&self, load: f64, model: usize, current: VersionId) -> PolicyState {
        let gap = self.latest(model).0.saturating_sub(current.0);
        self.encoder
            .as_ref()
            .expect("encoder always present")
            .encode(load, self.waiting(model), model, gap)
    }

    fn replica_state(&self, id: ReplicaId) -> PolicyState {
        let r = self.cluster.replica(id).expect("live replica");
        self.encode(self.cluster.node_load(r.node), r.model, r.version)
    }

    fn schedule_ready(&mut self, id: ReplicaId) {
        let r = self.cluster.replica(id).expect("just placed");
        if r.ready {
            self.try_start(id);
        } else {
            let at = r.ready_at_ms;
            self.queue.schedule(at, EventKind::SpawnComplete { replica: id });
        }
    }

    fn on_arrival(&mut self, model: usize) {
        self.stats.arrivals += 1;
        let id = self.next_request;
        self.next_request += 1;
        let gap = exponential(&mut self.arrival_rng[model], self.sc.models[model].mean_interarrival_ms);
        self.queue.schedule(self.now + gap, EventKind::Arrival { model });

        if self.cluster.replicas_of(model).is_empty() {
            self.spawn_replica(model);
        }
        let backlogs: Vec<(ReplicaId, usize)> = self
            .cluster
            .replicas_of(model)
            .iter()
            .map(|rid| (*rid, self.cluster.replica(*rid).expect("indexed").outstanding()))
            .collect();
        let Some(target) = dispatch(&backlogs) else {
            self.stats.rejected += 1;
            return;
        };
        self.cluster
            .replica_mut(target)
            .expect("dispatch target")
            .queue
            .push_back(QueuedRequest {
                id,
                arrival_ms: self.now,
            });
        self.try_start(target);
        self.scale(model);
    }

    /// Begins the next queued request if the replica is ready and free.
    fn try_start(&mut self, id: ReplicaId) {
        let now = self.now;
        let Some(r) = self.cluster.replica_mut(id) else { return };
        if !r.ready || r.in_service.is_some() {
            return;
        }
        let Some(req) = r.queue.pop_front() else { return };
        let spawn_charge = if r.pending_spawn_ms > 0.0 && req.arrival_ms <= r.ready_at_ms {
            r.pending_spawn_ms
        } else {
            0.0
        };
        r.pending_spawn_ms = 0.0;
        let (model, version) = (r.model, r.version);
        let mean = self
            .repo
            .attributes(model, version)
            .expect("replica runs a published release")
            .mean_service_time_ms;
        let service = exponential(&mut self.service_rng[model], mean);
        let r = self.cluster.replica_mut(id).expect("still there");
        r.in_service = Some(InService {
            request: req,
            start_ms: now,
            service_ms: service,
            spawn_charge_ms: spawn_charge,
        });
        self.queue.schedule(
            now + service,
            EventKind::Departure {
                replica: id,
                request: req.id,
            },
        );
    }

    fn complete(&mut self, id: ReplicaId, svc: InService) -> RequestRecord {
        let r = self.cluster.replica(id).expect("serving replica");
        let m = &self.sc.models[r.model];
        let node = self.cluster.node(r.node);
        let attrs = self
            .repo
            .attributes(r.model, r.version)
            .expect("published release");
        let tau_t = node.transmission_delay_ms;
        let tau_p = m.processing_delay_ms;
        let tau_i = svc.service_ms;
        let tau_s = svc.spawn_charge_ms;
        // waiting time not explained by the spawn
        let tau_q = ((svc.start_ms - svc.request.arrival_ms) - tau_s).max(0.0);
        RequestRecord {
            id: svc.request.id,
            model: r.model,
            app_class: m.app_class,
            arrival_ms: svc.request.arrival_ms,
            departure_ms: self.now + tau_t + tau_p,
            node: r.node,
            replica: id,
            served_version: r.version,
            tau_p,
            tau_i,
            tau_t,
            tau_s,
            tau_q,
            total: tau_p + tau_i + tau_t + tau_s + tau_q,
            accuracy: attrs.accuracy,
            stability: attrs.stability,
        }
    }

    fn on_departure(&mut self, id: ReplicaId, request: u64) {
        let svc = {
            let r = self.cluster.replica_mut(id).expect("departing replica exists");
            let svc = r.in_service.take().expect("departure without service");
            debug_assert_eq!(svc.request.id, request);
            svc
        };
        let record = self.complete(id, svc);
        let model = record.model;
        self.stats.completions += 1;

        let learns = self.agent.learns();
        let now_state = learns.then(|| self.replica_state(id));
        if let (Some(next_state), Some(p)) = (now_state, self.pending.remove(&id)) {
            let inputs = RewardInputs {
                total_delay_ms: record.total,
                delay_budget_ms: self.sc.models[model].delay_budget_ms,
                stability: record.stability,
                accuracy: record.accuracy,
            };
            let t = Transition {
                state: p.state,
                update: p.update,
                inputs,
                next_state,
            };
            if let Some(l) = self.agent.learn(&t) {
                if self.log_enabled {
                    self.log.push(PolicyLogEntry {
                        time_ms: self.now,
                        kind: LogKind::Learn,
                        model,
                        replica: id,
                        old_version: record.served_version,
                        new_version: record.served_version,
                        action: p.update,
                        forced_hold: false,
                        epsilon: self.agent.epsilon(),
                        learn: Some(LearnEntry {
                            state: t.state,
                            update: t.update,
                            next_state,
                            inputs,
                            reward: l.reward,
                            q_before: l.step.before,
                            q_next_max: l.step.next_max,
                            q_after: l.step.after,
                        }),
                    });
                }
            }
        }
        self.records.push(record);

        let serving = self.update_hook(id, now_state);
        self.try_start(serving);
        self.scale(model);
    }

    /// Offers the agent an update when a fresher release exists. Returns the
    /// replica that now holds the queue.
    fn update_hook(&mut self, id: ReplicaId, state: Option<PolicyState>) -> ReplicaId {
        let r = self.cluster.replica(id).expect("live replica");
        let (model, current, node) = (r.model, r.version, r.node);
        let latest = self.latest(model);
        if latest <= current {
            if let Some(s) = state {
                self.pending.insert(id, Pending { state: s, update: false });
            }
            return id;
        }
        let state = state.unwrap_or_else(|| self.replica_state(id));
        let ctx = DecisionContext {
            model,
            state,
            node_load: self.cluster.node_load(node),
            current,
            latest,
        };
        let wants = self.agent.decide(&ctx);
        let mut serving = id;
        let mut forced_hold = false;
        let mut new_version = current;
        if wants {
            let target = apply_update(current, true, latest, self.sc.update_target).expect("latest > current");
            let m = &self.sc.models[model];
            let fp = m.footprint_at(target);
            match self
                .cluster
                .replace(id, target, fp, self.now + m.spawn_time_ms, m.spawn_time_ms)
            {
                Ok(new_id) => {
                    serving = new_id;
                    new_version = target;
                    self.stats.updates += 1;
                    self.schedule_ready(new_id);
                }
                Err(_) => {
                    forced_hold = true;
                    self.stats.update_placement_failures += 1;
                }
            }
        }
        let applied = wants && !forced_hold;
        if self.agent.learns() {
            self.pending.insert(serving, Pending { state, update: applied });
        }
        if self.log_enabled {
            self.log.push(PolicyLogEntry {
                time_ms: self.now,
                kind: LogKind::Decide,
                model,
                replica: id,
                old_version: current,
                new_version,
                action: applied,
                forced_hold,
                epsilon: self.agent.epsilon(),
                learn: None,
            });
        }
        serving
    }

    fn scale(&mut self, model: usize) {
        let loads: Vec<ReplicaLoad> = self
            .cluster
            .replicas_of(model)
            .iter()
            .map(|id| {
                let r = self.cluster.replica(*id).expect("indexed");
                ReplicaLoad {
                    id: *id,
                    outstanding: r.outstanding(),
                    idle: r.is_idle(),
                }
            })
            .collect();
        match self.sc.scaling.decide(&loads) {
            ScalingAction::Spawn => self.spawn_replica(model),
            ScalingAction::Remove(id) => {
                self.cluster.remove(id).expect("idle replica exists");
                self.pending.remove(&id);
                self.stats.removals += 1;
            }
            ScalingAction::None => {}
        }
    }

    fn spawn_replica(&mut self, model: usize) {
        let latest = self.latest(model);
        let production = self
            .cluster
            .replicas_of(model)
            .iter()
            .filter_map(|id| self.cluster.replica(*id))
            .map(|r| r.version)
            .max()
            .unwrap_or(VersionId::ZERO);
        let m = &self.sc.models[model];
        // the prospective host is where first-fit would put the current footprint
        let load = self
            .cluster
            .first_fit(&m.footprint_at(production))
            .map(|n| self.cluster.node_load(n))
            .unwrap_or(1.0);
        let state = self.encode(load, model, production);
        let choice = self.agent.spawn_version(&SpawnContext {
            model,
            state,
            production,
            latest,
        });
        let (fp, spawn_ms) = (m.footprint_at(choice.version), m.spawn_time_ms);
        match self
            .cluster
            .spawn(model, choice.version, fp, self.now + spawn_ms, spawn_ms)
        {
            Ok(id) => {
                self.stats.spawns += 1;
                if let Some(update) = choice.action {
                    if self.agent.learns() {
                        self.pending.insert(id, Pending { state, update });
                    }
                }
                if self.log_enabled {
                    self.log.push(PolicyLogEntry {
                        time_ms: self.now,
                        kind: LogKind::Spawn,
                        model,
                        replica: id,
                        old_version: production,
                        new_version: choice.version,
                        action: choice.action.unwrap_or(choice.version == latest),
                        forced_hold: false,
                        epsilon: self.agent.epsilon(),
                        learn: None,
                    });
                }
                self.schedule_ready(id);
            }
            Err(_) => self.stats.spawn_placement_failures += 1,
        }
    }

    fn on_spawn_complete(&mut self, id: ReplicaId) {
        if let Some(r) = self.cluster.replica_mut(id) {
            r.ready = true;
            self.try_start(id);
        }
    }

    fn on_release(&mut self, model: usize, version: VersionId) {
        self.repo
            .publish(model, version, self.now)
            .expect("schedule yields consecutive releases");
        self.stats.releases += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_rule() {
        let r = |i| ReplicaId(i);
        assert_eq!(dispatch(&[(r(1), 2), (r(2), 0)]), Some(r(2)));
        assert_eq!(dispatch(&[(r(4), 1), (r(3), 1)]), Some(r(3)));
        assert_eq!(dispatch(&[(r(9), 5)]), Some(r(9)));
        assert_eq!(dispatch(&[]), None);
    }
}
