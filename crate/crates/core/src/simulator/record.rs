//! Per-request delay records and the policy decision log, with their CSV
//! forms.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::cluster::ReplicaId;
use crate::domain::{AppClass, VersionId};
use crate::policies::{PolicyState, RewardInputs};

/// Queueing delay and total from observed times:
/// `queue = departure - arrival - (transmission + spawn + processing + inference)`
/// floored at zero, and `total` the sum of all five parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBreakdown {
    pub processing_ms: f64,
    pub inference_ms: f64,
    pub transmission_ms: f64,
    pub spawn_ms: f64,
    pub queue_ms: f64,
}

impl DelayBreakdown {
    pub fn from_times(
        arrival_ms: f64,
        departure_ms: f64,
        transmission_ms: f64,
        spawn_ms: f64,
        processing_ms: f64,
        inference_ms: f64,
    ) -> Self {
        let queue_ms =
            (departure_ms - arrival_ms - (transmission_ms + spawn_ms + processing_ms + inference_ms)).max(0.0);
        Self {
            processing_ms,
            inference_ms,
            transmission_ms,
            spawn_ms,
            queue_ms,
        }
    }

    pub fn total(&self) -> f64 {
        self.processing_ms + self.inference_ms + self.transmission_ms + self.spawn_ms + self.queue_ms
    }
}

/// One completed inference request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub id: u64,
    pub model: usize,
    pub app_class: AppClass,
    pub arrival_ms: f64,
    pub departure_ms: f64,
    pub node: usize,
    pub replica: ReplicaId,
    pub served_version: VersionId,
    pub tau_p: f64,
    pub tau_i: f64,
    pub tau_t: f64,
    pub tau_s: f64,
    pub tau_q: f64,
    pub total: f64,
    pub accuracy: f64,
    pub stability: f64,
}

impl RequestRecord {
    pub fn breakdown(&self) -> DelayBreakdown {
        DelayBreakdown {
            processing_ms: self.tau_p,
            inference_ms: self.tau_i,
            transmission_ms: self.tau_t,
            spawn_ms: self.tau_s,
            queue_ms: self.tau_q,
        }
    }
}

pub const TRACE_HEADER: &str = "id,model,app_class,arrival_ms,departure_ms,node,replica,served_version,\
tau_p_ms,tau_i_ms,tau_t_ms,tau_s_ms,tau_q_ms,total_ms,accuracy,stability";

/// Writes a trace CSV. Floats use the shortest representation that reads
/// back to the same value.
pub fn write_trace<W: Write>(
    mut out: W,
    records: &[RequestRecord],
    model_names: &[String],
    node_names: &[String],
) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            model_names[r.model],
            r.app_class,
            r.arrival_ms,
            r.departure_ms,
            node_names[r.node],
            r.replica.0,
            r.served_version,
            r.tau_p,
            r.tau_i,
            r.tau_t,
            r.tau_s,
            r.tau_q,
            r.total,
            r.accuracy,
            r.stability
        )?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Trace row as read back from CSV; model and node stay symbolic.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub model: String,
    pub app_class: AppClass,
    pub served_version: VersionId,
    pub total: f64,
    pub accuracy: f64,
    pub stability: f64,
    pub components: [f64; 5],
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != TRACE_HEADER {
                return Err(TraceError::Parse {
                    line: 1,
                    msg: "unexpected trace header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| TraceError::Parse { line: n + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 16 {
            return Err(err(format!("expected 16 fields, got {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("column {}: {e}", k + 1)));
        rows.push(TraceRow {
            model: f[1].to_string(),
            app_class: f[2].parse().map_err(err)?,
            served_version: VersionId(f[7].parse().map_err(|e| err(format!("served_version: {e}")))?),
            components: [num(8)?, num(9)?, num(10)?, num(11)?, num(12)?],
            total: num(13)?,
            accuracy: num(14)?,
            stability: num(15)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    /// Update decision on a replica behind the latest release.
    Decide,
    /// Version choice for a scale-out replica.
    Spawn,
    /// Q-table update from a completed transition.
    Learn,
}

impl LogKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::Decide => "decide",
            LogKind::Spawn => "spawn",
            LogKind::Learn => "learn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnEntry {
    pub state: PolicyState,
    pub update: bool,
    pub next_state: PolicyState,
    pub inputs: RewardInputs,
    pub reward: f64,
    pub q_before: f64,
    pub q_next_max: f64,
    pub q_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLogEntry {
    pub time_ms: f64,
    pub kind: LogKind,
    pub model: usize,
    pub replica: ReplicaId,
    pub old_version: VersionId,
    pub new_version: VersionId,
    pub action: bool,
    /// Update chosen but no node could host the successor.
    pub forced_hold: bool,
    pub epsilon: Option<f64>,
    pub learn: Option<LearnEntry>,
}

pub const POLICY_LOG_HEADER: &str = "time_ms,kind,model,replica,old_version,new_version,action,forced_hold,\
epsilon,state,update,next_state,delay_ms,budget_ms,stability,accuracy,reward,q_before,q_next_max,q_after";

fn state_text(s: &PolicyState) -> String {
    format!("{}/{}/{}/{}", s.load_bin, s.queue_bin, s.model, s.gap_bin)
}

fn parse_state(text: &str) -> Option<PolicyState> {
    let mut it = text.split('/').map(|p| p.parse::<u16>().ok());
    let s = PolicyState {
        load_bin: it.next()?? as u8,
        queue_bin: it.next()?? as u8,
        model: it.next()??,
        gap_bin: it.next()?? as u8,
    };
    it.next().is_none().then_some(s)
}

pub fn write_policy_log<W: Write>(mut out: W, entries: &[PolicyLogEntry], model_names: &[String]) -> io::Result<()> {
    writeln!(out, "{POLICY_LOG_HEADER}")?;
    for e in entries {
        write!(
            out,
            "{},{},{},{},{},{},{},{},",
            e.time_ms,
            e.kind.as_str(),
            model_names[e.model],
            e.replica.0,
            e.old_version,
            e.new_version,
            u8::from(e.action),
            u8::from(e.forced_hold)
        )?;
        match e.epsilon {
            Some(eps) => write!(out, "{eps},")?,
            None => write!(out, ",")?,
        }
        match &e.learn {
            Some(l) => writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                state_text(&l.state),
                u8::from(l.update),
                state_text(&l.next_state),
                l.inputs.total_delay_ms,
                l.inputs.delay_budget_ms,
                l.inputs.stability,
                l.inputs.accuracy,
                l.reward,
                l.q_before,
                l.q_next_max,
                l.q_after
            )?,
            None => writeln!(out, ",,,,,,,,,,")?,
        }
    }
    Ok(())
}

/// Learn rows of a policy log, as needed to re-check reward and Q updates.
pub fn read_learn_entries<R: BufRead>(input: R) -> Result<Vec<LearnEntry>, TraceError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| TraceError::Parse { line: n + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 20 {
            return Err(err(format!("expected 20 fields, got {}", f.len())));
        }
        if f[1] != "learn" {
            continue;
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("column {}: {e}", k + 1)));
        let state = |k: usize| parse_state(f[k]).ok_or_else(|| err(format!("column {}: bad state", k + 1)));
        out.push(LearnEntry {
            state: state(9)?,
            update: f[10] == "1",
            next_state: state(11)?,
            inputs: RewardInputs {
                total_delay_ms: num(12)?,
                delay_budget_ms: num(13)?,
                stability: num(14)?,
                accuracy: num(15)?,
            },
            reward: num(16)?,
            q_before: num(17)?,
            q_next_max: num(18)?,
            q_after: num(19)?,
        });
    }
    Ok(out)
}
