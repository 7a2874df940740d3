//! Worker nodes, replicas, first-fit placement and queue-pressure scaling.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Capacity, Limit, ResourceVector, VersionId};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplicaId(pub u64);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("no ML worker admits {0}")]
    NoCapacity(ResourceVector),
    #[error("unknown replica {0:?}")]
    UnknownReplica(ReplicaId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Edge,
    Regional,
    Central,
}

/// Only `Ml` nodes host inference replicas; `Oran` nodes run the RIC
/// applications themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    #[default]
    Ml,
    Oran,
}

#[derive(Debug, Clone)]
pub struct WorkerNode {
    pub name: String,
    pub layer: Layer,
    pub role: NodeRole,
    pub capacity: Capacity,
    pub transmission_delay_ms: f64,
    allocated: ResourceVector,
}

impl WorkerNode {
    pub fn new(name: impl Into<String>, layer: Layer, role: NodeRole, capacity: Capacity, transmission_delay_ms: f64) -> Self {
        Self {
            name: name.into(),
            layer,
            role,
            capacity,
            transmission_delay_ms,
            allocated: ResourceVector::ZERO,
        }
    }

    pub fn allocated(&self) -> ResourceVector {
        self.allocated
    }

    /// `allocated + footprint <= capacity` in every dimension.
    pub fn admits(&self, footprint: &ResourceVector) -> bool {
        match self.allocated.checked_add(footprint) {
            Some(total) => self.capacity.holds(&total),
            None => false,
        }
    }

    /// Fraction of CPU allocated; unlimited nodes report 0.
    pub fn load(&self) -> f64 {
        match self.capacity.cpu {
            Limit::Unlimited => 0.0,
            Limit::Finite(0) => {
                if self.allocated.cpu == 0 {
                    0.0
                } else {
                    1.0
                }
            }
            Limit::Finite(c) => self.allocated.cpu as f64 / c as f64,
        }
    }
}

/// Request waiting in a replica queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedRequest {
    pub id: u64,
    pub arrival_ms: f64,
}

/// Request being served.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InService {
    pub request: QueuedRequest,
    pub start_ms: f64,
    pub service_ms: f64,
    pub spawn_charge_ms: f64,
}

/// One running inference instance of a (model, version).
#[derive(Debug, Clone)]
pub struct Replica {
    pub id: ReplicaId,
    pub model: usize,
    pub version: VersionId,
    pub node: NodeId,
    pub footprint: ResourceVector,
    pub queue: VecDeque<QueuedRequest>,
    pub in_service: Option<InService>,
    pub ready_at_ms: f64,
    pub ready: bool,
    /// Spawn latency still owed to the first request this replica serves.
    pub pending_spawn_ms: f64,
}

impl Replica {
    pub fn outstanding(&self) -> usize {
        self.queue.len() + usize::from(self.in_service.is_some())
    }

    /// Ready, not serving and nothing queued.
    pub fn is_idle(&self) -> bool {
        self.ready && self.in_service.is_none() && self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Cluster {
    nodes: Vec<WorkerNode>,
    replicas: BTreeMap<ReplicaId, Replica>,
    by_model: Vec<Vec<ReplicaId>>,
    next_replica: u64,
}

impl Cluster {
    /// Nodes are tried for placement in the given order.
    pub fn new(nodes: Vec<WorkerNode>, model_count: usize) -> Self {
        Self {
            nodes,
            replicas: BTreeMap::new(),
            by_model: vec![Vec::new(); model_count],
            next_replica: 0,
        }
    }

    pub fn nodes(&self) -> &[WorkerNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &WorkerNode {
        &self.nodes[id]
    }

    pub fn admits(&self, node: NodeId, footprint: &ResourceVector) -> bool {
        self.nodes[node].admits(footprint)
    }

    pub fn node_load(&self, node: NodeId) -> f64 {
        self.nodes[node].load()
    }

    /// First ML worker, in declared order, that admits the footprint.
    pub fn first_fit(&self, footprint: &ResourceVector) -> Result<NodeId, ClusterError> {
        self.nodes
            .iter()
            .position(|n| n.role == NodeRole::Ml && n.admits(footprint))
            .ok_or(ClusterError::NoCapacity(*footprint))
    }

    /// First-fit placement with the allocation applied.
    pub fn place_first_fit(&mut self, footprint: &ResourceVector) -> Result<NodeId, ClusterError> {
        let n = self.first_fit(footprint)?;
        let node = &mut self.nodes[n];
        node.allocated = node.allocated.checked_add(footprint).expect("admitted");
        Ok(n)
    }

    fn deallocate(&mut self, node: NodeId, footprint: &ResourceVector) {
        let n = &mut self.nodes[node];
        n.allocated = n
            .allocated
            .checked_sub(footprint)
            .expect("deallocating more than allocated");
    }

    /// Places and registers a replica that becomes ready at `ready_at_ms`.
    /// `spawn_ms` is charged to the first request it serves if nonzero.
    pub fn spawn(
        &mut self,
        model: usize,
        version: VersionId,
        footprint: ResourceVector,
        ready_at_ms: f64,
        spawn_ms: f64,
    ) -> Result<ReplicaId, ClusterError> {
        let node = self.place_first_fit(&footprint)?;
        let id = ReplicaId(self.next_replica);
        self.next_replica += 1;
        self.replicas.insert(
            id,
            Replica {
                id,
                model,
                version,
                node,
                footprint,
                queue: VecDeque::new(),
                in_service: None,
                ready_at_ms,
                ready: spawn_ms <= 0.0,
                pending_spawn_ms: spawn_ms.max(0.0),
            },
        );
        self.by_model[model].push(id);
        Ok(id)
    }

    /// Unregisters a replica and frees its resources.
    pub fn remove(&mut self, id: ReplicaId) -> Result<Replica, ClusterError> {
        let r = self.replicas.remove(&id).ok_or(ClusterError::UnknownReplica(id))?;
        self.deallocate(r.node, &r.footprint);
        self.by_model[r.model].retain(|x| *x != id);
        Ok(r)
    }

    /// Swaps `old` for a new replica at `version`: frees the old slot, then
    /// places the successor first-fit. On failure the old replica is restored
    /// untouched. Queued work moves to the successor.
    pub fn replace(
        &mut self,
        old: ReplicaId,
        version: VersionId,
        footprint: ResourceVector,
        ready_at_ms: f64,
        spawn_ms: f64,
    ) -> Result<ReplicaId, ClusterError> {
        let prev = self.replicas.get(&old).ok_or(ClusterError::UnknownReplica(old))?;
        let (node, prev_fp, model) = (prev.node, prev.footprint, prev.model);
        self.deallocate(node, &prev_fp);
        match self.place_first_fit(&footprint) {
            Ok(n) => {
                let mut r = self.replicas.remove(&old).expect("checked above");
                let id = ReplicaId(self.next_replica);
                self.next_replica += 1;
                let slot = self.by_model[model].iter().position(|x| *x == old).expect("indexed");
                self.by_model[model].remove(slot);
                self.by_model[model].push(id);
                r.id = id;
                r.version = version;
                r.node = n;
                r.footprint = footprint;
                r.ready_at_ms = ready_at_ms;
                r.ready = spawn_ms <= 0.0;
                r.pending_spawn_ms = spawn_ms.max(0.0);
                debug_assert!(r.in_service.is_none());
                self.replicas.insert(id, r);
                Ok(id)
            }
            Err(e) => {
                let n = &mut self.nodes[node];
                n.allocated = n.allocated.checked_add(&prev_fp).expect("was allocated before");
                Err(e)
            }
        }
    }

    pub fn replica(&self, id: ReplicaId) -> Option<&Replica> {
        self.replicas.get(&id)
    }

    pub fn replica_mut(&mut self, id: ReplicaId) -> Option<&mut Replica> {
        self.replicas.get_mut(&id)
    }

    /// Replica ids of a model, oldest first.
    pub fn replicas_of(&self, model: usize) -> &[ReplicaId] {
        &self.by_model[model]
    }

    pub fn replicas(&self) -> impl Iterator<Item = &Replica> {
        self.replicas.values()
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    /// Capacity and bookkeeping violations; empty when every node satisfies
    /// `allocated <= capacity` and `allocated` equals the footprint sum of its
    /// resident replicas.
    pub fn violations(&self) -> Vec<String> {
        let mut sums = vec![ResourceVector::ZERO; self.nodes.len()];
        for r in self.replicas.values() {
            sums[r.node] = sums[r.node].checked_add(&r.footprint).unwrap_or(ResourceVector {
                cpu: u64::MAX,
                ram_mb: u64::MAX,
                disk_mb: u64::MAX,
            });
        }
        let mut out = Vec::new();
        for (n, s) in self.nodes.iter().zip(&sums) {
            if !n.capacity.holds(&n.allocated) {
                out.push(format!("{}: allocated {} exceeds capacity", n.name, n.allocated));
            }
            if n.allocated != *s {
                out.push(format!("{}: allocated {} but replicas sum to {}", n.name, n.allocated, s));
            }
        }
        out
    }
}

/// Snapshot of one replica for the scaling rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaLoad {
    pub id: ReplicaId,
    pub outstanding: usize,
    pub idle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingAction {
    Spawn,
    Remove(ReplicaId),
    None,
}

/// Queue-pressure autoscaler settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRule {
    pub enabled: bool,
    /// Requests per replica above which a replica is added.
    pub threshold: f64,
    pub min_replicas: usize,
    /// Upper bound on replicas per model; `None` for no bound.
    pub max_replicas: Option<usize>,
}

impl Default for ScalingRule {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 2.0,
            min_replicas: 1,
            max_replicas: None,
        }
    }
}

impl ScalingRule {
    /// Spawn when outstanding requests per replica exceed the threshold;
    /// otherwise remove the newest idle replica while more than
    /// `min_replicas` remain.
    pub fn decide(&self, replicas: &[ReplicaLoad]) -> ScalingAction {
        if !self.enabled {
            return ScalingAction::None;
        }
        let count = replicas.len();
        let outstanding: usize = replicas.iter().map(|r| r.outstanding).sum();
        let below_max = self.max_replicas.is_none_or(|m| count < m);
        if below_max && (count == 0 || outstanding as f64 / count as f64 > self.threshold) {
            return ScalingAction::Spawn;
        }
        if count > self.min_replicas.max(1) {
            if let Some(r) = replicas.iter().rev().find(|r| r.idle) {
                return ScalingAction::Remove(r.id);
            }
        }
        ScalingAction::None
    }
}
