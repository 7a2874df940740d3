//! Scenario files: topology, model table, releases, scaling, policies, seeds
//! and horizon, in TOML.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // validation rejects NaN through negated comparisons

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Layer, NodeRole, ScalingRule, WorkerNode};
use crate::domain::{
    gb_to_mb, standard_models, AppClass, AttributeModel, Capacity, CurveMode, Limit, ModelClass, PercentSteps,
    ResourceVector, Span, UpdateTarget, VersionId, VersionScheme,
};
use crate::policies::{PolicyKind, PolicyParams};
use crate::repository::{ReleaseMode, ReleaseSchedule};

/// Bundled scenario files, by name.
pub const PRESETS: &[(&str, &str)] = &[("oran-edge", include_str!("../presets/oran-edge.toml"))];

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Dotted path of the offending field, e.g. `nodes[2].cpu`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Syntax or schema problem; the message carries line and column.
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("horizon must be positive")]
    HorizonZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Events(u64),
    TimeMs(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleasePlan {
    pub mode: ReleaseMode,
    /// `None` spreads all releases over the expected run length.
    pub interval_ms: Option<f64>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub models: Vec<ModelClass>,
    pub nodes: Vec<WorkerNode>,
    pub attributes: AttributeModel,
    pub update_target: UpdateTarget,
    pub releases: ReleasePlan,
    pub scaling: ScalingRule,
    pub initial_replicas: usize,
    pub policies: Vec<PolicyKind>,
    pub params: PolicyParams,
    pub seeds: Vec<u64>,
    pub horizon: Horizon,
    pub warnings: Vec<Diagnostic>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        file.into_scenario()
    }

    pub fn preset(name: &str) -> Option<Self> {
        preset_source(name).map(|s| Self::from_toml(s).expect("bundled presets are valid"))
    }

    /// Sum of the model arrival rates, per ms.
    pub fn arrival_rate(&self) -> f64 {
        self.models.iter().map(|m| 1.0 / m.mean_interarrival_ms).sum()
    }

    /// Expected simulated length: an event horizon counts an arrival and a
    /// departure per request.
    pub fn expected_duration_ms(&self) -> f64 {
        match self.horizon {
            Horizon::TimeMs(t) => t,
            Horizon::Events(n) => n as f64 / (2.0 * self.arrival_rate()),
        }
    }

    /// Event count the exploration schedule is sized for.
    pub fn scheduled_events(&self) -> u64 {
        match self.horizon {
            Horizon::Events(n) => n,
            Horizon::TimeMs(t) => (2.0 * self.arrival_rate() * t).ceil() as u64,
        }
    }

    pub fn release_schedule(&self) -> ReleaseSchedule {
        let max_index = self.attributes.scheme.max_index;
        let interval = self.releases.interval_ms.unwrap_or_else(|| {
            // all releases land before ~90% of the expected run length
            0.9 * self.expected_duration_ms() / max_index.max(1) as f64
        });
        ReleaseSchedule {
            mode: self.releases.mode,
            mean_interrelease_ms: interval,
            horizon_ms: match self.horizon {
                Horizon::TimeMs(t) => t,
                Horizon::Events(_) => f64::INFINITY,
            },
            max_index,
        }
    }

    pub fn model_names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }

    pub fn node_names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m.name == name)
    }
}

// ---- file format ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LimitValue {
    Number(f64),
    Word(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub versions: VersionsSection,
    #[serde(default)]
    pub releases: ReleasesSection,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub policy: PolicyParams,
    #[serde(default)]
    pub nodes: Vec<NodeSection>,
    /// Entries named like a bundled model inherit its unspecified fields.
    /// Omitted entirely: the six bundled models.
    pub models: Option<Vec<ModelSection>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub horizon_events: Option<u64>,
    pub horizon_ms: Option<f64>,
    pub policies: Vec<PolicyKind>,
    pub initial_replicas: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            horizon_events: None,
            horizon_ms: None,
            policies: PolicyKind::ALL.to_vec(),
            initial_replicas: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VersionsSection {
    pub max_index: u32,
    pub minors_per_major: u32,
    pub update_target: UpdateTarget,
    pub curve_mode: CurveMode,
    pub percent_steps: PercentSteps,
}

impl Default for VersionsSection {
    fn default() -> Self {
        let s = VersionScheme::default();
        Self {
            max_index: s.max_index,
            minors_per_major: s.minors_per_major,
            update_target: UpdateTarget::Latest,
            curve_mode: CurveMode::Geometric,
            percent_steps: PercentSteps::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReleasesSection {
    pub mode: ReleaseMode,
    pub interval_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub enabled: bool,
    pub threshold: f64,
    pub min_replicas: usize,
    pub max_replicas: Option<usize>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        let r = ScalingRule::default();
        Self {
            enabled: r.enabled,
            threshold: r.threshold,
            min_replicas: r.min_replicas,
            max_replicas: r.max_replicas,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub name: String,
    pub layer: Layer,
    #[serde(default)]
    pub role: NodeRole,
    pub cpu: LimitValue,
    pub ram_gb: LimitValue,
    pub disk_gb: LimitValue,
    #[serde(default)]
    pub transmission_delay_ms: f64,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootprintOverride {
    pub from_version: u32,
    pub cpu: u64,
    pub ram_gb: f64,
    pub disk_gb: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub app_class: Option<AppClass>,
    pub mean_interarrival_ms: Option<f64>,
    pub spawn_time_ms: Option<f64>,
    pub cpu: Option<u64>,
    pub ram_gb: Option<f64>,
    pub disk_gb: Option<f64>,
    /// `[first, last]` release values.
    pub service_time_ms: Option<[f64; 2]>,
    pub accuracy: Option<[f64; 2]>,
    pub stability: Option<[f64; 2]>,
    pub processing_delay_ms: Option<f64>,
    pub delay_budget_ms: Option<f64>,
    #[serde(default)]
    pub footprint_overrides: Vec<FootprintOverride>,
}

struct Diags(Vec<Diagnostic>);

impl Diags {
    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        });
    }

    fn has_errors(&self) -> bool {
        self.0.iter().any(|d| d.severity == Severity::Error)
    }
}

fn limit(value: &LimitValue, path: &str, to_base: impl Fn(f64) -> u64, d: &mut Diags) -> Limit {
    match value {
        LimitValue::Word(w) if w == "unlimited" => Limit::Unlimited,
        LimitValue::Word(w) => {
            d.error(path, format!("expected a number or \"unlimited\", got \"{w}\""));
            Limit::Unlimited
        }
        LimitValue::Number(x) if !x.is_finite() || *x < 0.0 => {
            d.error(path, format!("must be non-negative, got {x}"));
            Limit::Finite(0)
        }
        LimitValue::Number(x) => Limit::Finite(to_base(*x)),
    }
}

impl ModelSection {
    fn resolve(&self, path: &str, d: &mut Diags) -> Option<ModelClass> {
        let base = standard_models().into_iter().find(|m| m.name == self.name);
        macro_rules! field {
            ($name:ident, $from_base:expr) => {
                match (self.$name, base.as_ref()) {
                    (Some(v), _) => v,
                    (None, Some(b)) => $from_base(b),
                    (None, None) => {
                        d.error(
                            format!("{path}.{}", stringify!($name)),
                            "required for models that are not bundled",
                        );
                        return None;
                    }
                }
            };
        }
        let app_class = field!(app_class, |b: &ModelClass| b.app_class);
        let span = |a: [f64; 2]| Span::new(a[0], a[1]);
        let to_arr = |s: Span| [s.start, s.end];
        let mut footprint_overrides: Vec<(VersionId, ResourceVector)> = self
            .footprint_overrides
            .iter()
            .map(|o| (VersionId(o.from_version), ResourceVector::from_gb(o.cpu, o.ram_gb, o.disk_gb)))
            .collect();
        footprint_overrides.sort_by_key(|(v, _)| *v);
        for (what, x) in [("ram_gb", self.ram_gb), ("disk_gb", self.disk_gb)] {
            if matches!(x, Some(v) if !(v >= 0.0)) {
                d.error(format!("{path}.{what}"), "must be non-negative");
            }
        }
        let m = ModelClass {
            name: self.name.clone(),
            app_class,
            mean_interarrival_ms: field!(mean_interarrival_ms, |b: &ModelClass| b.mean_interarrival_ms),
            spawn_time_ms: field!(spawn_time_ms, |b: &ModelClass| b.spawn_time_ms),
            footprint: ResourceVector {
                cpu: field!(cpu, |b: &ModelClass| b.footprint.cpu),
                ram_mb: gb_to_mb(field!(ram_gb, |b: &ModelClass| b.footprint.ram_gb())),
                disk_mb: gb_to_mb(field!(disk_gb, |b: &ModelClass| b.footprint.disk_gb())),
            },
            footprint_overrides,
            service_time_ms: span(field!(service_time_ms, |b: &ModelClass| to_arr(b.service_time_ms))),
            accuracy: span(field!(accuracy, |b: &ModelClass| to_arr(b.accuracy))),
            stability: span(field!(stability, |b: &ModelClass| to_arr(b.stability))),
            processing_delay_ms: field!(processing_delay_ms, |b: &ModelClass| b.processing_delay_ms),
            delay_budget_ms: self.delay_budget_ms.unwrap_or(app_class.default_delay_budget_ms()),
        };
        for p in m.problems() {
            d.error(path, p);
        }
        Some(m)
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let mut d = Diags(Vec::new());

        let horizon = match (self.run.horizon_events, self.run.horizon_ms) {
            (Some(0), None) => return Err(ScenarioError::HorizonZero),
            (None, Some(t)) if !(t > 0.0) => return Err(ScenarioError::HorizonZero),
            (Some(n), None) => Horizon::Events(n),
            (None, Some(t)) => Horizon::TimeMs(t),
            (None, None) => {
                d.error("run", "one of horizon_events or horizon_ms is required");
                Horizon::Events(1)
            }
            (Some(_), Some(_)) => {
                d.error("run", "set only one of horizon_events and horizon_ms");
                Horizon::Events(1)
            }
        };
        if self.run.seeds.is_empty() {
            d.error("run.seeds", "at least one seed is required");
        }
        if self.run.policies.is_empty() {
            d.error("run.policies", "at least one policy is required");
        }

        let v = &self.versions;
        if v.minors_per_major == 0 {
            d.error("versions.minors_per_major", "must be positive");
        }
        if v.max_index == 0 {
            d.error("versions.max_index", "must be positive");
        }
        let scheme = VersionScheme {
            max_index: v.max_index,
            minors_per_major: v.minors_per_major.max(1),
        };

        if let Some(i) = self.releases.interval_ms {
            if !(i > 0.0) {
                d.error("releases.interval_ms", "must be positive");
            }
        }

        let s = &self.scaling;
        if s.enabled && !(s.threshold > 0.0) {
            d.error("scaling.threshold", "must be positive");
        }
        if let Some(m) = s.max_replicas {
            if m < s.min_replicas.max(1) {
                d.error("scaling.max_replicas", "must be at least min_replicas");
            }
        }

        let p = &self.policy;
        if !(0.0..=1.0).contains(&p.random_update_probability) {
            d.error("policy.random_update_probability", "must lie in [0, 1]");
        }
        if !(p.load_threshold >= 0.0) {
            d.error("policy.load_threshold", "must be non-negative");
        }
        let rl = &p.rl;
        if !(rl.learning_rate > 0.0 && rl.learning_rate <= 1.0) {
            d.error("policy.rl.learning_rate", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&rl.discount) {
            d.error("policy.rl.discount", "must lie in [0, 1]");
        }
        if !(rl.epsilon_min >= 0.0 && rl.epsilon_min <= rl.epsilon_start && rl.epsilon_start <= 1.0) {
            d.error("policy.rl", "need 0 <= epsilon_min <= epsilon_start <= 1");
        }
        let w = &rl.reward;
        if !(w.w1 >= 0.0 && w.w2 >= 0.0 && w.w3 >= 0.0) {
            d.error("policy.rl.reward", "weights must be non-negative");
        }
        if !(0.0..=1.0).contains(&w.alpha) {
            d.error("policy.rl.reward.alpha", "must lie in [0, 1]");
        }
        if rl.bins.load_levels == 0 {
            d.error("policy.rl.bins.load_levels", "must be positive");
        }
        if !rl.bins.queue_edges.windows(2).all(|w| w[0] < w[1]) {
            d.error("policy.rl.bins.queue_edges", "must be strictly increasing");
        }

        if self.nodes.is_empty() {
            d.error("nodes", "at least one node is required");
        }
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let path = format!("nodes[{i}]");
            let cap = Capacity {
                cpu: limit(&n.cpu, &format!("{path}.cpu"), |x| x.round() as u64, &mut d),
                ram_mb: limit(&n.ram_gb, &format!("{path}.ram_gb"), gb_to_mb, &mut d),
                disk_mb: limit(&n.disk_gb, &format!("{path}.disk_gb"), gb_to_mb, &mut d),
            };
            if !(n.transmission_delay_ms >= 0.0) {
                d.error(format!("{path}.transmission_delay_ms"), "must be non-negative");
            }
            if self.nodes[..i].iter().any(|o| o.name == n.name) {
                d.error(format!("{path}.name"), format!("duplicate node name `{}`", n.name));
            }
            if n.enabled {
                nodes.push(WorkerNode::new(n.name.clone(), n.layer, n.role, cap, n.transmission_delay_ms));
            }
        }
        if !nodes.iter().any(|n| n.role == NodeRole::Ml) {
            d.error("nodes", "no enabled ML worker to host replicas");
        }

        let models = match &self.models {
            None => standard_models(),
            Some(list) => {
                if list.is_empty() {
                    d.error("models", "at least one model is required");
                }
                let mut out = Vec::new();
                for (i, m) in list.iter().enumerate() {
                    if list[..i].iter().any(|o| o.name == m.name) {
                        d.error(format!("models[{i}].name"), format!("duplicate model `{}`", m.name));
                    }
                    if let Some(mc) = m.resolve(&format!("models[{i}]"), &mut d) {
                        out.push(mc);
                    }
                }
                out
            }
        };
        for (i, m) in models.iter().enumerate() {
            let mut fps = vec![m.footprint];
            fps.extend(m.footprint_overrides.iter().map(|(_, f)| *f));
            for fp in fps {
                if !nodes.iter().any(|n| n.role == NodeRole::Ml && n.admits(&fp)) {
                    d.warn(
                        format!("models[{i}]"),
                        format!("{}: footprint {fp} fits no enabled ML worker", m.name),
                    );
                }
            }
        }

        if d.has_errors() {
            return Err(ScenarioError::Invalid(d.0));
        }
        Ok(Scenario {
            models,
            nodes,
            attributes: AttributeModel {
                scheme,
                mode: v.curve_mode,
                steps: v.percent_steps,
            },
            update_target: v.update_target,
            releases: ReleasePlan {
                mode: self.releases.mode,
                interval_ms: self.releases.interval_ms,
            },
            scaling: ScalingRule {
                enabled: s.enabled,
                threshold: s.threshold,
                min_replicas: s.min_replicas,
                max_replicas: s.max_replicas,
            },
            initial_replicas: self.run.initial_replicas,
            policies: self.run.policies.clone(),
            params: self.policy.clone(),
            seeds: self.run.seeds.clone(),
            horizon,
            warnings: d.0,
        })
    }
}

/// Parses and checks a scenario, returning every diagnostic found.
pub fn validate(text: &str) -> Result<Vec<Diagnostic>, ScenarioError> {
    Scenario::from_toml(text).map(|s| s.warnings)
}
