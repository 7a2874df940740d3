//! Versions, resources, model classes and the per-version attribute curves.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("version {0} is already the newest published release")]
    NoNewerVersion(VersionId),
    #[error("version {version} outside the release range 0..={max}")]
    UnknownVersion { version: VersionId, max: u32 },
}

/// Scalar release index. Ordering is release order; the `X.Y` view is
/// derived through a [`VersionScheme`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionId(pub u32);

impl VersionId {
    pub const ZERO: VersionId = VersionId(0);

    pub fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maps scalar indices onto major/minor pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionScheme {
    pub max_index: u32,
    pub minors_per_major: u32,
}

impl Default for VersionScheme {
    fn default() -> Self {
        Self {
            max_index: 2000,
            minors_per_major: 200,
        }
    }
}

impl VersionScheme {
    pub fn check(&self, v: VersionId) -> Result<(), DomainError> {
        if v.0 > self.max_index {
            Err(DomainError::UnknownVersion {
                version: v,
                max: self.max_index,
            })
        } else {
            Ok(())
        }
    }

    pub fn major(&self, v: VersionId) -> u32 {
        v.0 / self.minors_per_major
    }

    pub fn minor(&self, v: VersionId) -> u32 {
        v.0 % self.minors_per_major
    }

    /// Major number of the final release.
    pub fn max_major(&self) -> u32 {
        self.max_index / self.minors_per_major
    }

    /// `X.Y` display form.
    pub fn display(&self, v: VersionId) -> String {
        format!("{}.{}", self.major(v), self.minor(v))
    }
}

/// What an accepted update moves a replica to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateTarget {
    /// Jump straight to the newest published release.
    #[default]
    Latest,
    /// Move one release forward.
    Next,
}

/// Version mapping for an update decision: `a = false` keeps `current`.
pub fn apply_update(
    current: VersionId,
    update: bool,
    latest: VersionId,
    target: UpdateTarget,
) -> Result<VersionId, DomainError> {
    if !update {
        return Ok(current);
    }
    if current >= latest {
        return Err(DomainError::NoNewerVersion(current));
    }
    Ok(match target {
        UpdateTarget::Latest => latest,
        UpdateTarget::Next => VersionId(current.0 + 1),
    })
}

/// CPU units, RAM and disk. RAM and disk are held in whole megabytes
/// (1 GB = 1000 MB) so allocation sums are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ResourceVector {
    pub cpu: u64,
    pub ram_mb: u64,
    pub disk_mb: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        cpu: 0,
        ram_mb: 0,
        disk_mb: 0,
    };

    pub fn from_gb(cpu: u64, ram_gb: f64, disk_gb: f64) -> Self {
        Self {
            cpu,
            ram_mb: gb_to_mb(ram_gb),
            disk_mb: gb_to_mb(disk_gb),
        }
    }

    pub fn ram_gb(&self) -> f64 {
        self.ram_mb as f64 / 1000.0
    }

    pub fn disk_gb(&self) -> f64 {
        self.disk_mb as f64 / 1000.0
    }

    pub fn checked_add(&self, other: &Self) -> Option<Self> {
        Some(Self {
            cpu: self.cpu.checked_add(other.cpu)?,
            ram_mb: self.ram_mb.checked_add(other.ram_mb)?,
            disk_mb: self.disk_mb.checked_add(other.disk_mb)?,
        })
    }

    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        Some(Self {
            cpu: self.cpu.checked_sub(other.cpu)?,
            ram_mb: self.ram_mb.checked_sub(other.ram_mb)?,
            disk_mb: self.disk_mb.checked_sub(other.disk_mb)?,
        })
    }
}

pub fn gb_to_mb(gb: f64) -> u64 {
    (gb * 1000.0).round().max(0.0) as u64
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} cpu / {} GB ram / {} GB disk",
            self.cpu,
            self.ram_gb(),
            self.disk_gb()
        )
    }
}

/// One capacity dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    Finite(u64),
    Unlimited,
}

impl Limit {
    pub fn admits(self, total: u64) -> bool {
        match self {
            Limit::Finite(cap) => total <= cap,
            Limit::Unlimited => true,
        }
    }

    pub fn is_unlimited(self) -> bool {
        matches!(self, Limit::Unlimited)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capacity {
    pub cpu: Limit,
    pub ram_mb: Limit,
    pub disk_mb: Limit,
}

impl Capacity {
    pub const UNLIMITED: Capacity = Capacity {
        cpu: Limit::Unlimited,
        ram_mb: Limit::Unlimited,
        disk_mb: Limit::Unlimited,
    };

    pub fn finite(r: ResourceVector) -> Self {
        Self {
            cpu: Limit::Finite(r.cpu),
            ram_mb: Limit::Finite(r.ram_mb),
            disk_mb: Limit::Finite(r.disk_mb),
        }
    }

    /// Componentwise `total <= capacity`.
    pub fn holds(&self, total: &ResourceVector) -> bool {
        self.cpu.admits(total.cpu) && self.ram_mb.admits(total.ram_mb) && self.disk_mb.admits(total.disk_mb)
    }
}

/// RIC application class an inference model serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppClass {
    DApp,
    XApp,
    RApp,
}

impl AppClass {
    pub const ALL: [AppClass; 3] = [AppClass::DApp, AppClass::XApp, AppClass::RApp];

    /// Control-loop bound used to normalize delays: real-time, near-real-time
    /// and non-real-time loops.
    pub fn default_delay_budget_ms(self) -> f64 {
        match self {
            AppClass::DApp => 10.0,
            AppClass::XApp => 1_000.0,
            AppClass::RApp => 10_000.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AppClass::DApp => "dapp",
            AppClass::XApp => "xapp",
            AppClass::RApp => "rapp",
        }
    }
}

impl fmt::Display for AppClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AppClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dapp" => Ok(AppClass::DApp),
            "xapp" => Ok(AppClass::XApp),
            "rapp" => Ok(AppClass::RApp),
            other => Err(format!("unknown app class `{other}`")),
        }
    }
}

/// Value of an attribute at the first and the last release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl Span {
    pub const fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn lo(&self) -> f64 {
        self.start.min(self.end)
    }

    pub fn hi(&self) -> f64 {
        self.start.max(self.end)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo(), self.hi())
    }

    /// `start * (end/start)^t`, exact at both ends.
    fn geometric(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.start
        } else if t >= 1.0 {
            self.end
        } else {
            self.start * (self.end / self.start).powf(t)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelClass {
    pub name: String,
    pub app_class: AppClass,
    pub mean_interarrival_ms: f64,
    pub spawn_time_ms: f64,
    pub footprint: ResourceVector,
    /// `(from_version, footprint)` pairs sorted by version; the last entry at
    /// or below a version wins.
    pub footprint_overrides: Vec<(VersionId, ResourceVector)>,
    pub service_time_ms: Span,
    pub accuracy: Span,
    pub stability: Span,
    pub processing_delay_ms: f64,
    pub delay_budget_ms: f64,
}

impl ModelClass {
    pub fn footprint_at(&self, v: VersionId) -> ResourceVector {
        self.footprint_overrides
            .iter()
            .rev()
            .find(|(from, _)| *from <= v)
            .map(|(_, r)| *r)
            .unwrap_or(self.footprint)
    }

    /// Checks the per-class shape constraints; returns a message per problem.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail every check
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = &self.name;
        if !(self.accuracy.start <= self.accuracy.end) {
            out.push(format!("{n}: accuracy must not decrease across releases"));
        }
        if !(self.stability.start >= self.stability.end) {
            out.push(format!("{n}: stability must not increase across releases"));
        }
        if !(self.service_time_ms.start >= self.service_time_ms.end) {
            out.push(format!("{n}: service time must not increase across releases"));
        }
        for (what, s) in [("accuracy", self.accuracy), ("stability", self.stability)] {
            if !(0.0..=1.0).contains(&s.start) || !(0.0..=1.0).contains(&s.end) {
                out.push(format!("{n}: {what} must lie in [0, 1]"));
            }
        }
        if !(self.service_time_ms.end > 0.0) {
            out.push(format!("{n}: service time must be positive"));
        }
        if !(self.mean_interarrival_ms > 0.0) {
            out.push(format!("{n}: mean inter-arrival time must be positive"));
        }
        if !(self.spawn_time_ms >= 0.0) {
            out.push(format!("{n}: spawn time must be non-negative"));
        }
        if !(self.processing_delay_ms >= 0.0) {
            out.push(format!("{n}: processing delay must be non-negative"));
        }
        if !(self.delay_budget_ms > 0.0) {
            out.push(format!("{n}: delay budget must be strictly positive"));
        }
        out
    }
}

/// The six inference models of the reference O-RAN deployment.
pub fn standard_models() -> Vec<ModelClass> {
    #[allow(clippy::type_complexity)]
    let rows: [(&str, AppClass, (f64, f64), f64, f64, u64, f64, f64, f64); 6] = [
        ("ML-d1", AppClass::DApp, (2.0, 0.5), 3.0, 3.0, 1, 1.0, 0.01, 0.7),
        ("ML-d2", AppClass::DApp, (4.0, 0.8), 4.0, 3.0, 2, 1.0, 0.02, 0.7),
        ("ML-x1", AppClass::XApp, (200.0, 100.0), 350.0, 100.0, 16, 32.0, 0.1, 0.75),
        ("ML-x2", AppClass::XApp, (300.0, 200.0), 525.0, 100.0, 8, 32.0, 0.2, 0.75),
        ("ML-r1", AppClass::RApp, (1000.0, 900.0), 1750.0, 1000.0, 32, 48.0, 1.0, 0.8),
        ("ML-r2", AppClass::RApp, (2000.0, 1800.0), 3500.0, 1000.0, 32, 64.0, 2.0, 0.8),
    ];
    rows.iter()
        .map(|&(name, app, (st0, st1), inter, spawn, cpu, ram, disk, acc0)| ModelClass {
            name: name.to_string(),
            app_class: app,
            mean_interarrival_ms: inter,
            spawn_time_ms: spawn,
            footprint: ResourceVector::from_gb(cpu, ram, disk),
            footprint_overrides: Vec::new(),
            service_time_ms: Span::new(st0, st1),
            accuracy: Span::new(acc0, 1.0),
            stability: Span::new(1.0, 0.7),
            processing_delay_ms: 0.0,
            delay_budget_ms: app.default_delay_budget_ms(),
        })
        .collect()
}

/// Quality and cost attributes of one release of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VersionAttributes {
    pub accuracy: f64,
    pub stability: f64,
    pub mean_service_time_ms: f64,
    pub footprint: ResourceVector,
}

/// Multiplicative per-release changes for [`CurveMode::PercentStep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PercentSteps {
    pub major_accuracy: f64,
    pub major_stability: f64,
    pub major_service_time: f64,
    pub minor_accuracy: f64,
    pub minor_stability: f64,
}

impl Default for PercentSteps {
    fn default() -> Self {
        Self {
            major_accuracy: 0.02,
            major_stability: -0.02,
            major_service_time: -0.07,
            minor_accuracy: 0.001,
            minor_stability: -0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMode {
    /// Geometric interpolation between the first and last release values.
    /// Service time moves only at major boundaries.
    #[default]
    Geometric,
    /// Fixed percentage change per major and per minor release, clamped to
    /// the first/last release values.
    PercentStep,
}

impl std::str::FromStr for CurveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" => Ok(CurveMode::Geometric),
            "percent-step" => Ok(CurveMode::PercentStep),
            other => Err(format!("unknown curve mode `{other}`")),
        }
    }
}

/// Attribute curves for all models under one scheme and mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeModel {
    pub scheme: VersionScheme,
    pub mode: CurveMode,
    pub steps: PercentSteps,
}

impl Default for AttributeModel {
    fn default() -> Self {
        Self {
            scheme: VersionScheme::default(),
            mode: CurveMode::Geometric,
            steps: PercentSteps::default(),
        }
    }
}

impl AttributeModel {
    pub fn new(scheme: VersionScheme, mode: CurveMode) -> Self {
        Self {
            scheme,
            mode,
            steps: PercentSteps::default(),
        }
    }

    pub fn attributes_of(&self, m: &ModelClass, v: VersionId) -> Result<VersionAttributes, DomainError> {
        self.scheme.check(v)?;
        let major = self.scheme.major(v);
        let (accuracy, stability, service) = match self.mode {
            CurveMode::Geometric => {
                let t = v.0 as f64 / self.scheme.max_index.max(1) as f64;
                let max_major = self.scheme.max_major();
                let tm = if max_major == 0 {
                    0.0
                } else {
                    major as f64 / max_major as f64
                };
                (
                    m.accuracy.geometric(t),
                    m.stability.geometric(t),
                    m.service_time_ms.geometric(tm),
                )
            }
            CurveMode::PercentStep => {
                let minors = (v.0 - major) as i32;
                let major = major as i32;
                let s = &self.steps;
                let acc = m.accuracy.start
                    * (1.0 + s.major_accuracy).powi(major)
                    * (1.0 + s.minor_accuracy).powi(minors);
                let st = m.stability.start
                    * (1.0 + s.major_stability).powi(major)
                    * (1.0 + s.minor_stability).powi(minors);
                let svc = m.service_time_ms.start * (1.0 + s.major_service_time).powi(major);
                (
                    m.accuracy.clamp(acc),
                    m.stability.clamp(st),
                    m.service_time_ms.clamp(svc),
                )
            }
        };
        Ok(VersionAttributes {
            accuracy,
            stability,
            mean_service_time_ms: service,
            footprint: m.footprint_at(v),
        })
    }
}
