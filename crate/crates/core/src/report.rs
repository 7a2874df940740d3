//! Run artifacts on disk and the cross-replication summary.
//!
//! Layout under an output directory:
//!
//! ```text
//! runs/<policy>/seed-<n>/trace.csv
//! runs/<policy>/seed-<n>/policy_log.csv
//! runs/<policy>/seed-<n>/stats.json
//! runs/<policy>/seed-<n>/qtable.csv      learning agent only
//! summary.json
//! boxplot.csv
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::domain::{AppClass, ModelClass};
use crate::metrics::{
    confidence_interval, objectives, write_boxplot, BoxplotRow, ConfidenceInterval, DistributionStats, MetricsError,
    ObjectiveSummary, Objectives, Sample,
};
use crate::policies::PolicyKind;
use crate::scenario::Scenario;
use crate::simulator::record::{read_trace, write_policy_log, write_trace, TraceError};
use crate::simulator::RunOutput;

pub const CONFIDENCE_LEVEL: f64 = 0.98;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("{path}: unknown model `{model}`")]
    UnknownModel { path: PathBuf, model: String },
    #[error("{policy} seed {seed}: {source}")]
    Metrics {
        policy: PolicyKind,
        seed: u64,
        source: MetricsError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn run_dir(out: &Path, policy: PolicyKind, seed: u64) -> PathBuf {
    out.join("runs").join(policy.as_str()).join(format!("seed-{seed}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, ReportError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Writes the per-run files of one replication.
pub fn write_run(out: &Path, sc: &Scenario, run: &RunOutput) -> Result<PathBuf, ReportError> {
    let dir = run_dir(out, run.policy, run.seed);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let models = sc.model_names();

    let p = dir.join("trace.csv");
    let mut w = create(&p)?;
    write_trace(&mut w, &run.records, &models, &sc.node_names())
        .and_then(|_| w.flush())
        .map_err(io_err(&p))?;

    let p = dir.join("policy_log.csv");
    let mut w = create(&p)?;
    write_policy_log(&mut w, &run.policy_log, &models)
        .and_then(|_| w.flush())
        .map_err(io_err(&p))?;

    let p = dir.join("stats.json");
    let json = serde_json::to_string_pretty(&run.stats).expect("stats serialize");
    fs::write(&p, json + "\n").map_err(io_err(&p))?;

    if let Some(q) = &run.q_table {
        let p = dir.join("qtable.csv");
        let mut w = create(&p)?;
        q.export(&mut w).and_then(|_| w.flush()).map_err(io_err(&p))?;
    }
    Ok(dir)
}

/// What the summary keeps from one replication: its objectives and the
/// delays of every request, grouped by model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDigest {
    pub policy: PolicyKind,
    pub seed: u64,
    pub objectives: ObjectiveSummary,
    pub delays: Vec<Vec<f64>>,
}

impl RunDigest {
    pub fn from_samples(policy: PolicyKind, seed: u64, models: usize, samples: &[Sample]) -> Result<Self, ReportError> {
        let objectives = objectives(samples).map_err(|source| ReportError::Metrics { policy, seed, source })?;
        let mut delays = vec![Vec::new(); models];
        for s in samples {
            delays[s.model].push(s.total_delay_ms);
        }
        Ok(Self {
            policy,
            seed,
            objectives,
            delays,
        })
    }

    pub fn from_output(run: &RunOutput, models: usize) -> Result<Self, ReportError> {
        let samples: Vec<Sample> = run.records.iter().map(Sample::from).collect();
        Self::from_samples(run.policy, run.seed, models, &samples)
    }

    /// Rebuilds a digest from a trace written by [`write_run`].
    pub fn from_trace_file(path: &Path, policy: PolicyKind, seed: u64, models: &[String]) -> Result<Self, ReportError> {
        let f = File::open(path).map_err(io_err(path))?;
        let rows = read_trace(BufReader::new(f)).map_err(|source| ReportError::Trace {
            path: path.to_path_buf(),
            source,
        })?;
        let samples = rows
            .into_iter()
            .map(|r| {
                let model = models
                    .iter()
                    .position(|m| *m == r.model)
                    .ok_or_else(|| ReportError::UnknownModel {
                        path: path.to_path_buf(),
                        model: r.model.clone(),
                    })?;
                Ok(Sample {
                    model,
                    app_class: r.app_class,
                    total_delay_ms: r.total,
                    accuracy: r.accuracy,
                    stability: r.stability,
                })
            })
            .collect::<Result<Vec<_>, ReportError>>()?;
        Self::from_samples(policy, seed, models.len(), &samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Intervals {
    pub delay_ms: Option<ConfidenceInterval>,
    pub accuracy: Option<ConfidenceInterval>,
    pub stability: Option<ConfidenceInterval>,
}

impl Intervals {
    fn over(objs: &[Objectives]) -> Self {
        let ci = |f: fn(&Objectives) -> f64| {
            let v: Vec<f64> = objs.iter().map(f).collect();
            confidence_interval(&v, CONFIDENCE_LEVEL).ok()
        };
        Self {
            delay_ms: ci(|o| o.delay_ms),
            accuracy: ci(|o| o.accuracy),
            stability: ci(|o| o.stability),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub overall: Objectives,
    pub model_averaged: Objectives,
    pub per_class: BTreeMap<AppClass, Objectives>,
    pub per_model: BTreeMap<String, Objectives>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub app_class: AppClass,
    pub intervals: Intervals,
    /// Delays pooled over all replications.
    pub delay: DistributionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub overall: Intervals,
    pub model_averaged: Intervals,
    pub per_class: Vec<ClassSummary>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub confidence_level: f64,
    pub policies: Vec<PolicySummary>,
    #[serde(skip)]
    pub boxplot: Vec<BoxplotRow>,
}

/// Aggregates digests grouped by policy in first-seen order.
pub fn summarize(digests: &[RunDigest], models: &[ModelClass]) -> Summary {
    let mut order: Vec<PolicyKind> = Vec::new();
    for d in digests {
        if !order.contains(&d.policy) {
            order.push(d.policy);
        }
    }
    let mut policies = Vec::new();
    let mut boxplot = Vec::new();
    for policy in order {
        let group: Vec<&RunDigest> = digests.iter().filter(|d| d.policy == policy).collect();
        let runs: Vec<RunSummary> = group
            .iter()
            .map(|d| RunSummary {
                seed: d.seed,
                overall: d.objectives.overall,
                model_averaged: d.objectives.model_averaged,
                per_class: d.objectives.per_class.clone(),
                per_model: d
                    .objectives
                    .per_model
                    .iter()
                    .map(|(k, v)| (models[*k].name.clone(), *v))
                    .collect(),
            })
            .collect();
        let overall: Vec<Objectives> = runs.iter().map(|r| r.overall).collect();
        let averaged: Vec<Objectives> = runs.iter().map(|r| r.model_averaged).collect();
        let pooled = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
            group
                .iter()
                .flat_map(|d| d.delays.iter().enumerate().filter(|(k, _)| keep(*k)).flat_map(|(_, v)| v))
                .copied()
                .collect()
        };

        let mut per_class = Vec::new();
        for class in [AppClass::DApp, AppClass::XApp, AppClass::RApp] {
            let delays = pooled(&|k| models[k].app_class == class);
            let Ok(delay) = DistributionStats::from_samples(class.as_str(), &delays) else {
                continue;
            };
            let objs: Vec<Objectives> = runs.iter().filter_map(|r| r.per_class.get(&class).copied()).collect();
            boxplot.push(BoxplotRow {
                policy: policy.as_str().to_string(),
                group: class.as_str().to_string(),
                metric: "delay_ms".into(),
                stats: delay.clone(),
            });
            per_class.push(ClassSummary {
                app_class: class,
                intervals: Intervals::over(&objs),
                delay,
            });
        }
        for (k, m) in models.iter().enumerate() {
            if let Ok(stats) = DistributionStats::from_samples(&m.name, &pooled(&|j| j == k)) {
                boxplot.push(BoxplotRow {
                    policy: policy.as_str().to_string(),
                    group: m.name.clone(),
                    metric: "delay_ms".into(),
                    stats,
                });
            }
        }
        policies.push(PolicySummary {
            policy,
            overall: Intervals::over(&overall),
            model_averaged: Intervals::over(&averaged),
            per_class,
            runs,
        });
    }
    Summary {
        confidence_level: CONFIDENCE_LEVEL,
        policies,
        boxplot,
    }
}

pub fn write_summary(out: &Path, summary: &Summary) -> Result<(), ReportError> {
    let p = out.join("summary.json");
    let json = serde_json::to_string_pretty(summary).expect("summary serialize");
    fs::write(&p, json + "\n").map_err(io_err(&p))?;
    write_boxplot_file(out, summary)
}

pub fn write_boxplot_file(out: &Path, summary: &Summary) -> Result<(), ReportError> {
    let p = out.join("boxplot.csv");
    let mut w = create(&p)?;
    write_boxplot(&mut w, &summary.boxplot)
        .and_then(|_| w.flush())
        .map_err(io_err(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Horizon;
    use crate::simulator::{run, RunOptions};

    fn small() -> Scenario {
        let mut sc = Scenario::preset("oran-edge").unwrap();
        sc.horizon = Horizon::Events(20_000);
        sc
    }

    #[test]
    fn summary_from_disk_matches_memory() {
        let sc = small();
        let dir = tempfile::tempdir().unwrap();
        let mut mem = Vec::new();
        let mut disk = Vec::new();
        for seed in [1, 2] {
            let out = run(&sc, PolicyKind::Random, seed, RunOptions::default()).unwrap();
            write_run(dir.path(), &sc, &out).unwrap();
            mem.push(RunDigest::from_output(&out, sc.models.len()).unwrap());
            let p = run_dir(dir.path(), PolicyKind::Random, seed).join("trace.csv");
            disk.push(RunDigest::from_trace_file(&p, PolicyKind::Random, seed, &sc.model_names()).unwrap());
        }
        assert_eq!(mem, disk);
        let s = summarize(&mem, &sc.models);
        assert_eq!(s, summarize(&disk, &sc.models));
        assert_eq!(s.policies.len(), 1);
        assert!(s.policies[0].overall.delay_ms.is_some());
        assert_eq!(s.boxplot.len(), 3 + 6);
    }

    #[test]
    fn single_seed_has_no_interval() {
        let sc = small();
        let out = run(&sc, PolicyKind::Never, 3, RunOptions::default()).unwrap();
        let s = summarize(&[RunDigest::from_output(&out, sc.models.len()).unwrap()], &sc.models);
        assert_eq!(s.policies[0].overall.accuracy, None);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["policies"][0]["overall"]["accuracy"].is_null());
        assert_eq!(json["policies"][0]["policy"], "never");
    }

    #[test]
    fn empty_trace_is_reported() {
        assert!(matches!(
            RunDigest::from_samples(PolicyKind::Always, 9, 6, &[]),
            Err(ReportError::Metrics { seed: 9, .. })
        ));
    }
}
