//! Objective aggregation, distribution summaries and replication intervals.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::domain::AppClass;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace has no completed requests")]
    EmptyTrace,
    #[error("group `{0}` has no samples")]
    EmptyGroup(String),
    #[error("need at least 2 replications for an interval, got {0}")]
    TooFewReplications(usize),
}

/// Minimal view of a completed request used by the aggregations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub model: usize,
    pub app_class: AppClass,
    pub total_delay_ms: f64,
    pub accuracy: f64,
    pub stability: f64,
}

impl From<&crate::simulator::RequestRecord> for Sample {
    fn from(r: &crate::simulator::RequestRecord) -> Self {
        Self {
            model: r.model,
            app_class: r.app_class,
            total_delay_ms: r.total,
            accuracy: r.accuracy,
            stability: r.stability,
        }
    }
}

/// The three objectives: mean delay, mean accuracy, mean stability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Objectives {
    pub delay_ms: f64,
    pub accuracy: f64,
    pub stability: f64,
    pub requests: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveSummary {
    /// Mean over all requests.
    pub overall: Objectives,
    /// Mean of per-model means; each model counts once.
    pub model_averaged: Objectives,
    pub per_model: BTreeMap<usize, Objectives>,
    pub per_class: BTreeMap<AppClass, Objectives>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: u64,
    d: f64,
    a: f64,
    s: f64,
}

impl Acc {
    fn add(&mut self, x: &Sample) {
        self.n += 1;
        self.d += x.total_delay_ms;
        self.a += x.accuracy;
        self.s += x.stability;
    }

    fn mean(&self) -> Objectives {
        let n = self.n as f64;
        Objectives {
            delay_ms: self.d / n,
            accuracy: self.a / n,
            stability: self.s / n,
            requests: self.n,
        }
    }
}

pub fn objectives<'a, I>(samples: I) -> Result<ObjectiveSummary, MetricsError>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let mut all = Acc::default();
    let mut per_model: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut per_class: BTreeMap<AppClass, Acc> = BTreeMap::new();
    for s in samples {
        all.add(s);
        per_model.entry(s.model).or_default().add(s);
        per_class.entry(s.app_class).or_default().add(s);
    }
    if all.n == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    let per_model: BTreeMap<usize, Objectives> = per_model.into_iter().map(|(k, v)| (k, v.mean())).collect();
    let k = per_model.len() as f64;
    let model_averaged = Objectives {
        delay_ms: per_model.values().map(|o| o.delay_ms).sum::<f64>() / k,
        accuracy: per_model.values().map(|o| o.accuracy).sum::<f64>() / k,
        stability: per_model.values().map(|o| o.stability).sum::<f64>() / k,
        requests: all.n,
    };
    Ok(ObjectiveSummary {
        overall: all.mean(),
        model_averaged,
        per_model,
        per_class: per_class.into_iter().map(|(k, v)| (k, v.mean())).collect(),
    })
}

/// Quantile with linear interpolation between order statistics (type 7).
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot statistics with 1.5 IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionStats {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: usize,
}

impl DistributionStats {
    pub fn from_samples(group: &str, values: &[f64]) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::EmptyGroup(group.to_string()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let stddev = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        // a whisker never ends inside the box
        let whisker_lo = v.iter().copied().find(|x| *x >= fence_lo).map_or(q1, |x| x.min(q1));
        let whisker_hi = v.iter().rev().copied().find(|x| *x <= fence_hi).map_or(q3, |x| x.max(q3));
        let outliers = v.iter().filter(|x| **x < fence_lo || **x > fence_hi).count();
        Ok(Self {
            count: n,
            mean,
            stddev,
            min: v[0],
            q1,
            median,
            q3,
            max: v[n - 1],
            whisker_lo,
            whisker_hi,
            outliers,
        })
    }
}

/// Two-sided Student-t interval over replication means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
    pub level: f64,
    pub n: usize,
}

impl ConfidenceInterval {
    pub fn lo(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.half_width
    }

    /// `true` when the intervals share no point.
    pub fn disjoint(&self, other: &Self) -> bool {
        self.hi() < other.lo() || other.hi() < self.lo()
    }
}

pub fn confidence_interval(means: &[f64], level: f64) -> Result<ConfidenceInterval, MetricsError> {
    let n = means.len();
    if n < 2 {
        return Err(MetricsError::TooFewReplications(n));
    }
    let mean = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.5 + level / 2.0);
    Ok(ConfidenceInterval {
        mean,
        half_width: t * (var / n as f64).sqrt(),
        level,
        n,
    })
}

/// One row of the box-plot CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotRow {
    pub policy: String,
    pub group: String,
    pub metric: String,
    pub stats: DistributionStats,
}

pub const BOXPLOT_HEADER: &str =
    "policy,group,metric,count,mean,stddev,min,whisker_lo,q1,median,q3,whisker_hi,max,outliers";

pub fn write_boxplot<W: Write>(mut out: W, rows: &[BoxplotRow]) -> io::Result<()> {
    writeln!(out, "{BOXPLOT_HEADER}")?;
    for r in rows {
        let s = &r.stats;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.group,
            r.metric,
            s.count,
            s.mean,
            s.stddev,
            s.min,
            s.whisker_lo,
            s.q1,
            s.median,
            s.q3,
            s.whisker_hi,
            s.max,
            s.outliers
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(model: usize, class: AppClass, d: f64, a: f64, s: f64) -> Sample {
        Sample {
            model,
            app_class: class,
            total_delay_ms: d,
            accuracy: a,
            stability: s,
        }
    }

    #[test]
    fn request_weighted_and_model_averaged() {
        let xs = [
            sample(0, AppClass::DApp, 2.0, 0.7, 1.0),
            sample(0, AppClass::DApp, 4.0, 0.7, 1.0),
            sample(0, AppClass::DApp, 6.0, 0.7, 1.0),
            sample(1, AppClass::XApp, 100.0, 0.9, 0.8),
        ];
        let o = objectives(&xs).unwrap();
        assert_eq!(o.overall.delay_ms, 28.0);
        assert_eq!(o.model_averaged.delay_ms, 52.0);
        assert!((o.overall.accuracy - 0.75).abs() < 1e-12);
        assert!((o.model_averaged.stability - 0.9).abs() < 1e-12);
        assert_eq!(o.per_class[&AppClass::DApp].requests, 3);
        assert_eq!(objectives(&[]).unwrap_err(), MetricsError::EmptyTrace);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 3.0, 4.0, 6.0, 8.0];
        assert_eq!(quantile(&v, 0.25), 3.0);
        assert_eq!(quantile(&v, 0.5), 4.0);
        let v = [2.0, 4.0, 6.0, 8.0];
        assert_eq!([quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)], [3.5, 5.0, 6.5]);
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(quantile(&v, 0.25), 3.25);
    }

    #[test]
    fn boxplot_whiskers() {
        let s = DistributionStats::from_samples("g", &[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!((s.whisker_lo, s.whisker_hi, s.outliers), (1.0, 4.0, 1));
        assert_eq!(s.max, 100.0);
        assert_eq!(
            DistributionStats::from_samples("empty", &[]).unwrap_err(),
            MetricsError::EmptyGroup("empty".into())
        );
    }

    #[test]
    fn student_t_interval() {
        let ci = confidence_interval(&[0.81, 0.79, 0.84, 0.80, 0.83], 0.98).unwrap();
        assert!((ci.mean - 0.814).abs() < 1e-12);
        assert!((ci.half_width - 0.03474776059883112).abs() < 1e-9, "{}", ci.half_width);
        // t quantile 31.82051595375758 at one degree of freedom
        let ci = confidence_interval(&[10.0, 14.0], 0.98).unwrap();
        assert!((ci.half_width - 63.64103190751516).abs() < 1e-7, "{}", ci.half_width);
        assert_eq!(
            confidence_interval(&[1.0], 0.98).unwrap_err(),
            MetricsError::TooFewReplications(1)
        );
        let a = ConfidenceInterval {
            mean: 1.0,
            half_width: 0.1,
            level: 0.98,
            n: 10,
        };
        let b = ConfidenceInterval { mean: 1.3, ..a };
        assert!(a.disjoint(&b));
        assert!(!a.disjoint(&ConfidenceInterval { mean: 1.2, ..a }));
    }

    proptest! {
        #[test]
        fn quartiles_are_ordered(v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let s = DistributionStats::from_samples("p", &v).unwrap();
            prop_assert!(s.min <= s.whisker_lo && s.whisker_lo <= s.q1);
            prop_assert!(s.q1 <= s.median && s.median <= s.q3);
            prop_assert!(s.q3 <= s.whisker_hi && s.whisker_hi <= s.max);
        }
    }
}
