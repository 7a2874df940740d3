//! Release catalog per model and the release-event schedule.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AttributeModel, DomainError, ModelClass, VersionAttributes, VersionId};
use crate::rng::exponential;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RepositoryError {
    #[error("unknown model index {0}")]
    UnknownModel(usize),
    #[error("release {got} of model {model} does not follow latest {latest}")]
    NonMonotonicRelease {
        model: String,
        latest: VersionId,
        got: VersionId,
    },
    #[error("release of model {model} at {time} ms precedes the previous release at {previous} ms")]
    TimeWentBackwards { model: String, time: f64, previous: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseRecord {
    pub model: usize,
    pub version: VersionId,
    pub publish_time_ms: f64,
    pub attributes: VersionAttributes,
}

/// Published releases for every model. Version 0 of each model is published
/// at time 0 on construction.
#[derive(Debug, Clone)]
pub struct VersionRepository {
    models: Vec<ModelClass>,
    attributes: AttributeModel,
    releases: Vec<Vec<ReleaseRecord>>,
}

impl VersionRepository {
    pub fn new(models: Vec<ModelClass>, attributes: AttributeModel) -> Result<Self, RepositoryError> {
        let mut releases = Vec::with_capacity(models.len());
        for (i, m) in models.iter().enumerate() {
            releases.push(vec![ReleaseRecord {
                model: i,
                version: VersionId::ZERO,
                publish_time_ms: 0.0,
                attributes: attributes.attributes_of(m, VersionId::ZERO)?,
            }]);
        }
        Ok(Self {
            models,
            attributes,
            releases,
        })
    }

    pub fn models(&self) -> &[ModelClass] {
        &self.models
    }

    pub fn attribute_model(&self) -> &AttributeModel {
        &self.attributes
    }

    pub fn publish(
        &mut self,
        model: usize,
        version: VersionId,
        time_ms: f64,
    ) -> Result<&ReleaseRecord, RepositoryError> {
        let m = self.models.get(model).ok_or(RepositoryError::UnknownModel(model))?;
        let list = &mut self.releases[model];
        let last = list.last().expect("version 0 always present");
        if version.0 != last.version.0 + 1 {
            return Err(RepositoryError::NonMonotonicRelease {
                model: m.name.clone(),
                latest: last.version,
                got: version,
            });
        }
        if time_ms < last.publish_time_ms {
            return Err(RepositoryError::TimeWentBackwards {
                model: m.name.clone(),
                time: time_ms,
                previous: last.publish_time_ms,
            });
        }
        let attributes = self.attributes.attributes_of(m, version)?;
        list.push(ReleaseRecord {
            model,
            version,
            publish_time_ms: time_ms,
            attributes,
        });
        Ok(list.last().unwrap())
    }

    pub fn latest_version(&self, model: usize) -> Result<VersionId, RepositoryError> {
        self.releases
            .get(model)
            .and_then(|l| l.last())
            .map(|r| r.version)
            .ok_or(RepositoryError::UnknownModel(model))
    }

    /// Attributes of a published release.
    pub fn attributes(&self, model: usize, version: VersionId) -> Option<&VersionAttributes> {
        self.releases
            .get(model)?
            .get(version.0 as usize)
            .map(|r| &r.attributes)
    }

    pub fn releases(&self, model: usize) -> &[ReleaseRecord] {
        &self.releases[model]
    }

    /// Writes one CSV line per release:
    /// `model,version,publish_time_ms,accuracy,stability,service_time_ms`.
    pub fn dump_catalog<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "model,version,publish_time_ms,accuracy,stability,service_time_ms")?;
        for (m, list) in self.models.iter().zip(&self.releases) {
            for r in list {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    m.name,
                    r.version,
                    r.publish_time_ms,
                    r.attributes.accuracy,
                    r.attributes.stability,
                    r.attributes.mean_service_time_ms
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReleaseMode {
    #[default]
    Periodic,
    Poisson,
}

/// How releases are spread over simulated time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseSchedule {
    pub mode: ReleaseMode,
    pub mean_interrelease_ms: f64,
    /// No release is generated after this time.
    pub horizon_ms: f64,
    /// Highest index to publish.
    pub max_index: u32,
}

impl ReleaseSchedule {
    /// Release times for versions `1, 2, ...`. Periodic schedules place
    /// release `k` at `k * mean`; Poisson schedules draw exponential gaps.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(f64, VersionId)> {
        let mut out = Vec::new();
        let mut t = 0.0;
        for k in 1..=self.max_index {
            t = match self.mode {
                ReleaseMode::Periodic => k as f64 * self.mean_interrelease_ms,
                ReleaseMode::Poisson => t + exponential(rng, self.mean_interrelease_ms),
            };
            if t > self.horizon_ms {
                break;
            }
            out.push((t, VersionId(k)));
        }
        out
    }
}
