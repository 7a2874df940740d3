//! `manifest.json`: everything needed to reproduce an output directory.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use mvsim_core::domain::CurveMode;
use mvsim_core::policies::{QTable, StateEncoder};
use mvsim_core::{Horizon, PolicyKind, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mvsim_version: String,
    /// `preset:<name>` or the scenario path as given.
    pub scenario_source: String,
    pub scenario_sha256: String,
    pub scenario_toml: String,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    /// Event horizon override; `None` keeps the scenario's horizon.
    pub events: Option<u64>,
    /// Curve mode override; `None` keeps the scenario's mode.
    pub curve_mode: Option<String>,
    pub policy_log: bool,
    pub warm_start_sha256: Option<String>,
    pub warm_start_qtable: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let p = dir.join(FILE);
        let f = fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
        let m: Manifest = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| CliError::Manifest(format!("{}: {e}", p.display())))?;
        if sha256_hex(m.scenario_toml.as_bytes()) != m.scenario_sha256 {
            return Err(CliError::Manifest(format!("{}: scenario hash does not match its text", p.display())));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join(FILE);
        let json = serde_json::to_string_pretty(self).expect("manifest serialize");
        fs::write(&p, json + "\n").map_err(|e| CliError::io(&p, e))
    }

    /// The scenario with the recorded overrides applied.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let mut sc = Scenario::from_toml(&self.scenario_toml)?;
        if let Some(n) = self.events {
            sc.horizon = Horizon::Events(n);
        }
        if let Some(m) = &self.curve_mode {
            sc.attributes.mode = m.parse::<CurveMode>().map_err(CliError::Manifest)?;
        }
        Ok(sc)
    }

    pub fn warm_start(&self, sc: &Scenario) -> Result<Option<QTable>, CliError> {
        let Some(text) = &self.warm_start_qtable else {
            return Ok(None);
        };
        let encoder = StateEncoder::new(sc.params.rl.bins.clone(), sc.models.len());
        QTable::import(encoder, text.as_bytes())
            .map(Some)
            .map_err(|e| CliError::Manifest(format!("warm-start Q-table: {e}")))
    }
}
