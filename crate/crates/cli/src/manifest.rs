//! Run manifest: the durable record of what an output directory holds.
//!
//! The manifest lists every computed sweep tuple with its metrics, so it is
//! both the resume index and the source from which `sweep.csv` is rebuilt.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Point of a sweep: one transmission experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleKey {
    pub format: String,
    pub fiber: String,
    pub distance_km: f64,
    pub launch_power_dbm: f64,
    pub seed: u64,
}

impl TupleKey {
    /// Stable textual identity used for resume lookups.
    pub fn id(&self) -> String {
        format!(
            "{}|{}|{:.6}|{:.6}|{}",
            self.format, self.fiber, self.distance_km, self.launch_power_dbm, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleMetrics {
    pub n_symbols: usize,
    pub effective_snr_db: f64,
    pub gmi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_angular_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Subcommand that produced the record.
    pub command: String,
    /// Unique identity within the command.
    pub id: String,
    pub seed: u64,
    /// Hash of the configuration the run was made with; the configuration
    /// itself is stored under `configs/<hash>.toml`.
    pub config_hash: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuple: Option<TupleKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<TupleMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub command: String,
    pub id: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// Hash of the most recent configuration applied to the directory.
    pub config_hash: String,
    /// Hash of the settings that determine tuple results; a directory only
    /// ever holds tuples computed under one such setting.
    pub simulation_hash: String,
    /// Every file written into the directory, relative to it.
    pub outputs: Vec<String>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<FailureRecord>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            schema_version: MANIFEST_SCHEMA,
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.hash()?,
            simulation_hash: config.simulation_hash()?,
            outputs: Vec::new(),
            runs: Vec::new(),
            failures: Vec::new(),
        })
    }

    /// Opens the manifest for a run of `config` in `dir`. With `resume`, an
    /// existing manifest is reused and must describe the same simulation
    /// settings; otherwise the directory starts afresh.
    pub fn open(dir: &Path, config: &ExperimentConfig, resume: bool) -> Result<Self> {
        fs::create_dir_all(dir.join("configs"))?;
        let path = dir.join(MANIFEST_FILE);
        let mut manifest = if resume && path.exists() {
            let existing: RunManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
            if existing.schema_version != MANIFEST_SCHEMA {
                return Err(CliError::Manifest(format!(
                    "{} has schema {}, expected {MANIFEST_SCHEMA}",
                    path.display(),
                    existing.schema_version
                )));
            }
            if existing.simulation_hash != config.simulation_hash()? {
                return Err(CliError::Manifest(format!(
                    "{} holds results for different simulation settings; use a fresh output directory",
                    dir.display()
                )));
            }
            existing
        } else {
            Self::new(config)?
        };
        let hash = config.hash()?;
        let stored = format!("configs/{hash}.toml");
        fs::write(dir.join(&stored), config.to_toml()?)?;
        manifest.config_hash = hash;
        manifest.tool_version = TOOL_VERSION.to_string();
        manifest.add_output(&stored);
        manifest.save(dir)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }

    /// Atomically replaces the manifest file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn add_output(&mut self, relative: &str) {
        if !self.outputs.iter().any(|o| o == relative) {
            self.outputs.push(relative.to_string());
            self.outputs.sort();
        }
    }

    /// Inserts or replaces the record with the same command and id, and
    /// clears any failure recorded for it.
    pub fn record(&mut self, run: RunRecord) {
        self.failures.retain(|f| !(f.command == run.command && f.id == run.id));
        match self.runs.iter_mut().find(|r| r.command == run.command && r.id == run.id) {
            Some(slot) => *slot = run,
            None => self.runs.push(run),
        }
    }

    pub fn fail(&mut self, failure: FailureRecord) {
        self.failures.retain(|f| !(f.command == failure.command && f.id == failure.id));
        self.failures.push(failure);
    }

    /// Completed sweep tuples by id.
    pub fn tuples(&self) -> BTreeMap<String, (&TupleKey, &TupleMetrics)> {
        self.runs
            .iter()
            .filter(|r| r.command == "sweep")
            .filter_map(|r| Some((r.id.clone(), (r.tuple.as_ref()?, r.metrics.as_ref()?))))
            .collect()
    }

    /// Checks the manifest against the directory: listed outputs exist and
    /// stored configurations hash to their names.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for out in &self.outputs {
            if !dir.join(out).exists() {
                return Err(CliError::Manifest(format!("listed output {out} is missing")));
            }
        }
        let mut hashes: Vec<&str> = self.runs.iter().map(|r| r.config_hash.as_str()).collect();
        hashes.push(&self.config_hash);
        hashes.sort();
        hashes.dedup();
        for h in hashes {
            let path = dir.join("configs").join(format!("{h}.toml"));
            let config = ExperimentConfig::parse(&fs::read_to_string(&path)?)?;
            if config.hash()? != h {
                return Err(CliError::Manifest(format!("{} does not hash to its name", path.display())));
            }
        }
        Ok(())
    }
}

/// Output directory: `--out` when given, else the configured one.
pub fn output_dir(config: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone())
}
