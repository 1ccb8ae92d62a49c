//! Configuration plumbing shared by the binary: dotted-key TOML files,
//! command-line overrides and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "SPOOFBENCH_CONFIG";

fn config_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format { path: path.to_owned(), reason: e.to_string() }
}

/// Parses one `key.path=value` override into a TOML table. Values that are
/// not valid TOML are taken as bare strings, so `attack.kind=dos` works.
pub fn parse_override(spec: &str) -> Result<toml::Table> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|seg| seg.is_empty() || !seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')) {
        return Err(Error::Config(format!("invalid config key `{key}`")));
    }
    let value = value.trim();
    toml::from_str(&format!("{key} = {value}"))
        .or_else(|_| toml::from_str(&format!("{key} = {}", toml::Value::String(value.to_owned()))))
        .map_err(|e| Error::Config(format!("override `{spec}`: {e}")))
}

/// Merges `over` into `base`; tables merge key by key, anything else replaces.
pub fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Reads the config file (if any), applies overrides in order and decodes
/// the result. Unknown keys are rejected.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str::<toml::Table>(&text).map_err(|e| config_error(p, e))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        merge(&mut table, parse_override(o)?);
    }
    let shown = path.map_or_else(|| PathBuf::from("<overrides>"), Path::to_owned);
    toml::Value::Table(table).try_into().map_err(|e| config_error(&shown, e))
}

/// The config path from the flag, falling back to the environment.
pub fn config_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
}

/// SHA-256 over the canonical JSON of the resolved config.
pub fn config_digest(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_vec(&cfg.resolved())?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Emitted by every command next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub workers: usize,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, seed: Option<u64>, workers: usize) -> Result<Self> {
        Ok(Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_digest: config_digest(cfg)?,
            seed,
            workers,
            timings: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let start = std::time::Instant::now();
        let out = f();
        self.timings.push(StageTiming { stage: stage.to_owned(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_json()?)
    }
}
