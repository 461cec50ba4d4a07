//! Node configuration, layered: TOML file, then `PQBALLOT_*` environment
//! variables, then command-line flags. Each layer only overrides the fields
//! it sets.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::Args;
use serde::Deserialize;
use thiserror::Error;

use crate::biometric::{DEFAULT_MATCH_THRESHOLD, DEFAULT_SPOOF_THRESHOLD};
use crate::ledger::GasModel;
use crate::sigscheme::Profile;

pub const ENV_PREFIX: &str = "PQBALLOT_";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_DATA_DIR: &str = "pqballot-data";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
}

fn invalid(field: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.to_string() }
}

/// A candidate given as `id:name`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub id: u32,
    pub name: String,
}

impl FromStr for CandidateSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (id, name) = s.split_once(':').ok_or_else(|| format!("expected id:name, got {s:?}"))?;
        let id = id.trim().parse().map_err(|_| format!("candidate id {id:?} is not an integer"))?;
        Ok(CandidateSpec { id, name: name.trim().to_string() })
    }
}

/// Optional gas model overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct GasOverrides {
    #[arg(long = "gas-base-cost")]
    pub base_cost: Option<u64>,
    #[arg(long = "gas-per-byte-cost")]
    pub per_byte_cost: Option<u64>,
    #[arg(long = "gas-per-storage-slot-cost")]
    pub per_storage_slot_cost: Option<u64>,
    #[arg(long = "gas-slot-size")]
    pub slot_size: Option<u64>,
    #[arg(long = "gas-block-limit")]
    pub block_gas_limit: Option<u64>,
}

/// One configuration layer. Every field is optional; see [`NodeConfig`] for
/// meanings and defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Listen address, host:port.
    #[arg(long)]
    pub listen: Option<String>,
    /// Signature profile: F512 or F1024.
    #[arg(long)]
    pub profile: Option<String>,
    /// Cosine similarity acceptance threshold.
    #[arg(long)]
    pub match_threshold: Option<f64>,
    /// Spoof scores at or above this are rejected.
    #[arg(long)]
    pub spoof_threshold: Option<f64>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Authority key file; defaults to <data_dir>/authority.key.
    #[arg(long)]
    pub authority_key: Option<PathBuf>,
    /// Accepted from the file or PQBALLOT_KEY_PASSPHRASE only.
    #[arg(skip)]
    pub key_passphrase: Option<String>,
    #[arg(long)]
    pub session_ttl_secs: Option<u64>,
    /// Registry snapshot interval in blocks; 0 disables snapshots.
    #[arg(long)]
    pub snapshot_every: Option<u64>,
    /// Election candidates as id:name, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<CandidateSpec>>,
    #[command(flatten)]
    #[serde(default)]
    pub gas: GasOverrides,
}

macro_rules! overlay {
    ($base:ident, $over:ident; $($field:ident),*) => {
        $( if $over.$field.is_some() { $base.$field = $over.$field; } )*
    };
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| invalid("<file>", e.message()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_toml(&text)
    }

    /// Reads `PQBALLOT_*` variables from `vars`; other variables are ignored.
    pub fn from_env<I, K, V>(vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        fn parse<T: FromStr>(var: &str, value: &str) -> Result<Option<T>, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.trim().parse().map(Some).map_err(|e| invalid(var, e))
        }

        let mut layer = ConfigLayer::default();
        for (key, value) in vars {
            let (key, value) = (key.as_ref(), value.as_ref());
            let Some(name) = key.strip_prefix(ENV_PREFIX) else { continue };
            match name {
                "LISTEN" => layer.listen = Some(value.to_string()),
                "PROFILE" => layer.profile = Some(value.to_string()),
                "MATCH_THRESHOLD" => layer.match_threshold = parse(key, value)?,
                "SPOOF_THRESHOLD" => layer.spoof_threshold = parse(key, value)?,
                "DATA_DIR" => layer.data_dir = Some(value.into()),
                "AUTHORITY_KEY" => layer.authority_key = Some(value.into()),
                "KEY_PASSPHRASE" => layer.key_passphrase = Some(value.to_string()),
                "SESSION_TTL_SECS" => layer.session_ttl_secs = parse(key, value)?,
                "SNAPSHOT_EVERY" => layer.snapshot_every = parse(key, value)?,
                "CANDIDATES" => {
                    let specs = value.split(',').map(str::parse).collect::<Result<Vec<CandidateSpec>, _>>();
                    layer.candidates = Some(specs.map_err(|e| invalid(key, e))?);
                }
                "GAS_BASE_COST" => layer.gas.base_cost = parse(key, value)?,
                "GAS_PER_BYTE_COST" => layer.gas.per_byte_cost = parse(key, value)?,
                "GAS_PER_STORAGE_SLOT_COST" => layer.gas.per_storage_slot_cost = parse(key, value)?,
                "GAS_SLOT_SIZE" => layer.gas.slot_size = parse(key, value)?,
                "GAS_BLOCK_LIMIT" => layer.gas.block_gas_limit = parse(key, value)?,
                _ => tracing::debug!(variable = key, "ignoring unrecognized environment variable"),
            }
        }
        Ok(layer)
    }

    /// `self` with every field that `over` sets replaced.
    pub fn overlay(mut self, over: ConfigLayer) -> ConfigLayer {
        overlay!(self, over; listen, profile, match_threshold, spoof_threshold, data_dir, authority_key,
            key_passphrase, session_ttl_secs, snapshot_every, candidates);
        let (mut gas, og) = (self.gas, over.gas);
        overlay!(gas, og; base_cost, per_byte_cost, per_storage_slot_cost, slot_size, block_gas_limit);
        self.gas = gas;
        self
    }

    /// Validates and applies defaults.
    pub fn resolve(self) -> Result<NodeConfig, ConfigError> {
        let listen_text = self.listen.unwrap_or_else(|| DEFAULT_LISTEN.to_string());
        let listen = listen_text.parse().map_err(|_| invalid("listen", format!("{listen_text:?} is not host:port")))?;
        let profile = match self.profile {
            Some(p) => p.parse().map_err(|e| invalid("profile", e))?,
            None => Profile::F512,
        };

        let match_threshold = self.match_threshold.unwrap_or(DEFAULT_MATCH_THRESHOLD);
        if !(match_threshold > 0.0 && match_threshold < 1.0) {
            return Err(invalid("match_threshold", "must lie strictly between 0 and 1"));
        }
        let spoof_threshold = self.spoof_threshold.unwrap_or(DEFAULT_SPOOF_THRESHOLD);
        if !(spoof_threshold > 0.0 && spoof_threshold <= 1.0) {
            return Err(invalid("spoof_threshold", "must lie in (0, 1]"));
        }

        let data_dir = self.data_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
        if data_dir.as_os_str().is_empty() {
            return Err(invalid("data_dir", "must not be empty"));
        }
        let authority_key = self.authority_key.unwrap_or_else(|| data_dir.join("authority.key"));

        let session_ttl = Duration::from_secs(self.session_ttl_secs.unwrap_or(120));
        if session_ttl.is_zero() {
            return Err(invalid("session_ttl_secs", "must be positive"));
        }

        let defaults = GasModel::default();
        let g = self.gas;
        let gas = GasModel {
            base_cost: g.base_cost.unwrap_or(defaults.base_cost),
            per_byte_cost: g.per_byte_cost.unwrap_or(defaults.per_byte_cost),
            per_storage_slot_cost: g.per_storage_slot_cost.unwrap_or(defaults.per_storage_slot_cost),
            slot_size: g.slot_size.unwrap_or(defaults.slot_size),
            block_gas_limit: g.block_gas_limit.unwrap_or(defaults.block_gas_limit),
        };
        if let Some(field) = gas.invalid_field() {
            return Err(invalid(&format!("gas.{field}"), "must be positive"));
        }

        let candidates = self.candidates.unwrap_or_default();
        let mut ids = std::collections::HashSet::new();
        for c in &candidates {
            if !ids.insert(c.id) {
                return Err(invalid("candidates", format!("duplicate id {}", c.id)));
            }
            if c.name.is_empty() || c.name.len() > u8::MAX as usize {
                return Err(invalid("candidates", format!("name of candidate {} must be 1..=255 bytes", c.id)));
            }
        }

        Ok(NodeConfig {
            listen,
            profile,
            match_threshold,
            spoof_threshold,
            data_dir,
            authority_key,
            key_passphrase: self.key_passphrase,
            session_ttl,
            snapshot_every: self.snapshot_every.unwrap_or(DEFAULT_SNAPSHOT_EVERY),
            candidates,
            gas,
        })
    }
}

/// Validated node configuration.
#[derive(Clone, PartialEq)]
pub struct NodeConfig {
    pub listen: SocketAddr,
    pub profile: Profile,
    pub match_threshold: f64,
    pub spoof_threshold: f64,
    pub data_dir: PathBuf,
    pub authority_key: PathBuf,
    pub key_passphrase: Option<String>,
    pub session_ttl: Duration,
    pub snapshot_every: u64,
    /// Required for a fresh ledger; must equal the genesis manifest otherwise.
    pub candidates: Vec<CandidateSpec>,
    pub gas: GasModel,
}

impl fmt::Debug for NodeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeConfig")
            .field("listen", &self.listen)
            .field("profile", &self.profile)
            .field("match_threshold", &self.match_threshold)
            .field("spoof_threshold", &self.spoof_threshold)
            .field("data_dir", &self.data_dir)
            .field("authority_key", &self.authority_key)
            .field("key_passphrase", &self.key_passphrase.as_ref().map(|_| "<redacted>"))
            .field("session_ttl", &self.session_ttl)
            .field("snapshot_every", &self.snapshot_every)
            .field("candidates", &self.candidates)
            .field("gas", &self.gas)
            .finish()
    }
}

impl NodeConfig {
    /// File (if any), then environment, then flags.
    pub fn load<I, K, V>(file: Option<&Path>, env: I, flags: ConfigLayer) -> Result<NodeConfig, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let base = match file {
            Some(path) => ConfigLayer::from_file(path)?,
            None => ConfigLayer::default(),
        };
        base.overlay(ConfigLayer::from_env(env)?).overlay(flags).resolve()
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.data_dir.join("ledger.bin")
    }

    pub fn templates_path(&self) -> PathBuf {
        self.data_dir.join("templates.bin")
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.data_dir.join("registry.snap")
    }
}
