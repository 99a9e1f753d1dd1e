//! Settings resolved from defaults, a TOML file, `FRONTIER_*` environment
//! variables and command-line flags, later sources winning.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use frontier::chains::DEFAULT_CHAIN_CAP;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProducerKind {
    /// Replays the texts of a recorded trace.
    #[default]
    Scripted,
    /// Digest-derived pseudo-text.
    Synthetic,
    /// JSON-over-HTTP text generation service.
    Remote,
}

impl FromStr for ProducerKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scripted" => Ok(Self::Scripted),
            "synthetic" => Ok(Self::Synthetic),
            "remote" => Ok(Self::Remote),
            other => bail!("unknown producer {other:?}"),
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Config {
    /// Require exactly one terminal outline. Default `true`.
    pub single_conclusion: bool,
    /// Chains kept after deduplication. Default 10.
    pub chain_cap: usize,
    /// Reject immediately repeated entities instead of collapsing them. Default `true`.
    pub strict_dedup: bool,
    /// Concurrent workers; unset uses every core.
    pub workers: Option<usize>,
    pub producer: ProducerKind,
    pub endpoint: Option<String>,
    /// Default `--out` path.
    pub out: Option<PathBuf>,
    /// Default `--dot` path.
    pub dot: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            single_conclusion: true,
            chain_cap: DEFAULT_CHAIN_CAP,
            strict_dedup: true,
            workers: None,
            producer: ProducerKind::default(),
            endpoint: None,
            out: None,
            dot: None,
        }
    }
}

/// One layer of settings; unset fields leave the layer below alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Layer {
    pub single_conclusion: Option<bool>,
    pub chain_cap: Option<usize>,
    pub strict_dedup: Option<bool>,
    pub workers: Option<usize>,
    pub producer: Option<ProducerKind>,
    pub endpoint: Option<String>,
    pub out: Option<PathBuf>,
    pub dot: Option<PathBuf>,
}

pub const ENV_PREFIX: &str = "FRONTIER_";

fn parse_env<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("{ENV_PREFIX}{key}={value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => bail!("{ENV_PREFIX}{key}={value:?}: expected a boolean"),
    }
}

impl Layer {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `FRONTIER_SINGLE_CONCLUSION`, `FRONTIER_CHAIN_CAP`, ... Unknown
    /// `FRONTIER_*` names are rejected like unknown file keys.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut layer = Self::default();
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match key {
                "SINGLE_CONCLUSION" => layer.single_conclusion = Some(parse_bool(key, &value)?),
                "CHAIN_CAP" => layer.chain_cap = Some(parse_env(key, &value)?),
                "STRICT_DEDUP" => layer.strict_dedup = Some(parse_bool(key, &value)?),
                "WORKERS" => layer.workers = Some(parse_env(key, &value)?),
                "PRODUCER" => layer.producer = Some(parse_env(key, &value)?),
                "ENDPOINT" => layer.endpoint = Some(value),
                "OUT" => layer.out = Some(value.into()),
                "DOT" => layer.dot = Some(value.into()),
                "CONFIG" => {}
                other => bail!("unknown environment setting {ENV_PREFIX}{other}"),
            }
        }
        Ok(layer)
    }
}

impl Config {
    pub fn apply(mut self, layer: &Layer) -> Self {
        let l = layer.clone();
        self.single_conclusion = l.single_conclusion.unwrap_or(self.single_conclusion);
        self.chain_cap = l.chain_cap.unwrap_or(self.chain_cap);
        self.strict_dedup = l.strict_dedup.unwrap_or(self.strict_dedup);
        self.workers = l.workers.or(self.workers);
        self.producer = l.producer.unwrap_or(self.producer);
        self.endpoint = l.endpoint.or(self.endpoint);
        self.out = l.out.or(self.out);
        self.dot = l.dot.or(self.dot);
        self
    }

    /// Defaults, then `file`, then `env`, then `flags`.
    pub fn resolve(file: Option<&Layer>, env: &Layer, flags: &Layer) -> Self {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg = cfg.apply(f);
        }
        cfg.apply(env).apply(flags)
    }
}
