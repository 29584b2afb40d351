//! Declarative run configuration: a TOML file with one section per module,
//! overridden by command-line flags and echoed next to every output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{read_split_file, DataError, SplitRule, SyntheticSpec};
use crate::skeleton::PyramidConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error(
        "invalid split '{0}': use first-five, first:K, odd, k-of-n:K, subjects:1,2,3 or file:PATH"
    )]
    Split(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Settings shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Threads for cross-validation.
    pub workers: usize,
    /// Subject split; see [`parse_split`].
    pub split: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            split: "first-five".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainConfig,
    pub pyramid: PyramidConfig,
    pub synth: SyntheticSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn split_rule(&self) -> Result<SplitRule, ConfigError> {
        parse_split(&self.run.split)
    }
}

/// Parses a split description.
///
/// Accepted forms: `first-five`, `first:K`, `odd`, `k-of-n:K`,
/// `subjects:1,2,3` (listed subjects train, the others test) and `file:PATH`
/// (a split file with `[train]` and `[test]` sections).
pub fn parse_split(s: &str) -> Result<SplitRule, ConfigError> {
    let bad = || ConfigError::Split(s.to_string());
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (s, None),
    };
    let count = |a: Option<&str>| a.and_then(|a| a.parse::<usize>().ok()).ok_or_else(bad);
    match kind {
        "first-five" if arg.is_none() => Ok(SplitRule::first_five()),
        "first" => Ok(SplitRule::FirstSubjects(count(arg)?)),
        "odd" if arg.is_none() => Ok(SplitRule::OddSubjects),
        "k-of-n" => Ok(SplitRule::AllKOfN(count(arg)?)),
        "subjects" => {
            let train = arg
                .ok_or_else(bad)?
                .split(',')
                .map(|t| t.trim().parse::<u32>().map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SplitRule::Explicit { train, test: None })
        }
        "file" => Ok(read_split_file(arg.ok_or_else(bad)?)?),
        _ => Err(bad()),
    }
}
