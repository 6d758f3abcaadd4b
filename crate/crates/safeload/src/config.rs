//! `key = value` run configuration. Command-line flags take precedence.

use std::collections::BTreeMap;
use std::str::FromStr;

/// Every key a config file may set; anything else is rejected.
pub const KEYS: &[&str] = &[
    "seed",
    // generator
    "clusters",
    "per_cluster",
    "mo_ratio",
    "repeat_rate",
    "group_size",
    "hard_neg",
    "days",
    "mean_cpu_mo_s",
    "mean_cpu_non_mo_s",
    // build
    "rounds",
    "learning_rate",
    "max_depth",
    "min_child_weight",
    "lambda",
    "local_threshold",
    "positive_retention",
    "negative_retention",
    // quota
    "gamma",
    "beta",
    "c_min",
    "daily_multiplier",
    "min_daily_quota",
    // replay
    "feedback",
    "provisioned_rate",
    "serverless_rate",
    "free_allowance",
];

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("config key {key:?}: bad value {value:?}")]
    Value { key: String, value: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .filter(|(k, v)| !k.is_empty() && !v.is_empty())
                .ok_or(ConfigError::Syntax { line })?;
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                });
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.into(),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value if given, else the config value, else `default`.
    pub fn resolve<T: FromStr>(
        &self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, ConfigError> {
        debug_assert!(KEYS.contains(&key), "{key} missing from KEYS");
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: v.clone(),
            }),
        }
    }
}
