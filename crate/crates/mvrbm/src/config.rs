//! Plain-text `key = value` configuration files and run manifests.
//!
//! Every CLI run that writes artifacts also writes a sidecar manifest in the
//! same format, recording the full configuration so the run can be replayed
//! byte-identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::{OptimizerKind, TrainingConfig};

/// An ordered `key = value` table. Lines starting with `#` are comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueFile {
    entries: BTreeMap<String, String>,
}

impl KeyValueFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got '{line}'", lineno + 1))
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(KeyValueFile { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value '{raw}' for key '{key}'"))),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.entries {
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }
}

/// Overlay `key = value` entries onto a [`TrainingConfig`].
pub fn apply_training_overrides(base: TrainingConfig, kv: &KeyValueFile) -> Result<TrainingConfig> {
    let mut config = base;
    if let Some(v) = kv.get_parsed("hidden")? {
        config.hidden = v;
    }
    if let Some(v) = kv.get_parsed("cd_steps")? {
        config.cd_steps = v;
    }
    if let Some(v) = kv.get_parsed("learning_rate")? {
        config.learning_rate = v;
    }
    if let Some(raw) = kv.get("optimizer") {
        config.optimizer = raw.parse::<OptimizerKind>()?;
    }
    if let Some(v) = kv.get_parsed("momentum")? {
        config.momentum = v;
    }
    if let Some(v) = kv.get_parsed("adam_beta1")? {
        config.adam_beta1 = v;
    }
    if let Some(v) = kv.get_parsed("adam_beta2")? {
        config.adam_beta2 = v;
    }
    if let Some(v) = kv.get_parsed("adam_epsilon")? {
        config.adam_epsilon = v;
    }
    if let Some(raw) = kv.get("batch_size") {
        config.batch_size = match raw {
            "full" => None,
            _ => Some(raw.parse().map_err(|_| {
                Error::Config(format!("bad batch_size '{raw}' (expected integer or 'full')"))
            })?),
        };
    }
    if let Some(v) = kv.get_parsed("epochs")? {
        config.epochs = v;
    }
    if let Some(v) = kv.get_parsed("seed")? {
        config.seed = v;
    }
    if let Some(v) = kv.get_parsed("init_scale")? {
        config.init_scale = v;
    }
    config.validate()?;
    Ok(config)
}

/// Render a [`TrainingConfig`] as `key = value` text.
pub fn render_training_config(config: &TrainingConfig) -> KeyValueFile {
    let mut kv = KeyValueFile::new();
    kv.set("hidden", config.hidden);
    kv.set("cd_steps", config.cd_steps);
    kv.set("learning_rate", config.learning_rate);
    kv.set("optimizer", config.optimizer);
    kv.set("momentum", config.momentum);
    kv.set("adam_beta1", config.adam_beta1);
    kv.set("adam_beta2", config.adam_beta2);
    kv.set("adam_epsilon", config.adam_epsilon);
    kv.set(
        "batch_size",
        config.batch_size.map_or(String::from("full"), |b| b.to_string()),
    );
    kv.set("epochs", config.epochs);
    kv.set("seed", config.seed);
    kv.set("init_scale", config.init_scale);
    kv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let text = "# comment\nepochs = 7\nlearning_rate = 0.05\n\nbatch_size = full\n";
        let kv = KeyValueFile::parse(text).unwrap();
        assert_eq!(kv.get("epochs"), Some("7"));
        let round = KeyValueFile::parse(&kv.render()).unwrap();
        assert_eq!(kv, round);
    }

    #[test]
    fn parse_rejects_bare_lines() {
        assert!(KeyValueFile::parse("epochs").is_err());
    }

    #[test]
    fn training_overrides() {
        let kv = KeyValueFile::parse("hidden = 9\noptimizer = adam\nbatch_size = 32\nepochs = 3").unwrap();
        let config = apply_training_overrides(TrainingConfig::default(), &kv).unwrap();
        assert_eq!(config.hidden, 9);
        assert_eq!(config.optimizer, OptimizerKind::Adam);
        assert_eq!(config.batch_size, Some(32));
        assert_eq!(config.epochs, 3);
        // untouched defaults survive
        assert_eq!(config.momentum, 0.8);
    }

    #[test]
    fn training_config_round_trip() {
        let config = TrainingConfig {
            hidden: 4,
            batch_size: Some(100),
            optimizer: OptimizerKind::Adam,
            ..TrainingConfig::default()
        };
        let kv = render_training_config(&config);
        let back = apply_training_overrides(TrainingConfig::default(), &kv).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn invalid_override_is_rejected() {
        let kv = KeyValueFile::parse("learning_rate = -1").unwrap();
        assert!(apply_training_overrides(TrainingConfig::default(), &kv).is_err());
        let kv = KeyValueFile::parse("optimizer = sputnik").unwrap();
        assert!(apply_training_overrides(TrainingConfig::default(), &kv).is_err());
    }
}
