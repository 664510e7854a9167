//! Flat run configuration shared by every subcommand.
//!
//! A configuration file is either a JSON object or `key = value` lines
//! (`#` starts a comment). Values in the line format are read as JSON when
//! they parse as JSON and as plain strings otherwise. `--set key=value`
//! flags are applied on top in the same way.

use std::path::Path;

use ard_core::models::ModelOptions;
use ard_core::simgen::{BarrierSimConfig, LatentSimConfig};
use ard_core::SamplerConfig;
use serde_json::{Map, Value};

use crate::CliError;

/// Keys handled by the front end itself rather than a library config.
pub const FRONT_END_KEYS: [&str; 2] = ["rescale", "ppc_draws"];

/// Configuration as merged from the file and `--set` overrides.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: Map<String, Value>,
}

fn keys_of<T: serde::Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

pub fn sampler_keys() -> Vec<String> {
    keys_of(&SamplerConfig::default())
}

pub fn model_keys() -> Vec<String> {
    keys_of(&ModelOptions::default())
}

pub fn latent_keys() -> Vec<String> {
    keys_of(&LatentSimConfig::default())
}

pub fn barrier_keys() -> Vec<String> {
    keys_of(&BarrierSimConfig::default())
}

fn parse_scalar(raw: &str) -> Value {
    let t = raw.trim();
    serde_json::from_str(t).unwrap_or_else(|_| Value::String(t.to_string()))
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
            cfg.merge_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("--set expects key=value, got '{o}'")))?;
            cfg.insert(k.trim(), parse_scalar(v))?;
        }
        Ok(cfg)
    }

    fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let v: Value = serde_json::from_str(text)
                .map_err(|e| CliError::Validation(format!("{origin}: invalid JSON: {e}")))?;
            let Value::Object(m) = v else { unreachable!("starts with a brace") };
            for (k, v) in m {
                self.insert(&k, v)?;
            }
            return Ok(());
        }
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("{origin}:{}: expected key = value", lineno + 1)))?;
            self.insert(k.trim(), parse_scalar(v))?;
        }
        Ok(())
    }

    fn insert(&mut self, key: &str, value: Value) -> Result<(), CliError> {
        let known = FRONT_END_KEYS.contains(&key)
            || [sampler_keys(), model_keys(), latent_keys(), barrier_keys()]
                .iter()
                .any(|set| set.iter().any(|k| k == key));
        if !known {
            return Err(CliError::Validation(format!("unknown configuration key '{key}'")));
        }
        if key == "seed" {
            return Err(CliError::Validation("set the seed with the global --seed flag".into()));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    /// Every merged key, for the config echo.
    pub fn echo(&self) -> Value {
        Value::Object(self.values.clone())
    }

    /// Keys of this configuration outside `allowed`, ignoring front-end keys.
    fn stray(&self, allowed: &[Vec<String>]) -> Vec<String> {
        self.values
            .keys()
            .filter(|k| !FRONT_END_KEYS.contains(&k.as_str()))
            .filter(|k| !allowed.iter().any(|set| set.contains(k)))
            .cloned()
            .collect()
    }

    /// Reject keys that no section used by `command` understands.
    pub fn check_applicable(&self, command: &str, allowed: &[Vec<String>]) -> Result<(), CliError> {
        let stray = self.stray(allowed);
        if stray.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(format!("keys not used by '{command}': {}", stray.join(", "))))
        }
    }

    fn section<T: serde::de::DeserializeOwned>(&self, keys: &[String], what: &str) -> Result<T, CliError> {
        let m: Map<String, Value> =
            self.values.iter().filter(|(k, _)| keys.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
        serde_json::from_value(Value::Object(m)).map_err(|e| CliError::Validation(format!("{what} settings: {e}")))
    }

    pub fn sampler(&self, seed: u64) -> Result<SamplerConfig, CliError> {
        let mut c: SamplerConfig = self.section(&sampler_keys(), "sampler")?;
        c.seed = seed;
        Ok(c)
    }

    pub fn model_options(&self) -> Result<ModelOptions, CliError> {
        self.section(&model_keys(), "model")
    }

    pub fn latent_sim(&self, seed: u64) -> Result<LatentSimConfig, CliError> {
        let mut c: LatentSimConfig = self.section(&latent_keys(), "simulation")?;
        c.seed = seed;
        Ok(c)
    }

    pub fn barrier_sim(&self, seed: u64) -> Result<BarrierSimConfig, CliError> {
        let keys = barrier_keys();
        let mut m: Map<String, Value> =
            self.values.iter().filter(|(k, _)| keys.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
        m.insert("seed".into(), Value::from(seed));
        BarrierSimConfig::from_partial(&Value::Object(m)).map_err(CliError::from)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| CliError::Validation(format!("'{key}' must be a non-negative integer"))),
        }
    }

    /// The `rescale` setting: `all` (default), `none`, or a comma-separated
    /// list of known subpopulation names.
    pub fn rescale(&self) -> Result<String, CliError> {
        match self.get("rescale") {
            None => Ok("all".into()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .map(|v| v.join(","))
                .ok_or_else(|| CliError::Validation("'rescale' list must hold subpopulation names".into())),
            Some(_) => Err(CliError::Validation("'rescale' must be all, none or a list of names".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("chains = 3\n# comment\nwarmup=500  # trailing\nrescale = none\n", "t").unwrap();
        assert_eq!(cfg.get("chains"), Some(&Value::from(3)));
        assert_eq!(cfg.get("rescale"), Some(&Value::from("none")));
        let s = cfg.sampler(9).unwrap();
        assert_eq!((s.chains, s.warmup, s.seed), (3, 500, 9));
    }

    #[test]
    fn unknown_and_seed_keys_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.merge_text("chainz = 3", "t").is_err());
        assert!(cfg.merge_text("{\"seed\": 3}", "t").is_err());
    }

    #[test]
    fn wrong_types_are_validation_errors() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("{\"chains\": \"many\"}", "t").unwrap();
        assert!(matches!(cfg.sampler(1), Err(CliError::Validation(_))));
    }

    #[test]
    fn applicability() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("zeta = 2\nchains = 2", "t").unwrap();
        assert!(cfg.check_applicable("fit", &[sampler_keys(), model_keys()]).is_err());
        assert!(cfg.check_applicable("simulate", &[latent_keys(), sampler_keys()]).is_ok());
    }
}
