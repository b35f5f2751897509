//! Run settings: defaults, then the `key = value` config file, then flags.

use std::path::Path;

use cascadener::backend::BackendConfig;
use cascadener::dyncat::DynCatConfig;
use cascadener::metrics::Thresholds;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub rounds: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub workers: usize,
    pub extractor: BackendConfig,
    pub classifier: BackendConfig,
    pub embedder: BackendConfig,
    /// Dimension of the `mock` embedder.
    pub embedder_dim: usize,
    pub thresholds: Thresholds,
    pub dyncat: DynCatConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 3,
            temperature: 0.7,
            max_tokens: 512,
            workers: 4,
            extractor: BackendConfig::default(),
            classifier: BackendConfig::default(),
            embedder: BackendConfig::default(),
            embedder_dim: 64,
            thresholds: Thresholds::default(),
            dyncat: DynCatConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {value:?}")))
}

fn set_backend(b: &mut BackendConfig, field: &str, key: &str, value: &str) -> Result<(), CliError> {
    match field {
        "base_url" => b.base_url = value.to_string(),
        "model" => b.model = value.to_string(),
        "api_key_env" => b.api_key_env = (!value.is_empty()).then(|| value.to_string()),
        "timeout_secs" => b.timeout_secs = parse(key, value)?,
        "retries" => b.retries = parse(key, value)?,
        "max_in_flight" => b.max_in_flight = parse(key, value)?,
        _ => return Err(CliError::Usage(format!("unknown config key {key}"))),
    }
    Ok(())
}

impl Settings {
    /// Apply one config entry. Unknown keys are usage errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.thresholds;
        let p = &mut self.dyncat.probabilities;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "max_tokens" => self.max_tokens = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "embedder.dim" => self.embedder_dim = parse(key, value)?,
            "thresholds.cohesion_merge" => t.cohesion_merge = parse(key, value)?,
            "thresholds.entropy_min" => t.entropy_min = parse(key, value)?,
            "thresholds.gini_max" => t.gini_max = parse(key, value)?,
            "thresholds.cv_max" => t.cv_max = parse(key, value)?,
            "dyncat.mix" => p.mix = parse(key, value)?,
            "dyncat.synonym" => p.synonym = parse(key, value)?,
            "dyncat.remove" => p.remove = parse(key, value)?,
            "dyncat.merge" => p.merge = parse(key, value)?,
            "dyncat.damp" => self.dyncat.damp = parse(key, value)?,
            "dyncat.boost" => self.dyncat.boost = parse(key, value)?,
            "dyncat.cohesion_low" => self.dyncat.cohesion_low = parse(key, value)?,
            "dyncat.rare_percentile" => self.dyncat.rare_percentile = parse(key, value)?,
            "dyncat.max_rebalance_passes" => self.dyncat.max_rebalance_passes = parse(key, value)?,
            "dyncat.max_merge_passes" => self.dyncat.max_merge_passes = parse(key, value)?,
            _ => {
                let (group, field) = key
                    .split_once('.')
                    .ok_or_else(|| CliError::Usage(format!("unknown config key {key}")))?;
                let b = match group {
                    "extractor" => &mut self.extractor,
                    "classifier" => &mut self.classifier,
                    "embedder" => &mut self.embedder,
                    _ => return Err(CliError::Usage(format!("unknown config key {key}"))),
                };
                set_backend(b, field, key, value)?;
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut s = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Op(format!("{}: {e}", path.display())))?;
            s.apply_text(&text)?;
        }
        s.thresholds_into_dyncat();
        Ok(s)
    }

    /// Keep the dyncat copy of the thresholds in step.
    pub fn thresholds_into_dyncat(&mut self) {
        self.dyncat.thresholds = self.thresholds;
    }
}
