//! Run configuration: a `key=value` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use btex_core::objectives::ObjectiveSpec;
use btex_core::optimizer::{Algorithm, OptimizerConfig};
use btex_core::DistanceMetric;

/// Every key a config file may set. Anything else is rejected so typos fail
/// loudly instead of silently falling back to defaults.
pub const KNOWN_KEYS: &[&str] = &[
    "vocab",
    "out_dir",
    "seed",
    "init_word",
    "metric",
    "fixed_m",
    "target_d1",
    "tolerance",
    "basis",
    "algorithm",
    "learning_rate",
    "steps",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "objective",
    "target_file",
    "operator_file",
    "observation_file",
    "sigma",
    "threshold",
    "gram",
    "samples",
    "m_list",
    "metrics",
    "embedding",
    "template",
    "n_max",
    "terminator",
    "dim",
    "size",
];

/// Default learning rate for AdamW when none is configured. Plain gradient
/// descent instead derives its rate from the basis.
pub const DEFAULT_ADAMW_LR: f64 = 5e-3;
/// Loss fraction defining steps-to-threshold.
pub const DEFAULT_THRESHOLD: f64 = 1e-6;

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Selection mode requested by the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    FixedM(usize),
    TargetD1(usize),
}

impl RunConfig {
    /// Parses `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("config line {}: expected key=value, got {line:?}", n + 1);
            };
            let key = normalize(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("config line {}: unknown key {key:?}", n + 1);
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("config line {}: duplicate key {key:?}", n + 1);
            }
        }
        Ok(RunConfig { values })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Overrides `key` when a flag was given.
    pub fn set<T: Display>(&mut self, key: &str, value: Option<T>) {
        let key = normalize(key);
        debug_assert!(KNOWN_KEYS.contains(&key.as_str()), "{key}");
        if let Some(v) = value {
            self.values.insert(key, v.to_string());
        }
    }

    pub fn set_path(&mut self, key: &str, value: Option<&PathBuf>) {
        self.set(key, value.map(|p| p.display()));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("invalid value {s:?} for {key}: {e}")),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .with_context(|| format!("missing required setting {key} (flag --{})", key.replace('_', "-")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.require::<String>(key).map(PathBuf::from)
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(s) = self.raw(key) else { return Ok(None) };
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse()
                    .map_err(|e| anyhow::anyhow!("invalid entry {p:?} in {key}: {e}"))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.get("seed")?.unwrap_or(0))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out_dir").unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn metric(&self) -> Result<DistanceMetric> {
        Ok(self.get("metric")?.unwrap_or_default())
    }

    pub fn tolerance(&self) -> Result<Option<f64>> {
        self.get("tolerance")
    }

    pub fn selection_mode(&self) -> Result<SelectionMode> {
        match (self.get("fixed_m")?, self.get("target_d1")?) {
            (Some(m), None) => Ok(SelectionMode::FixedM(m)),
            (None, Some(d1)) => Ok(SelectionMode::TargetD1(d1)),
            (Some(_), Some(_)) => bail!("set only one of fixed_m and target_d1"),
            (None, None) => bail!("set one of fixed_m or target_d1"),
        }
    }

    /// Optimizer settings. A missing learning rate is left to the caller
    /// (returned as `None`) so gradient descent can pick one from the basis.
    pub fn optimizer(&self) -> Result<(OptimizerConfig, bool)> {
        let algorithm: Algorithm = self.get("algorithm")?.unwrap_or_default();
        let steps = self.get("steps")?.unwrap_or(btex_core::optimizer::DEFAULT_STEPS);
        let lr: Option<f64> = self.get("learning_rate")?;
        let mut cfg = match algorithm {
            Algorithm::Gd => OptimizerConfig::gd(lr.unwrap_or(1.0), steps),
            Algorithm::AdamW => OptimizerConfig::adamw(lr.unwrap_or(DEFAULT_ADAMW_LR), steps),
        };
        if let Some(g) = self.get("weight_decay")? {
            cfg.weight_decay = g;
        }
        if let Some(b) = self.get("adam_beta1")? {
            cfg.beta1 = b;
        }
        if let Some(b) = self.get("adam_beta2")? {
            cfg.beta2 = b;
        }
        if let Some(e) = self.get("adam_epsilon")? {
            cfg.epsilon = e;
        }
        cfg.validate()?;
        let derive_lr = lr.is_none() && algorithm == Algorithm::Gd;
        Ok((cfg, derive_lr))
    }

    pub fn objective(&self) -> Result<Option<ObjectiveSpec>> {
        if self.raw("objective").is_none() {
            return Ok(None);
        }
        let keys = ["objective", "target_file", "operator_file", "observation_file", "sigma"];
        let pairs: BTreeMap<String, String> = keys
            .iter()
            .filter_map(|k| self.raw(k).map(|v| (k.to_string(), v.to_string())))
            .collect();
        Ok(Some(ObjectiveSpec::from_pairs(&pairs)?))
    }

    pub fn threshold(&self) -> Result<f64> {
        let t = self.get("threshold")?.unwrap_or(DEFAULT_THRESHOLD);
        if !(t > 0.0 && t < 1.0) {
            bail!("threshold must lie in (0, 1), got {t}");
        }
        Ok(t)
    }
}
