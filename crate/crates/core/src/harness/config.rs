//! Run configuration from a flat `key = value` file. `#` starts a comment.
//!
//! Keys: `profile` (`default` or `synthetic`, applied before the other keys),
//! `variant`, `coref_weight`, `lr`, `epochs`, `seed`, `batch_size`, `n_max`,
//! `train_path`, `dev_path`, `checkpoint_path`, `log_path`, `layers`, `width`,
//! `heads`, `ff_width`, `max_len`, `gnn_width`, `gnn_layers`, `basis_count`,
//! `topology` (`star` or `clique`), `max_span_len`, `vocab_words`,
//! `vocab_suffixes`, `resolver` (`file` or `rule`). Relative paths resolve
//! against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Variant;
use crate::rgcn::Topology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolverChoice {
    /// Clusters from the dataset, falling back to the rule resolver when a
    /// paragraph has none.
    File,
    /// Always the rule resolver.
    Rule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    /// `None` means the variant's default.
    pub coref_weight: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub n_max: usize,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub max_len: usize,
    pub gnn_width: Option<usize>,
    pub gnn_layers: usize,
    pub basis_count: usize,
    pub topology: Topology,
    pub max_span_len: usize,
    pub vocab_words: usize,
    pub vocab_suffixes: usize,
    pub resolver: ResolverChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Baseline,
            coref_weight: None,
            lr: 2e-5,
            epochs: 4,
            seed: 0,
            batch_size: 16,
            n_max: 2,
            train_path: None,
            dev_path: None,
            checkpoint_path: None,
            log_path: None,
            layers: 2,
            width: 64,
            heads: 4,
            ff_width: 128,
            max_len: 128,
            gnn_width: None,
            gnn_layers: 2,
            basis_count: 2,
            topology: Topology::Star,
            max_span_len: 8,
            vocab_words: 20_000,
            vocab_suffixes: 2_000,
            resolver: ResolverChoice::File,
        }
    }
}

impl RunConfig {
    /// Settings for the from-scratch synthetic corpus: larger learning rate,
    /// more epochs, and a smaller encoder.
    pub fn synthetic() -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            batch_size: 8,
            layers: 2,
            width: 32,
            heads: 2,
            ff_width: 64,
            max_len: 64,
            ..Self::default()
        }
    }

    pub fn coref_weight(&self) -> f64 {
        self.coref_weight
            .unwrap_or_else(|| self.variant.default_coref_weight())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(w) = self.coref_weight {
            if !w.is_finite() {
                return Err(Error::Config("coref_weight must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            entries.push((n + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let mut cfg = match entries.iter().find(|(_, k, _)| k == "profile") {
            None => Self::default(),
            Some((_, _, v)) if v == "default" => Self::default(),
            Some((_, _, v)) if v == "synthetic" => Self::synthetic(),
            Some((n, _, v)) => {
                return Err(Error::Config(format!("line {n}: unknown profile {v:?}")))
            }
        };
        for (n, key, value) in entries {
            cfg.set(&key, &value, base_dir)
                .map_err(|e| Error::Config(format!("line {n}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&fs::read_to_string(path)?, base)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        let path = |v: &str| Some(base.join(v));
        match key {
            "profile" => {}
            "variant" => self.variant = value.parse().map_err(|e: Error| e.to_string())?,
            "coref_weight" => self.coref_weight = Some(num(key, value)?),
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "train_path" => self.train_path = path(value),
            "dev_path" => self.dev_path = path(value),
            "checkpoint_path" => self.checkpoint_path = path(value),
            "log_path" => self.log_path = path(value),
            "layers" => self.layers = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ff_width" => self.ff_width = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "gnn_width" => self.gnn_width = Some(num(key, value)?),
            "gnn_layers" => self.gnn_layers = num(key, value)?,
            "basis_count" => self.basis_count = num(key, value)?,
            "topology" => {
                self.topology = match value {
                    "star" => Topology::Star,
                    "clique" => Topology::Clique,
                    _ => return Err(format!("unknown topology {value:?}")),
                }
            }
            "max_span_len" => self.max_span_len = num(key, value)?,
            "vocab_words" => self.vocab_words = num(key, value)?,
            "vocab_suffixes" => self.vocab_suffixes = num(key, value)?,
            "resolver" => {
                self.resolver = match value {
                    "file" => ResolverChoice::File,
                    "rule" => ResolverChoice::Rule,
                    _ => return Err(format!("unknown resolver {value:?}")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.epochs, c.n_max), (2e-5, 4, 2));
        assert_eq!(
            RunConfig {
                variant: Variant::MultAtt,
                ..c
            }
            .coref_weight(),
            2.0
        );
    }

    #[test]
    fn synthetic_profile_then_overrides() {
        let text = "# run\nprofile = synthetic\nvariant = add_att\nepochs = 3  # short\ntrain_path = t.json\n";
        let c = RunConfig::parse(text, Path::new("/data")).unwrap();
        assert_eq!(c.variant, Variant::AddAtt);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.train_path, Some(PathBuf::from("/data/t.json")));
    }

    #[test]
    fn bad_input_is_rejected() {
        for bad in [
            "lr = 0",
            "lr = -1",
            "variant = bert",
            "nonsense",
            "mystery = 1",
            "epochs = x",
        ] {
            assert!(RunConfig::parse(bad, Path::new(".")).is_err(), "{bad}");
        }
    }
}
