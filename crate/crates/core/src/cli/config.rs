//! Flat TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{BatchPolicy, RunConfig, Stopping};
use crate::dataset::{load_idx, make_synthetic_with, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::model::Activation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingKind {
    FixedIterations,
    FixedPhysicalTime,
    MaxTestAccuracy,
}

/// Every key of an experiment file. Missing keys take the desk-scale
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema_version: u32,

    pub data: DataSource,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub synthetic_spread: f64,
    pub synthetic_seed: u64,
    pub test_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// Seed for drawing IDX subsets.
    pub subset_seed: u64,

    pub hidden_layers: usize,
    pub activation: Activation,
    pub init_seed: u64,

    /// Learning rate and width for `train` and `perturb`.
    pub h: f64,
    pub width: usize,
    pub h_grid: Vec<f64>,
    pub width_grid: Vec<usize>,
    /// 0 means full batch.
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub epochs: usize,
    /// Checkpoint cadence in iterations; 0 means twice per epoch.
    pub eval_every: usize,
    pub stopping: StoppingKind,
    /// Required with `stopping = "fixed_physical_time"`.
    pub physical_time: Option<f64>,
    pub require_full_train_accuracy: bool,

    pub sigmas: Vec<f64>,
    pub realizations: usize,
    pub noise_seed: u64,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        ExperimentFile {
            schema_version: SCHEMA_VERSION,
            data: DataSource::Synthetic,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            synthetic_spread: 1.0,
            synthetic_seed: 1,
            test_seed: 2,
            train_size: 10_000,
            test_size: 2_000,
            subset_seed: 0,
            hidden_layers: 4,
            activation: Activation::Relu,
            init_seed: 0,
            h: 0.05,
            width: 100,
            h_grid: vec![0.005, 0.05, 0.5],
            width_grid: vec![50, 100, 200],
            batch_size: 32,
            shuffle_seed: 0,
            epochs: 20,
            eval_every: 0,
            stopping: StoppingKind::MaxTestAccuracy,
            physical_time: None,
            require_full_train_accuracy: true,
            sigmas: vec![0.1, 0.3, 0.5],
            realizations: 20,
            noise_seed: 11,
        }
    }
}

impl ExperimentFile {
    /// Parses and validates a config. Relative IDX paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        if !table.contains_key("schema_version") {
            return Err(Error::Config("missing schema_version".into()));
        }
        let mut cfg: ExperimentFile = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        if let Some(base) = base {
            for p in [
                &mut cfg.train_images,
                &mut cfg.train_labels,
                &mut cfg.test_images,
                &mut cfg.test_labels,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.data == DataSource::Idx {
            let missing: Vec<&str> = [
                ("train_images", &self.train_images),
                ("train_labels", &self.train_labels),
                ("test_images", &self.test_images),
                ("test_labels", &self.test_labels),
            ]
            .iter()
            .filter(|(_, p)| p.is_none())
            .map(|(k, _)| *k)
            .collect();
            if !missing.is_empty() {
                return bad(format!("data = \"idx\" needs {}", missing.join(", ")));
            }
        }
        if !(self.synthetic_spread.is_finite() && self.synthetic_spread >= 0.0) {
            return bad("synthetic_spread must be finite and >= 0".into());
        }
        if self.train_size == 0 || self.test_size == 0 {
            return bad("train_size and test_size must be at least 1".into());
        }
        if self.hidden_layers == 0 {
            return bad("hidden_layers must be at least 1".into());
        }
        if self.width == 0 || self.width_grid.is_empty() || self.width_grid.contains(&0) {
            return bad("widths must be at least 1 and width_grid non-empty".into());
        }
        if self.h_grid.is_empty() {
            return bad("h_grid must be non-empty".into());
        }
        for &h in std::iter::once(&self.h).chain(&self.h_grid) {
            if !(h.is_finite() && h > 0.0) {
                return bad(format!("learning rates must be positive, got {h}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        match (self.stopping, self.physical_time) {
            (StoppingKind::FixedPhysicalTime, None) => {
                return bad("stopping = \"fixed_physical_time\" needs physical_time".into())
            }
            (_, Some(t)) if !(t.is_finite() && t > 0.0) => {
                return bad(format!("physical_time must be positive, got {t}"))
            }
            _ => {}
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigmas must be non-empty, finite and >= 0".into());
        }
        if self.realizations == 0 {
            return bad("realizations must be at least 1".into());
        }
        Ok(())
    }

    fn batch_policy(&self) -> BatchPolicy {
        if self.batch_size == 0 || self.batch_size >= self.train_size {
            BatchPolicy::Full
        } else {
            BatchPolicy::Minibatch {
                size: self.batch_size,
                shuffle_seed: self.shuffle_seed,
            }
        }
    }

    /// Updates per epoch over `n_train` examples.
    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        match self.batch_policy() {
            BatchPolicy::Full => 1,
            BatchPolicy::Minibatch { size, .. } => n_train.div_ceil(size),
        }
    }

    /// Descent configuration for one learning rate.
    pub fn run_config(&self, h: f64, n_train: usize) -> Result<RunConfig> {
        let per_epoch = self.steps_per_epoch(n_train);
        let stopping = match self.stopping {
            StoppingKind::FixedIterations => Stopping::FixedIterations,
            StoppingKind::FixedPhysicalTime => Stopping::FixedPhysicalTime {
                time: self.physical_time.unwrap_or_default(),
            },
            StoppingKind::MaxTestAccuracy => Stopping::MaxTestAccuracy {
                require_full_train_accuracy: self.require_full_train_accuracy,
            },
        };
        let eval_every = if self.eval_every == 0 {
            (per_epoch / 2).max(1)
        } else {
            self.eval_every
        };
        let cfg = RunConfig {
            stopping,
            eval_every,
            batch: self.batch_policy(),
            data_seed: self.shuffle_seed,
            init_seed: self.init_seed,
            record_params: false,
            ..RunConfig::new(h, self.epochs * per_epoch)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training and test sets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match self.data {
            DataSource::Synthetic => Ok((
                make_synthetic_with(self.train_size, self.synthetic_seed, self.synthetic_spread)?,
                make_synthetic_with(self.test_size, self.test_seed, self.synthetic_spread)?,
            )),
            DataSource::Idx => {
                let path = |p: &Option<PathBuf>| p.clone().unwrap_or_default();
                let train = load_idx(path(&self.train_images), path(&self.train_labels))?;
                let test = load_idx(path(&self.test_images), path(&self.test_labels))?;
                let cut = |d: Dataset, k: usize| {
                    if k < d.len() {
                        d.subset(k, self.subset_seed)
                    } else {
                        Ok(d)
                    }
                };
                Ok((cut(train, self.train_size)?, cut(test, self.test_size)?))
            }
        }
    }
}

/// Short description of a dataset for manifests.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetRecord {
    pub examples: usize,
    pub provenance: Provenance,
    pub sha256: String,
}

impl From<&Dataset> for DatasetRecord {
    fn from(d: &Dataset) -> Self {
        DatasetRecord {
            examples: d.len(),
            provenance: d.provenance().clone(),
            sha256: d.checksum().to_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = ExperimentFile::parse("schema_version = 1\n", None).unwrap();
        assert_eq!(cfg, ExperimentFile::default());
        let run = cfg.run_config(0.05, 10_000).unwrap();
        assert_eq!(run.max_iterations, 20 * 313);
        assert_eq!(run.eval_every, 156);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "",
            "schema_version = 2",
            "schema_version = 1\nwidht = 3",
            "schema_version = 1\nh = -1.0",
            "schema_version = 1\ndata = \"idx\"",
            "schema_version = 1\nstopping = \"fixed_physical_time\"",
            "schema_version = 1\nh_grid = []",
            "schema_version = [",
        ] {
            let err = ExperimentFile::parse(text, None).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text:?}: {err}");
        }
    }

    #[test]
    fn relative_idx_paths_follow_the_file() {
        let text = "schema_version = 1\ndata = \"idx\"\ntrain_images = \"a\"\ntrain_labels = \"b\"\n\
                    test_images = \"/abs/c\"\ntest_labels = \"d\"";
        let cfg = ExperimentFile::parse(text, Some(Path::new("/cfg"))).unwrap();
        assert_eq!(cfg.train_images.unwrap(), PathBuf::from("/cfg/a"));
        assert_eq!(cfg.test_images.unwrap(), PathBuf::from("/abs/c"));
    }

    #[test]
    fn full_batch_policy() {
        let cfg = ExperimentFile::parse("schema_version = 1\nbatch_size = 0\nepochs = 5", None).unwrap();
        let run = cfg.run_config(0.1, 100).unwrap();
        assert_eq!(run.batch, BatchPolicy::Full);
        assert_eq!((run.max_iterations, run.eval_every), (5, 1));
    }
}
