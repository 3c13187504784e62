//! Learning-rate × width grids of MLP classifiers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::train::{train_classifier, Exclusion};
use crate::model::{make_mlp, Activation, Batch, LossModel, ParamVector};
use crate::stats::spearman;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub h_grid: Vec<f64>,
    pub width_grid: Vec<usize>,
    /// Number of hidden layers, all of the same width.
    pub hidden_layers: usize,
    pub activation: Activation,
    /// Template for every cell; its `h` is replaced by the grid value.
    pub run: RunConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_grid.is_empty() || self.width_grid.is_empty() {
            return Err(Error::invalid("sweep grids must be non-empty"));
        }
        if self.hidden_layers == 0 {
            return Err(Error::invalid("at least one hidden layer is required"));
        }
        if self.width_grid.contains(&0) {
            return Err(Error::invalid("widths must be at least 1"));
        }
        for &h in &self.h_grid {
            self.cell_config(h).validate()?;
        }
        Ok(())
    }

    fn cell_config(&self, h: f64) -> RunConfig {
        RunConfig {
            h,
            record_params: false,
            ..self.run.clone()
        }
    }

    pub fn widths(&self, input_dim: usize, classes: usize, width: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(std::iter::repeat_n(width, self.hidden_layers));
        w.push(classes);
        w
    }
}

/// One trained cell, measured at its stopping point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub h: f64,
    pub width: usize,
    pub m: usize,
    pub lambda: f64,
    pub stop_iteration: usize,
    pub loss: Option<f64>,
    pub r_ig: Option<f64>,
    pub slope: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub diverged: bool,
    pub exclusion: Option<Exclusion>,
    #[serde(skip)]
    pub params: Option<ParamVector>,
}

impl SweepRecord {
    pub fn is_included(&self) -> bool {
        self.exclusion.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    pub fn included(&self) -> impl Iterator<Item = &SweepRecord> {
        self.records.iter().filter(|r| r.is_included())
    }

    fn lambda_rank_correlation(&self, pick: impl Fn(&SweepRecord) -> Option<f64>) -> Option<f64> {
        let (l, v): (Vec<f64>, Vec<f64>) = self
            .included()
            .filter_map(|r| pick(r).map(|v| (r.lambda, v)))
            .unzip();
        spearman(&l, &v)
    }

    /// Spearman correlation of `λ` with `R_IG` over included cells.
    pub fn spearman_lambda_r_ig(&self) -> Option<f64> {
        self.lambda_rank_correlation(|r| r.r_ig)
    }

    /// The included cells with the largest and the smallest learning rate at
    /// a common width: the smallest width where both are included. Returns
    /// `(large_h, small_h)`.
    pub fn robustness_pair(&self) -> Option<(&SweepRecord, &SweepRecord)> {
        let hs: Vec<f64> = self.included().map(|r| r.h).collect();
        let hi = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = hs.iter().copied().fold(f64::INFINITY, f64::min);
        if !(hi > lo) {
            return None;
        }
        let mut widths: Vec<usize> = self.included().map(|r| r.width).collect();
        widths.sort_unstable();
        widths.dedup();
        widths.into_iter().find_map(|w| {
            let at = |h: f64| self.included().find(|r| r.width == w && r.h == h);
            Some((at(hi)?, at(lo)?))
        })
    }

    /// Spearman correlation of `λ` with test accuracy over included cells.
    pub fn spearman_lambda_test_accuracy(&self) -> Option<f64> {
        self.lambda_rank_correlation(|r| r.test_accuracy)
    }
}

/// Trains every `(width, h)` cell, widths outermost. At most `parallel`
/// cells run at once; the record order does not depend on it.
pub fn run_sweep(
    config: &SweepConfig,
    train: &Batch,
    test: &Batch,
    parallel: usize,
) -> Result<SweepResult> {
    config.validate()?;
    let classes = match train.targets() {
        crate::Targets::Classes { classes, .. } => *classes,
        crate::Targets::Values(_) => return Err(Error::invalid("sweeps need class labels")),
    };
    let cells: Vec<(usize, f64)> = config
        .width_grid
        .iter()
        .flat_map(|&w| config.h_grid.iter().map(move |&h| (w, h)))
        .collect();
    let run_cell = |&(width, h): &(usize, f64)| -> Result<SweepRecord> {
        let model = make_mlp(
            &config.widths(train.input_dim(), classes, width),
            config.activation,
            config.run.init_seed,
        )?;
        let cfg = config.cell_config(h);
        let out = train_classifier(&model, &model.initial_params(), train, Some(test), &cfg, false)?;
        let m = model.param_count();
        let sm = out.stop_metrics;
        Ok(SweepRecord {
            h,
            width,
            m,
            lambda: h * m as f64 / 4.0,
            stop_iteration: out.stop_iteration,
            loss: sm.map(|s| s.loss),
            r_ig: sm.map(|s| s.r_ig),
            slope: sm.map(|s| s.slope),
            train_accuracy: sm.map(|s| s.train_accuracy),
            test_accuracy: sm.and_then(|s| s.test_accuracy),
            diverged: out.exclusion == Some(Exclusion::Diverged),
            exclusion: out.exclusion,
            params: sm.map(|_| out.stop_params),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let records = pool.install(|| cells.par_iter().map(run_cell).collect::<Result<Vec<_>>>())?;
    Ok(SweepResult { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BatchPolicy, Stopping};
    use crate::dataset::make_synthetic;

    fn small_config(h_grid: Vec<f64>, width_grid: Vec<usize>) -> SweepConfig {
        let mut run = RunConfig::new(0.1, 60)
            .with_eval_every(10)
            .with_stopping(Stopping::MaxTestAccuracy {
                require_full_train_accuracy: true,
            });
        run.batch = BatchPolicy::Minibatch { size: 25, shuffle_seed: 0 };
        SweepConfig {
            h_grid,
            width_grid,
            hidden_layers: 1,
            activation: Activation::Relu,
            run,
        }
    }

    #[test]
    fn single_cell_grid() {
        let train = make_synthetic(100, 1).unwrap();
        let test = make_synthetic(50, 2).unwrap();
        let cfg = small_config(vec![0.1], vec![8]);
        let res = run_sweep(&cfg, train.batch(), test.batch(), 1).unwrap();
        assert_eq!(res.records.len(), 1);
        let r = &res.records[0];
        assert_eq!(r.m, 784 * 8 + 8 + 8 * 10 + 10);
        assert_eq!(r.lambda, 0.1 * r.m as f64 / 4.0);
    }

    #[test]
    fn results_are_reproducible_and_order_independent() {
        let train = make_synthetic(100, 1).unwrap();
        let test = make_synthetic(50, 2).unwrap();
        let cfg = small_config(vec![1e-7, 0.1], vec![16, 32]);
        let a = run_sweep(&cfg, train.batch(), test.batch(), 1).unwrap();
        let b = run_sweep(&cfg, train.batch(), test.batch(), 3).unwrap();
        assert_eq!(a, b);
        let cells: Vec<(usize, f64)> = a.records.iter().map(|r| (r.width, r.h)).collect();
        assert_eq!(cells, vec![(16, 1e-7), (16, 0.1), (32, 1e-7), (32, 0.1)]);
        for r in &a.records {
            if r.h == 0.1 {
                assert!(r.is_included(), "{r:?}");
                assert_eq!(r.train_accuracy, Some(1.0));
            } else {
                assert_eq!(r.exclusion, Some(Exclusion::NeverFullTrainAccuracy));
            }
        }
    }

    fn record(h: f64, width: usize, exclusion: Option<Exclusion>) -> SweepRecord {
        SweepRecord {
            h,
            width,
            m: width,
            lambda: h * width as f64 / 4.0,
            stop_iteration: 0,
            loss: Some(0.0),
            r_ig: Some(0.0),
            slope: Some(0.0),
            train_accuracy: Some(1.0),
            test_accuracy: Some(1.0),
            diverged: false,
            exclusion,
            params: None,
        }
    }

    #[test]
    fn robustness_pair_uses_smallest_common_width() {
        let never = Some(Exclusion::NeverFullTrainAccuracy);
        let res = SweepResult {
            records: vec![
                record(0.005, 50, never),
                record(0.05, 50, None),
                record(0.5, 50, never),
                record(0.005, 100, None),
                record(0.05, 100, None),
                record(0.005, 200, None),
                record(0.05, 200, None),
            ],
        };
        let (big, small) = res.robustness_pair().unwrap();
        assert_eq!((big.width, big.h, small.width, small.h), (100, 0.05, 100, 0.005));
        let one = SweepResult { records: vec![record(0.05, 50, None)] };
        assert!(one.robustness_pair().is_none());
    }

    #[test]
    fn empty_grid_rejected() {
        let train = make_synthetic(20, 1).unwrap();
        let cfg = small_config(vec![], vec![4]);
        assert!(run_sweep(&cfg, train.batch(), train.batch(), 1).is_err());
    }
}
