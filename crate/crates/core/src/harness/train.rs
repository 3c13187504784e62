//! Minibatch training of MLP classifiers with checkpoint selection.

use serde::Serialize;

use crate::config::{BatchPolicy, RunConfig, Stopping};
use crate::dataset::batch_indices;
use crate::error::{Error, Result};
use crate::flow::{StepRecord, Termination, Trajectory, TrajectoryRow, DIVERGENCE_THRESHOLD};
use crate::harness::stopping::earliest_max;
use crate::metrics::MetricsSnapshot;
use crate::model::{eval_loss_grad, Batch, LossModel, Mlp, ParamVector};

/// Why a run is left out of trend statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    Diverged,
    NeverFullTrainAccuracy,
}

impl Exclusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Exclusion::Diverged => "diverged",
            Exclusion::NeverFullTrainAccuracy => "never_reached_full_train_accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub test_accuracy: Option<f64>,
    /// Only evaluated where it is needed.
    pub train_accuracy: Option<f64>,
}

/// Full-training-set metrics at the stopping point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopMetrics {
    pub loss: f64,
    pub r_ig: f64,
    pub slope: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub h: f64,
    pub param_count: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// Full-data rows at each checkpoint, when requested.
    pub rows: Vec<TrajectoryRow>,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub divergence: Option<String>,
    pub exclusion: Option<Exclusion>,
    /// Iteration the stopping rule selected.
    pub stop_iteration: usize,
    pub stop_params: ParamVector,
    /// `None` for diverged runs.
    pub stop_metrics: Option<StopMetrics>,
}

impl TrainOutcome {
    /// The recorded rows and step ledger as a [`Trajectory`] ending at the
    /// stopping point.
    pub fn as_trajectory(&self) -> Trajectory {
        Trajectory {
            h: self.h,
            param_count: self.param_count,
            rows: self.rows.clone(),
            steps: self.steps.clone(),
            final_params: self.stop_params.clone(),
            termination: self.termination,
            divergence: self.divergence.clone(),
        }
    }
}

fn full_metrics(
    model: &Mlp,
    theta: &ParamVector,
    train: &Batch,
    test: Option<&Batch>,
    h: f64,
) -> Result<StopMetrics> {
    let (loss, g) = eval_loss_grad(model, theta, train)?;
    let snap = MetricsSnapshot::from_gradient_norm_sq(loss, g.norm_sq(), model.param_count(), h);
    Ok(StopMetrics {
        loss,
        r_ig: snap.r_ig,
        slope: snap.slope,
        train_accuracy: model.accuracy(theta, train)?,
        test_accuracy: test.map(|t| model.accuracy(theta, t)).transpose()?,
    })
}

/// Trains `model` from `theta0` by (minibatch) gradient descent.
///
/// Under `max_test_accuracy` the run uses its whole budget and then picks
/// the earliest checkpoint with the highest test accuracy; with the filter
/// on, only checkpoints at 100% train accuracy are eligible. Checkpoints are
/// visited in decreasing test accuracy, so train accuracy is only computed
/// until the first eligible one is found.
///
/// With `record_rows`, every checkpoint also gets a [`TrajectoryRow`] of
/// full-training-set metrics.
pub fn train_classifier(
    model: &Mlp,
    theta0: &ParamVector,
    train: &Batch,
    test: Option<&Batch>,
    config: &RunConfig,
    record_rows: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_batch(train)?;
    if let Some(t) = test {
        model.check_batch(t)?;
    }
    if theta0.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            what: "initial parameters",
            expected: model.param_count(),
            actual: theta0.len(),
        });
    }
    let select_by_test = match config.stopping {
        Stopping::MaxTestAccuracy { .. } if test.is_none() => {
            return Err(Error::invalid("max-test-accuracy stopping requires a test set"));
        }
        Stopping::MaxTestAccuracy { require_full_train_accuracy } => {
            Some(require_full_train_accuracy)
        }
        _ => None,
    };
    let budget = config.iteration_budget()?;
    let h = config.h;
    let n = train.len();
    let per_epoch = match config.batch {
        BatchPolicy::Full => 1,
        BatchPolicy::Minibatch { size, .. } => n.div_ceil(size.min(n).max(1)),
    };

    let mut checkpoints = Vec::new();
    let mut saved = Vec::new();
    let mut rows = Vec::new();
    let mut steps = Vec::with_capacity(budget);
    let mut theta = theta0.clone();
    let mut epoch_rows: Vec<Vec<usize>> = Vec::new();
    let mut divergence = None;

    for it in 0..=budget {
        if it % config.eval_every == 0 || it == budget {
            let test_accuracy = test.map(|t| model.accuracy(&theta, t)).transpose()?;
            let mut train_accuracy = None;
            if record_rows {
                let metrics = match full_metrics(model, &theta, train, test, h) {
                    Ok(m) => m,
                    Err(e) if e.is_divergence() => {
                        divergence = Some(e.at_iteration(it).to_string());
                        break;
                    }
                    Err(e) => return Err(e),
                };
                train_accuracy = Some(metrics.train_accuracy);
                rows.push(TrajectoryRow {
                    iteration: it,
                    time: it as f64 * h,
                    loss: metrics.loss,
                    r_ig: metrics.r_ig,
                    slope: metrics.slope,
                    param_norm: theta.norm(),
                    train_accuracy,
                    test_accuracy,
                    regularized_loss: None,
                    params: None,
                });
            }
            checkpoints.push(Checkpoint {
                iteration: it,
                test_accuracy,
                train_accuracy,
            });
            if select_by_test.is_some() {
                saved.push(theta.clone());
            }
        }
        if it == budget {
            break;
        }
        let k = it % per_epoch;
        let minibatch;
        let batch = match config.batch {
            BatchPolicy::Full => train,
            policy => {
                if k == 0 {
                    epoch_rows = batch_indices(n, policy, (it / per_epoch) as u64)?;
                }
                minibatch = train.select(&epoch_rows[k])?;
                &minibatch
            }
        };
        let step = eval_loss_grad(model, &theta, batch).and_then(|(loss, g)| {
            if loss.abs() > DIVERGENCE_THRESHOLD {
                return Err(Error::diverged(format!(
                    "loss {loss} exceeds threshold {DIVERGENCE_THRESHOLD:e}"
                )));
            }
            let next = theta.add_scaled(-h, &g)?;
            Ok((g.norm(), next))
        });
        match step {
            Ok((direction_norm, next)) => {
                steps.push(StepRecord {
                    norm_before: theta.norm(),
                    norm_after: next.norm(),
                    direction_norm,
                });
                theta = next;
            }
            Err(e) if e.is_divergence() => {
                divergence = Some(e.at_iteration(it).to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let base = TrainOutcome {
        h,
        param_count: model.param_count(),
        checkpoints,
        rows,
        steps,
        termination: Termination::Diverged,
        divergence: None,
        exclusion: Some(Exclusion::Diverged),
        stop_iteration: 0,
        stop_params: theta.clone(),
        stop_metrics: None,
    };
    if divergence.is_some() {
        return Ok(TrainOutcome {
            divergence,
            stop_iteration: base.steps.len(),
            ..base
        });
    }

    let mut out = TrainOutcome {
        termination: if select_by_test.is_some()
            || matches!(config.stopping, Stopping::FixedPhysicalTime { .. })
        {
            Termination::StoppedByCriterion
        } else {
            Termination::Completed
        },
        exclusion: None,
        stop_iteration: budget,
        ..base
    };
    let mut selected = None;
    if let Some(require_full) = select_by_test {
        let accs: Vec<f64> = out
            .checkpoints
            .iter()
            .map(|c| c.test_accuracy.unwrap_or(f64::NAN))
            .collect();
        let mut order: Vec<usize> = (0..accs.len()).collect();
        order.sort_by(|&a, &b| accs[b].total_cmp(&accs[a]).then(a.cmp(&b)));
        debug_assert_eq!(order.first().copied(), earliest_max(&accs));
        for i in order {
            if !require_full {
                selected = Some(i);
                break;
            }
            let acc = match out.checkpoints[i].train_accuracy {
                Some(a) => a,
                None => {
                    let a = model.accuracy(&saved[i], train)?;
                    out.checkpoints[i].train_accuracy = Some(a);
                    a
                }
            };
            if acc == 1.0 {
                selected = Some(i);
                break;
            }
        }
        match selected {
            Some(i) => {
                out.stop_iteration = out.checkpoints[i].iteration;
                out.stop_params = saved.swap_remove(i);
            }
            None => out.exclusion = Some(Exclusion::NeverFullTrainAccuracy),
        }
    }
    match full_metrics(model, &out.stop_params, train, test, h) {
        Ok(m) => out.stop_metrics = Some(m),
        Err(e) if e.is_divergence() => {
            out.termination = Termination::Diverged;
            out.exclusion = Some(Exclusion::Diverged);
            out.divergence = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic;
    use crate::model::{make_mlp, Activation};

    fn setup() -> (Mlp, Batch, Batch) {
        let model = make_mlp(&[784, 32, 10], Activation::Relu, 3).unwrap();
        let train = make_synthetic(200, 1).unwrap().batch().clone();
        let test = make_synthetic(100, 2).unwrap().batch().clone();
        (model, train, test)
    }

    #[test]
    fn minibatch_training_fits_and_selects_an_eligible_checkpoint() {
        let (model, train, test) = setup();
        let mut cfg = RunConfig::new(0.1, 70)
            .with_eval_every(7)
            .with_stopping(Stopping::MaxTestAccuracy {
                require_full_train_accuracy: true,
            });
        cfg.batch = BatchPolicy::Minibatch { size: 32, shuffle_seed: 5 };
        let out = train_classifier(&model, &model.initial_params(), &train, Some(&test), &cfg, false)
            .unwrap();
        assert_eq!(out.steps.len(), 70);
        assert_eq!(out.checkpoints.len(), 11);
        assert_eq!(out.exclusion, None, "{:?}", out.checkpoints);
        let m = out.stop_metrics.unwrap();
        assert_eq!(m.train_accuracy, 1.0);
        let best = out
            .checkpoints
            .iter()
            .filter(|c| c.train_accuracy == Some(1.0))
            .map(|c| c.test_accuracy.unwrap())
            .fold(0.0, f64::max);
        assert_eq!(m.test_accuracy, Some(best));
    }

    #[test]
    fn width_fifty_net_fits_the_synthetic_set_within_ten_epochs() {
        let model = make_mlp(&[784, 50, 50, 50, 50, 10], Activation::Relu, 0).unwrap();
        let train = make_synthetic(500, 0).unwrap().batch().clone();
        // 16 minibatches of 32 per epoch
        let mut cfg = RunConfig::new(0.1, 160).with_eval_every(16);
        cfg.batch = BatchPolicy::Minibatch { size: 32, shuffle_seed: 0 };
        let out = train_classifier(&model, &model.initial_params(), &train, None, &cfg, true).unwrap();
        assert_eq!(out.rows.last().unwrap().train_accuracy, Some(1.0));
        assert!(crate::metrics::check_norm_bound(&out.as_trajectory(), 0.1).is_empty());
    }

    #[test]
    fn untrained_run_is_excluded_by_the_filter() {
        let (model, train, test) = setup();
        let cfg = RunConfig::new(1e-6, 3)
            .with_eval_every(1)
            .with_stopping(Stopping::MaxTestAccuracy {
                require_full_train_accuracy: true,
            });
        let out = train_classifier(&model, &model.initial_params(), &train, Some(&test), &cfg, false)
            .unwrap();
        assert_eq!(out.exclusion, Some(Exclusion::NeverFullTrainAccuracy));
        assert!(out.checkpoints.iter().all(|c| c.train_accuracy.is_some()));
    }

    #[test]
    fn huge_step_diverges() {
        let (model, train, _) = setup();
        let cfg = RunConfig::new(1e6, 20);
        let out = train_classifier(&model, &model.initial_params(), &train, None, &cfg, true).unwrap();
        assert_eq!(out.exclusion, Some(Exclusion::Diverged));
        assert_eq!(out.termination, Termination::Diverged);
        assert!(out.divergence.is_some());
    }

    #[test]
    fn test_set_required_for_selection() {
        let (model, train, _) = setup();
        let cfg = RunConfig::new(0.1, 3).with_stopping(Stopping::MaxTestAccuracy {
            require_full_train_accuracy: false,
        });
        assert!(train_classifier(&model, &model.initial_params(), &train, None, &cfg, false).is_err());
    }

    #[test]
    fn rows_track_full_data_metrics() {
        let (model, train, test) = setup();
        let cfg = RunConfig::new(0.05, 10).with_eval_every(5);
        let out = train_classifier(&model, &model.initial_params(), &train, Some(&test), &cfg, true)
            .unwrap();
        let its: Vec<usize> = out.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![0, 5, 10]);
        assert!(out.rows.iter().all(|r| r.train_accuracy.is_some()));
        assert_eq!(out.termination, Termination::Completed);
        assert!(out.rows[2].loss < out.rows[0].loss);
    }
}
