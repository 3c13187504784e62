//! Stopping rules for training runs.

use crate::config::Stopping;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Decides whether a run that has completed `iteration` updates stops there.
///
/// `max_test_accuracy` always runs to the budget; the selection among its
/// checkpoints is [`earliest_max`].
pub fn evaluate_stopping(
    criterion: Stopping,
    h: f64,
    max_iterations: usize,
    iteration: usize,
) -> Result<StopDecision> {
    let budget = match criterion {
        Stopping::FixedIterations | Stopping::MaxTestAccuracy { .. } => {
            if max_iterations == 0 {
                return Err(Error::invalid("iteration budget must be at least 1"));
            }
            max_iterations
        }
        Stopping::FixedPhysicalTime { time } => crate::config::physical_time_steps(h, time)?,
    };
    Ok(if iteration >= budget {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    })
}

/// Index of the first occurrence of the largest value. NaN never wins.
pub fn earliest_max(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn earliest_max_breaks_ties_early() {
        // second checkpoint
        assert_eq!(earliest_max(&[0.3, 0.9, 0.9, 0.8]), Some(1));
        assert_eq!(earliest_max(&[]), None);
        assert_eq!(earliest_max(&[f64::NAN, 0.1]), Some(1));
    }

    #[test]
    fn physical_time_decision() {
        let rule = Stopping::FixedPhysicalTime { time: 50.0 };
        assert_eq!(evaluate_stopping(rule, 0.1, 0, 499).unwrap(), StopDecision::Continue);
        assert_eq!(evaluate_stopping(rule, 0.1, 0, 500).unwrap(), StopDecision::Stop);
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(evaluate_stopping(Stopping::FixedIterations, 0.1, 0, 0).is_err());
        assert_eq!(
            evaluate_stopping(Stopping::FixedIterations, 0.1, 3, 3).unwrap(),
            StopDecision::Stop
        );
    }
}
