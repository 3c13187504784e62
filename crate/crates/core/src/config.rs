//! Run configuration shared by the descent loops and the experiment harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When a run stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stopping {
    /// Stop after `max_iterations` updates.
    FixedIterations,
    /// Stop at the smallest `n` with `n·h ≥ time`.
    FixedPhysicalTime { time: f64 },
    /// Run the full budget, then select the earliest checkpoint with the
    /// highest test accuracy. With the filter on, only checkpoints at 100%
    /// train accuracy are eligible.
    MaxTestAccuracy { require_full_train_accuracy: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchPolicy {
    Full,
    Minibatch { size: usize, shuffle_seed: u64 },
}

/// Configuration of a single descent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Learning rate.
    pub h: f64,
    pub max_iterations: usize,
    pub stopping: Stopping,
    /// Snapshot cadence in iterations; the final iteration is always recorded.
    pub eval_every: usize,
    pub batch: BatchPolicy,
    pub data_seed: u64,
    pub init_seed: u64,
    /// Relative perturbation scale σ for robustness evaluation.
    pub noise_sigma: f64,
    pub realizations: usize,
    /// Optional early stop once the update direction norm falls below this value.
    pub converge_tol: Option<f64>,
    /// Keep `θ` in each recorded row (off for large models).
    pub record_params: bool,
}

impl RunConfig {
    /// Full-batch fixed-iteration run with the 2-d defaults.
    pub fn new(h: f64, max_iterations: usize) -> Self {
        RunConfig {
            h,
            max_iterations,
            stopping: Stopping::FixedIterations,
            eval_every: 10,
            batch: BatchPolicy::Full,
            data_seed: 0,
            init_seed: 0,
            noise_sigma: 0.0,
            realizations: 20,
            converge_tol: None,
            record_params: true,
        }
    }

    pub fn with_stopping(mut self, stopping: Stopping) -> Self {
        self.stopping = stopping;
        self
    }

    pub fn with_eval_every(mut self, eval_every: usize) -> Self {
        self.eval_every = eval_every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.h
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise scale must be finite and non-negative"));
        }
        if self.realizations == 0 {
            return Err(Error::invalid("realizations must be at least 1"));
        }
        if let BatchPolicy::Minibatch { size: 0, .. } = self.batch {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        if let Some(tol) = self.converge_tol {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(Error::invalid("convergence tolerance must be finite and >= 0"));
            }
        }
        self.iteration_budget().map(|_| ())
    }

    /// Number of updates the stopping rule allows.
    pub fn iteration_budget(&self) -> Result<usize> {
        match self.stopping {
            Stopping::FixedIterations | Stopping::MaxTestAccuracy { .. } => {
                if self.max_iterations == 0 {
                    Err(Error::invalid("iteration budget must be at least 1"))
                } else {
                    Ok(self.max_iterations)
                }
            }
            Stopping::FixedPhysicalTime { time } => physical_time_steps(self.h, time),
        }
    }
}

/// Smallest `n` with `n·h ≥ time`, evaluated in floating point.
pub fn physical_time_steps(h: f64, time: f64) -> Result<usize> {
    if !(time.is_finite() && time > 0.0) {
        return Err(Error::invalid(format!(
            "physical time must be positive, got {time}"
        )));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {h}")));
    }
    let guess = (time / h).ceil();
    if guess > 1e12 {
        return Err(Error::invalid("physical time requires more than 1e12 steps"));
    }
    let mut n = guess as usize;
    while n > 1 && (n - 1) as f64 * h >= time {
        n -= 1;
    }
    while (n as f64) * h < time {
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn physical_time_examples() {
        assert_eq!(physical_time_steps(0.1, 50.0).unwrap(), 500);
        assert_eq!(physical_time_steps(0.025, 100.0).unwrap(), 4000);
        assert_eq!(physical_time_steps(0.3, 1.0).unwrap(), 4);
        assert!(physical_time_steps(0.1, 0.0).is_err());
    }

    #[test]
    fn halving_step_doubles_iterations_at_same_time() {
        for &(h, t) in &[(0.1, 50.0), (0.025, 100.0), (0.001, 3.0), (0.37, 11.0)] {
            let n = physical_time_steps(h, t).unwrap();
            let n2 = physical_time_steps(h / 2.0, t).unwrap();
            assert!(n as f64 * h >= t && n2 as f64 * (h / 2.0) >= t);
            // both stop at the first grid time at or beyond t
            assert!(((n - 1) as f64) * h < t);
            assert!(((n2 - 1) as f64) * (h / 2.0) < t);
        }
    }

    #[test]
    fn zero_fixed_iterations_rejected() {
        let cfg = RunConfig::new(0.1, 0);
        assert!(cfg.validate().is_err());
        assert!(RunConfig::new(0.0, 10).validate().is_err());
        assert!(RunConfig::new(0.1, 10).with_eval_every(0).validate().is_err());
    }
}
