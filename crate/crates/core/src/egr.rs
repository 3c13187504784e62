//! Explicit gradient regularization: descent on `E_μ = E + μ‖∇E‖²`.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{descend, DescentState, Trajectory};
use crate::model::{eval_hvp, eval_loss_grad, Batch, LossModel, ParamVector};

/// Default stop once `‖∇E_μ‖` drops below this.
pub const EGR_CONVERGE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgrConfig {
    /// Explicit regularization rate.
    pub mu: f64,
    /// Inner learning rate, stopping rule and snapshot cadence.
    pub run: RunConfig,
}

impl EgrConfig {
    /// Wraps `run`, adding the default gradient-norm stop when none is set.
    pub fn new(mu: f64, mut run: RunConfig) -> Self {
        run.converge_tol.get_or_insert(EGR_CONVERGE_TOL);
        EgrConfig { mu, run }
    }

    pub fn validate(&self) -> Result<()> {
        check_mu(self.mu)?;
        self.run.validate()
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("mu must be finite and >= 0, got {mu}")))
    }
}

struct EgrEval {
    loss: f64,
    grad_norm_sq: f64,
    value: f64,
    gradient: ParamVector,
}

fn evaluate(model: &dyn LossModel, theta: &ParamVector, mu: f64, batch: &Batch) -> Result<EgrEval> {
    let (loss, g) = eval_loss_grad(model, theta, batch)?;
    let grad_norm_sq = g.norm_sq();
    if mu == 0.0 {
        return Ok(EgrEval {
            loss,
            grad_norm_sq,
            value: loss,
            gradient: g,
        });
    }
    let hg = eval_hvp(model, theta, &g, batch)?;
    let gradient = g.add_scaled(2.0 * mu, &hg)?;
    let value = loss + mu * grad_norm_sq;
    if !value.is_finite() {
        return Err(Error::diverged("regularized loss is not finite"));
    }
    Ok(EgrEval {
        loss,
        grad_norm_sq,
        value,
        gradient,
    })
}

/// `(E_μ(θ), ∇E_μ(θ))` with `∇E_μ = ∇E + 2μH∇E`.
pub fn egr_value_grad(
    model: &dyn LossModel,
    theta: &ParamVector,
    mu: f64,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_mu(mu)?;
    let e = evaluate(model, theta, mu, batch)?;
    Ok((e.value, e.gradient))
}

/// Gradient descent on `E_μ`. Rows carry `E`, `R_IG` and the slope of the
/// unregularized loss, with `E_μ` in `regularized_loss`.
pub fn run_egr(
    model: &dyn LossModel,
    theta0: &ParamVector,
    batch: &Batch,
    config: &EgrConfig,
) -> Result<Trajectory> {
    check_mu(config.mu)?;
    descend(model, theta0, batch, &config.run, |theta| {
        let e = evaluate(model, theta, config.mu, batch)?;
        Ok(DescentState {
            loss: e.loss,
            grad_norm_sq: e.grad_norm_sq,
            direction: e.gradient,
            regularized_loss: Some(e.value),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_gd, Termination};
    use crate::model::make_bilinear;

    fn p(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn value_example() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let (v, g) = egr_value_grad(&m, &p(&[2.0, 1.0]), 0.5, &m.train_batch()).unwrap();
        assert!((v - 5.88).abs() < 1e-12);
        // ∇E = (1.4, 2.8), H = [[1, 3.4], [3.4, 4]], H∇E = (10.92, 15.96)
        assert!((g[0] - (1.4 + 10.92)).abs() < 1e-12);
        assert!((g[1] - (2.8 + 15.96)).abs() < 1e-12);
    }

    #[test]
    fn zero_mu_is_plain_loss() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let b = m.train_batch();
        let theta = p(&[2.0, 1.0]);
        let (v, g) = egr_value_grad(&m, &theta, 0.0, &b).unwrap();
        let (e, ge) = eval_loss_grad(&m, &theta, &b).unwrap();
        assert_eq!((v, g), (e, ge));
    }

    #[test]
    fn minimum_is_shared() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let (v, g) = egr_value_grad(&m, &p(&[0.6, 1.0]), 3.0, &m.train_batch()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn negative_mu_rejected() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        assert!(egr_value_grad(&m, &p(&[2.0, 1.0]), -0.1, &m.train_batch()).is_err());
    }

    #[test]
    fn zero_mu_run_matches_gd_bit_exactly() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let b = m.train_batch();
        let theta0 = p(&[2.8, 3.5]);
        let cfg = EgrConfig::new(0.0, RunConfig::new(0.01, 300));
        let egr = run_egr(&m, &theta0, &b, &cfg).unwrap();
        let gd = run_gd(&m, &theta0, &b, &cfg.run).unwrap();
        assert_eq!(egr.final_params, gd.final_params);
        assert_eq!(egr.rows.len(), gd.rows.len());
        for (a, c) in egr.rows.iter().zip(&gd.rows) {
            assert_eq!((a.iteration, a.loss, &a.params), (c.iteration, c.loss, &c.params));
            assert_eq!(a.regularized_loss, Some(a.loss));
        }
    }

    #[test]
    fn egr_records_both_losses_and_shrinks_the_endpoint_norm() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let b = m.train_batch();
        let theta0 = p(&[2.8, 3.5]);
        let run = RunConfig::new(1e-4, 100_000).with_eval_every(1000);
        let egr = run_egr(&m, &theta0, &b, &EgrConfig::new(0.25, run.clone())).unwrap();
        let plain = run_egr(&m, &theta0, &b, &EgrConfig::new(0.0, run)).unwrap();
        assert_eq!(egr.termination, Termination::Converged);
        for r in &egr.rows {
            assert!(r.regularized_loss.unwrap() >= r.loss);
        }
        assert!(egr.last_row().unwrap().loss < 1e-10);
        assert!(egr.final_params.norm() < plain.final_params.norm());
    }
}
