//! The implicit gradient regularizer and the loss-surface geometry around it.
//!
//! With `m` parameters, `R_IG(θ) = ‖∇E(θ)‖²/m` and `λ = hm/4`, so the
//! modified loss is `Ẽ = E + λR_IG = E + (h/4)‖∇E‖²`. On the loss graph
//! `θ ↦ (θ, E(θ))` the unit normal is `(−∇E, 1)/√(1 + ‖∇E‖²)`; its angle
//! `α` with the vertical has `tan α = ‖∇E‖ = slope`, and the metric
//! determinant is `1 + ‖∇E‖² = 1 + m·R_IG`.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::model::{eval_loss_grad, Batch, LossModel, ParamVector};

/// Derived scalars at one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub loss: f64,
    pub r_ig: f64,
    pub lambda: f64,
    pub modified_loss: f64,
    pub slope: f64,
    /// Radians, in `[0, π/2)`.
    pub angle: f64,
    pub metric_det: f64,
    pub normal_z: f64,
}

impl MetricsSnapshot {
    /// Builds a snapshot from `E` and `‖∇E‖²` at learning rate `h`.
    pub fn from_gradient_norm_sq(loss: f64, grad_norm_sq: f64, m: usize, h: f64) -> Self {
        let r_ig = grad_norm_sq / m as f64;
        let lambda = h * m as f64 / 4.0;
        let slope = grad_norm_sq.sqrt();
        MetricsSnapshot {
            loss,
            r_ig,
            lambda,
            modified_loss: loss + lambda * r_ig,
            slope,
            angle: slope.atan(),
            metric_det: 1.0 + grad_norm_sq,
            normal_z: 1.0 / (1.0 + grad_norm_sq).sqrt(),
        }
    }
}

/// `R_IG(θ) = ‖∇E(θ)‖²/m`.
pub fn r_ig(model: &dyn LossModel, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    let (_, g) = eval_loss_grad(model, theta, batch)?;
    Ok(g.norm_sq() / model.param_count() as f64)
}

/// Implicit regularization rate `λ = hm/4`.
pub fn reg_rate(h: f64, m: usize) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {h}")));
    }
    if m == 0 {
        return Err(Error::invalid("parameter count must be at least 1"));
    }
    Ok(h * m as f64 / 4.0)
}

/// `Ẽ(θ) = E(θ) + λR_IG(θ)`.
pub fn modified_loss(
    model: &dyn LossModel,
    theta: &ParamVector,
    h: f64,
    batch: &Batch,
) -> Result<f64> {
    let m = model.param_count();
    let lambda = reg_rate(h, m)?;
    let (e, g) = eval_loss_grad(model, theta, batch)?;
    Ok(e + lambda * (g.norm_sq() / m as f64))
}

/// Every [`MetricsSnapshot`] field at `θ`, with `λ` taken at learning rate `h`.
pub fn geometry_snapshot(
    model: &dyn LossModel,
    theta: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<MetricsSnapshot> {
    reg_rate(h, model.param_count())?;
    let (e, g) = eval_loss_grad(model, theta, batch)?;
    Ok(MetricsSnapshot::from_gradient_norm_sq(
        e,
        g.norm_sq(),
        model.param_count(),
        h,
    ))
}

/// Absolute slack allowed by [`check_norm_bound`].
pub const NORM_BOUND_SLACK: f64 = 1e-9;

/// A step where `|‖θ_{n+1}‖ − ‖θ_n‖| ≤ h·slope(θ_n)` failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormBoundViolation {
    pub step: usize,
    pub norm_change: f64,
    pub bound: f64,
}

/// Checks the per-step parameter norm bound on every update of a descent run.
pub fn check_norm_bound(trajectory: &Trajectory, h: f64) -> Vec<NormBoundViolation> {
    trajectory
        .steps
        .iter()
        .enumerate()
        .filter_map(|(step, s)| {
            let change = (s.norm_after - s.norm_before).abs();
            let bound = h * s.direction_norm;
            (change > bound + NORM_BOUND_SLACK).then_some(NormBoundViolation {
                step,
                norm_change: change,
                bound,
            })
        })
        .collect()
}

/// Kernel form of the modified least-squares loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkRecord {
    /// `ε_k = f_θ(x_k) − y_k`, one row per data point.
    pub errors: Array2<f64>,
    /// Gram matrix of all `c × c` kernel blocks: block `(i, j)` occupies
    /// rows `i·c..(i+1)·c` and columns `j·c..(j+1)·c` and equals `∇ε_iᵀ∇ε_j`.
    pub kernel: Array2<f64>,
    pub output_dim: usize,
    pub loss: f64,
    pub h: f64,
    /// `E + h Σ_{i,j} ε_iᵀ K(x_i, x_j) ε_j`.
    pub modified_loss: f64,
}

impl NtkRecord {
    pub fn block(&self, i: usize, j: usize) -> Array2<f64> {
        let c = self.output_dim;
        self.kernel
            .slice(ndarray::s![i * c..(i + 1) * c, j * c..(j + 1) * c])
            .to_owned()
    }
}

/// Evaluates the modified loss through the neural tangent kernel of a
/// least-squares model.
pub fn ntk_modified_loss(
    model: &dyn LossModel,
    theta: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<NtkRecord> {
    let ls = model
        .as_least_squares()
        .ok_or_else(|| Error::NotLeastSquares(format!("{:?}", model.spec())))?;
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {h}")));
    }
    let errors = ls.errors(theta, batch)?;
    let jacobians = ls.error_jacobians(theta, batch)?;
    let c = ls.output_dim();
    let n = batch.len();
    let m = model.param_count();

    // Stack all per-point Jacobians into an (n·c) × m matrix J; K = J Jᵀ.
    let mut stacked = Array2::zeros((n * c, m));
    for (k, jac) in jacobians.iter().enumerate() {
        stacked
            .slice_mut(ndarray::s![k * c..(k + 1) * c, ..])
            .assign(jac);
    }
    let kernel = stacked.dot(&stacked.t());
    let eps: Array1<f64> = errors.iter().copied().collect();
    let loss = eps.dot(&eps);
    let quad = eps.dot(&kernel.dot(&eps));
    let modified = loss + h * quad;
    if !modified.is_finite() {
        return Err(Error::diverged("kernel-form modified loss is not finite"));
    }
    Ok(NtkRecord {
        errors,
        kernel,
        output_dim: c,
        loss,
        h,
        modified_loss: modified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::flow::run_gd;
    use crate::model::{make_bilinear, make_least_squares, make_mlp, Activation, FeatureMap};

    fn p(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn r_ig_examples() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let b = m.train_batch();
        assert!((r_ig(&m, &p(&[2.0, 1.0]), &b).unwrap() - 4.9).abs() < 1e-12);
        assert!((r_ig(&m, &p(&[2.8, 3.5]), &b).unwrap() - 850.2088).abs() < 1e-9);
        assert_eq!(r_ig(&m, &p(&[0.6, 1.0]), &b).unwrap(), 0.0);
    }

    #[test]
    fn reg_rate_examples() {
        assert_eq!(reg_rate(0.025, 2).unwrap(), 0.0125);
        assert_eq!(reg_rate(0.5, 2).unwrap(), 0.25);
        assert!((reg_rate(0.1, 47_670).unwrap() - 1191.75).abs() < 1e-9);
        assert!(reg_rate(0.0, 2).is_err());
        assert!(reg_rate(0.1, 0).is_err());
    }

    #[test]
    fn modified_loss_examples() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let b = m.train_batch();
        let theta = p(&[2.0, 1.0]);
        assert!((modified_loss(&m, &theta, 0.025, &b).unwrap() - 1.04125).abs() < 1e-12);
        assert_eq!(modified_loss(&m, &p(&[0.6, 1.0]), 0.3, &b).unwrap(), 0.0);
        let e = crate::model::eval_loss(&m, &theta, &b).unwrap();
        assert!((modified_loss(&m, &theta, 1e-12, &b).unwrap() - e).abs() < 1e-10);
    }

    #[test]
    fn geometry_example() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let s = geometry_snapshot(&m, &p(&[2.0, 1.0]), &m.train_batch(), 0.025).unwrap();
        assert!((s.slope - 9.8f64.sqrt()).abs() < 1e-12);
        assert!((s.slope - 3.130495).abs() < 1e-6);
        assert!((s.metric_det - 10.8).abs() < 1e-12);
        assert!((s.normal_z - 0.304290).abs() < 1e-6);
        assert!((s.angle - 9.8f64.sqrt().atan()).abs() < 1e-15);
        assert!((s.angle - 1.2616).abs() < 1e-4);
        assert!((s.modified_loss - 1.04125).abs() < 1e-12);
    }

    #[test]
    fn plateau_geometry() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let s = geometry_snapshot(&m, &p(&[0.6, 1.0]), &m.train_batch(), 0.1).unwrap();
        assert_eq!(
            (s.slope, s.angle, s.metric_det, s.normal_z),
            (0.0, 0.0, 1.0, 1.0)
        );
    }

    #[test]
    fn norm_bound_hand_example() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let cfg = RunConfig::new(0.025, 1).with_eval_every(1);
        let traj = run_gd(&m, &p(&[2.8, 3.5]), &m.train_batch(), &cfg).unwrap();
        let s = traj.steps[0];
        assert!((s.norm_before - 4.48219).abs() < 1e-5);
        assert!((s.norm_after - 3.483785).abs() < 1e-6);
        assert!((0.025 * s.direction_norm - 1.03090).abs() < 1e-5);
        assert!(check_norm_bound(&traj, 0.025).is_empty());
    }

    #[test]
    fn norm_bound_detects_a_forged_violation() {
        let m = make_bilinear(1.0, 0.6).unwrap();
        let cfg = RunConfig::new(0.025, 3);
        let mut traj = run_gd(&m, &p(&[2.8, 3.5]), &m.train_batch(), &cfg).unwrap();
        traj.steps[1].norm_after += 10.0;
        let v = check_norm_bound(&traj, 0.025);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].step, 1);
    }

    #[test]
    fn ntk_scalar_example() {
        let model = make_least_squares(FeatureMap::Linear { input_dim: 1 }, 1, 0).unwrap();
        let rec = ntk_modified_loss(&model, &p(&[3.0]), &Batch::point(1.0, 0.0), 0.1).unwrap();
        assert_eq!(rec.loss, 9.0);
        assert_eq!(rec.kernel[[0, 0]], 1.0);
        assert!((rec.modified_loss - 9.9).abs() < 1e-12);
        let direct = modified_loss(&model, &p(&[3.0]), 0.1, &Batch::point(1.0, 0.0)).unwrap();
        assert!((direct - 9.9).abs() < 1e-12);
    }

    #[test]
    fn ntk_exact_fit_is_zero() {
        let model = make_least_squares(FeatureMap::Linear { input_dim: 1 }, 1, 0).unwrap();
        let rec = ntk_modified_loss(&model, &p(&[2.0]), &Batch::point(1.5, 3.0), 0.5).unwrap();
        assert_eq!(rec.modified_loss, 0.0);
    }

    #[test]
    fn ntk_two_point_kernel_is_symmetric_psd() {
        let model = make_least_squares(FeatureMap::Tanh { input_dim: 1, hidden: 2 }, 1, 4).unwrap();
        let theta = model.initial_params();
        let batch = Batch::regression(&[vec![0.5], vec![-1.0]], &[vec![0.2], vec![0.1]]).unwrap();
        let rec = ntk_modified_loss(&model, &theta, &batch, 0.1).unwrap();
        let k = &rec.kernel;
        assert_eq!(k.dim(), (2, 2));
        assert!((k[[0, 1]] - k[[1, 0]]).abs() < 1e-15);
        assert!(k[[0, 0]] >= 0.0 && k[[1, 1]] >= 0.0);
        assert!(k[[0, 0]] * k[[1, 1]] - k[[0, 1]] * k[[1, 0]] >= -1e-12);
    }

    #[test]
    fn ntk_rejects_other_models() {
        let m = make_mlp(&[2, 2], Activation::Relu, 0).unwrap();
        let theta = m.initial_params();
        let batch = Batch::regression(&[vec![1.0, 2.0]], &[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            ntk_modified_loss(&m, &theta, &batch, 0.1),
            Err(Error::NotLeastSquares(_))
        ));
    }
}
