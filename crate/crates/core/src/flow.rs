//! Discrete gradient descent and the continuous flows it is compared against.
//!
//! Gradient descent `θ_{n+1} = θ_n − h∇E(θ_n)` is the explicit Euler method
//! for the gradient flow `θ̇ = −∇E`. Its one-step error against that flow is
//! `O(h²)`; against the flow of the first-order modified field
//! `−∇E − (h/2)H∇E = −∇(E + (h/4)‖∇E‖²)` it is `O(h³)`.

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsSnapshot;
use crate::model::{eval_hvp, eval_loss_grad, Batch, LossModel, ParamVector};
use crate::stats::{linear_fit, LinearFit};

/// Loss magnitude above which a run is declared diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Minimum coefficient of determination accepted by the order fit.
pub const MIN_ORDER_FIT_R2: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The fixed iteration budget was exhausted.
    Completed,
    /// The update direction vanished below the configured tolerance.
    Converged,
    Diverged,
    /// A physical-time or accuracy-based criterion fired.
    StoppedByCriterion,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Converged => "converged",
            Termination::Diverged => "diverged",
            Termination::StoppedByCriterion => "stopped_by_criterion",
        }
    }
}

/// One recorded snapshot of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iteration: usize,
    /// Physical time `n·h`.
    pub time: f64,
    pub loss: f64,
    pub r_ig: f64,
    pub slope: f64,
    pub param_norm: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Explicitly regularized loss `E_μ`, for EGR runs.
    pub regularized_loss: Option<f64>,
    pub params: Option<ParamVector>,
}

/// Norms around one discrete update, kept for every update of a descent run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub norm_before: f64,
    pub norm_after: f64,
    /// Norm of the update direction; for plain gradient descent this is `slope(θ_n)`.
    pub direction_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Step size defining physical time and `λ = hm/4`.
    pub h: f64,
    pub param_count: usize,
    pub rows: Vec<TrajectoryRow>,
    /// Per-update norm ledger; empty for continuous flows.
    pub steps: Vec<StepRecord>,
    pub final_params: ParamVector,
    pub termination: Termination,
    pub divergence: Option<String>,
}

impl Trajectory {
    pub fn last_row(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn is_diverged(&self) -> bool {
        self.termination == Termination::Diverged
    }
}

/// One gradient descent update `θ − h∇E(θ)`.
pub fn gd_step(
    model: &dyn LossModel,
    theta: &ParamVector,
    h: f64,
    batch: &Batch,
) -> Result<ParamVector> {
    check_step(h)?;
    let (_, g) = eval_loss_grad(model, theta, batch)?;
    theta.add_scaled(-h, &g)
}

fn check_step(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

pub(crate) struct DescentState {
    pub loss: f64,
    pub grad_norm_sq: f64,
    /// Update direction; the step is `θ − h·direction`.
    pub direction: ParamVector,
    pub regularized_loss: Option<f64>,
}

/// Shared loop for full-batch descent on `E` or a regularized objective.
pub(crate) fn descend(
    model: &dyn LossModel,
    theta0: &ParamVector,
    batch: &Batch,
    config: &RunConfig,
    mut evaluate: impl FnMut(&ParamVector) -> Result<DescentState>,
) -> Result<Trajectory> {
    config.validate()?;
    if theta0.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            what: "initial parameters",
            expected: model.param_count(),
            actual: theta0.len(),
        });
    }
    model.check_batch(batch)?;
    let budget = config.iteration_budget()?;
    let h = config.h;
    let m = model.param_count();
    let mut rows = Vec::new();
    let mut steps = Vec::with_capacity(budget.min(1 << 22));
    let mut theta = theta0.clone();
    let mut termination = if matches!(config.stopping, crate::config::Stopping::FixedIterations) {
        Termination::Completed
    } else {
        Termination::StoppedByCriterion
    };
    let mut divergence = None;

    for n in 0..=budget {
        let state = match evaluate(&theta).and_then(|s| {
            if s.loss.abs() > DIVERGENCE_THRESHOLD {
                Err(Error::diverged(format!(
                    "loss {} exceeds threshold {DIVERGENCE_THRESHOLD:e}",
                    s.loss
                )))
            } else {
                Ok(s)
            }
        }) {
            Ok(s) => s,
            Err(e) if e.is_divergence() => {
                termination = Termination::Diverged;
                divergence = Some(e.at_iteration(n).to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let converged = config
            .converge_tol
            .is_some_and(|tol| state.direction.norm() < tol);
        if n % config.eval_every == 0 || n == budget || converged {
            let snap = MetricsSnapshot::from_gradient_norm_sq(state.loss, state.grad_norm_sq, m, h);
            rows.push(TrajectoryRow {
                iteration: n,
                time: n as f64 * h,
                loss: state.loss,
                r_ig: snap.r_ig,
                slope: snap.slope,
                param_norm: theta.norm(),
                train_accuracy: None,
                test_accuracy: None,
                regularized_loss: state.regularized_loss,
                params: config.record_params.then(|| theta.clone()),
            });
        }
        if converged {
            termination = Termination::Converged;
            break;
        }
        if n == budget {
            break;
        }
        match theta.add_scaled(-h, &state.direction) {
            Ok(next) => {
                steps.push(StepRecord {
                    norm_before: theta.norm(),
                    norm_after: next.norm(),
                    direction_norm: state.direction.norm(),
                });
                theta = next;
            }
            Err(e) => {
                termination = Termination::Diverged;
                divergence = Some(e.at_iteration(n + 1).to_string());
                break;
            }
        }
    }

    Ok(Trajectory {
        h,
        param_count: m,
        rows,
        steps,
        final_params: theta,
        termination,
        divergence,
    })
}

/// Full-batch gradient descent until the configured stopping rule fires.
///
/// Divergence (non-finite values or `|E| > 1e12`) ends the run with
/// [`Termination::Diverged`]; the partial trajectory is returned.
pub fn run_gd(
    model: &dyn LossModel,
    theta0: &ParamVector,
    batch: &Batch,
    config: &RunConfig,
) -> Result<Trajectory> {
    descend(model, theta0, batch, config, |theta| {
        let (loss, g) = eval_loss_grad(model, theta, batch)?;
        Ok(DescentState {
            loss,
            grad_norm_sq: g.norm_sq(),
            direction: g,
            regularized_loss: None,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldOrder {
    ExactFlow,
    ModifiedFirstOrder,
}

/// A vector field `θ ↦ θ̇`.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn velocity(&self, theta: &ParamVector) -> Result<ParamVector>;

    fn order(&self) -> FieldOrder;
}

/// The gradient flow of `E`, or its first-order modified counterpart.
#[derive(Debug, Clone, Copy)]
pub struct GradientField<'a> {
    model: &'a dyn LossModel,
    batch: &'a Batch,
    /// Zero for the exact flow.
    h: f64,
    order: FieldOrder,
}

/// The exact gradient flow field `−∇E`.
pub fn exact_field<'a>(model: &'a dyn LossModel, batch: &'a Batch) -> GradientField<'a> {
    GradientField {
        model,
        batch,
        h: 0.0,
        order: FieldOrder::ExactFlow,
    }
}

/// The first-order modified field `−∇E − (h/2)H∇E`, i.e. `−∇Ẽ` truncated after `f₁`.
pub fn modified_field<'a>(
    model: &'a dyn LossModel,
    batch: &'a Batch,
    h: f64,
) -> Result<GradientField<'a>> {
    check_step(h)?;
    Ok(GradientField {
        model,
        batch,
        h,
        order: FieldOrder::ModifiedFirstOrder,
    })
}

impl GradientField<'_> {
    pub fn step_size(&self) -> f64 {
        self.h
    }
}

impl VectorField for GradientField<'_> {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn velocity(&self, theta: &ParamVector) -> Result<ParamVector> {
        let (_, g) = eval_loss_grad(self.model, theta, self.batch)?;
        let v: Vec<f64> = match self.order {
            FieldOrder::ExactFlow => g.iter().map(|gi| -gi).collect(),
            FieldOrder::ModifiedFirstOrder => {
                let hg = eval_hvp(self.model, theta, &g, self.batch)?;
                g.iter()
                    .zip(hg.iter())
                    .map(|(gi, hgi)| -gi - 0.5 * self.h * hgi)
                    .collect()
            }
        };
        ParamVector::computed(v, "vector field")
    }

    fn order(&self) -> FieldOrder {
        self.order
    }
}

fn rk4_step(field: &dyn VectorField, theta: &ParamVector, dt: f64) -> Result<ParamVector> {
    let k1 = field.velocity(theta)?;
    let k2 = field.velocity(&theta.add_scaled(0.5 * dt, &k1)?)?;
    let k3 = field.velocity(&theta.add_scaled(0.5 * dt, &k2)?)?;
    let k4 = field.velocity(&theta.add_scaled(dt, &k3)?)?;
    let next: Vec<f64> = theta
        .iter()
        .enumerate()
        .map(|(i, t)| t + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    ParamVector::computed(next, "RK4 state")
}

/// Classical fourth-order integration of `field` from `theta0`, returning the
/// state at each of `sample_times` (non-decreasing, ≥ 0).
///
/// Each interval between consecutive samples is split into the fewest equal
/// substeps no longer than `h_ref`.
pub fn integrate_reference(
    field: &dyn VectorField,
    theta0: &ParamVector,
    sample_times: &[f64],
    h_ref: f64,
) -> Result<Vec<ParamVector>> {
    if !(h_ref.is_finite() && h_ref > 0.0) {
        return Err(Error::invalid(format!(
            "reference step must be positive, got {h_ref}"
        )));
    }
    if theta0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: field.dim(),
            actual: theta0.len(),
        });
    }
    let mut out = Vec::with_capacity(sample_times.len());
    let mut t = 0.0;
    let mut state = theta0.clone();
    for &target in sample_times {
        if !(target.is_finite() && target >= t) {
            return Err(Error::invalid(
                "sample times must be finite, non-negative and non-decreasing",
            ));
        }
        let span = target - t;
        if span > 0.0 {
            let substeps = (span / h_ref).ceil().max(1.0) as usize;
            let dt = span / substeps as f64;
            for _ in 0..substeps {
                state = rk4_step(field, &state, dt)?;
            }
        }
        t = target;
        out.push(state.clone());
    }
    Ok(out)
}

/// Samples a reference flow at the gradient descent grid `n·h`
/// (`n = 0, eval_every, 2·eval_every, …, steps`) and records metrics of
/// `model` at each sample.
#[allow(clippy::too_many_arguments)]
pub fn flow_trajectory(
    field: &dyn VectorField,
    model: &dyn LossModel,
    batch: &Batch,
    theta0: &ParamVector,
    h: f64,
    steps: usize,
    eval_every: usize,
    h_ref: f64,
) -> Result<Trajectory> {
    check_step(h)?;
    if eval_every == 0 {
        return Err(Error::invalid("eval_every must be at least 1"));
    }
    let mut iterations: Vec<usize> = (0..=steps).step_by(eval_every).collect();
    if iterations.last() != Some(&steps) {
        iterations.push(steps);
    }
    let m = model.param_count();
    let mut rows = Vec::with_capacity(iterations.len());
    let mut termination = Termination::StoppedByCriterion;
    let mut divergence = None;
    let mut state = theta0.clone();
    let mut t = 0.0;
    for &n in &iterations {
        let target = n as f64 * h;
        let advanced = integrate_reference(field, &state, &[target - t], h_ref)
            .and_then(|mut s| {
                let s = s.pop().expect("one sample");
                let (loss, g) = eval_loss_grad(model, &s, batch)?;
                if loss.abs() > DIVERGENCE_THRESHOLD {
                    return Err(Error::diverged(format!("loss {loss} exceeds threshold")));
                }
                Ok((s, loss, g))
            });
        let (s, loss, g) = match advanced {
            Ok(v) => v,
            Err(e) if e.is_divergence() => {
                termination = Termination::Diverged;
                divergence = Some(e.at_iteration(n).to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let snap = MetricsSnapshot::from_gradient_norm_sq(loss, g.norm_sq(), m, h);
        rows.push(TrajectoryRow {
            iteration: n,
            time: target,
            loss,
            r_ig: snap.r_ig,
            slope: snap.slope,
            param_norm: s.norm(),
            train_accuracy: None,
            test_accuracy: None,
            regularized_loss: None,
            params: Some(s.clone()),
        });
        state = s;
        t = target;
    }
    Ok(Trajectory {
        h,
        param_count: m,
        rows,
        steps: Vec::new(),
        final_params: state,
        termination,
        divergence,
    })
}

/// Largest distance between matching recorded states of two trajectories
/// (rows matched by iteration index).
pub fn max_matched_distance(a: &Trajectory, b: &Trajectory) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut j = 0;
    for ra in &a.rows {
        while j < b.rows.len() && b.rows[j].iteration < ra.iteration {
            j += 1;
        }
        let Some(rb) = b.rows.get(j) else { break };
        if rb.iteration != ra.iteration {
            continue;
        }
        let (Some(pa), Some(pb)) = (&ra.params, &rb.params) else {
            continue;
        };
        let d = pa.distance(pb);
        best = Some(best.map_or(d, |x: f64| x.max(d)));
    }
    best
}

/// One-step errors of gradient descent at a single step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalErrorRow {
    pub h: f64,
    /// `‖θ₁ − θ(h)‖` against the exact gradient flow.
    pub error_exact: f64,
    /// `‖θ₁ − θ̃(h)‖` against the first-order modified flow.
    pub error_modified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub rows: Vec<LocalErrorRow>,
    pub exact_fit: LinearFit,
    pub modified_fit: LinearFit,
}

impl OrderEstimate {
    pub fn order_exact(&self) -> f64 {
        self.exact_fit.slope
    }

    pub fn order_modified(&self) -> f64 {
        self.modified_fit.slope
    }
}

/// One-step errors for every `h` in `h_grid`; reference flows use `h_ref = h/100`.
pub fn local_errors(
    model: &dyn LossModel,
    batch: &Batch,
    theta0: &ParamVector,
    h_grid: &[f64],
) -> Result<Vec<LocalErrorRow>> {
    h_grid
        .iter()
        .map(|&h| {
            let step = gd_step(model, theta0, h, batch)?;
            let h_ref = h / 100.0;
            let exact = integrate_reference(&exact_field(model, batch), theta0, &[h], h_ref)?;
            let modified =
                integrate_reference(&modified_field(model, batch, h)?, theta0, &[h], h_ref)?;
            Ok(LocalErrorRow {
                h,
                error_exact: step.distance(&exact[0]),
                error_modified: step.distance(&modified[0]),
            })
        })
        .collect()
}

/// Fits `log(error) = order·log(h) + c` against both flows.
///
/// The grid needs at least four step sizes spanning a decade. A fit is
/// rejected when any error is zero or its `R²` is below [`MIN_ORDER_FIT_R2`].
pub fn estimate_local_order(
    model: &dyn LossModel,
    batch: &Batch,
    theta0: &ParamVector,
    h_grid: &[f64],
) -> Result<OrderEstimate> {
    if h_grid.len() < 4 {
        return Err(Error::invalid("order fit needs at least four step sizes"));
    }
    let lo = h_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = h_grid.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0 && hi / lo >= 10.0) {
        return Err(Error::invalid(
            "order fit step sizes must be positive and span at least one decade",
        ));
    }
    let rows = local_errors(model, batch, theta0, h_grid)?;
    let log_h: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let fit = |errors: Vec<f64>, which: &str| -> Result<LinearFit> {
        if errors.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::FitRejected(format!(
                "{which}: zero local error (starting point is a fixed point?)"
            )));
        }
        let log_e: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let f = linear_fit(&log_h, &log_e)
            .ok_or_else(|| Error::FitRejected(format!("{which}: degenerate data")))?;
        if f.r_squared < MIN_ORDER_FIT_R2 {
            return Err(Error::FitRejected(format!(
                "{which}: R² = {} below {MIN_ORDER_FIT_R2}",
                f.r_squared
            )));
        }
        Ok(f)
    };
    let exact_fit = fit(rows.iter().map(|r| r.error_exact).collect(), "exact flow")?;
    let modified_fit = fit(rows.iter().map(|r| r.error_modified).collect(), "modified flow")?;
    Ok(OrderEstimate {
        rows,
        exact_fit,
        modified_fit,
    })
}
