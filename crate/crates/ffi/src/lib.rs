//! C interface to `igr-core`.
//!
//! Models, batches and trajectories are opaque heap handles created by the
//! `*_new` / `igr_run_*` functions and released with the matching `*_free`.
//! Every fallible function returns an `IGR_*` status code; on failure
//! [`igr_last_error`] describes the error of the calling thread. Output
//! values are written through caller-provided pointers and are untouched on
//! failure. Panics never cross the boundary (`IGR_PANIC`).

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use igr_core::config::RunConfig;
use igr_core::egr::{run_egr, EgrConfig};
use igr_core::flow::{run_gd, Termination, Trajectory};
use igr_core::metrics::{geometry_snapshot, modified_loss, r_ig};
use igr_core::model::{
    eval_grad, eval_hvp, eval_loss, make_bilinear, make_least_squares, make_mlp, Activation,
    FeatureMap,
};
use igr_core::{Batch, Error, LossModel, ParamVector, Targets};
use ndarray::Array2;

pub const IGR_OK: i32 = 0;
pub const IGR_INVALID_ARGUMENT: i32 = 1;
pub const IGR_DIMENSION_MISMATCH: i32 = 2;
pub const IGR_DIVERGENCE: i32 = 3;
pub const IGR_FIT_REJECTED: i32 = 4;
pub const IGR_NOT_LEAST_SQUARES: i32 = 5;
pub const IGR_IDX: i32 = 6;
pub const IGR_CONFIG: i32 = 7;
pub const IGR_IO: i32 = 8;
pub const IGR_NULL_POINTER: i32 = 9;
pub const IGR_PANIC: i32 = 10;

pub const IGR_ACTIVATION_RELU: i32 = 0;
pub const IGR_ACTIVATION_TANH: i32 = 1;

pub const IGR_TERMINATION_COMPLETED: i32 = 0;
pub const IGR_TERMINATION_CONVERGED: i32 = 1;
pub const IGR_TERMINATION_DIVERGED: i32 = 2;
pub const IGR_TERMINATION_STOPPED_BY_CRITERION: i32 = 3;

/// A differentiable loss.
pub struct IgrModel(Box<dyn LossModel>);

/// Inputs with labels or regression targets.
pub struct IgrBatch(Batch);

/// Recorded rows and final state of a descent run.
pub struct IgrTrajectory(Trajectory);

/// Loss-surface metrics at one point.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IgrGeometry {
    pub loss: f64,
    pub r_ig: f64,
    pub lambda: f64,
    pub modified_loss: f64,
    pub slope: f64,
    pub angle: f64,
    pub metric_det: f64,
    pub normal_z: f64,
}

/// One trajectory snapshot.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IgrRow {
    pub iteration: u64,
    pub time: f64,
    pub loss: f64,
    pub r_ig: f64,
    pub slope: f64,
    pub param_norm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => IGR_INVALID_ARGUMENT,
        Error::DimensionMismatch { .. } => IGR_DIMENSION_MISMATCH,
        Error::Divergence { .. } => IGR_DIVERGENCE,
        Error::FitRejected(_) => IGR_FIT_REJECTED,
        Error::NotLeastSquares(_) => IGR_NOT_LEAST_SQUARES,
        Error::Idx { .. } => IGR_IDX,
        Error::Config(_) => IGR_CONFIG,
        Error::Io { .. } => IGR_IO,
    }
}

/// Failure carried back to the boundary.
struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IGR_NULL_POINTER, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IGR_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            IGR_PANIC
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn params(model: &IgrModel, theta: *const f64, m: usize) -> Result<ParamVector, Fail> {
    if m != model.0.param_count() {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: model.0.param_count(),
            actual: m,
        }
        .into());
    }
    Ok(ParamVector::new(slice(theta, m, "theta")?.to_vec())?)
}

unsafe fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn igr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Two-parameter model `E(a, b) = (y − abx)²/2`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn igr_bilinear_new(x: f64, y: f64, out: *mut *mut IgrModel) -> i32 {
    guard(|| boxed(out, IgrModel(Box::new(make_bilinear(x, y)?))))
}

/// Softmax cross-entropy MLP with layer sizes `widths[0..n_widths]`.
///
/// # Safety
/// `widths` must point to `n_widths` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_mlp_new(
    widths: *const usize,
    n_widths: usize,
    activation: i32,
    init_seed: u64,
    out: *mut *mut IgrModel,
) -> i32 {
    guard(|| {
        let widths = slice(widths, n_widths, "widths")?;
        let act = match activation {
            IGR_ACTIVATION_RELU => Activation::Relu,
            IGR_ACTIVATION_TANH => Activation::Tanh,
            other => return Err(Fail(IGR_INVALID_ARGUMENT, format!("unknown activation {other}"))),
        };
        boxed(out, IgrModel(Box::new(make_mlp(widths, act, init_seed)?)))
    })
}

/// Sum-of-squares model. `hidden == 0` selects the linear map `Θx`,
/// otherwise a one-hidden-layer tanh network.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_least_squares_new(
    input_dim: usize,
    hidden: usize,
    output_dim: usize,
    init_seed: u64,
    out: *mut *mut IgrModel,
) -> i32 {
    guard(|| {
        let map = if hidden == 0 {
            FeatureMap::Linear { input_dim }
        } else {
            FeatureMap::Tanh { input_dim, hidden }
        };
        boxed(out, IgrModel(Box::new(make_least_squares(map, output_dim, init_seed)?)))
    })
}

/// Number of parameters, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn igr_model_param_count(model: *const IgrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// # Safety
/// `model` must be NULL or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn igr_model_free(model: *mut IgrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classification batch: `inputs` is row-major `n × d`, labels in `[0, classes)`.
///
/// # Safety
/// `inputs` must hold `n·d` values and `labels` `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_batch_classes(
    inputs: *const f64,
    n: usize,
    d: usize,
    labels: *const usize,
    classes: usize,
    out: *mut *mut IgrBatch,
) -> i32 {
    guard(|| {
        let x = slice(inputs, n * d, "inputs")?;
        let labels = slice(labels, n, "labels")?.to_vec();
        let x = Array2::from_shape_vec((n, d), x.to_vec())
            .map_err(|e| Fail(IGR_INVALID_ARGUMENT, e.to_string()))?;
        boxed(out, IgrBatch(Batch::new(x, Targets::Classes { labels, classes })?))
    })
}

/// Regression batch: row-major `n × d` inputs and `n × c` targets.
///
/// # Safety
/// `inputs` must hold `n·d` values and `targets` `n·c`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_batch_regression(
    inputs: *const f64,
    n: usize,
    d: usize,
    targets: *const f64,
    c: usize,
    out: *mut *mut IgrBatch,
) -> i32 {
    guard(|| {
        let shape = |p: *const f64, cols: usize, what: &str| -> Result<Array2<f64>, Fail> {
            let v = slice(p, n * cols, what)?.to_vec();
            Array2::from_shape_vec((n, cols), v).map_err(|e| Fail(IGR_INVALID_ARGUMENT, e.to_string()))
        };
        let batch = Batch::new(shape(inputs, d, "inputs")?, Targets::Values(shape(targets, c, "targets")?))?;
        boxed(out, IgrBatch(batch))
    })
}

/// # Safety
/// `batch` must be NULL or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn igr_batch_free(batch: *mut IgrBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// `E(θ)`.
///
/// # Safety
/// Handles must be live, `theta` must hold `m` values, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_loss(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta: *const f64,
    m: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta, m)?;
        write(out, eval_loss(model.0.as_ref(), &t, &batch.0)?, "out")
    })
}

/// `∇E(θ)` into `grad_out[0..m]`.
///
/// # Safety
/// Handles must be live; `theta` and `grad_out` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn igr_gradient(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta: *const f64,
    m: usize,
    grad_out: *mut f64,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta, m)?;
        let g = eval_grad(model.0.as_ref(), &t, &batch.0)?;
        slice_mut(grad_out, m, "grad_out")?.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Hessian-vector product `H(θ)v` into `out[0..m]`.
///
/// # Safety
/// Handles must be live; `theta`, `v` and `out` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn igr_hvp(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta: *const f64,
    v: *const f64,
    m: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta, m)?;
        let v = params(model, v, m)?;
        let hv = eval_hvp(model.0.as_ref(), &t, v.as_slice(), &batch.0)?;
        slice_mut(out, m, "out")?.copy_from_slice(hv.as_slice());
        Ok(())
    })
}

/// `R_IG(θ) = ‖∇E‖²/m`.
///
/// # Safety
/// Handles must be live, `theta` must hold `m` values, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_r_ig(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta: *const f64,
    m: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta, m)?;
        write(out, r_ig(model.0.as_ref(), &t, &batch.0)?, "out")
    })
}

/// `E + (h/4)‖∇E‖²`.
///
/// # Safety
/// Handles must be live, `theta` must hold `m` values, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_modified_loss(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta: *const f64,
    m: usize,
    h: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta, m)?;
        write(out, modified_loss(model.0.as_ref(), &t, h, &batch.0)?, "out")
    })
}

/// Loss-surface geometry at `θ` for learning rate `h`.
///
/// # Safety
/// Handles must be live, `theta` must hold `m` values, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_geometry(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta: *const f64,
    m: usize,
    h: f64,
    out: *mut IgrGeometry,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta, m)?;
        let s = geometry_snapshot(model.0.as_ref(), &t, &batch.0, h)?;
        write(
            out,
            IgrGeometry {
                loss: s.loss,
                r_ig: s.r_ig,
                lambda: s.lambda,
                modified_loss: s.modified_loss,
                slope: s.slope,
                angle: s.angle,
                metric_det: s.metric_det,
                normal_z: s.normal_z,
            },
            "out",
        )
    })
}

/// Full-batch gradient descent for `max_iterations` steps, recording every
/// `eval_every` iterations. A diverged run still returns `IGR_OK` with a
/// trajectory whose termination is `IGR_TERMINATION_DIVERGED`.
///
/// # Safety
/// Handles must be live, `theta0` must hold `m` values, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_run_gd(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta0: *const f64,
    m: usize,
    h: f64,
    max_iterations: usize,
    eval_every: usize,
    out: *mut *mut IgrTrajectory,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta0, m)?;
        let cfg = RunConfig::new(h, max_iterations).with_eval_every(eval_every);
        boxed(out, IgrTrajectory(run_gd(model.0.as_ref(), &t, &batch.0, &cfg)?))
    })
}

/// Gradient descent on `E + μ‖∇E‖²`; stops early once the update direction
/// falls below `1e-10`.
///
/// # Safety
/// Handles must be live, `theta0` must hold `m` values, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn igr_run_egr(
    model: *const IgrModel,
    batch: *const IgrBatch,
    theta0: *const f64,
    m: usize,
    mu: f64,
    h: f64,
    max_iterations: usize,
    eval_every: usize,
    out: *mut *mut IgrTrajectory,
) -> i32 {
    guard(|| {
        let (model, batch) = (deref(model, "model")?, deref(batch, "batch")?);
        let t = params(model, theta0, m)?;
        let cfg = EgrConfig::new(mu, RunConfig::new(h, max_iterations).with_eval_every(eval_every));
        boxed(out, IgrTrajectory(run_egr(model.0.as_ref(), &t, &batch.0, &cfg)?))
    })
}

/// Number of recorded rows, or 0 for a NULL handle.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn igr_trajectory_rows(traj: *const IgrTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.rows.len())
}

/// # Safety
/// `traj` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn igr_trajectory_row(traj: *const IgrTrajectory, index: usize, out: *mut IgrRow) -> i32 {
    guard(|| {
        let t = deref(traj, "trajectory")?;
        let r = t.0.rows.get(index).ok_or_else(|| {
            Fail(
                IGR_INVALID_ARGUMENT,
                format!("row {index} out of range ({} rows)", t.0.rows.len()),
            )
        })?;
        write(
            out,
            IgrRow {
                iteration: r.iteration as u64,
                time: r.time,
                loss: r.loss,
                r_ig: r.r_ig,
                slope: r.slope,
                param_norm: r.param_norm,
            },
            "out",
        )
    })
}

/// Final parameters into `out[0..m]`.
///
/// # Safety
/// `traj` must be live and `out` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn igr_trajectory_final_params(traj: *const IgrTrajectory, out: *mut f64, m: usize) -> i32 {
    guard(|| {
        let t = deref(traj, "trajectory")?;
        let p = t.0.final_params.as_slice();
        if p.len() != m {
            return Err(Error::DimensionMismatch {
                what: "output buffer",
                expected: p.len(),
                actual: m,
            }
            .into());
        }
        slice_mut(out, m, "out")?.copy_from_slice(p);
        Ok(())
    })
}

/// One of the `IGR_TERMINATION_*` values, or -1 for a NULL handle.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn igr_trajectory_termination(traj: *const IgrTrajectory) -> i32 {
    match traj.as_ref().map(|t| t.0.termination) {
        Some(Termination::Completed) => IGR_TERMINATION_COMPLETED,
        Some(Termination::Converged) => IGR_TERMINATION_CONVERGED,
        Some(Termination::Diverged) => IGR_TERMINATION_DIVERGED,
        Some(Termination::StoppedByCriterion) => IGR_TERMINATION_STOPPED_BY_CRITERION,
        None => -1,
    }
}

/// # Safety
/// `traj` must be NULL or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn igr_trajectory_free(traj: *mut IgrTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}
