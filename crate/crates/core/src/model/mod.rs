//! Differentiable loss models.
//!
//! Every model exposes the loss `E(θ)`, its gradient and exact Hessian-vector
//! products on a [`Batch`]. The public entry points [`eval_loss`], [`eval_grad`]
//! and [`eval_hvp`] validate shapes and turn non-finite results into
//! [`Error::Divergence`]; the [`LossModel`] trait methods are the raw kernels.

mod bilinear;
mod dense;
mod least_squares;

pub use bilinear::{make_bilinear, Bilinear};
pub use dense::{make_mlp, Activation, Head, Mlp};
pub use least_squares::{make_least_squares, FeatureMap, LeastSquares};

use std::fmt;
use std::ops::Deref;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};

/// Flat vector of model parameters `θ ∈ ℝ^m`.
///
/// Constructed values are always non-empty and finite.
#[derive(Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps user-supplied values, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "parameter vector entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(ParamVector(values))
    }

    /// Wraps a computed vector; non-finite entries are a divergence signal.
    pub(crate) fn computed(values: Vec<f64>, what: &str) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::diverged(format!(
                "{what} entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(m: usize) -> Self {
        ParamVector(vec![0.0; m.max(1)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// `self + alpha * other`, checked for finiteness.
    pub fn add_scaled(&self, alpha: f64, other: &[f64]) -> Result<Self> {
        debug_assert_eq!(self.len(), other.len());
        let out = self
            .0
            .iter()
            .zip(other)
            .map(|(a, b)| a + alpha * b)
            .collect();
        ParamVector::computed(out, "parameter update")
    }

    /// Euclidean distance to another vector of the same length.
    pub fn distance(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 {
            f.debug_tuple("ParamVector").field(&self.0).finish()
        } else {
            write!(f, "ParamVector(len={}, norm={})", self.0.len(), self.norm())
        }
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

/// Supervision attached to a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class labels in `[0, classes)`.
    Classes { labels: Vec<usize>, classes: usize },
    /// Real-valued targets, one row per input row.
    Values(Array2<f64>),
}

/// Row-aligned inputs and targets, `n ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    targets: Targets,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Targets) -> Result<Self> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::invalid("batch must contain at least one row"));
        }
        match &targets {
            Targets::Classes { labels, classes } => {
                if labels.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "batch labels",
                        expected: n,
                        actual: labels.len(),
                    });
                }
                if let Some(bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::invalid(format!(
                        "label {bad} outside [0, {classes})"
                    )));
                }
            }
            Targets::Values(y) => {
                if y.nrows() != n {
                    return Err(Error::DimensionMismatch {
                        what: "batch targets",
                        expected: n,
                        actual: y.nrows(),
                    });
                }
            }
        }
        Ok(Batch { inputs, targets })
    }

    /// A single scalar regression point `(x, y)`.
    pub fn point(x: f64, y: f64) -> Self {
        Batch {
            inputs: Array2::from_elem((1, 1), x),
            targets: Targets::Values(Array2::from_elem((1, 1), y)),
        }
    }

    /// Regression batch from row slices.
    pub fn regression(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        let to_array = |rows: &[Vec<f64>], what: &'static str| -> Result<Array2<f64>> {
            let cols = rows.first().map_or(0, Vec::len);
            let mut flat = Vec::with_capacity(rows.len() * cols);
            for r in rows {
                if r.len() != cols {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: cols,
                        actual: r.len(),
                    });
                }
                flat.extend_from_slice(r);
            }
            Array2::from_shape_vec((rows.len(), cols), flat)
                .map_err(|e| Error::invalid(e.to_string()))
        };
        Batch::new(
            to_array(inputs, "regression inputs")?,
            Targets::Values(to_array(targets, "regression targets")?),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn input_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Copies the given rows, in order, into a new batch.
    pub fn select(&self, rows: &[usize]) -> Result<Batch> {
        let inputs = self.inputs.select(ndarray::Axis(0), rows);
        let targets = match &self.targets {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                classes: *classes,
            },
            Targets::Values(y) => Targets::Values(y.select(ndarray::Axis(0), rows)),
        };
        Batch::new(inputs, targets)
    }
}

/// Serializable description of a model, used in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Bilinear {
        x: f64,
        y: f64,
    },
    Mlp {
        widths: Vec<usize>,
        activation: Activation,
        init_seed: u64,
    },
    LeastSquares {
        feature_map: FeatureMap,
        output_dim: usize,
        init_seed: u64,
    },
}

/// A twice-differentiable training objective over a flat parameter vector.
///
/// Implementations may assume `theta.len() == self.param_count()` and that
/// `batch` has the shape the model expects; the `eval_*` functions check this.
pub trait LossModel: Send + Sync + fmt::Debug {
    fn param_count(&self) -> usize;

    fn spec(&self) -> ModelSpec;

    /// Rejects batches the model cannot consume.
    fn check_batch(&self, batch: &Batch) -> Result<()>;

    fn value(&self, theta: &[f64], batch: &Batch) -> f64;

    fn value_and_gradient(&self, theta: &[f64], batch: &Batch) -> (f64, Vec<f64>);

    fn hessian_vector(&self, theta: &[f64], v: &[f64], batch: &Batch) -> Vec<f64>;

    fn as_least_squares(&self) -> Option<&LeastSquares> {
        None
    }
}

fn check_params(model: &dyn LossModel, theta: &[f64], what: &'static str) -> Result<()> {
    if theta.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            what,
            expected: model.param_count(),
            actual: theta.len(),
        });
    }
    Ok(())
}

/// `E(θ)` on `batch`.
pub fn eval_loss(model: &dyn LossModel, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    check_params(model, theta, "parameter vector")?;
    model.check_batch(batch)?;
    let e = model.value(theta, batch);
    if !e.is_finite() {
        return Err(Error::diverged(format!("loss is not finite ({e})")));
    }
    Ok(e)
}

/// `∇E(θ)` on `batch`.
pub fn eval_grad(model: &dyn LossModel, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    eval_loss_grad(model, theta, batch).map(|(_, g)| g)
}

/// `(E(θ), ∇E(θ))` from a single forward/backward pass.
pub fn eval_loss_grad(
    model: &dyn LossModel,
    theta: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_params(model, theta, "parameter vector")?;
    model.check_batch(batch)?;
    let (e, g) = model.value_and_gradient(theta, batch);
    if !e.is_finite() {
        return Err(Error::diverged(format!("loss is not finite ({e})")));
    }
    Ok((e, ParamVector::computed(g, "gradient")?))
}

/// Hessian-vector product `H(θ)v` on `batch`.
pub fn eval_hvp(
    model: &dyn LossModel,
    theta: &ParamVector,
    v: &[f64],
    batch: &Batch,
) -> Result<ParamVector> {
    check_params(model, theta, "parameter vector")?;
    check_params(model, v, "HVP direction")?;
    model.check_batch(batch)?;
    ParamVector::computed(model.hessian_vector(theta, v, batch), "Hessian-vector product")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_vector_rejects_empty_and_non_finite() {
        assert!(ParamVector::new(vec![]).is_err());
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
        let p = ParamVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(p.norm(), 5.0);
    }

    #[test]
    fn computed_non_finite_is_divergence() {
        let err = ParamVector::computed(vec![f64::NAN], "gradient").unwrap_err();
        assert!(err.is_divergence());
    }

    #[test]
    fn batch_validates_alignment_and_labels() {
        let x = Array2::zeros((3, 2));
        assert!(Batch::new(
            x.clone(),
            Targets::Classes {
                labels: vec![0, 1],
                classes: 2
            }
        )
        .is_err());
        assert!(Batch::new(
            x.clone(),
            Targets::Classes {
                labels: vec![0, 1, 2],
                classes: 2
            }
        )
        .is_err());
        assert!(Batch::new(Array2::zeros((0, 2)), Targets::Values(Array2::zeros((0, 1)))).is_err());
        let b = Batch::new(
            x,
            Targets::Classes {
                labels: vec![0, 1, 1],
                classes: 2,
            },
        )
        .unwrap();
        let s = b.select(&[2, 0]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(
            s.targets(),
            &Targets::Classes {
                labels: vec![1, 0],
                classes: 2
            }
        );
    }
}
