//! Least-squares regressors `E(θ) = Σ_k ‖f_θ(x_k) − y_k‖²`.
//!
//! The sum convention (no ½, no mean) keeps the kernel identities exact:
//! `∇E = 2 Σ_k ∇ε_k ε_k` with `ε_k = f_θ(x_k) − y_k`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dense::{Activation, Head, Mlp};
use super::{Batch, LossModel, ModelSpec, ParamVector, Targets};
use crate::error::{Error, Result};

/// Parameterized map from inputs to outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `f_θ(x) = Θx` with `Θ` a `c × d` matrix and no offset.
    Linear { input_dim: usize },
    /// `f_θ(x) = W₂ tanh(W₁x + b₁) + b₂`.
    Tanh { input_dim: usize, hidden: usize },
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    net: Mlp,
    feature_map: FeatureMap,
}

pub fn make_least_squares(
    feature_map: FeatureMap,
    output_dim: usize,
    init_seed: u64,
) -> Result<LeastSquares> {
    if output_dim == 0 {
        return Err(Error::invalid("output dimension must be at least 1"));
    }
    let net = match feature_map {
        FeatureMap::Linear { input_dim } => Mlp::new(
            &[input_dim, output_dim],
            Activation::Tanh,
            false,
            Head::SumSquares,
            init_seed,
        )?,
        FeatureMap::Tanh { input_dim, hidden } => Mlp::new(
            &[input_dim, hidden, output_dim],
            Activation::Tanh,
            true,
            Head::SumSquares,
            init_seed,
        )?,
    };
    Ok(LeastSquares { net, feature_map })
}

impl LeastSquares {
    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn initial_params(&self) -> ParamVector {
        self.net.initial_params()
    }

    /// Model outputs `f_θ(x_k)`, one row per data point.
    pub fn predict(&self, theta: &ParamVector, batch: &Batch) -> Result<Array2<f64>> {
        self.check(theta, batch)?;
        Ok(self.net.outputs(theta, batch.inputs().view()))
    }

    /// Error vectors `ε_k = f_θ(x_k) − y_k`, one row per data point.
    pub fn errors(&self, theta: &ParamVector, batch: &Batch) -> Result<Array2<f64>> {
        let out = self.predict(theta, batch)?;
        let Targets::Values(y) = batch.targets() else {
            unreachable!("checked by check_batch")
        };
        Ok(out - y)
    }

    /// Per-point error Jacobians; entry `k` is the `c × m` matrix whose
    /// transpose is `∇ε_k(θ)`.
    pub fn error_jacobians(&self, theta: &ParamVector, batch: &Batch) -> Result<Vec<Array2<f64>>> {
        self.check(theta, batch)?;
        Ok((0..batch.len())
            .map(|k| self.net.output_jacobian(theta, batch.input_row(k)))
            .collect())
    }

    fn check(&self, theta: &ParamVector, batch: &Batch) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.param_count(),
                actual: theta.len(),
            });
        }
        self.check_batch(batch)
    }
}

impl LossModel for LeastSquares {
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::LeastSquares {
            feature_map: self.feature_map,
            output_dim: self.output_dim(),
            init_seed: self.net.init_seed(),
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.net.check_batch(batch)
    }

    fn value(&self, theta: &[f64], batch: &Batch) -> f64 {
        self.net.value(theta, batch)
    }

    fn value_and_gradient(&self, theta: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
        self.net.value_and_gradient(theta, batch)
    }

    fn hessian_vector(&self, theta: &[f64], v: &[f64], batch: &Batch) -> Vec<f64> {
        self.net.hessian_vector(theta, v, batch)
    }

    fn as_least_squares(&self) -> Option<&LeastSquares> {
        Some(self)
    }
}
