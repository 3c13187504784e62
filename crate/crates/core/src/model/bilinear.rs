//! The two-parameter model `f(x; a, b) = abx` with loss `E = (y − abx)²/2`.

use super::{Batch, LossModel, ModelSpec, Targets};
use crate::error::{Error, Result};

/// Two-parameter overparameterized regression model.
///
/// Global minima lie on the hyperbola `ab = y/x`. On a batch of several
/// points the loss is the mean of the per-point losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bilinear {
    x: f64,
    y: f64,
}

/// Builds the bilinear model trained on the single point `(x, y)`.
pub fn make_bilinear(x: f64, y: f64) -> Result<Bilinear> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::invalid("bilinear data point must be finite"));
    }
    if x == 0.0 {
        return Err(Error::invalid(
            "bilinear model with x = 0 is degenerate: every θ is a global minimum",
        ));
    }
    Ok(Bilinear { x, y })
}

impl Bilinear {
    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// The training point as a batch.
    pub fn train_batch(&self) -> Batch {
        Batch::point(self.x, self.y)
    }

    fn points(batch: &Batch) -> impl Iterator<Item = (f64, f64)> + '_ {
        let ys = match batch.targets() {
            Targets::Values(y) => y.column(0),
            Targets::Classes { .. } => unreachable!("checked by check_batch"),
        };
        batch
            .inputs()
            .column(0)
            .into_iter()
            .zip(ys)
            .map(|(&x, &y)| (x, y))
    }
}

impl LossModel for Bilinear {
    fn param_count(&self) -> usize {
        2
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Bilinear {
            x: self.x,
            y: self.y,
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.input_dim() != 1 {
            return Err(Error::DimensionMismatch {
                what: "bilinear input dimension",
                expected: 1,
                actual: batch.input_dim(),
            });
        }
        match batch.targets() {
            Targets::Values(y) if y.ncols() == 1 => Ok(()),
            _ => Err(Error::invalid("bilinear model needs one real target per point")),
        }
    }

    fn value(&self, theta: &[f64], batch: &Batch) -> f64 {
        let ab = theta[0] * theta[1];
        let n = batch.len() as f64;
        Self::points(batch)
            .map(|(x, y)| {
                let r = y - ab * x;
                0.5 * r * r
            })
            .sum::<f64>()
            / n
    }

    fn value_and_gradient(&self, theta: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
        let (a, b) = (theta[0], theta[1]);
        let n = batch.len() as f64;
        let (mut e, mut ga, mut gb) = (0.0, 0.0, 0.0);
        for (x, y) in Self::points(batch) {
            let r = y - a * b * x;
            e += 0.5 * r * r;
            ga -= b * x * r;
            gb -= a * x * r;
        }
        (e / n, vec![ga / n, gb / n])
    }

    fn hessian_vector(&self, theta: &[f64], v: &[f64], batch: &Batch) -> Vec<f64> {
        let (a, b) = (theta[0], theta[1]);
        let n = batch.len() as f64;
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
        for (x, y) in Self::points(batch) {
            haa += b * b * x * x;
            hab += 2.0 * a * b * x * x - x * y;
            hbb += a * a * x * x;
        }
        vec![
            (haa * v[0] + hab * v[1]) / n,
            (hab * v[0] + hbb * v[1]) / n,
        ]
    }
}
