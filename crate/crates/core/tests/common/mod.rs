//! Finite-difference oracles and model fixtures shared by the integration tests.
#![allow(dead_code)]

use igr_core::egr::egr_value_grad;
use igr_core::model::{
    eval_grad, eval_hvp, eval_loss, make_bilinear, make_least_squares, make_mlp, Activation,
    FeatureMap,
};
use igr_core::{Batch, LossModel, ParamVector, Targets};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn central(f: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64], eps: f64) -> Vec<Vec<f64>> {
    (0..theta.len())
        .map(|i| {
            let mut p = theta.to_vec();
            p[i] += eps;
            let up = f(&p);
            p[i] -= 2.0 * eps;
            let down = f(&p);
            up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * eps)).collect()
        })
        .collect()
}

/// Central differences of `E`.
pub fn fd_grad(model: &dyn LossModel, theta: &[f64], batch: &Batch, eps: f64) -> Vec<f64> {
    central(|p| vec![eval_loss(model, &pv(p), batch).unwrap()], theta, eps)
        .into_iter()
        .map(|v| v[0])
        .collect()
}

/// `(∇E(θ + εv) − ∇E(θ − εv)) / 2ε`.
pub fn fd_hvp(model: &dyn LossModel, theta: &[f64], v: &[f64], batch: &Batch, eps: f64) -> Vec<f64> {
    let t = pv(theta);
    let up = eval_grad(model, &t.add_scaled(eps, v).unwrap(), batch).unwrap();
    let down = eval_grad(model, &t.add_scaled(-eps, v).unwrap(), batch).unwrap();
    up.as_slice().iter().zip(down.as_slice()).map(|(u, d)| (u - d) / (2.0 * eps)).collect()
}

/// Central differences of `E + μ‖∇E‖²`.
pub fn fd_egr_grad(model: &dyn LossModel, theta: &[f64], mu: f64, batch: &Batch, eps: f64) -> Vec<f64> {
    central(|p| vec![egr_value_grad(model, &pv(p), mu, batch).unwrap().0], theta, eps)
        .into_iter()
        .map(|v| v[0])
        .collect()
}

pub fn analytic(model: &dyn LossModel, theta: &[f64], batch: &Batch) -> Vec<f64> {
    eval_grad(model, &pv(theta), batch).unwrap().into_vec()
}

pub fn analytic_hvp(model: &dyn LossModel, theta: &[f64], v: &[f64], batch: &Batch) -> Vec<f64> {
    eval_hvp(model, &pv(theta), v, batch).unwrap().into_vec()
}

/// One model per family with a matching batch.
pub struct Family {
    pub name: &'static str,
    pub model: Box<dyn LossModel>,
    pub batch: Batch,
    /// Scale of random parameters.
    pub scale: f64,
}

pub fn families() -> Vec<Family> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut normal_rows = |n: usize, d: usize| -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    };
    let cls_x = normal_rows(6, 4);
    let reg_x = normal_rows(5, 3);
    let reg_y = normal_rows(5, 2);
    let tanh_mlp = make_mlp(&[4, 5, 3], Activation::Tanh, 1).unwrap();
    let relu_mlp = make_mlp(&[4, 6, 6, 3], Activation::Relu, 2).unwrap();
    let cls = Batch::new(
        cls_x,
        Targets::Classes {
            labels: vec![0, 1, 2, 0, 1, 2],
            classes: 3,
        },
    )
    .unwrap();
    let reg = Batch::new(reg_x, Targets::Values(reg_y)).unwrap();
    let bilinear = make_bilinear(1.0, 0.6).unwrap();
    vec![
        Family {
            name: "bilinear",
            batch: bilinear.train_batch(),
            model: Box::new(bilinear),
            scale: 3.0,
        },
        Family {
            name: "mlp_tanh",
            model: Box::new(tanh_mlp),
            batch: cls.clone(),
            scale: 0.8,
        },
        Family {
            name: "mlp_relu",
            model: Box::new(relu_mlp),
            batch: cls,
            scale: 0.8,
        },
        Family {
            name: "least_squares_linear",
            model: Box::new(make_least_squares(FeatureMap::Linear { input_dim: 3 }, 2, 0).unwrap()),
            batch: reg.clone(),
            scale: 1.0,
        },
        Family {
            name: "least_squares_tanh",
            model: Box::new(
                make_least_squares(FeatureMap::Tanh { input_dim: 3, hidden: 3 }, 2, 0).unwrap(),
            ),
            batch: reg,
            scale: 1.0,
        },
    ]
}

/// `count` parameter vectors with entries uniform in `[-scale, scale]`.
pub fn random_points(m: usize, scale: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..m).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}
