//! Multiplicative parameter noise `θ_p = θ(1 + η)`, `η ~ N(0, σ)` per parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{eval_loss_grad, Batch, Mlp, ParamVector};
use crate::stats::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessPoint {
    pub sigma: f64,
    pub realizations: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub slope_mean: f64,
    pub slope_std: f64,
}

/// One noisy copy of `theta`. The stream depends only on
/// `(seed, sigma_index, realization)`.
pub fn perturb(theta: &ParamVector, sigma: f64, seed: u64, sigma_index: usize, realization: usize) -> Result<ParamVector> {
    if sigma == 0.0 {
        return Ok(theta.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((sigma_index as u64) << 32) | realization as u64);
    let noisy = theta
        .iter()
        .map(|&t| {
            let z: f64 = rng.sample(StandardNormal);
            t * (1.0 + sigma * z)
        })
        .collect();
    ParamVector::computed(noisy, "perturbed parameters")
}

/// Test accuracy and loss-surface slope (on `test`) under parameter noise,
/// as mean and population standard deviation over `realizations` draws.
pub fn perturb_robustness(
    model: &Mlp,
    theta: &ParamVector,
    sigmas: &[f64],
    realizations: usize,
    seed: u64,
    test: &Batch,
) -> Result<Vec<RobustnessPoint>> {
    if realizations == 0 {
        return Err(Error::invalid("realizations must be at least 1"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::invalid(format!("noise scale must be finite and >= 0, got {s}")));
    }
    let jobs: Vec<(usize, usize)> = (0..sigmas.len())
        .flat_map(|i| (0..realizations).map(move |r| (i, r)))
        .collect();
    let samples: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let p = perturb(theta, sigmas[i], seed, i, r)?;
            let (_, g) = eval_loss_grad(model, &p, test)?;
            Ok((model.accuracy(&p, test)?, g.norm()))
        })
        .collect::<Result<_>>()?;
    Ok(sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let chunk = &samples[i * realizations..(i + 1) * realizations];
            let (acc, slope): (Vec<f64>, Vec<f64>) = chunk.iter().copied().unzip();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (slope_mean, slope_std) = mean_std(&slope);
            RobustnessPoint {
                sigma,
                realizations,
                accuracy_mean,
                accuracy_std,
                slope_mean,
                slope_std,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic;
    use crate::model::{make_mlp, Activation};

    #[test]
    fn zero_noise_is_the_unperturbed_model() {
        let model = make_mlp(&[784, 6, 10], Activation::Relu, 1).unwrap();
        let theta = model.initial_params();
        let test = make_synthetic(30, 4).unwrap().batch().clone();
        let pts = perturb_robustness(&model, &theta, &[0.0, 3.0], 4, 9, &test).unwrap();
        let acc = model.accuracy(&theta, &test).unwrap();
        let slope = eval_loss_grad(&model, &theta, &test).unwrap().1.norm();
        assert_eq!((pts[0].accuracy_mean, pts[0].accuracy_std), (acc, 0.0));
        assert_eq!((pts[0].slope_mean, pts[0].slope_std), (slope, 0.0));
        assert!(pts[1].slope_std > 0.0);
    }

    #[test]
    fn streams_are_indexed_not_sequential() {
        let theta = ParamVector::new(vec![1.0; 5]).unwrap();
        let a = perturb(&theta, 0.5, 1, 2, 3).unwrap();
        assert_eq!(a, perturb(&theta, 0.5, 1, 2, 3).unwrap());
        assert_ne!(a, perturb(&theta, 0.5, 1, 2, 4).unwrap());
        assert_ne!(a, perturb(&theta, 0.5, 1, 1, 3).unwrap());
    }

    #[test]
    fn bad_arguments_rejected() {
        let model = make_mlp(&[784, 2, 10], Activation::Relu, 1).unwrap();
        let theta = model.initial_params();
        let test = make_synthetic(10, 4).unwrap().batch().clone();
        assert!(perturb_robustness(&model, &theta, &[0.1], 0, 0, &test).is_err());
        assert!(perturb_robustness(&model, &theta, &[-0.1], 1, 0, &test).is_err());
    }
}
