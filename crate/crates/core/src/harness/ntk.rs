//! Random small least-squares problems for checking the kernel form of the modified loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::metrics::{modified_loss, ntk_modified_loss};
use crate::model::{make_least_squares, Batch, FeatureMap, LeastSquares, LossModel, ParamVector};

/// Parameter budget of a generated instance.
pub const MAX_PARAMS: usize = 20;
pub const MAX_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NtkCheckRow {
    pub instance: usize,
    pub feature_map: FeatureMap,
    pub n: usize,
    pub c: usize,
    pub m: usize,
    pub h: f64,
    pub loss: f64,
    /// `E + (h/4)‖∇E‖²`.
    pub direct: f64,
    /// `E + h Σ ε_iᵀ K_ij ε_j`.
    pub kernel: f64,
    pub rel_error: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Instance `index` of the stream keyed by `seed`: `c ∈ {1, 3}` outputs,
/// at most [`MAX_POINTS`] points and [`MAX_PARAMS`] parameters.
pub fn random_instance(seed: u64, index: usize) -> Result<(LeastSquares, ParamVector, Batch)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let c = if rng.random_bool(0.5) { 1 } else { 3 };
    let n = rng.random_range(1..=MAX_POINTS);
    let feature_map = if rng.random_bool(0.5) {
        FeatureMap::Linear {
            input_dim: rng.random_range(1..=MAX_PARAMS / c),
        }
    } else {
        let input_dim = rng.random_range(1..=2);
        let max_hidden = (MAX_PARAMS - c) / (input_dim + 1 + c);
        FeatureMap::Tanh {
            input_dim,
            hidden: rng.random_range(1..=max_hidden),
        }
    };
    let d = match feature_map {
        FeatureMap::Linear { input_dim } | FeatureMap::Tanh { input_dim, .. } => input_dim,
    };
    let model = make_least_squares(feature_map, c, rng.random())?;
    let theta = ParamVector::new((0..model.param_count()).map(|_| normal(&mut rng)).collect())?;
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
    let targets: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| normal(&mut rng)).collect()).collect();
    let batch = Batch::regression(&inputs, &targets)?;
    Ok((model, theta, batch))
}

/// Compares both forms of the modified loss on `instances` random problems.
pub fn ntk_check(instances: usize, seed: u64, h: f64) -> Result<Vec<NtkCheckRow>> {
    (0..instances)
        .map(|i| {
            let (model, theta, batch) = random_instance(seed, i)?;
            let rec = ntk_modified_loss(&model, &theta, &batch, h)?;
            let direct = modified_loss(&model, &theta, h, &batch)?;
            Ok(NtkCheckRow {
                instance: i,
                feature_map: model.feature_map(),
                n: batch.len(),
                c: model.output_dim(),
                m: model.param_count(),
                h,
                loss: rec.loss,
                direct,
                kernel: rec.modified_loss,
                rel_error: (rec.modified_loss - direct).abs() / direct.abs().max(1e-300),
            })
        })
        .collect()
}
