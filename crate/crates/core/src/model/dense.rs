//! Fully connected networks with exact gradients and exact Hessian-vector
//! products (forward-over-reverse R-operator).
//!
//! Parameters are laid out layer by layer: the `out × in` weight matrix in
//! row-major order, followed by the `out` biases when the network has biases.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, LossModel, ModelSpec, ParamVector, Targets};
use crate::error::{Error, Result};

/// Rows processed per forward/backward chunk; bounds peak memory on large batches.
const CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn first(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn second(self, z: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Output head and loss convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Softmax cross-entropy, averaged over the batch.
    SoftmaxCrossEntropy,
    /// `Σ_k ‖f(x_k) − y_k‖²` with no ½ and no averaging.
    SumSquares,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: Option<usize>,
}

impl Layer {
    fn weight_range(&self) -> Range<usize> {
        self.weights..self.weights + self.inputs * self.outputs
    }
}

/// Dense feed-forward network with a configurable loss head.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    head: Head,
    init_seed: u64,
    layers: Vec<Layer>,
    param_count: usize,
}

/// Builds a cross-entropy classifier with layer widths `widths`
/// (input dimension first, class count last).
pub fn make_mlp(widths: &[usize], activation: Activation, init_seed: u64) -> Result<Mlp> {
    Mlp::new(widths, activation, true, Head::SoftmaxCrossEntropy, init_seed)
}

struct Forward {
    /// Pre-activations of every layer, output layer last.
    pre: Vec<Array2<f64>>,
    /// Post-activations of hidden layers.
    hidden: Vec<Array2<f64>>,
}

impl Forward {
    fn input_of<'a>(&'a self, x: ArrayView2<'a, f64>, layer: usize) -> ArrayView2<'a, f64> {
        if layer == 0 {
            x
        } else {
            self.hidden[layer - 1].view()
        }
    }
}

impl Mlp {
    pub(crate) fn new(
        widths: &[usize],
        activation: Activation,
        bias: bool,
        head: Head,
        init_seed: u64,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid(
                "a network needs at least an input and an output layer",
            ));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be at least 1"));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            let weights = offset;
            offset += inputs * outputs;
            let b = bias.then(|| {
                let b = offset;
                offset += outputs;
                b
            });
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                bias: b,
            });
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            head,
            init_seed,
            layers,
            param_count: offset,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    /// Fan-in scaled uniform initialization `U(−√(2/fan_in), √(2/fan_in))`, zero biases.
    pub fn initial_params(&self) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed);
        let mut theta = vec![0.0; self.param_count];
        for layer in &self.layers {
            let bound = (2.0 / layer.inputs as f64).sqrt();
            for w in &mut theta[layer.weight_range()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        ParamVector(theta)
    }

    fn weights<'a>(&self, theta: &'a [f64], l: usize) -> ArrayView2<'a, f64> {
        let layer = &self.layers[l];
        ArrayView2::from_shape((layer.outputs, layer.inputs), &theta[layer.weight_range()])
            .expect("layer slice matches shape")
    }

    fn biases<'a>(&self, theta: &'a [f64], l: usize) -> Option<ArrayView1<'a, f64>> {
        let layer = &self.layers[l];
        layer
            .bias
            .map(|b| ArrayView1::from(&theta[b..b + layer.outputs]))
    }

    fn forward(&self, theta: &[f64], x: ArrayView2<'_, f64>) -> Forward {
        let depth = self.layers.len();
        let mut pre = Vec::with_capacity(depth);
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(depth - 1);
        for l in 0..depth {
            let input = if l == 0 { x } else { hidden[l - 1].view() };
            let mut z = input.dot(&self.weights(theta, l).t());
            if let Some(b) = self.biases(theta, l) {
                z += &b;
            }
            if l + 1 < depth {
                let act = self.activation;
                hidden.push(z.mapv(|v| act.apply(v)));
            }
            pre.push(z);
        }
        Forward { pre, hidden }
    }

    /// Network outputs for each input row.
    pub fn outputs(&self, theta: &[f64], x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for r0 in (0..x.nrows()).step_by(CHUNK_ROWS) {
            let r1 = (r0 + CHUNK_ROWS).min(x.nrows());
            let mut fwd = self.forward(theta, x.slice(s![r0..r1, ..]));
            let z = fwd.pre.pop().expect("at least one layer");
            out.slice_mut(s![r0..r1, ..]).assign(&z);
        }
        out
    }

    /// Fraction of rows whose arg-max output matches the label.
    pub fn accuracy(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let Targets::Classes { labels, .. } = batch.targets() else {
            return Err(Error::invalid("accuracy requires class labels"));
        };
        let logits = self.outputs(theta, batch.inputs().view());
        let correct = logits
            .outer_iter()
            .zip(labels)
            .filter(|(row, &label)| argmax(row.view()) == label)
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }

    /// Loss contribution and output-layer error signal for rows `rows` of the batch.
    /// `scale` divides the cross-entropy terms (the full batch size for mean reduction).
    fn head_terms(
        &self,
        z: &Array2<f64>,
        targets: &Targets,
        rows: Range<usize>,
        scale: f64,
    ) -> (f64, Array2<f64>) {
        match (self.head, targets) {
            (Head::SoftmaxCrossEntropy, Targets::Classes { labels, .. }) => {
                let mut delta = softmax_rows(z);
                let mut loss = 0.0;
                for (i, &label) in labels[rows].iter().enumerate() {
                    let row = z.row(i);
                    loss += log_sum_exp(row) - row[label];
                    delta[[i, label]] -= 1.0;
                }
                delta /= scale;
                (loss / scale, delta)
            }
            (Head::SumSquares, Targets::Values(y)) => {
                let diff = z - &y.slice(s![rows, ..]);
                let loss = diff.iter().map(|d| d * d).sum();
                (loss, diff * 2.0)
            }
            _ => unreachable!("checked by check_batch"),
        }
    }

    /// Accumulates `scale`-weighted gradients of the layers into `grad`.
    fn backward(
        &self,
        theta: &[f64],
        x: ArrayView2<'_, f64>,
        fwd: &Forward,
        mut delta: Array2<f64>,
        grad: &mut [f64],
    ) {
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let gw = delta.t().dot(&fwd.input_of(x, l));
            add_into(&mut grad[layer.weight_range()], gw.iter());
            if let Some(b) = layer.bias {
                add_into(&mut grad[b..b + layer.outputs], delta.sum_axis(Axis(0)).iter());
            }
            if l > 0 {
                let mut back = delta.dot(&self.weights(theta, l));
                let act = self.activation;
                Zip::from(&mut back)
                    .and(&fwd.pre[l - 1])
                    .for_each(|d, &z| *d *= act.first(z));
                delta = back;
            }
        }
    }

    /// Gradient of each output component at a single input: a `c × m` matrix
    /// whose row `j` is `∇_θ f_j(x)`.
    pub fn output_jacobian(&self, theta: &[f64], x: ArrayView1<'_, f64>) -> Array2<f64> {
        let c = self.output_dim();
        let x = x.insert_axis(Axis(0));
        let fwd = self.forward(theta, x);
        let mut jac = Array2::zeros((c, self.param_count));
        for j in 0..c {
            let mut seed = Array2::zeros((1, c));
            seed[[0, j]] = 1.0;
            let row = jac.row_mut(j).into_slice().expect("standard layout");
            self.backward(theta, x, &fwd, seed, row);
        }
        jac
    }

    fn check_targets(&self, batch: &Batch) -> Result<()> {
        match (self.head, batch.targets()) {
            (Head::SoftmaxCrossEntropy, Targets::Classes { classes, .. }) => {
                if *classes != self.output_dim() {
                    return Err(Error::DimensionMismatch {
                        what: "class count",
                        expected: self.output_dim(),
                        actual: *classes,
                    });
                }
                Ok(())
            }
            (Head::SumSquares, Targets::Values(y)) => {
                if y.ncols() != self.output_dim() {
                    return Err(Error::DimensionMismatch {
                        what: "target dimension",
                        expected: self.output_dim(),
                        actual: y.ncols(),
                    });
                }
                Ok(())
            }
            (Head::SoftmaxCrossEntropy, _) => {
                Err(Error::invalid("cross-entropy head needs class labels"))
            }
            (Head::SumSquares, _) => Err(Error::invalid("least-squares head needs real targets")),
        }
    }
}

impl LossModel for Mlp {
    fn param_count(&self) -> usize {
        self.param_count
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Mlp {
            widths: self.widths.clone(),
            activation: self.activation,
            init_seed: self.init_seed,
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.input_dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input dimension",
                expected: self.input_dim(),
                actual: batch.input_dim(),
            });
        }
        self.check_targets(batch)
    }

    fn value(&self, theta: &[f64], batch: &Batch) -> f64 {
        let n = batch.len();
        let x = batch.inputs().view();
        let mut total = 0.0;
        for r0 in (0..n).step_by(CHUNK_ROWS) {
            let r1 = (r0 + CHUNK_ROWS).min(n);
            let mut fwd = self.forward(theta, x.slice(s![r0..r1, ..]));
            let z = fwd.pre.pop().expect("at least one layer");
            total += self.head_terms(&z, batch.targets(), r0..r1, n as f64).0;
        }
        total
    }

    fn value_and_gradient(&self, theta: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
        let n = batch.len();
        let x = batch.inputs().view();
        let mut grad = vec![0.0; self.param_count];
        let mut total = 0.0;
        for r0 in (0..n).step_by(CHUNK_ROWS) {
            let r1 = (r0 + CHUNK_ROWS).min(n);
            let xc = x.slice(s![r0..r1, ..]);
            let fwd = self.forward(theta, xc);
            let z = fwd.pre.last().expect("at least one layer");
            let (loss, delta) = self.head_terms(z, batch.targets(), r0..r1, n as f64);
            total += loss;
            self.backward(theta, xc, &fwd, delta, &mut grad);
        }
        (total, grad)
    }

    fn hessian_vector(&self, theta: &[f64], v: &[f64], batch: &Batch) -> Vec<f64> {
        let n = batch.len();
        let x = batch.inputs().view();
        let mut out = vec![0.0; self.param_count];
        for r0 in (0..n).step_by(CHUNK_ROWS) {
            let r1 = (r0 + CHUNK_ROWS).min(n);
            self.hvp_chunk(theta, v, x.slice(s![r0..r1, ..]), batch.targets(), r0..r1, n, &mut out);
        }
        out
    }
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    fn hvp_chunk(
        &self,
        theta: &[f64],
        v: &[f64],
        x: ArrayView2<'_, f64>,
        targets: &Targets,
        rows: Range<usize>,
        n: usize,
        out: &mut [f64],
    ) {
        let depth = self.layers.len();
        let act = self.activation;
        let fwd = self.forward(theta, x);

        // Directional derivatives of pre-activations and hidden activations along v.
        let mut r_pre: Vec<Array2<f64>> = Vec::with_capacity(depth);
        let mut r_hidden: Vec<Array2<f64>> = Vec::with_capacity(depth - 1);
        for l in 0..depth {
            let mut rz = fwd.input_of(x, l).dot(&self.weights(v, l).t());
            if l > 0 {
                rz += &r_hidden[l - 1].dot(&self.weights(theta, l).t());
            }
            if let Some(vb) = self.biases(v, l) {
                rz += &vb;
            }
            if l + 1 < depth {
                let mut rh = rz.clone();
                Zip::from(&mut rh)
                    .and(&fwd.pre[l])
                    .for_each(|r, &z| *r *= act.first(z));
                r_hidden.push(rh);
            }
            r_pre.push(rz);
        }

        let z_out = &fwd.pre[depth - 1];
        let rz_out = &r_pre[depth - 1];
        let (_, mut delta) = self.head_terms(z_out, targets, rows, n as f64);
        let mut r_delta = match self.head {
            Head::SoftmaxCrossEntropy => {
                let p = softmax_rows(z_out);
                let mut rd = Array2::zeros(p.raw_dim());
                for ((mut rd_row, p_row), rz_row) in rd
                    .outer_iter_mut()
                    .zip(p.outer_iter())
                    .zip(rz_out.outer_iter())
                {
                    let mean = p_row.dot(&rz_row);
                    Zip::from(&mut rd_row)
                        .and(&p_row)
                        .and(&rz_row)
                        .for_each(|d, &pi, &ri| *d = pi * (ri - mean) / n as f64);
                }
                rd
            }
            Head::SumSquares => rz_out * 2.0,
        };

        for l in (0..depth).rev() {
            let layer = self.layers[l];
            let mut rgw = r_delta.t().dot(&fwd.input_of(x, l));
            if l > 0 {
                rgw += &delta.t().dot(&r_hidden[l - 1]);
            }
            add_into(&mut out[layer.weight_range()], rgw.iter());
            if let Some(b) = layer.bias {
                add_into(&mut out[b..b + layer.outputs], r_delta.sum_axis(Axis(0)).iter());
            }
            if l > 0 {
                let w = self.weights(theta, l);
                let back = delta.dot(&w);
                let mut r_back = r_delta.dot(&w);
                r_back += &delta.dot(&self.weights(v, l));
                let z = &fwd.pre[l - 1];
                let rz = &r_pre[l - 1];
                let mut next_delta = back.clone();
                Zip::from(&mut next_delta)
                    .and(z)
                    .for_each(|d, &zi| *d *= act.first(zi));
                let mut next_r = r_back;
                Zip::from(&mut next_r)
                    .and(&back)
                    .and(z)
                    .and(rz)
                    .for_each(|r, &bk, &zi, &rzi| {
                        *r = *r * act.first(zi) + bk * act.second(zi) * rzi;
                    });
                delta = next_delta;
                r_delta = next_r;
            }
        }
    }
}

fn add_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
