//! One-hidden-layer rectifier network trained on the Euclidean loss with
//! mini-batch SGD and momentum.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MlpParams;
use crate::error::{Error, Result};
use crate::features::Standardization;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Applied to raw inputs before the first layer.
    pub input: Standardization,
    /// hidden x input
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weights: Array1<f64>,
    pub output_bias: f64,
    /// Mini-batch loss after every iteration of training.
    pub loss_curve: Vec<f64>,
}

impl MlpModel {
    /// He-initialized hidden layer, small output layer, identity input
    /// standardization.
    pub fn random(input_dim: usize, hidden: usize, output_bias: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = Normal::new(0.0, (2.0 / input_dim.max(1) as f64).sqrt()).unwrap();
        let out = Normal::new(0.0, (1.0 / hidden.max(1) as f64).sqrt()).unwrap();
        MlpModel {
            input: Standardization {
                mean: Array1::zeros(input_dim),
                std: Array1::ones(input_dim),
                degenerate: vec![false; input_dim],
            },
            hidden_weights: Array2::from_shape_fn((hidden, input_dim), |_| he.sample(&mut rng)),
            hidden_bias: Array1::zeros(hidden),
            output_weights: Array1::from_shape_fn(hidden, |_| out.sample(&mut rng)),
            output_bias,
            loss_curve: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weights.ncols()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_width();
        h * self.input_dim() + 2 * h + 1
    }

    /// Network output for an already-standardized input.
    pub fn forward(&self, z: ArrayView1<f64>) -> f64 {
        let pre = self.hidden_weights.dot(&z) + &self.hidden_bias;
        pre.iter()
            .zip(&self.output_weights)
            .map(|(p, w)| p.max(0.0) * w)
            .sum::<f64>()
            + self.output_bias
    }

    /// Network output for a raw input.
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        let z = (&x - &self.input.mean) / &self.input.std;
        self.forward(z.view())
    }

    /// Parameters flattened as hidden weights (row-major), hidden bias,
    /// output weights, output bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(self.hidden_weights.iter());
        p.extend(self.hidden_bias.iter());
        p.extend(self.output_weights.iter());
        p.push(self.output_bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                found: p.len(),
            });
        }
        let (h, d) = (self.hidden_width(), self.input_dim());
        let mut it = p.iter().copied();
        self.hidden_weights
            .iter_mut()
            .for_each(|w| *w = it.next().unwrap());
        self.hidden_bias
            .iter_mut()
            .for_each(|w| *w = it.next().unwrap());
        self.output_weights
            .iter_mut()
            .for_each(|w| *w = it.next().unwrap());
        self.output_bias = it.next().unwrap();
        debug_assert_eq!(h * d + 2 * h + 1, p.len());
        Ok(())
    }

    /// Loss `(1/2B) sum (f(z) - y)^2` over standardized inputs `z` and its
    /// gradient in [`params`](Self::params) order.
    pub fn loss_and_gradient(&self, z: ArrayView2<f64>, y: ArrayView1<f64>) -> (f64, Vec<f64>) {
        let b = z.nrows() as f64;
        let pre = z.dot(&self.hidden_weights.t()) + &self.hidden_bias;
        let act = pre.mapv(|v| v.max(0.0));
        let out = act.dot(&self.output_weights) + self.output_bias;
        let err = &out - &y;
        let loss = err.dot(&err) / (2.0 * b);

        let d_out = err / b;
        let g_out_w = act.t().dot(&d_out);
        let g_out_b = d_out.sum();
        let mut d_hidden = Array2::zeros(pre.raw_dim());
        for ((mut row, pre_row), &d) in d_hidden
            .axis_iter_mut(Axis(0))
            .zip(pre.axis_iter(Axis(0)))
            .zip(&d_out)
        {
            for ((g, &p), &w) in row.iter_mut().zip(&pre_row).zip(&self.output_weights) {
                *g = if p > 0.0 { d * w } else { 0.0 };
            }
        }
        let g_hidden_w = d_hidden.t().dot(&z);
        let g_hidden_b = d_hidden.sum_axis(Axis(0));

        let mut g = Vec::with_capacity(self.param_count());
        g.extend(g_hidden_w.iter());
        g.extend(g_hidden_b.iter());
        g.extend(g_out_w.iter());
        g.push(g_out_b);
        (loss, g)
    }
}

/// Trains on raw inputs; the input standardization is fitted here and stored
/// in the model. Batches are drawn in order from a seeded shuffle, reshuffled
/// whenever it runs out.
pub fn fit_mlp(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    params: &MlpParams,
    seed: u64,
) -> Result<MlpModel> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if n != y.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    params.validate()?;

    let input = Standardization::fit(x)?;
    let z = input.apply(x)?;
    let mut model = MlpModel::random(x.ncols(), params.hidden, y.mean().expect("non-empty"), seed);
    model.input = input;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut velocity = vec![0.0; model.param_count()];
    let mut theta = model.params();
    let mut batch = Vec::with_capacity(params.batch_size);
    let mut curve = Vec::with_capacity(params.iterations);

    for iteration in 0..params.iterations {
        batch.clear();
        while batch.len() < params.batch_size {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let zb = z.select(Axis(0), &batch);
        let yb = y.select(Axis(0), &batch);
        let (loss, grad) = model.loss_and_gradient(zb.view(), yb.view());
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
        curve.push(loss);
        let lr = params.rate_at(iteration);
        for ((v, t), g) in velocity.iter_mut().zip(theta.iter_mut()).zip(&grad) {
            *v = params.momentum * *v - lr * g;
            *t += *v;
        }
        model.set_params(&theta)?;
    }
    model.loss_curve = curve;
    Ok(model)
}
