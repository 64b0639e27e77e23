//! Linear epsilon-insensitive support vector regression, solved in the primal
//! by averaged stochastic subgradient descent.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linear::{LinearKind, LinearModel};
use crate::error::{Error, Result};

/// `0.5 |w|^2 + C * sum max(0, |y - w.x - b| - epsilon)`.
pub fn svr_objective(
    weights: ArrayView1<f64>,
    bias: f64,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cost: f64,
    epsilon: f64,
) -> f64 {
    let hinge: f64 = x
        .axis_iter(Axis(0))
        .zip(y)
        .map(|(row, &t)| ((t - row.dot(&weights) - bias).abs() - epsilon).max(0.0))
        .sum();
    0.5 * weights.dot(&weights) + cost * hinge
}

/// The objective is split into `N` per-sample terms
/// `|w|^2 / (2N) + C * loss_i`. Steps follow
/// `eta_t = step_scale / (C (1 + mean|x|^2) (1 + t/N))`, the sample order is
/// a fresh seeded shuffle each epoch, and the returned model is the running
/// average of the iterates over the second half of the epochs.
pub fn fit_svr(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cost: f64,
    epsilon: f64,
    epochs: usize,
    step_scale: f64,
    seed: u64,
) -> Result<LinearModel> {
    if x.nrows() == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if !(cost > 0.0) || !cost.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "SVR cost must be > 0, got {cost}"
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "SVR epsilon must be >= 0, got {epsilon}"
        )));
    }
    if epochs == 0 || !(step_scale > 0.0) {
        return Err(Error::InvalidArgument(
            "SVR needs epochs >= 1 and step_scale > 0".into(),
        ));
    }

    let n = x.nrows();
    let nf = n as f64;
    let mean_sq = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).sum::<f64>() / nf;
    let eta0 = step_scale / (cost * (1.0 + mean_sq));

    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut b = y.mean().expect("non-empty");
    let mut w_avg = w.clone();
    let mut b_avg = b;
    let mut averaged = 0usize;
    let average_from = epochs / 2;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = eta0 / (1.0 + t as f64 / nf);
            let row = x.row(i);
            let r = y[i] - row.dot(&w) - b;
            let shrink = 1.0 - eta / nf;
            w *= shrink;
            if r.abs() > epsilon {
                let s = r.signum() * cost * eta;
                w.scaled_add(s, &row);
                b += s;
            }
            if epoch >= average_from {
                averaged += 1;
                let k = 1.0 / averaged as f64;
                w_avg.zip_mut_with(&w, |a, &v| *a += (v - *a) * k);
                b_avg += (b - b_avg) * k;
            }
        }
    }

    Ok(LinearModel {
        weights: w_avg,
        bias: b_avg,
        kind: LinearKind::Svr {
            cost,
            epsilon,
            epochs,
        },
    })
}
