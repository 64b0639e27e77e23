//! Least squares (optionally ridge-penalized) and lasso.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::features::Standardization;

/// Which solver produced a [`LinearModel`], with the settings it ran under.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearKind {
    Ols,
    Ridge {
        lambda: f64,
    },
    Lasso {
        lambda: f64,
        tol: f64,
        max_sweeps: usize,
        sweeps: usize,
        converged: bool,
    },
    Svr {
        cost: f64,
        epsilon: f64,
        epochs: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub kind: LinearKind,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.weights.dot(&x) + self.bias
    }

    pub fn decisions(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.bias
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    /// Re-expresses a model trained on standardized inputs so that it can be
    /// applied to raw inputs.
    pub fn destandardize(&self, s: &Standardization) -> LinearModel {
        let weights = &self.weights / &s.std;
        let bias = self.bias - weights.dot(&s.mean);
        LinearModel {
            weights,
            bias,
            kind: self.kind.clone(),
        }
    }
}

fn check_xy(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    Ok(())
}

/// In-place Cholesky factorization followed by forward and back
/// substitution. Fails with [`Error::Singular`] when a pivot is not above
/// `pivot_floor`.
pub(crate) fn cholesky_solve(
    mut a: Array2<f64>,
    b: &Array1<f64>,
    pivot_floor: f64,
) -> Result<Array1<f64>> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > pivot_floor) {
            return Err(Error::Singular);
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / d;
        }
    }
    // L z = b
    let mut z = b.clone();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= a[[i, k]] * z[k];
        }
        z[i] = s / a[[i, i]];
    }
    // L^T w = z
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= a[[k, i]] * z[k];
        }
        z[i] = s / a[[i, i]];
    }
    Ok(z)
}

/// Minimizes `sum (y - w.x - b)^2 + lambda |w|^2` with the bias unpenalized.
///
/// Centering removes the bias from the system, leaving the normal equations
/// `(Xc' Xc + lambda I) w = Xc' yc`.
pub fn fit_ols(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be >= 0, got {lambda}"
        )));
    }
    let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let y_mean = y.mean().expect("non-empty");
    let xc = &x - &x_mean;
    let yc = &y - y_mean;

    let mut gram = xc.t().dot(&xc);
    let max_diag = gram.diag().fold(0.0f64, |m, &v| m.max(v));
    gram.diag_mut().mapv_inplace(|v| v + lambda);
    let rhs = xc.t().dot(&yc);

    let pivot_floor = if lambda == 0.0 { 1e-10 * max_diag } else { 0.0 };
    let weights = if x.ncols() == 0 {
        Array1::zeros(0)
    } else {
        cholesky_solve(gram, &rhs, pivot_floor)?
    };
    let bias = y_mean - weights.dot(&x_mean);
    if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(LinearModel {
        weights,
        bias,
        kind: if lambda == 0.0 {
            LinearKind::Ols
        } else {
            LinearKind::Ridge { lambda }
        },
    })
}

/// Gradient of the ridge objective minimized by [`fit_ols`], bias last.
pub fn ols_gradient(
    model: &LinearModel,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
) -> Array1<f64> {
    let residual = &y - &model.decisions(x);
    let gw = x.t().dot(&residual) * -2.0 + &model.weights * (2.0 * lambda);
    let gb = -2.0 * residual.sum();
    let mut g = gw.to_vec();
    g.push(gb);
    Array1::from(g)
}

/// `sign(z) * max(|z| - gamma, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest lambda for which the lasso solution is identically zero:
/// `max_j |x_j' (y - mean(y))| / N`.
pub fn lasso_lambda_max(x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.nrows() as f64;
    let yc = &y - y.mean().unwrap_or(0.0);
    x.t().dot(&yc).fold(0.0f64, |m, v| m.max(v.abs() / n))
}

/// Rejects matrices whose columns are not centered with unit (or zero)
/// variance.
pub fn check_standardized(x: ArrayView2<f64>) -> Result<()> {
    let n = x.nrows() as f64;
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if mean.abs() > 1e-6 || !((sd - 1.0).abs() <= 1e-6 || sd <= 1e-6) {
            return Err(Error::InvalidArgument(format!(
                "lasso needs standardized columns; column {j} has mean {mean:.3e}, std {sd:.3e}"
            )));
        }
    }
    Ok(())
}

/// Cyclic coordinate descent on `(1/2N) |y - Xw - b|^2 + lambda |w|_1`.
///
/// Columns must be standardized. Each sweep updates every weight by
/// soft-thresholding and then re-centres the bias on the residual; the run
/// stops once no coordinate moves by more than `tol`.
pub fn fit_lasso(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lasso lambda must be > 0, got {lambda}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lasso tol must be > 0, got {tol}"
        )));
    }
    check_standardized(x)?;

    let n = x.nrows() as f64;
    let d = x.ncols();
    let col_sq: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.dot(&c) / n).collect();
    let mut w = Array1::<f64>::zeros(d);
    let mut bias = y.mean().expect("non-empty");
    let mut residual = &y - bias;
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_step = 0.0f64;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let rho = col.dot(&residual) / n + col_sq[j] * w[j];
            let updated = soft_threshold(rho, lambda) / col_sq[j];
            let step = updated - w[j];
            if step != 0.0 {
                residual.scaled_add(-step, &col);
                w[j] = updated;
                max_step = max_step.max(step.abs());
            }
        }
        let shift = residual.sum() / n;
        bias += shift;
        residual -= shift;
        max_step = max_step.max(shift.abs());
        if max_step < tol {
            converged = true;
            break;
        }
    }

    Ok(LinearModel {
        weights: w,
        bias,
        kind: LinearKind::Lasso {
            lambda,
            tol,
            max_sweeps,
            sweeps,
            converged,
        },
    })
}
