//! The regressor suite: least squares, lasso, linear SVR, boosted trees and a
//! small MLP, all behind one training entry point.

mod boosting;
mod cv;
mod linear;
mod mlp;
mod model_io;
mod svr;

pub use boosting::{fit_boosting, BoostedModel, Node, RegressionTree};
pub use cv::{contiguous_folds, cross_validate, CvOutcome, CvPoint};
pub use linear::{
    check_standardized, fit_lasso, fit_ols, lasso_lambda_max, ols_gradient, soft_threshold,
    LinearKind, LinearModel,
};
pub use mlp::{fit_mlp, MlpModel};
pub use model_io::{
    decode_model, encode_model, read_model, write_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use svr::{fit_svr, svr_objective};

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Standardization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Ols,
    Lasso,
    Svr,
    Boosting,
    Mlp,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [
        SolverKind::Ols,
        SolverKind::Lasso,
        SolverKind::Svr,
        SolverKind::Boosting,
        SolverKind::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Ols => "ols",
            SolverKind::Lasso => "lasso",
            SolverKind::Svr => "svr",
            SolverKind::Boosting => "boosting",
            SolverKind::Mlp => "mlp",
        }
    }

    /// Row label used in evaluation tables.
    pub fn method_name(self) -> &'static str {
        match self {
            SolverKind::Ols => "SS + Linear regression",
            SolverKind::Lasso => "SS + Lasso regression",
            SolverKind::Svr => "SS + SVR",
            SolverKind::Boosting => "SS + Boosting Trees",
            SolverKind::Mlp => "MLP (Euclidean loss)",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown solver {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlsParams {
    /// Ridge strength; 0 is plain least squares.
    pub lambda: f64,
}

impl Default for OlsParams {
    fn default() -> Self {
        OlsParams { lambda: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoParams {
    pub lambda: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams {
            lambda: 0.1,
            tol: 1e-8,
            max_sweeps: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrParams {
    pub cost: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Multiplier of the base step size.
    pub step_scale: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            cost: 1.0,
            epsilon: 1.0,
            epochs: 50,
            step_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// Fraction of rows each tree is grown on.
    pub subsample: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams {
            tree_count: 100,
            max_depth: 3,
            shrinkage: 0.1,
            subsample: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Iteration at which the learning rate drops to `decayed_rate`.
    pub decay_after: usize,
    pub decayed_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: 16,
            iterations: 4000,
            learning_rate: 1e-4,
            decay_after: 2000,
            decayed_rate: 1e-5,
            momentum: 0.9,
            batch_size: 20,
        }
    }
}

impl MlpParams {
    pub fn rate_at(&self, iteration: usize) -> f64 {
        if iteration < self.decay_after {
            self.learning_rate
        } else {
            self.decayed_rate
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "MLP hidden width and batch size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.decayed_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "MLP learning rates must be > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Hyperparameters of every solver plus the seed shared by the stochastic
/// ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ols: OlsParams,
    pub lasso: LassoParams,
    pub svr: SvrParams,
    pub boosting: BoostingParams,
    pub mlp: MlpParams,
    pub seed: u64,
}

impl TrainConfig {
    /// Canonical text of the settings that matter for `kind`.
    pub fn describe(&self, kind: SolverKind) -> String {
        match kind {
            SolverKind::Ols => format!("ols lambda={:e}", self.ols.lambda),
            SolverKind::Lasso => format!(
                "lasso lambda={:e} tol={:e} max_sweeps={}",
                self.lasso.lambda, self.lasso.tol, self.lasso.max_sweeps
            ),
            SolverKind::Svr => format!(
                "svr cost={:e} epsilon={:e} epochs={} step_scale={:e} seed={}",
                self.svr.cost, self.svr.epsilon, self.svr.epochs, self.svr.step_scale, self.seed
            ),
            SolverKind::Boosting => format!(
                "boosting trees={} depth={} shrinkage={:e} subsample={:e} seed={}",
                self.boosting.tree_count,
                self.boosting.max_depth,
                self.boosting.shrinkage,
                self.boosting.subsample,
                self.seed
            ),
            SolverKind::Mlp => {
                let m = &self.mlp;
                format!(
                    "mlp hidden={} iterations={} lr={:e}->{:e}@{} momentum={:e} batch={} seed={}",
                    m.hidden,
                    m.iterations,
                    m.learning_rate,
                    m.decayed_rate,
                    m.decay_after,
                    m.momentum,
                    m.batch_size,
                    self.seed
                )
            }
        }
    }
}

/// A trained predictor of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressorModel {
    Linear(LinearModel),
    Boosted(BoostedModel),
    Mlp(MlpModel),
}

impl RegressorModel {
    pub fn dim(&self) -> usize {
        match self {
            RegressorModel::Linear(m) => m.dim(),
            RegressorModel::Boosted(m) => m.feature_count,
            RegressorModel::Mlp(m) => m.input_dim(),
        }
    }

    /// Unclamped model output.
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            RegressorModel::Linear(m) => m.decision(x),
            RegressorModel::Boosted(m) => m.decision(x),
            RegressorModel::Mlp(m) => m.decision(x),
        }
    }

    /// Size measure used to break ties between equally accurate models.
    pub fn complexity(&self) -> usize {
        match self {
            RegressorModel::Linear(m) => m.nonzero_weights(),
            RegressorModel::Boosted(m) => m.tree_count(),
            RegressorModel::Mlp(m) => m.hidden_width(),
        }
    }

    /// Whether the solver reached its stopping criterion (only lasso can
    /// fail to).
    pub fn converged(&self) -> bool {
        !matches!(
            self,
            RegressorModel::Linear(LinearModel {
                kind: LinearKind::Lasso {
                    converged: false,
                    ..
                },
                ..
            })
        )
    }
}

/// Predicted speed in km/h, clamped below at zero.
pub fn predict(model: &RegressorModel, x: ArrayView1<f64>) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    Ok(model.decision(x).max(0.0))
}

pub fn predict_rows(model: &RegressorModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    x.rows().into_iter().map(|r| predict(model, r)).collect()
}

/// Fits `kind` on raw features. Linear solvers run on standardized columns
/// and the result is mapped back to raw-feature weights; the MLP keeps its
/// standardization internally; trees see raw features.
pub fn train(
    kind: SolverKind,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    config: &TrainConfig,
) -> Result<RegressorModel> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    let linear = |fit: &dyn Fn(ArrayView2<f64>) -> Result<LinearModel>| -> Result<RegressorModel> {
        let s = Standardization::fit(x)?;
        let z = s.apply(x)?;
        Ok(RegressorModel::Linear(fit(z.view())?.destandardize(&s)))
    };
    match kind {
        SolverKind::Ols => linear(&|z| fit_ols(z, y, config.ols.lambda)),
        SolverKind::Lasso => linear(&|z| {
            let p = &config.lasso;
            fit_lasso(z, y, p.lambda, p.tol, p.max_sweeps)
        }),
        SolverKind::Svr => linear(&|z| {
            let p = &config.svr;
            fit_svr(z, y, p.cost, p.epsilon, p.epochs, p.step_scale, config.seed)
        }),
        SolverKind::Boosting => {
            let p = &config.boosting;
            fit_boosting(
                x,
                y,
                p.tree_count,
                p.max_depth,
                p.shrinkage,
                p.subsample,
                config.seed,
            )
            .map(RegressorModel::Boosted)
        }
        SolverKind::Mlp => fit_mlp(x, y, &config.mlp, config.seed).map(RegressorModel::Mlp),
    }
}
