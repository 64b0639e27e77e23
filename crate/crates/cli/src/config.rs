use std::fs;
use std::path::{Path, PathBuf};

use proper_speed::dataset::SyntheticConfig;
use proper_speed::evaluation::Regime;
use proper_speed::features::{PyramidConfig, MAX_LEVELS};
use proper_speed::regressors::{
    BoostingParams, LassoParams, MlpParams, OlsParams, SolverKind, SvrParams, TrainConfig,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    pub score_dir: PathBuf,
    pub feature_cache: PathBuf,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            manifest: "data/manifest.csv".into(),
            score_dir: "data/scores".into(),
            feature_cache: "cache/features.csv".into(),
            model_dir: "models".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSection {
    pub levels: usize,
}

impl Default for PyramidSection {
    fn default() -> Self {
        PyramidSection { levels: MAX_LEVELS }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// A solver name or `all`.
    pub solver: String,
    pub regime: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            solver: "ols".into(),
            regime: "independent".into(),
        }
    }
}

/// Cross-validation grid. An empty list keeps the value of the solver's own
/// section.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub enabled: bool,
    pub folds: usize,
    pub levels: Vec<usize>,
    pub ols_lambda: Vec<f64>,
    pub lasso_lambda: Vec<f64>,
    pub svr_cost: Vec<f64>,
    pub svr_epsilon: Vec<f64>,
    pub boosting_tree_count: Vec<usize>,
    pub boosting_max_depth: Vec<usize>,
    pub boosting_shrinkage: Vec<f64>,
    pub mlp_hidden: Vec<usize>,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            enabled: false,
            folds: 5,
            levels: vec![1, 2, 3],
            ols_lambda: Vec::new(),
            lasso_lambda: Vec::new(),
            svr_cost: Vec::new(),
            svr_epsilon: Vec::new(),
            boosting_tree_count: Vec::new(),
            boosting_max_depth: Vec::new(),
            boosting_shrinkage: Vec::new(),
            mlp_hidden: Vec::new(),
        }
    }
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds the generator and every stochastic solver.
    pub seed: u64,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub pyramid: PyramidSection,
    pub train: TrainSection,
    pub ols: OlsParams,
    pub lasso: LassoParams,
    pub svr: SvrParams,
    pub boosting: BoostingParams,
    pub mlp: MlpParams,
    pub cv: CvSection,
}

fn config_error(path: &Path, message: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{}: {message}", path.display()))
}

impl PipelineConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| config_error(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| config_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.paths.manifest,
            &mut config.paths.score_dir,
            &mut config.paths.feature_cache,
            &mut config.paths.model_dir,
            &mut config.paths.report_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let synthetic_seed = table
            .get("synthetic")
            .and_then(|s| s.get("rng_seed"))
            .is_some();
        if synthetic_seed {
            return Err("set the top-level `seed` instead of synthetic.rng_seed".into());
        }
        let config: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        config.pyramid()?;
        config.regime()?;
        config.solvers()?;
        if config.cv.enabled {
            if config.cv.folds < 2 {
                return Err("cv.folds must be at least 2".into());
            }
            if config.cv.levels.is_empty() {
                return Err("cv.levels must not be empty".into());
            }
            config.cv_levels()?;
        }
        Ok(config)
    }

    pub fn pyramid(&self) -> Result<PyramidConfig, String> {
        PyramidConfig::new(self.pyramid.levels).map_err(|e| e.to_string())
    }

    pub fn cv_levels(&self) -> Result<Vec<PyramidConfig>, String> {
        self.cv
            .levels
            .iter()
            .map(|&l| PyramidConfig::new(l).map_err(|e| e.to_string()))
            .collect()
    }

    /// Deepest pyramid any training step may ask for.
    pub fn feature_levels(&self) -> Result<PyramidConfig, String> {
        let mut deepest = self.pyramid()?;
        if self.cv.enabled {
            deepest = self
                .cv_levels()?
                .into_iter()
                .fold(deepest, PyramidConfig::max);
        }
        Ok(deepest)
    }

    pub fn regime(&self) -> Result<Regime, String> {
        self.train.regime.parse()
    }

    pub fn solvers(&self) -> Result<Vec<SolverKind>, String> {
        parse_solvers(&self.train.solver)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            ols: self.ols.clone(),
            lasso: self.lasso.clone(),
            svr: self.svr.clone(),
            boosting: self.boosting.clone(),
            mlp: self.mlp.clone(),
            seed: self.seed,
        }
    }

    /// Every combination of the cross-validation lists for `kind`.
    pub fn cv_grid(&self, kind: SolverKind) -> Vec<TrainConfig> {
        let base = self.train_config();
        let cv = &self.cv;
        let mut grid = vec![base];
        fn expand<T: Clone>(
            grid: Vec<TrainConfig>,
            values: &[T],
            set: fn(&mut TrainConfig, T),
        ) -> Vec<TrainConfig> {
            if values.is_empty() {
                return grid;
            }
            grid.into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        set(&mut c, v.clone());
                        c
                    })
                })
                .collect()
        }
        match kind {
            SolverKind::Ols => grid = expand(grid, &cv.ols_lambda, |c, v| c.ols.lambda = v),
            SolverKind::Lasso => grid = expand(grid, &cv.lasso_lambda, |c, v| c.lasso.lambda = v),
            SolverKind::Svr => {
                grid = expand(grid, &cv.svr_cost, |c, v| c.svr.cost = v);
                grid = expand(grid, &cv.svr_epsilon, |c, v| c.svr.epsilon = v);
            }
            SolverKind::Boosting => {
                grid = expand(grid, &cv.boosting_tree_count, |c, v| {
                    c.boosting.tree_count = v
                });
                grid = expand(grid, &cv.boosting_max_depth, |c, v| {
                    c.boosting.max_depth = v
                });
                grid = expand(grid, &cv.boosting_shrinkage, |c, v| {
                    c.boosting.shrinkage = v
                });
            }
            SolverKind::Mlp => grid = expand(grid, &cv.mlp_hidden, |c, v| c.mlp.hidden = v),
        }
        grid
    }
}

pub fn parse_solvers(text: &str) -> Result<Vec<SolverKind>, String> {
    if text == "all" {
        Ok(SolverKind::ALL.to_vec())
    } else {
        Ok(vec![text.parse()?])
    }
}
