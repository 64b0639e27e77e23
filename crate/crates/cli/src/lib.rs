//! The `proper-speed` pipeline: generate, fuse, featurize, train, evaluate,
//! trace. Every stage reads its inputs from and writes its outputs to the
//! paths of one config file, so any run is reproducible from that file and
//! the seed.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use proper_speed::dataset::{
    generate_synthetic, load_manifest, read_manifest_unchecked, Scenario, Split,
};
use proper_speed::evaluation::{
    config_digest, evaluate_regime, export_trace, predict_trace, EvalReport, FittedRegime, Regime,
};
use proper_speed::features::{
    featurize, read_feature_table, write_feature_table, FeatureTable, PyramidConfig,
};
use proper_speed::fusion::{frame_score_dir, fuse_to_labels, read_score_map_set};
use proper_speed::labels::write_label_map;
use proper_speed::regressors::{
    cross_validate, read_model, train, write_model, RegressorModel, SolverKind,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use config::{parse_solvers, PipelineConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn missing(what: &str, path: &Path, hint: &str) -> Self {
        CliError::config(format!("missing {what} {} ({hint})", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<proper_speed::Error> for CliError {
    fn from(e: proper_speed::Error) -> Self {
        use proper_speed::Error as E;
        let code = match &e {
            E::Singular | E::Diverged { .. } => EXIT_NUMERICAL,
            E::InvalidArgument(_) | E::Empty(_) | E::MissingLabelMap { .. } => EXIT_CONFIG,
            _ => EXIT_IO,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "proper-speed",
    version,
    about = "Proper-speed regression from semantic label maps"
)]
pub struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, default_value = "proper-speed.toml")]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for fusion, featurization and cross-validation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Overrides train.regime: joint or independent.
    #[arg(long, global = true)]
    pub regime: Option<String>,
    /// Overrides train.solver: ols, lasso, svr, boosting, mlp or all.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Write a synthetic planted-relation dataset.
    Generate,
    /// Fuse multi-scale score maps into label maps.
    Fuse,
    /// Compute spatial-pyramid descriptors into the feature cache.
    Featurize,
    /// Fit the configured solvers under the configured regime.
    Train,
    /// Score trained models on the test rows and write the report.
    Evaluate,
    /// Write per-scenario speed traces (CSV and SVG) of trained models.
    Trace,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(regime) = &cli.regime {
        config.train.regime = regime.clone();
    }
    if let Some(solver) = &cli.solver {
        config.train.solver = solver.clone();
    }
    config.regime().map_err(CliError::config)?;
    config.solvers().map_err(CliError::config)?;

    let jobs = cli.jobs as usize;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Generate => generate(&config),
        Command::Fuse => fuse(&config, jobs),
        Command::Featurize => featurize_stage(&config, jobs),
        Command::Train => train_stage(&config),
        Command::Evaluate => evaluate_stage(&config),
        Command::Trace => trace_stage(&config),
    })
}

fn generate(config: &PipelineConfig) -> CliResult<()> {
    let mut synthetic = config.synthetic.clone();
    synthetic.rng_seed = config.seed;
    let data = generate_synthetic(&synthetic, &config.paths.manifest, &config.paths.score_dir)?;
    println!(
        "wrote {} frames to {}",
        data.manifest.len(),
        config.paths.manifest.display()
    );
    println!(
        "{:<8} {:<5} {:>6} {:>9} {:>8} {:>12} {:>11}",
        "scenario", "split", "frames", "mean_kmh", "std_kmh", "target_mean", "target_std"
    );
    for scenario in Scenario::ALL {
        for split in Split::ALL {
            let speeds: Vec<f64> = data
                .manifest
                .filter(Some(scenario), split)
                .samples
                .iter()
                .map(|s| s.speed_kmh)
                .collect();
            let n = speeds.len() as f64;
            let mean = speeds.iter().sum::<f64>() / n;
            let std = (speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let target = synthetic
                .target(scenario, split)
                .expect("validated targets");
            println!(
                "{:<8} {:<5} {:>6} {:>9.2} {:>8.2} {:>12.2} {:>11.2}",
                scenario.as_str(),
                split.as_str(),
                speeds.len(),
                mean,
                std,
                target.mean,
                target.std
            );
        }
    }
    Ok(())
}

fn require_file(path: &Path, what: &str, hint: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::missing(what, path, hint))
    }
}

fn fuse(config: &PipelineConfig, jobs: usize) -> CliResult<()> {
    let manifest_path = &config.paths.manifest;
    require_file(
        manifest_path,
        "manifest",
        "run `generate` or point paths.manifest at a dataset",
    )?;
    let manifest = read_manifest_unchecked(manifest_path)?;
    let one = |sample: &proper_speed::dataset::Sample| -> CliResult<()> {
        let dir = frame_score_dir(&config.paths.score_dir, &sample.frame_id);
        if !dir.is_dir() {
            return Err(CliError::missing(
                "score maps",
                &dir,
                "generate with synthetic.emit_score_maps = true",
            ));
        }
        let labels = fuse_to_labels(&read_score_map_set(&dir)?)?;
        labels.validate(manifest.class_count)?;
        write_label_map(&manifest.resolve(sample), &labels)?;
        Ok(())
    };
    if jobs > 1 {
        manifest.samples.par_iter().try_for_each(one)?;
    } else {
        manifest.samples.iter().try_for_each(one)?;
    }
    println!(
        "fused {} frames from {}",
        manifest.len(),
        config.paths.score_dir.display()
    );
    Ok(())
}

fn featurize_stage(config: &PipelineConfig, jobs: usize) -> CliResult<()> {
    require_file(&config.paths.manifest, "manifest", "run `generate` first")?;
    let manifest = load_manifest(&config.paths.manifest)?;
    let pyramid = config.feature_levels().map_err(CliError::config)?;
    let table = featurize(&manifest, pyramid, jobs)?;
    write_feature_table(&config.paths.feature_cache, &table)?;
    println!(
        "wrote {} descriptors of length {} (levels {}) to {}",
        table.len(),
        table.dim,
        pyramid.levels(),
        config.paths.feature_cache.display()
    );
    Ok(())
}

/// What `train` chose for one model; `evaluate` and `trace` read it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelectedModel {
    group: String,
    file: String,
    levels: usize,
    settings: String,
    digest: String,
    train_rows: usize,
    complexity: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Selection {
    solver: String,
    regime: String,
    models: Vec<SelectedModel>,
}

const SELECTION_FILE: &str = "selection.toml";

fn solver_dir(config: &PipelineConfig, regime: Regime, kind: SolverKind) -> PathBuf {
    config
        .paths
        .model_dir
        .join(regime.as_str())
        .join(kind.as_str())
}

/// Training groups of a regime: name and the scenario filter.
fn groups(regime: Regime) -> Vec<(&'static str, Option<Scenario>)> {
    match regime {
        Regime::Joint => vec![("joint", None)],
        Regime::Independent => vec![
            ("urban", Some(Scenario::Urban)),
            ("highway", Some(Scenario::Highway)),
        ],
    }
}

struct Inputs {
    table: FeatureTable,
    class_count: usize,
}

fn load_inputs(config: &PipelineConfig) -> CliResult<Inputs> {
    require_file(&config.paths.manifest, "manifest", "run `generate` first")?;
    require_file(
        &config.paths.feature_cache,
        "feature cache",
        "run `featurize` first",
    )?;
    let class_count = read_manifest_unchecked(&config.paths.manifest)?.class_count;
    let table = read_feature_table(&config.paths.feature_cache)?;
    PyramidConfig::from_descriptor_len(table.dim, class_count)?;
    Ok(Inputs { table, class_count })
}

fn cache_levels(inputs: &Inputs) -> usize {
    PyramidConfig::from_descriptor_len(inputs.table.dim, inputs.class_count)
        .expect("checked on load")
        .levels()
}

fn train_stage(config: &PipelineConfig) -> CliResult<()> {
    let inputs = load_inputs(config)?;
    let regime = config.regime().map_err(CliError::config)?;
    let available = cache_levels(&inputs);
    let wanted = config.feature_levels().map_err(CliError::config)?;
    if wanted.levels() > available {
        return Err(CliError::config(format!(
            "feature cache holds {available} pyramid levels but {} are configured; rerun `featurize`",
            wanted.levels()
        )));
    }
    for kind in config.solvers().map_err(CliError::config)? {
        let dir = solver_dir(config, regime, kind);
        let mut models = Vec::new();
        for (group, scenario) in groups(regime) {
            let rows = inputs.table.select(scenario, Split::Train);
            if rows.is_empty() {
                return Err(CliError::config(format!("no train rows for group {group}")));
            }
            let (x, y) = rows.design(inputs.table.dim)?;
            let (settings, pyramid, cv_mae) = if config.cv.enabled {
                let levels = config.cv_levels().map_err(CliError::config)?;
                let outcome = cross_validate(
                    x.view(),
                    y.view(),
                    inputs.class_count,
                    kind,
                    &config.cv_grid(kind),
                    &levels,
                    config.cv.folds,
                )?;
                (
                    outcome.best.config,
                    outcome.best.pyramid,
                    Some(outcome.best.mean_mae),
                )
            } else {
                (
                    config.train_config(),
                    config.pyramid().map_err(CliError::config)?,
                    None,
                )
            };
            let columns = pyramid.descriptor_len(inputs.class_count);
            let (xs, _) = rows.design(columns)?;
            let model = train(kind, xs.view(), y.view(), &settings)?;
            let file = format!("{group}.model");
            write_model(&dir.join(&file), &model)?;
            eprintln!(
                "train: {} {} {group}: rows={} levels={} complexity={} converged={}{}",
                kind,
                regime,
                rows.len(),
                pyramid.levels(),
                model.complexity(),
                model.converged(),
                cv_mae
                    .map(|m| format!(" cv_mae={m:.4}"))
                    .unwrap_or_default()
            );
            models.push(SelectedModel {
                group: group.into(),
                file,
                levels: pyramid.levels(),
                settings: settings.describe(kind),
                digest: config_digest(kind, &settings, pyramid),
                train_rows: rows.len(),
                complexity: model.complexity(),
                converged: model.converged(),
                cv_mae,
            });
        }
        let selection = Selection {
            solver: kind.as_str().into(),
            regime: regime.as_str().into(),
            models,
        };
        let path = dir.join(SELECTION_FILE);
        let text = toml::to_string(&selection).map_err(|e| CliError::config(e.to_string()))?;
        fs::write(&path, text).map_err(|e| proper_speed::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        println!("trained {kind} ({regime}) into {}", dir.display());
    }
    Ok(())
}

struct Trained {
    fitted: FittedRegime,
    digests: [String; 2],
}

fn load_trained(config: &PipelineConfig, regime: Regime, kind: SolverKind) -> CliResult<Trained> {
    let dir = solver_dir(config, regime, kind);
    let hint = "run `train` first";
    let selection_path = dir.join(SELECTION_FILE);
    require_file(&selection_path, "model selection", hint)?;
    let text = fs::read_to_string(&selection_path).map_err(|e| proper_speed::Error::Io {
        path: selection_path.clone(),
        source: e,
    })?;
    let selection: Selection = toml::from_str(&text).map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("{}: {e}", selection_path.display()),
    })?;
    let mut loaded: Vec<(String, RegressorModel, String)> = Vec::new();
    for (group, _) in groups(regime) {
        let model_path = dir.join(format!("{group}.model"));
        require_file(&model_path, "trained model", hint)?;
        let digest = selection
            .models
            .iter()
            .find(|m| m.group == group)
            .map(|m| m.digest.clone())
            .ok_or_else(|| {
                CliError::missing(&format!("{group} entry in"), &selection_path, hint)
            })?;
        loaded.push((group.to_string(), read_model(&model_path)?, digest));
    }
    let mut it = loaded.into_iter();
    Ok(match regime {
        Regime::Joint => {
            let (_, model, digest) = it.next().expect("one group");
            Trained {
                fitted: FittedRegime::Joint(model),
                digests: [digest.clone(), digest],
            }
        }
        Regime::Independent => {
            let (_, urban, du) = it.next().expect("urban group");
            let (_, highway, dh) = it.next().expect("highway group");
            Trained {
                fitted: FittedRegime::Independent { urban, highway },
                digests: [du, dh],
            }
        }
    })
}

fn evaluate_stage(config: &PipelineConfig) -> CliResult<()> {
    let inputs = load_inputs(config)?;
    let regime = config.regime().map_err(CliError::config)?;
    let mut report: Option<EvalReport> = None;
    for kind in config.solvers().map_err(CliError::config)? {
        let trained = load_trained(config, regime, kind)?;
        let part = evaluate_regime(
            &inputs.table,
            &trained.fitted,
            kind.method_name(),
            [&trained.digests[0], &trained.digests[1]],
        )?;
        match &mut report {
            None => report = Some(part),
            Some(r) => r.merge(part)?,
        }
    }
    let report = report.expect("at least one solver");
    let dir = &config.paths.report_dir;
    fs::create_dir_all(dir).map_err(|e| proper_speed::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let name = report_name(config, regime);
    for (ext, text) in [
        ("csv", report.to_csv_string()),
        ("txt", report.to_text_table()),
    ] {
        let path = dir.join(format!("{name}.{ext}"));
        fs::write(&path, text).map_err(|e| proper_speed::Error::Io { path, source: e })?;
    }
    print!("{}", report.to_text_table());
    println!(
        "report written to {}",
        dir.join(format!("{name}.csv")).display()
    );
    Ok(())
}

fn report_name(config: &PipelineConfig, regime: Regime) -> String {
    format!("report_{regime}_{}", config.train.solver)
}

fn trace_stage(config: &PipelineConfig) -> CliResult<()> {
    let inputs = load_inputs(config)?;
    let regime = config.regime().map_err(CliError::config)?;
    let dir = config.paths.report_dir.join("traces");
    for kind in parse_solvers(&config.train.solver).map_err(CliError::config)? {
        let trained = load_trained(config, regime, kind)?;
        for scenario in Scenario::ALL {
            let trace = predict_trace(&inputs.table, &trained.fitted, scenario)?;
            let (csv, svg) = export_trace(&trace, &dir, &format!("{regime}_{kind}_{scenario}"))?;
            println!(
                "{kind} {scenario}: MAE {:.2} km/h over {} frames -> {}, {}",
                trace.mae()?,
                trace.points.len(),
                csv.display(),
                svg.display()
            );
        }
    }
    Ok(())
}
