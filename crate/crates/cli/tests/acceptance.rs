//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints exactly one PASS or FAIL line, whatever the capture settings.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use proper_speed::evaluation::mae;
use proper_speed::features::{spp_descriptor, PyramidConfig, Standardization};
use proper_speed::fusion::{argmax_labels, fuse_scales, scaled_dim, ScoreMap, ScoreMapSet};
use proper_speed::labels::{LabelMap, VOID_ID};
use proper_speed::regressors::{
    fit_boosting, fit_lasso, fit_ols, fit_svr, svr_objective, MlpModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed < budget, || {
        format!("took {elapsed:.2?}, budget {budget:.0?}")
    })
}

// ---------------------------------------------------------------- descriptor

fn descriptor_oracle(labels: &[u8], side: usize, levels: usize, classes: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for level in 0..levels {
        let n = 1 << level;
        let mut counts = vec![vec![0u64; classes]; n * n];
        let mut totals = vec![0u64; n * n];
        for y in 0..side {
            for x in 0..side {
                let label = labels[y * side + x];
                if label == VOID_ID {
                    continue;
                }
                let cell = (y * n / side) * n + x * n / side;
                counts[cell][label as usize] += 1;
                totals[cell] += 1;
            }
        }
        for (cell, total) in counts.iter().zip(&totals) {
            for &c in cell {
                out.push(if *total == 0 {
                    0.0
                } else {
                    c as f64 / *total as f64
                });
            }
        }
    }
    out
}

fn descriptor_correctness() -> Check {
    let (side, classes) = (8, 19);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut compared = 0;
    for fixture in 0..25 {
        let void_rate = [0.0, 0.2, 0.6, 1.0][fixture % 4];
        let labels: Vec<u8> = (0..side * side)
            .map(|_| {
                if rng.random::<f64>() < void_rate {
                    VOID_ID
                } else {
                    rng.random_range(0..classes as u8)
                }
            })
            .collect();
        let map = LabelMap::new(side, side, labels.clone()).map_err(|e| e.to_string())?;
        for levels in 1..=3 {
            let pyramid = PyramidConfig::new(levels).map_err(|e| e.to_string())?;
            let got = spp_descriptor(&map, pyramid, classes).map_err(|e| e.to_string())?;
            let expected = descriptor_oracle(&labels, side, levels, classes);
            ensure(got.values.len() == expected.len(), || {
                format!("fixture {fixture} L={levels}: length {}", got.values.len())
            })?;
            let worst = got
                .values
                .iter()
                .zip(&expected)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            ensure(worst <= 1e-12, || {
                format!("fixture {fixture} L={levels}: max deviation {worst:e}")
            })?;
            compared += 1;
        }
    }
    let elapsed = start.elapsed();
    let len = PyramidConfig::new(3).unwrap().descriptor_len(classes);
    ensure(len == 399, || {
        format!("descriptor length {len} at C=19, L=3")
    })?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "{compared} descriptors match the pixel-count oracle, length 399, {elapsed:.2?}"
    ))
}

// -------------------------------------------------------------------- fusion

fn fusion_correctness() -> Check {
    let (side, scales) = (16usize, [0.5, 0.75, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let start = Instant::now();
    let mut ties = 0usize;
    for fixture in 0..25 {
        let classes = rng.random_range(2..=6);
        // coarse integer scores make ties frequent
        let raw: Vec<(usize, Vec<f32>)> = scales
            .iter()
            .map(|&s| {
                let dim = scaled_dim(s, side);
                let scores = (0..dim * dim * classes)
                    .map(|_| rng.random_range(0..4) as f32)
                    .collect();
                (dim, scores)
            })
            .collect();
        let entries = scales
            .iter()
            .zip(&raw)
            .map(|(&s, (dim, scores))| {
                ScoreMap::new(*dim, *dim, classes, scores.clone()).map(|m| (s, m))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let set = ScoreMapSet::new(entries, side, side).map_err(|e| e.to_string())?;
        let fused = fuse_scales(&set).map_err(|e| e.to_string())?;
        let labels = argmax_labels(&fused);

        for y in 0..side {
            for x in 0..side {
                let mut best = vec![f32::NEG_INFINITY; classes];
                for (dim, scores) in &raw {
                    let (sy, sx) = (y * dim / side, x * dim / side);
                    for (c, b) in best.iter_mut().enumerate() {
                        *b = b.max(scores[(sy * dim + sx) * classes + c]);
                    }
                }
                let top = best.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let winner = best.iter().position(|&v| v == top).unwrap();
                ties += usize::from(best.iter().filter(|&&v| v == top).count() > 1);
                ensure(fused.pixel(y, x) == best.as_slice(), || {
                    format!("fixture {fixture} ({y},{x}): fused scores differ")
                })?;
                ensure(labels.get(y, x) as usize == winner, || {
                    format!(
                        "fixture {fixture} ({y},{x}): label {} vs {winner}",
                        labels.get(y, x)
                    )
                })?;
            }
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "25 sets match the max/argmax oracle, {ties} tied pixels, {elapsed:.2?}"
    ))
}

// ------------------------------------------------------------------- solvers

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn ols_stationarity(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0f64;
    for lambda in [0.0, 0.5] {
        let x = random_matrix(rng, 60, 6);
        let truth = Array1::from(vec![1.5, -2.0, 0.0, 0.7, 3.0, -0.4]);
        let y = x.dot(&truth) + 2.0 + random_matrix(rng, 60, 1).column(0).to_owned() * 0.3;
        let m = fit_ols(x.view(), y.view(), lambda).map_err(|e| e.to_string())?;
        let r = x.dot(&m.weights) + m.bias - &y;
        let mut g = x.t().dot(&r) * 2.0 + &m.weights * (2.0 * lambda);
        let gb = 2.0 * r.sum();
        g.push(Axis(0), ndarray::aview0(&gb)).unwrap();
        let norm = g.dot(&g).sqrt();
        ensure(norm < 1e-8, || {
            format!("OLS lambda={lambda}: |grad| = {norm:e}")
        })?;
        worst = worst.max(norm);
    }
    Ok(format!("OLS |grad| {worst:.1e}"))
}

fn lasso_kkt(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let raw = random_matrix(rng, 80, 10);
    let s = Standardization::fit(raw.view()).map_err(|e| e.to_string())?;
    let x = s.apply(raw.view()).map_err(|e| e.to_string())?;
    let truth = Array1::from(vec![2.0, 0.0, -1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0]);
    let y = x.dot(&truth) + 4.0 + random_matrix(rng, 80, 1).column(0).to_owned() * 0.5;
    let n = x.nrows() as f64;
    let yc = &y - y.mean().unwrap();
    let lambda_max = x
        .t()
        .dot(&yc)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs() / n));

    let mut worst = 0.0f64;
    for frac in [0.05, 0.2, 0.6] {
        let lambda = frac * lambda_max;
        let m =
            fit_lasso(x.view(), y.view(), lambda, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
        let r = &y - &(x.dot(&m.weights) + m.bias);
        let g = x.t().dot(&r) / n;
        for (j, (&gj, &wj)) in g.iter().zip(&m.weights).enumerate() {
            let residual = if wj != 0.0 {
                (gj - lambda * wj.signum()).abs()
            } else {
                (gj.abs() - lambda).max(0.0)
            };
            ensure(residual <= 1e-6, || {
                format!("lasso lambda={lambda:.3}: coordinate {j} KKT residual {residual:e}")
            })?;
            worst = worst.max(residual);
        }
        let bias_residual = r.mean().unwrap().abs();
        ensure(bias_residual <= 1e-6, || {
            format!("lasso lambda={lambda:.3}: mean residual {bias_residual:e}")
        })?;
    }
    for frac in [1.0, 1.5, 10.0] {
        let m = fit_lasso(x.view(), y.view(), frac * lambda_max, 1e-12, 1_000_000)
            .map_err(|e| e.to_string())?;
        ensure(m.weights.iter().all(|&w| w == 0.0), || {
            format!(
                "lasso at {frac} lambda_max has nonzero weights {:?}",
                m.weights
            )
        })?;
    }
    Ok(format!("lasso KKT {worst:.1e}, zero at >= lambda_max"))
}

fn boosting_monotone(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let x = random_matrix(rng, 200, 3);
    let y = Array1::from_shape_fn(200, |i| {
        let r = x.row(i);
        (3.0 * r[0]).sin() + r[1] * r[2] + 0.1 * rng.random_range(-1.0..1.0)
    });
    let m = fit_boosting(x.view(), y.view(), 50, 3, 0.1, 1.0, 0).map_err(|e| e.to_string())?;
    ensure(m.trees.len() == 50, || format!("{} trees", m.trees.len()))?;
    let mut pred = Array1::from_elem(200, m.base_prediction);
    let mse = |p: &Array1<f64>| (p - &y).mapv(|v| v * v).mean().unwrap();
    let mut prev = mse(&pred);
    let first = prev;
    for (t, tree) in m.trees.iter().enumerate() {
        for (p, row) in pred.iter_mut().zip(x.axis_iter(Axis(0))) {
            *p += m.shrinkage * tree.predict(row);
        }
        let now = mse(&pred);
        ensure(now <= prev, || {
            format!("boosting MSE rose at tree {t}: {prev} -> {now}")
        })?;
        prev = now;
    }
    Ok(format!("boosting MSE {first:.3} -> {prev:.3}"))
}

fn svr_grid_optimum(x: &[f64], y: &[f64], cost: f64, eps: f64) -> f64 {
    let obj = |w: f64, b: f64| {
        0.5 * w * w
            + cost
                * x.iter()
                    .zip(y)
                    .map(|(xi, yi)| ((yi - w * xi - b).abs() - eps).max(0.0))
                    .sum::<f64>()
    };
    let (mut wc, mut bc, mut span) = (0.0, 0.0, 32.0);
    let mut best = obj(wc, bc);
    for _ in 0..45 {
        let (w0, b0) = (wc, bc);
        for i in -32..=32 {
            for j in -32..=32 {
                let (w, b) = (w0 + span * i as f64 / 32.0, b0 + span * j as f64 / 32.0);
                let v = obj(w, b);
                if v < best {
                    (best, wc, bc) = (v, w, b);
                }
            }
        }
        span *= 0.5;
    }
    best
}

fn svr_fixtures(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let line: Vec<f64> = (0..21).map(|i| -1.0 + i as f64 * 0.1).collect();
    let noisy: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
    let fixtures = [
        // inside a 0.1 tube around 2x + 1
        (
            line.clone(),
            line.iter()
                .map(|x| 2.0 * x + 1.0 + 0.05 * (7.0 * x).sin())
                .collect::<Vec<_>>(),
            100.0,
            0.1,
        ),
        (
            noisy.clone(),
            noisy
                .iter()
                .enumerate()
                .map(|(i, x)| -1.5 * x + 3.0 + if i % 9 == 0 { 6.0 } else { 0.0 })
                .collect(),
            1.0,
            0.2,
        ),
        (
            noisy.clone(),
            noisy
                .iter()
                .map(|x| 0.3 * x - 2.0 + rng.random_range(-1.0..1.0))
                .collect(),
            0.5,
            0.5,
        ),
    ];
    let mut worst = 0.0f64;
    for (k, (xs, ys, cost, eps)) in fixtures.into_iter().enumerate() {
        let x = Array2::from_shape_vec((xs.len(), 1), xs.clone()).unwrap();
        let y = Array1::from(ys.clone());
        let m = fit_svr(x.view(), y.view(), cost, eps, 4000, 1.0, 3).map_err(|e| e.to_string())?;
        let got = svr_objective(m.weights.view(), m.bias, x.view(), y.view(), cost, eps);
        let zero = svr_objective(Array1::zeros(1).view(), 0.0, x.view(), y.view(), cost, eps);
        let optimum = svr_grid_optimum(&xs, &ys, cost, eps);
        ensure(got <= zero, || {
            format!("SVR fixture {k}: {got} > zero model {zero}")
        })?;
        let gap = (got - optimum) / optimum;
        ensure(gap <= 0.01, || {
            format!("SVR fixture {k}: objective {got} vs grid optimum {optimum}")
        })?;
        worst = worst.max(gap);
    }
    Ok(format!("SVR gap {:.2}%", 100.0 * worst))
}

fn mlp_gradient(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let z = random_matrix(rng, 7, 4) * 2.0;
    let y = Array1::from_shape_fn(7, |_| rng.random_range(-3.0..3.0));
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let model = MlpModel::random(4, 6, 0.5, seed);
        let (_, analytic) = model.loss_and_gradient(z.view(), y.view());
        let params = model.params();
        let mut probe = model.clone();
        let h = 1e-6;
        for (k, &g) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[k] = params[k] + h;
            probe.set_params(&p).map_err(|e| e.to_string())?;
            let up = probe.loss_and_gradient(z.view(), y.view()).0;
            p[k] = params[k] - h;
            probe.set_params(&p).map_err(|e| e.to_string())?;
            let down = probe.loss_and_gradient(z.view(), y.view()).0;
            let numeric = (up - down) / (2.0 * h);
            let scale = g.abs().max(numeric.abs());
            if scale < 1e-9 {
                continue;
            }
            let rel = (g - numeric).abs() / scale;
            ensure(rel <= 1e-4, || {
                format!("MLP seed {seed} param {k}: analytic {g} vs numeric {numeric}")
            })?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("MLP gradient rel {worst:.1e}"))
}

fn solver_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let start = Instant::now();
    let parts = [
        ols_stationarity(&mut rng)?,
        lasso_kkt(&mut rng)?,
        boosting_monotone(&mut rng)?,
        svr_fixtures(&mut rng)?,
        mlp_gradient(&mut rng)?,
    ];
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("{}, {elapsed:.2?}", parts.join("; ")))
}

// ---------------------------------------------------------------- pipeline

struct Workspace {
    dir: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new(root: &Path, name: &str, config: &str) -> Workspace {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pipeline.toml");
        fs::write(&path, config).unwrap();
        Workspace { dir, config: path }
    }

    fn run(&self, args: &[&str]) -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_proper-speed"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "`{}` failed with {}: {}",
                args.join(" "),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn run_all(&self, steps: &[&[&str]]) -> Result<(), String> {
        steps.iter().try_for_each(|s| self.run(s).map(drop))
    }

    /// `(method, scenario) -> MAE` from one report file.
    fn report(
        &self,
        regime: &str,
        solver: &str,
    ) -> Result<BTreeMap<(String, String), f64>, String> {
        let path = self
            .dir
            .join("reports")
            .join(format!("report_{regime}_{solver}.csv"));
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut out = BTreeMap::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let value: f64 = f[3].parse().map_err(|_| format!("bad MAE in {line}"))?;
            out.insert((f[1].to_string(), f[2].to_string()), value);
        }
        Ok(out)
    }
}

fn pipeline_config(seed: u64, frames: usize, noise: f64, solver: &str) -> String {
    format!(
        "seed = {seed}\n\
         [synthetic]\n\
         frames_per_scenario_split = {frames}\n\
         noise_std = {noise:?}\n\
         [ols]\n\
         lambda = 1e-8\n\
         [train]\n\
         solver = \"{solver}\"\n\
         regime = \"independent\"\n"
    )
}

fn ols_maes(ws: &Workspace, regime: &str) -> Result<(f64, f64), String> {
    let report = ws.report(regime, "ols")?;
    let get = |s: &str| {
        report
            .iter()
            .find(|((_, scenario), _)| scenario == s)
            .map(|(_, &v)| v)
            .ok_or_else(|| format!("no {s} row in the {regime} report"))
    };
    Ok((get("urban")?, get("highway")?))
}

fn planted_recovery(noisy: &Workspace, root: &Path) -> Check {
    let steps: [&[&str]; 4] = [&["generate"], &["featurize"], &["train"], &["evaluate"]];
    let start = Instant::now();
    noisy.run_all(&steps)?;
    let elapsed = start.elapsed();
    let (urban, highway) = ols_maes(noisy, "independent")?;
    ensure(urban <= 3.5 && highway <= 3.5, || {
        format!("noise 3: MAE urban {urban:.3}, highway {highway:.3} (limit 3.5)")
    })?;
    within(elapsed, Duration::from_secs(120))?;

    let clean = Workspace::new(root, "clean", &pipeline_config(7, 2000, 0.0, "ols"));
    let start_clean = Instant::now();
    clean.run_all(&steps)?;
    let elapsed_clean = start_clean.elapsed();
    let (cu, ch) = ols_maes(&clean, "independent")?;
    ensure(cu < 1e-6 && ch < 1e-6, || {
        format!("noise 0: MAE urban {cu:e}, highway {ch:e} (limit 1e-6)")
    })?;
    within(elapsed_clean, Duration::from_secs(120))?;
    Ok(format!(
        "noise 3: urban {urban:.3}, highway {highway:.3} km/h in {elapsed:.1?}; \
         noise 0: urban {cu:.1e}, highway {ch:.1e} in {elapsed_clean:.1?}"
    ))
}

fn regime_ordering(noisy: &Workspace) -> Check {
    if ws_missing(noisy) {
        noisy.run_all(&[&["generate"], &["featurize"], &["train"], &["evaluate"]])?;
    }
    noisy.run_all(&[
        &["--regime", "joint", "train"],
        &["--regime", "joint", "evaluate"],
    ])?;
    let (iu, ih) = ols_maes(noisy, "independent")?;
    let (ju, jh) = ols_maes(noisy, "joint")?;
    ensure(iu <= ju && ih <= jh, || {
        format!("independent ({iu:.3}, {ih:.3}) vs joint ({ju:.3}, {jh:.3})")
    })?;
    Ok(format!(
        "urban {iu:.3} <= {ju:.3}, highway {ih:.3} <= {jh:.3} km/h"
    ))
}

fn ws_missing(ws: &Workspace) -> bool {
    !ws.dir.join("reports/report_independent_ols.csv").exists()
}

// ----------------------------------------------------------------------- mae

fn mae_unit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=64);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..150.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..170.0)).collect();
        let mut direct = 0.0;
        for i in 0..n {
            direct += (pred[i] - truth[i]).abs();
        }
        direct /= n as f64;
        let got = mae(&pred, &truth).map_err(|e| e.to_string())?;
        let err = (got - direct).abs();
        ensure(err <= 1e-12, || format!("n={n}: {got} vs {direct}"))?;
        worst = worst.max(err);
        let same = mae(&truth, &truth).map_err(|e| e.to_string())?;
        ensure(same == 0.0, || format!("identical inputs gave {same}"))?;
    }
    Ok(format!(
        "100 random vectors within {worst:.1e}, identical inputs give 0"
    ))
}

// --------------------------------------------------------------- determinism

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let rel = path.strip_prefix(base).unwrap().to_path_buf();
            out.insert(rel, fs::read(&path).unwrap());
        }
    }
}

fn determinism(root: &Path) -> Check {
    let config = pipeline_config(21, 120, 3.0, "all");
    let mut snapshots = Vec::new();
    for name in ["determinism-a", "determinism-b"] {
        let ws = Workspace::new(root, name, &config);
        for regime in ["independent", "joint"] {
            ws.run_all(&[
                &["--jobs", "2", "generate"],
                &["--jobs", "2", "featurize"],
                &["--jobs", "2", "--regime", regime, "train"],
                &["--jobs", "2", "--regime", regime, "evaluate"],
                &["--regime", regime, "--solver", "mlp", "trace"],
            ])?;
        }
        let mut files = BTreeMap::new();
        collect_files(&ws.dir, &ws.dir, &mut files);
        snapshots.push(files);
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    ensure(a.keys().eq(b.keys()), || {
        "the runs wrote different file sets".into()
    })?;
    for (path, bytes) in a {
        ensure(&b[path] == bytes, || format!("{} differs", path.display()))?;
    }
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} artifacts, {bytes} bytes, identical", a.len()))
}

// ---------------------------------------------------------------------- main

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temporary directory");
    let noisy = Workspace::new(root.path(), "noisy", &pipeline_config(7, 2000, 3.0, "ols"));

    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("descriptor correctness", Box::new(descriptor_correctness)),
        ("fusion correctness", Box::new(fusion_correctness)),
        ("solver oracles", Box::new(solver_oracles)),
        (
            "end-to-end planted recovery",
            Box::new(|| planted_recovery(&noisy, root.path())),
        ),
        ("regime ordering", Box::new(|| regime_ordering(&noisy))),
        ("MAE unit test", Box::new(mae_unit)),
        ("determinism", Box::new(|| determinism(root.path()))),
    ];

    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
