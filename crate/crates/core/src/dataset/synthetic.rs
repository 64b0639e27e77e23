//! Planted-relation datasets.
//!
//! Maps use the 4 x 4 grid of the finest pyramid level. The top three grid
//! rows hold scenario-typical class mixtures drawn per cell from a Dirichlet
//! distribution; they carry random planted weights and act as structured
//! nuisance. The bottom grid row holds road and car pixels, and the road
//! fraction there encodes a latent target speed. The recorded speed is the
//! planted linear function of the L=3 descriptor plus Gaussian noise,
//! clamped at zero.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{write_manifest, Manifest, Sample, Scenario, Split};
use crate::error::{Error, Result};
use crate::features::{spp_descriptor, CellRect, PyramidConfig};
use crate::fusion::{
    frame_score_dir, scaled_dim, write_score_map_set, ScoreMap, ScoreMapSet, DEFAULT_SCALES,
};
use crate::labels::{write_label_map, LabelMap, DEFAULT_CLASS_COUNT, VOID_ID};

pub const PLANTED_WEIGHTS_FILE: &str = "planted_weights.csv";

const ROAD: u8 = 0;
const CAR: u8 = 13;
/// Nuisance weights are uniform in `[-RHO, RHO]`.
const RHO: f64 = 2.0;
const NUISANCE_ROWS: usize = 3;
const GRID: usize = 4;
/// Latent speeds are capped at `m + CAP_SIGMAS * s` of their latent normal.
const CAP_SIGMAS: f64 = 5.0;

/// Nuisance classes per scenario (indexed like `Scenario::ALL`).
const NUISANCE_CLASSES: [[u8; 5]; 2] = [
    // building, sidewalk, person, pole, car
    [2, 1, 11, 5, 13],
    // road, sky, vegetation, terrain, car
    [0, 10, 8, 9, 13],
];

/// Dirichlet concentrations per scenario and nuisance grid row.
const ALPHAS: [[[f64; 5]; NUISANCE_ROWS]; 2] = [
    [
        [6.0, 0.5, 0.5, 2.0, 0.5],
        [4.0, 1.5, 1.5, 1.5, 1.5],
        [1.0, 4.0, 2.0, 1.0, 3.0],
    ],
    [
        [0.5, 6.0, 2.0, 1.0, 0.5],
        [1.0, 2.0, 4.0, 3.0, 1.0],
        [4.0, 0.5, 2.0, 2.0, 2.0],
    ],
];

fn scenario_index(s: Scenario) -> usize {
    match s {
        Scenario::Urban => 0,
        Scenario::Highway => 1,
    }
}

/// Target moments of the speeds of one (scenario, split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedTarget {
    pub scenario: Scenario,
    pub split: Split,
    pub mean: f64,
    pub std: f64,
}

impl SpeedTarget {
    /// Mean and standard deviation of the four sets of the recorded driving
    /// data, in km/h.
    pub fn recorded_moments() -> Vec<SpeedTarget> {
        let t = |scenario, split, mean, std| SpeedTarget {
            scenario,
            split,
            mean,
            std,
        };
        vec![
            t(Scenario::Urban, Split::Train, 19.55, 13.60),
            t(Scenario::Urban, Split::Test, 19.59, 14.78),
            t(Scenario::Highway, Split::Train, 84.31, 18.15),
            t(Scenario::Highway, Split::Test, 95.08, 12.81),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub frames_per_scenario_split: usize,
    pub map_height: usize,
    pub map_width: usize,
    pub class_count: usize,
    pub targets: Vec<SpeedTarget>,
    pub noise_std: f64,
    pub rng_seed: u64,
    /// Plant one relation for both scenarios instead of one per scenario.
    pub shared_weights: bool,
    /// Also write multi-scale score maps from which fusion recovers the
    /// label maps exactly.
    pub emit_score_maps: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            frames_per_scenario_split: 2000,
            map_height: 48,
            map_width: 80,
            class_count: DEFAULT_CLASS_COUNT,
            targets: SpeedTarget::recorded_moments(),
            noise_std: 3.0,
            rng_seed: 0,
            shared_weights: false,
            emit_score_maps: false,
        }
    }
}

impl SyntheticConfig {
    pub fn target(&self, scenario: Scenario, split: Split) -> Option<&SpeedTarget> {
        self.targets
            .iter()
            .find(|t| t.scenario == scenario && t.split == split)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if self.frames_per_scenario_split == 0 {
            return Err(Error::Empty(
                "empty dataset: frames_per_scenario_split is 0".into(),
            ));
        }
        if self.map_height < GRID || self.map_width < GRID {
            return invalid(format!("maps must be at least {GRID}x{GRID} pixels"));
        }
        if self.class_count <= CAR as usize || self.class_count > VOID_ID as usize {
            return invalid(format!(
                "class_count must be in {}..={} for the synthetic class layout",
                CAR + 1,
                VOID_ID
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return invalid(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            ));
        }
        if self.targets.len() != 4 {
            return invalid("targets must list each (scenario, split) exactly once".into());
        }
        for scenario in Scenario::ALL {
            for split in Split::ALL {
                let Some(t) = self.target(scenario, split) else {
                    return invalid(format!("no speed target for {scenario} {split}"));
                };
                if !(t.mean >= 0.0 && t.mean.is_finite()) {
                    return invalid(format!(
                        "infeasible target mean {} for {scenario} {split}",
                        t.mean
                    ));
                }
                if !(t.std > self.noise_std && t.std.is_finite()) {
                    return invalid(format!(
                        "target std {} for {scenario} {split} must exceed noise_std {}",
                        t.std, self.noise_std
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Moments of `max(0, Y)` for `Y ~ N(a, 1)`.
fn censored_unit_moments(a: f64) -> (f64, f64) {
    let n = Normal::standard();
    let (cdf, pdf) = (n.cdf(a), n.pdf(a));
    let mean = a * cdf + pdf;
    let second = (a * a + 1.0) * cdf + a * pdf;
    (mean, (second - mean * mean).max(0.0).sqrt())
}

/// `(m, s)` such that `max(0, Y)`, `Y ~ N(m, s^2)`, has the given mean and
/// standard deviation. The mean-to-std ratio of the censored variable is
/// increasing in `m / s`, so the ratio is found by bisection.
fn latent_normal(mean: f64, std: f64) -> Result<(f64, f64)> {
    let ratio = |a: f64| {
        let (m, s) = censored_unit_moments(a);
        m / s
    };
    let target = mean / std;
    let (mut lo, mut hi) = (-8.0, 60.0);
    if !(ratio(lo) < target && target < ratio(hi)) {
        return Err(Error::InvalidArgument(format!(
            "speed moments mean {mean}, std {std} are outside the reachable range"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let s = std / censored_unit_moments(a).1;
    Ok((a * s, s))
}

/// Planted linear relation of one scenario over the L=3 descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedWeights {
    pub scenario: Scenario,
    pub bias: f64,
    pub weights: Vec<f64>,
}

/// Unclamped, noise-free speed of a descriptor.
pub fn planted_speed(planted: &PlantedWeights, descriptor: &[f64]) -> f64 {
    planted.bias
        + planted
            .weights
            .iter()
            .zip(descriptor)
            .map(|(w, d)| w * d)
            .sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Urban first, then highway.
    pub planted: Vec<PlantedWeights>,
}

impl GeneratedDataset {
    pub fn planted_for(&self, scenario: Scenario) -> &PlantedWeights {
        &self.planted[scenario_index(scenario)]
    }
}

pub fn planted_weights_csv(planted: &[PlantedWeights]) -> String {
    let dim = planted.first().map_or(0, |p| p.weights.len());
    let mut out = String::from("scenario,bias");
    for j in 0..dim {
        write!(out, ",w{j}").unwrap();
    }
    out.push('\n');
    for p in planted {
        write!(out, "{},{}", p.scenario, p.bias).unwrap();
        for w in &p.weights {
            write!(out, ",{w}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_planted_weights(path: &Path) -> Result<Vec<PlantedWeights>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad =
        |line: usize| Error::InvalidArgument(format!("{}: malformed line {line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let mut fields = line.split(',');
            let scenario = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(i + 1))?;
            let numbers = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>();
            let numbers = numbers.map_err(|_| bad(i + 1))?;
            let (&bias, weights) = numbers.split_first().ok_or_else(|| bad(i + 1))?;
            Ok(PlantedWeights {
                scenario,
                bias,
                weights: weights.to_vec(),
            })
        })
        .collect()
}

/// Splits `total` pixels by `proportions`: floors first, leftover pixels to
/// the largest remainders, earlier classes first on ties.
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let assigned: usize = counts.iter().sum();
    for &j in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

fn cell_pixels(cell: &CellRect) -> usize {
    (cell.row_end - cell.row_start) * (cell.col_end - cell.col_start)
}

/// Fills a cell row-major with runs of `(class, count)`.
fn fill_cell(map: &mut LabelMap, cell: &CellRect, runs: &[(u8, usize)]) {
    let width = cell.col_end - cell.col_start;
    let mut labels = runs
        .iter()
        .flat_map(|&(class, n)| std::iter::repeat_n(class, n));
    for i in 0..cell_pixels(cell) {
        let class = labels.next().expect("runs cover the cell");
        map.set(
            cell.row_start + i / width,
            cell.col_start + i % width,
            class,
        );
    }
}

struct ScenarioPlan {
    planted: PlantedWeights,
    /// Road-fraction scale of the bottom grid row.
    span: f64,
    /// Bound on the absolute nuisance contribution.
    nuisance_bound: f64,
    latent: [(f64, f64); 2],
    cap: f64,
}

fn level2_offset(class_count: usize) -> usize {
    5 * class_count
}

fn plan_scenario(
    config: &SyntheticConfig,
    scenario: Scenario,
    rng: &mut ChaCha8Rng,
) -> Result<ScenarioPlan> {
    let c = config.class_count;
    let dim = PyramidConfig::new(3)?.descriptor_len(c);
    let mut weights = vec![0.0; dim];
    for cell in 0..NUISANCE_ROWS * GRID {
        for &class in &NUISANCE_CLASSES[scenario_index(scenario)] {
            weights[level2_offset(c) + cell * c + class as usize] = rng.random_range(-RHO..=RHO);
        }
    }
    let mut latent = [(0.0, 0.0); 2];
    for (i, split) in Split::ALL.into_iter().enumerate() {
        let t = config.target(scenario, split).expect("validated");
        let std = (t.std * t.std - config.noise_std * config.noise_std).sqrt();
        latent[i] = latent_normal(t.mean, std)?;
    }
    let cap = latent
        .iter()
        .map(|(m, s)| m + CAP_SIGMAS * s)
        .fold(0.0, f64::max);
    let nuisance_bound = (NUISANCE_ROWS * GRID) as f64 * RHO;
    Ok(ScenarioPlan {
        planted: PlantedWeights {
            scenario,
            bias: -nuisance_bound,
            weights,
        },
        span: cap + 2.0 * nuisance_bound,
        nuisance_bound,
        latent,
        cap,
    })
}

/// Draws both scenario plans. With `shared`, both scenarios end up with one
/// relation: the union of their nuisance weights and the wider road span.
fn plan_scenarios(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Vec<ScenarioPlan>> {
    let mut plans = Scenario::ALL
        .into_iter()
        .map(|s| plan_scenario(config, s, rng))
        .collect::<Result<Vec<_>>>()?;
    if config.shared_weights {
        let span = plans.iter().map(|p| p.span).fold(0.0, f64::max);
        let mut merged = plans[0].planted.weights.clone();
        for (m, &h) in merged.iter_mut().zip(&plans[1].planted.weights) {
            if h != 0.0 {
                *m = h;
            }
        }
        for plan in &mut plans {
            plan.span = span;
            plan.planted.weights.clone_from(&merged);
        }
    }
    let c = config.class_count;
    for plan in &mut plans {
        for cell in NUISANCE_ROWS * GRID..GRID * GRID {
            plan.planted.weights[level2_offset(c) + cell * c + ROAD as usize] =
                plan.span / GRID as f64;
        }
    }
    Ok(plans)
}

/// Latent speeds with the requested moments: jittered stratified quantiles of
/// the latent normal, censored at zero, capped, then shuffled.
fn latent_speeds(n: usize, (m, s): (f64, f64), cap: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::standard();
    let mut speeds: Vec<f64> = (0..n)
        .map(|i| {
            let u = (i as f64 + rng.random::<f64>()) / n as f64;
            (m + s * normal.inverse_cdf(u)).clamp(0.0, cap)
        })
        .collect();
    speeds.shuffle(rng);
    speeds
}

/// Builds one map whose noise-free planted speed is close to `latent` and
/// never negative; returns it with that speed.
fn compose_frame(
    config: &SyntheticConfig,
    plan: &ScenarioPlan,
    cells: &[CellRect],
    latent: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelMap, f64)> {
    let c = config.class_count;
    let si = scenario_index(plan.planted.scenario);
    let mut map = LabelMap::filled(config.map_height, config.map_width, CAR)?;
    let mut nuisance = 0.0;
    for row in 0..NUISANCE_ROWS {
        let dirichlet = Dirichlet::new(ALPHAS[si][row]).expect("positive concentrations");
        for col in 0..GRID {
            let k = row * GRID + col;
            let n = cell_pixels(&cells[k]);
            let counts = largest_remainder(&dirichlet.sample(rng), n);
            let runs: Vec<(u8, usize)> = NUISANCE_CLASSES[si].iter().copied().zip(counts).collect();
            for &(class, count) in &runs {
                nuisance += plan.planted.weights[level2_offset(c) + k * c + class as usize]
                    * count as f64
                    / n as f64;
            }
            fill_cell(&mut map, &cells[k], &runs);
        }
    }

    let fraction = ((latent + plan.nuisance_bound - nuisance) / plan.span).clamp(0.0, 1.0);
    let bottom = &cells[NUISANCE_ROWS * GRID..];
    let mut road: Vec<usize> = bottom
        .iter()
        .map(|cell| (fraction * cell_pixels(cell) as f64).round() as usize)
        .collect();
    let pyramid = PyramidConfig::new(3)?;
    loop {
        for (cell, &r) in bottom.iter().zip(&road) {
            fill_cell(&mut map, cell, &[(ROAD, r), (CAR, cell_pixels(cell) - r)]);
        }
        let descriptor = spp_descriptor(&map, pyramid, c)?;
        let speed = planted_speed(&plan.planted, &descriptor.values);
        // rounding may undershoot zero; add road pixels to the emptiest cell
        let emptiest = (0..road.len())
            .filter(|&i| road[i] < cell_pixels(&bottom[i]))
            .min_by(|&a, &b| {
                let fa = road[a] as f64 / cell_pixels(&bottom[a]) as f64;
                let fb = road[b] as f64 / cell_pixels(&bottom[b]) as f64;
                fa.total_cmp(&fb)
            });
        match emptiest {
            Some(i) if speed < 0.0 => road[i] += 1,
            _ => return Ok((map, speed.max(0.0))),
        }
    }
}

/// Frame id of the `index`-th frame of a (scenario, split).
fn frame_id(scenario: Scenario, split: Split, index: usize) -> String {
    format!("{scenario}-{split}-{index:05}")
}

/// Random score maps at `scales` whose multi-scale fusion is exactly `map`:
/// at scale 1 the labelled class scores in `[0.6, 1)` and every other score,
/// at any scale, lies in `[0, 0.5)`.
pub fn synthesize_score_maps(
    map: &LabelMap,
    class_count: usize,
    scales: &[f64],
    rng: &mut impl Rng,
) -> Result<ScoreMapSet> {
    if map.labels().contains(&VOID_ID) {
        return Err(Error::InvalidArgument(
            "void pixels have no winning class".into(),
        ));
    }
    map.validate(class_count)?;
    let (h, w) = (map.height(), map.width());
    let mut entries = Vec::with_capacity(scales.len());
    for &scale in scales {
        let (sh, sw) = (scaled_dim(scale, h), scaled_dim(scale, w));
        let mut scores: Vec<f32> = (0..sh * sw * class_count)
            .map(|_| rng.random::<f32>() * 0.5)
            .collect();
        if scale == 1.0 {
            for (pixel, &label) in map.labels().iter().enumerate() {
                scores[pixel * class_count + label as usize] = 0.6 + 0.4 * rng.random::<f32>();
            }
        }
        entries.push((scale, ScoreMap::new(sh, sw, class_count, scores)?));
    }
    ScoreMapSet::new(entries, h, w)
}

/// Writes the manifest to `manifest_path` and, next to it, `maps/<frame>.pgm`
/// and the planted weights; score maps go to `<score_root>/<frame>/` when
/// requested.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    manifest_path: &Path,
    score_root: &Path,
) -> Result<GeneratedDataset> {
    config.validate()?;
    let out_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let plans = plan_scenarios(config, &mut rng)?;
    let cells: Vec<CellRect> = PyramidConfig::new(3)?
        .cells(config.map_height, config.map_width)
        .split_off(5);
    let mut score_rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x5c0e_5ca1_e000_0001);

    let mut samples = Vec::new();
    for (plan, scenario) in plans.iter().zip(Scenario::ALL) {
        for (si, split) in Split::ALL.into_iter().enumerate() {
            let latent = latent_speeds(
                config.frames_per_scenario_split,
                plan.latent[si],
                plan.cap,
                &mut rng,
            );
            for (i, &target) in latent.iter().enumerate() {
                let (map, clean) = compose_frame(config, plan, &cells, target, &mut rng)?;
                let z: f64 = rng.sample(StandardNormal);
                let speed = if config.noise_std == 0.0 {
                    clean
                } else {
                    (clean + config.noise_std * z).max(0.0)
                };
                let id = frame_id(scenario, split, i);
                let rel = PathBuf::from("maps").join(format!("{id}.pgm"));
                write_label_map(&out_dir.join(&rel), &map)?;
                if config.emit_score_maps {
                    let set = synthesize_score_maps(
                        &map,
                        config.class_count,
                        &DEFAULT_SCALES,
                        &mut score_rng,
                    )?;
                    write_score_map_set(&frame_score_dir(score_root, &id), &set)?;
                }
                samples.push(Sample {
                    frame_id: id,
                    label_map_path: rel,
                    scenario,
                    split,
                    speed_kmh: speed,
                });
            }
        }
    }

    let manifest = Manifest {
        samples,
        class_count: config.class_count,
        source_note: format!(
            "synthetic planted-relation dataset, seed {}, noise_std {}",
            config.rng_seed, config.noise_std
        ),
        base_dir: out_dir.to_path_buf(),
    };
    write_manifest(manifest_path, &manifest)?;
    let planted: Vec<PlantedWeights> = plans.into_iter().map(|p| p.planted).collect();
    let weights_path = out_dir.join(PLANTED_WEIGHTS_FILE);
    fs::write(&weights_path, planted_weights_csv(&planted))
        .map_err(|e| Error::io(&weights_path, e))?;
    Ok(GeneratedDataset {
        manifest,
        manifest_path: manifest_path.to_path_buf(),
        planted,
    })
}
