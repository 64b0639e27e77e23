//! Mean absolute error, the joint and per-scenario training regimes, reports
//! and speed traces.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataset::{Scenario, Split};
use crate::error::{Error, Result};
use crate::features::{FeatureTable, PyramidConfig};
use crate::regressors::{predict_rows, train, RegressorModel, SolverKind, TrainConfig};

pub const REPORT_HEADER: &str = "regime,method,scenario,mae_kmh,n_test,config_digest";
pub const TRACE_HEADER: &str = "frame_id,true_kmh,pred_kmh";

/// `(1/K) sum |truth_i - pred_i|`.
pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::Empty("MAE of zero samples".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (t - p).abs())
        .sum();
    Ok(total / truths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// One regressor for both scenarios.
    Joint,
    /// One regressor per scenario.
    Independent,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Joint, Regime::Independent];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Joint => "joint",
            Regime::Independent => "independent",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "joint" => Ok(Regime::Joint),
            "independent" => Ok(Regime::Independent),
            other => Err(format!(
                "unknown regime {other:?} (expected joint or independent)"
            )),
        }
    }
}

/// Short hex digest of a solver's settings and the pyramid depth.
pub fn config_digest(kind: SolverKind, config: &TrainConfig, pyramid: PyramidConfig) -> String {
    let text = format!("{} levels={}", config.describe(kind), pyramid.levels());
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// The models one regime trains.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedRegime {
    Joint(RegressorModel),
    Independent {
        urban: RegressorModel,
        highway: RegressorModel,
    },
}

impl FittedRegime {
    pub fn regime(&self) -> Regime {
        match self {
            FittedRegime::Joint(_) => Regime::Joint,
            FittedRegime::Independent { .. } => Regime::Independent,
        }
    }

    /// The model that predicts frames of `scenario`.
    pub fn model_for(&self, scenario: Scenario) -> &RegressorModel {
        match (self, scenario) {
            (FittedRegime::Joint(m), _) => m,
            (FittedRegime::Independent { urban, .. }, Scenario::Urban) => urban,
            (FittedRegime::Independent { highway, .. }, Scenario::Highway) => highway,
        }
    }
}

fn require_rows(table: &FeatureTable, scenario: Scenario, split: Split) -> Result<FeatureTable> {
    let rows = table.select(Some(scenario), split);
    if rows.is_empty() {
        return Err(Error::Empty(format!(
            "no {split} rows for scenario {scenario}"
        )));
    }
    Ok(rows)
}

/// Trains the models of `regime` on the train rows, using the first
/// `pyramid.descriptor_len(class_count)` feature columns.
pub fn fit_regime(
    table: &FeatureTable,
    kind: SolverKind,
    config: &TrainConfig,
    pyramid: PyramidConfig,
    class_count: usize,
    regime: Regime,
) -> Result<FittedRegime> {
    let columns = pyramid.descriptor_len(class_count);
    for scenario in Scenario::ALL {
        require_rows(table, scenario, Split::Train)?;
    }
    let fit = |rows: &FeatureTable| -> Result<RegressorModel> {
        let (x, y) = rows.design(columns)?;
        train(kind, x.view(), y.view(), config)
    };
    Ok(match regime {
        Regime::Joint => FittedRegime::Joint(fit(&table.select(None, Split::Train))?),
        Regime::Independent => FittedRegime::Independent {
            urban: fit(&require_rows(table, Scenario::Urban, Split::Train)?)?,
            highway: fit(&require_rows(table, Scenario::Highway, Split::Train)?)?,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub urban_mae: f64,
    pub highway_mae: f64,
    /// Settings digest of the model that scored each scenario.
    pub urban_digest: String,
    pub highway_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub regime: Regime,
    pub rows: Vec<ReportRow>,
    pub urban_count: usize,
    pub highway_count: usize,
}

impl EvalReport {
    pub fn count(&self, scenario: Scenario) -> usize {
        match scenario {
            Scenario::Urban => self.urban_count,
            Scenario::Highway => self.highway_count,
        }
    }

    /// Appends the rows of another report over the same test rows.
    pub fn merge(&mut self, other: EvalReport) -> Result<()> {
        if other.regime != self.regime
            || other.urban_count != self.urban_count
            || other.highway_count != self.highway_count
        {
            return Err(Error::InvalidArgument(
                "reports cover different regimes or test rows".into(),
            ));
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    /// Two lines per method, urban first, at full precision.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for row in &self.rows {
            for (scenario, value, digest) in [
                (Scenario::Urban, row.urban_mae, &row.urban_digest),
                (Scenario::Highway, row.highway_mae, &row.highway_digest),
            ] {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.regime,
                    row.method,
                    scenario,
                    value,
                    self.count(scenario),
                    digest
                )
                .unwrap();
            }
        }
        out
    }

    /// Aligned table with one line per method and MAE to two decimals.
    pub fn to_text_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(0)
            .max("Method".len());
        let mut out = format!(
            "MAE (km/h), {} regime, test frames: urban {}, highway {}\n",
            self.regime, self.urban_count, self.highway_count
        );
        writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}",
            "Method", "Urban", "Highway"
        )
        .unwrap();
        for row in &self.rows {
            writeln!(
                out,
                "{:<width$}  {:>8.2}  {:>8.2}",
                row.method, row.urban_mae, row.highway_mae
            )
            .unwrap();
        }
        out
    }
}

/// Scores fitted models on every test row, each scenario separately.
/// `digests` name the settings behind the urban and highway predictions.
pub fn evaluate_regime(
    table: &FeatureTable,
    fitted: &FittedRegime,
    method: &str,
    digests: [&str; 2],
) -> Result<EvalReport> {
    let mut maes = [0.0; 2];
    let mut counts = [0; 2];
    for (i, scenario) in [Scenario::Urban, Scenario::Highway].into_iter().enumerate() {
        let trace = predict_trace(table, fitted, scenario)?;
        maes[i] = trace.mae()?;
        counts[i] = trace.points.len();
    }
    Ok(EvalReport {
        regime: fitted.regime(),
        rows: vec![ReportRow {
            method: method.to_string(),
            urban_mae: maes[0],
            highway_mae: maes[1],
            urban_digest: digests[0].to_string(),
            highway_digest: digests[1].to_string(),
        }],
        urban_count: counts[0],
        highway_count: counts[1],
    })
}

/// Fits and scores `kind` under `regime`.
pub fn run_regime(
    table: &FeatureTable,
    kind: SolverKind,
    config: &TrainConfig,
    pyramid: PyramidConfig,
    class_count: usize,
    regime: Regime,
) -> Result<EvalReport> {
    for scenario in Scenario::ALL {
        require_rows(table, scenario, Split::Test)?;
    }
    let fitted = fit_regime(table, kind, config, pyramid, class_count, regime)?;
    let digest = config_digest(kind, config, pyramid);
    evaluate_regime(table, &fitted, kind.method_name(), [&digest, &digest])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub frame_id: String,
    pub true_kmh: f64,
    pub pred_kmh: f64,
}

/// Test frames of one scenario in table order with true and predicted speed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeedTrace {
    pub points: Vec<TracePoint>,
}

impl SpeedTrace {
    pub fn mae(&self) -> Result<f64> {
        let (pred, truth): (Vec<f64>, Vec<f64>) =
            self.points.iter().map(|p| (p.pred_kmh, p.true_kmh)).unzip();
        mae(&pred, &truth)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{TRACE_HEADER}\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.frame_id, p.true_kmh, p.pred_kmh).unwrap();
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad =
            |line: usize, msg: &str| Error::InvalidArgument(format!("trace line {line}: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(bad(1, "expected header frame_id,true_kmh,pred_kmh"));
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let [id, t, p] = fields[..] else {
                return Err(bad(i + 2, "expected 3 fields"));
            };
            let number = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
            points.push(TracePoint {
                frame_id: id.to_string(),
                true_kmh: number(t)?,
                pred_kmh: number(p)?,
            });
        }
        Ok(SpeedTrace { points })
    }

    /// Standalone line chart: true speed in blue, predicted in red, speed
    /// against frame index.
    pub fn to_svg(&self) -> String {
        const W: f64 = 800.0;
        const H: f64 = 320.0;
        const LEFT: f64 = 60.0;
        const RIGHT: f64 = 20.0;
        const TOP: f64 = 20.0;
        const BOTTOM: f64 = 50.0;
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let top_speed = self
            .points
            .iter()
            .flat_map(|p| [p.true_kmh, p.pred_kmh])
            .fold(0.0_f64, f64::max)
            .max(1.0)
            * 1.05;
        let last = self.points.len().saturating_sub(1).max(1) as f64;
        let x = |i: usize| LEFT + pw * i as f64 / last;
        let y = |v: f64| TOP + ph * (1.0 - v / top_speed);
        let polyline = |value: fn(&TracePoint) -> f64| {
            self.points
                .iter()
                .enumerate()
                .map(|(i, p)| format!("{:.2},{:.2}", x(i), y(value(p))))
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r#"<path d="M{LEFT},{TOP} V{} H{}" fill="none" stroke="black"/>"#,
            TOP + ph,
            LEFT + pw
        )
        .unwrap();
        for tick in 0..=4 {
            let v = top_speed * tick as f64 / 4.0;
            writeln!(
                out,
                r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{v:.0}</text>"#,
                LEFT - 6.0,
                y(v) + 4.0
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">frame index</text>"#,
            LEFT + pw / 2.0,
            H - 12.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">km/h</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<polyline id="true" fill="none" stroke="blue" stroke-width="1.5" points="{}"/>"#,
            polyline(|p| p.true_kmh)
        )
        .unwrap();
        writeln!(
            out,
            r#"<polyline id="predicted" fill="none" stroke="red" stroke-width="1.5" points="{}"/>"#,
            polyline(|p| p.pred_kmh)
        )
        .unwrap();
        out.push_str("</svg>\n");
        out
    }
}

/// Predictions of the fitted regime on the test rows of `scenario`.
pub fn predict_trace(
    table: &FeatureTable,
    fitted: &FittedRegime,
    scenario: Scenario,
) -> Result<SpeedTrace> {
    let rows = require_rows(table, scenario, Split::Test)?;
    let model = fitted.model_for(scenario);
    let (x, y) = rows.design(model.dim())?;
    let pred = predict_rows(model, x.view())?;
    Ok(SpeedTrace {
        points: rows
            .rows
            .iter()
            .zip(y.iter().zip(pred))
            .map(|(r, (&t, p))| TracePoint {
                frame_id: r.frame_id.clone(),
                true_kmh: t,
                pred_kmh: p,
            })
            .collect(),
    })
}

/// Writes `<stem>.csv` and `<stem>.svg` and returns both paths.
pub fn export_trace(trace: &SpeedTrace, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    let svg = dir.join(format!("{stem}.svg"));
    fs::write(&csv, trace.to_csv_string()).map_err(|e| Error::io(&csv, e))?;
    fs::write(&svg, trace.to_svg()).map_err(|e| Error::io(&svg, e))?;
    Ok((csv, svg))
}

pub fn read_trace(path: &Path) -> Result<SpeedTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SpeedTrace::parse_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;
    use crate::regressors::{LinearKind, LinearModel};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[12.0, 18.0], &[10.0, 20.0]).unwrap(), 2.0);
        assert!((mae(&[84.31], &[95.08]).unwrap() - 10.77).abs() < 1e-12);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn mae_detects_translation(truth in prop::collection::vec(-100f64..100.0, 1..40), delta in -10f64..10.0) {
            let shifted: Vec<f64> = truth.iter().map(|t| t + delta).collect();
            let got = mae(&shifted, &truth).unwrap();
            prop_assert!((got - delta.abs()).abs() < 1e-12);
        }

        #[test]
        fn mae_ignores_shared_permutation(
            pairs in prop::collection::vec((-100f64..100.0, -100f64..100.0), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (ps, ts): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            let a = mae(&p, &t).unwrap();
            let b = mae(&ps, &ts).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    fn row(id: &str, x: f64, speed: f64, scenario: Scenario, split: Split) -> FeatureRow {
        FeatureRow {
            frame_id: id.into(),
            features: vec![x, 1.0 - x],
            speed_kmh: speed,
            scenario,
            split,
        }
    }

    /// urban speed = 10 + 20 x, highway speed = 100 - 30 x.
    fn two_scenario_table() -> FeatureTable {
        let mut rows = Vec::new();
        for (s, f) in [
            (Scenario::Urban, (10.0, 20.0)),
            (Scenario::Highway, (100.0, -30.0)),
        ] {
            for i in 0..12 {
                let x = i as f64 / 11.0;
                let split = if i % 3 == 0 {
                    Split::Test
                } else {
                    Split::Train
                };
                rows.push(row(&format!("{s}{i}"), x, f.0 + f.1 * x, s, split));
            }
        }
        FeatureTable::new(rows).unwrap()
    }

    fn ridge_config() -> TrainConfig {
        TrainConfig {
            ols: crate::regressors::OlsParams { lambda: 1e-9 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn independent_fits_each_scenario_exactly() {
        let table = two_scenario_table();
        let pyramid = PyramidConfig::new(1).unwrap();
        let ind = run_regime(
            &table,
            SolverKind::Ols,
            &ridge_config(),
            pyramid,
            2,
            Regime::Independent,
        )
        .unwrap();
        assert!(
            ind.rows[0].urban_mae < 1e-6 && ind.rows[0].highway_mae < 1e-6,
            "{ind:?}"
        );
        let joint = run_regime(
            &table,
            SolverKind::Ols,
            &ridge_config(),
            pyramid,
            2,
            Regime::Joint,
        )
        .unwrap();
        assert!(joint.rows[0].urban_mae > ind.rows[0].urban_mae);
        assert_eq!(
            (joint.urban_count, joint.highway_count),
            (ind.urban_count, ind.highway_count)
        );
        assert_eq!((ind.urban_count, ind.highway_count), (4, 4));
        assert_eq!(ind.rows[0].method, "SS + Linear regression");
    }

    #[test]
    fn missing_partition_is_an_error() {
        let mut table = two_scenario_table();
        table
            .rows
            .retain(|r| !(r.scenario == Scenario::Highway && r.split == Split::Test));
        let pyramid = PyramidConfig::new(1).unwrap();
        for regime in Regime::ALL {
            let err = run_regime(&table, SolverKind::Ols, &ridge_config(), pyramid, 2, regime)
                .unwrap_err();
            assert!(err.to_string().contains("highway"), "{err}");
        }
    }

    #[test]
    fn report_serializations() {
        let report = EvalReport {
            regime: Regime::Independent,
            rows: vec![ReportRow {
                method: "SS + Linear regression".into(),
                urban_mae: 6.02,
                highway_mae: 9.54,
                urban_digest: "abc".into(),
                highway_digest: "def".into(),
            }],
            urban_count: 3,
            highway_count: 5,
        };
        let csv = report.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(
            lines[1],
            "independent,SS + Linear regression,urban,6.02,3,abc"
        );
        assert_eq!(
            lines[2],
            "independent,SS + Linear regression,highway,9.54,5,def"
        );
        let text = report.to_text_table();
        assert!(
            text.contains("SS + Linear regression      6.02      9.54"),
            "{text}"
        );
    }

    #[test]
    fn digest_tracks_settings_and_levels() {
        let c = TrainConfig::default();
        let p2 = PyramidConfig::new(2).unwrap();
        let p3 = PyramidConfig::new(3).unwrap();
        let d = config_digest(SolverKind::Ols, &c, p3);
        assert_eq!(d.len(), 16);
        assert_eq!(d, config_digest(SolverKind::Ols, &c, p3));
        assert_ne!(d, config_digest(SolverKind::Ols, &c, p2));
        assert_ne!(d, config_digest(SolverKind::Ols, &ridge_config(), p3));
    }

    #[test]
    fn trace_keeps_order_and_round_trips() {
        let table = two_scenario_table();
        let pyramid = PyramidConfig::new(1).unwrap();
        let fitted = fit_regime(
            &table,
            SolverKind::Ols,
            &ridge_config(),
            pyramid,
            2,
            Regime::Joint,
        )
        .unwrap();
        let report = evaluate_regime(&table, &fitted, "m", ["d", "d"]).unwrap();
        let trace = predict_trace(&table, &fitted, Scenario::Urban).unwrap();
        let ids: Vec<&str> = trace.points.iter().map(|p| p.frame_id.as_str()).collect();
        assert_eq!(ids, ["urban0", "urban3", "urban6", "urban9"]);

        let dir = tempfile::tempdir().unwrap();
        let (csv, svg) = export_trace(&trace, dir.path(), "trace_urban").unwrap();
        let back = read_trace(&csv).unwrap();
        assert_eq!(back, trace);
        assert!((back.mae().unwrap() - report.rows[0].urban_mae).abs() < 1e-9);
        let svg = fs::read_to_string(svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("km/h") && svg.contains("frame index"));
    }

    fn polyline_ys(svg: &str, id: &str) -> Vec<f64> {
        let start = svg.find(&format!("id=\"{id}\"")).unwrap();
        let points = &svg[start..];
        let points = &points[points.find("points=\"").unwrap() + 8..];
        let points = &points[..points.find('"').unwrap()];
        points
            .split(' ')
            .map(|xy| xy.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    }

    #[test]
    fn constant_model_draws_a_flat_line() {
        let model = RegressorModel::Linear(LinearModel {
            weights: array![0.0, 0.0],
            bias: 42.0,
            kind: LinearKind::Ols,
        });
        let fitted = FittedRegime::Joint(model);
        let trace = predict_trace(&two_scenario_table(), &fitted, Scenario::Highway).unwrap();
        assert_eq!(trace.points.len(), 4);
        let svg = trace.to_svg();
        let pred = polyline_ys(&svg, "predicted");
        assert!(pred.windows(2).all(|w| w[0] == w[1]));
        let truth = polyline_ys(&svg, "true");
        assert!(truth.windows(2).any(|w| w[0] != w[1]));
    }
}
