//! Contiguous-block K-fold cross-validation over solver settings and pyramid
//! depth.

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::{predict_rows, train, SolverKind, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::mae;
use crate::features::PyramidConfig;

/// Fold `k` holds rows `floor(k N / K) .. floor((k + 1) N / K)`; rows stay in
/// their original (temporal) order.
pub fn contiguous_folds(rows: usize, folds: usize) -> Result<Vec<Range<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if rows < folds {
        return Err(Error::InvalidArgument(format!(
            "{rows} rows cannot fill {folds} folds with at least one sample each"
        )));
    }
    Ok((0..folds)
        .map(|k| k * rows / folds..(k + 1) * rows / folds)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPoint {
    pub config: TrainConfig,
    pub pyramid: PyramidConfig,
    pub mean_mae: f64,
    /// Mean over folds of the fitted models' size measure.
    pub complexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub best: CvPoint,
    /// Every evaluated point, grid-major then pyramid levels.
    pub points: Vec<CvPoint>,
}

fn same_error(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Evaluates every (config, levels) pair and keeps the one with the lowest
/// mean validation MAE. Equal errors fall back to the smaller model, then to
/// fewer pyramid levels.
///
/// `x` holds descriptors at the deepest level present in `levels`; coarser
/// pyramids use a prefix of its columns.
pub fn cross_validate(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    class_count: usize,
    kind: SolverKind,
    grid: &[TrainConfig],
    levels: &[PyramidConfig],
    folds: usize,
) -> Result<CvOutcome> {
    if grid.is_empty() || levels.is_empty() {
        return Err(Error::Empty("cross-validation grid".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    for p in levels {
        if p.descriptor_len(class_count) > x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: p.descriptor_len(class_count),
                found: x.ncols(),
            });
        }
    }
    let ranges = contiguous_folds(x.nrows(), folds)?;

    let jobs: Vec<(&TrainConfig, PyramidConfig)> = grid
        .iter()
        .flat_map(|c| levels.iter().map(move |&p| (c, p)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(config, pyramid)| {
            let cols = pyramid.descriptor_len(class_count);
            let xs = x.slice(ndarray::s![.., ..cols]);
            let mut total_mae = 0.0;
            let mut total_complexity = 0.0;
            for held in &ranges {
                let train_rows: Vec<usize> = (0..x.nrows()).filter(|i| !held.contains(i)).collect();
                let xt = xs.select(Axis(0), &train_rows);
                let yt = y.select(Axis(0), &train_rows);
                let model = train(kind, xt.view(), yt.view(), config)?;
                let xv = xs.slice(ndarray::s![held.clone(), ..]);
                let pred = predict_rows(&model, xv)?;
                let truth = y.slice(ndarray::s![held.clone()]);
                total_mae += mae(&pred, truth.as_slice().expect("contiguous"))?;
                total_complexity += model.complexity() as f64;
            }
            let k = ranges.len() as f64;
            Ok(CvPoint {
                config: config.clone(),
                pyramid,
                mean_mae: total_mae / k,
                complexity: total_complexity / k,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CvOutcome {
        best: select_best(&points).clone(),
        points,
    })
}

fn select_best(points: &[CvPoint]) -> &CvPoint {
    let mut best = &points[0];
    for p in &points[1..] {
        let better = if same_error(p.mean_mae, best.mean_mae) {
            (p.complexity, p.pyramid.levels()) < (best.complexity, best.pyramid.levels())
        } else {
            p.mean_mae < best.mean_mae
        };
        if better {
            best = p;
        }
    }
    best
}
