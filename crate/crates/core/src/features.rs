//! Spatial-pyramid label histograms and feature standardization.
//!
//! Level `l` of the pyramid splits the map into a `2^l x 2^l` grid whose cell
//! boundaries sit at `floor(r * H / 2^l)` (rows) and `floor(c * W / 2^l)`
//! (columns). Each cell contributes the L1-normalized histogram of its
//! non-void labels; the descriptor concatenates the cells level by level, then
//! row-major within a level, then by class id.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::dataset::{Manifest, Scenario, Split};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, VOID_ID};

pub const MAX_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PyramidConfig {
    levels: usize,
}

impl PyramidConfig {
    pub fn new(levels: usize) -> Result<Self> {
        if !(1..=MAX_LEVELS).contains(&levels) {
            return Err(Error::InvalidArgument(format!(
                "pyramid levels must be in 1..={MAX_LEVELS}, got {levels}"
            )));
        }
        Ok(PyramidConfig { levels })
    }

    pub fn levels(self) -> usize {
        self.levels
    }

    /// Sum of `4^l` over the configured levels: 1, 5 or 21.
    pub fn cell_count(self) -> usize {
        (0..self.levels).map(|l| 1 << (2 * l)).sum()
    }

    pub fn descriptor_len(self, class_count: usize) -> usize {
        class_count * self.cell_count()
    }

    /// Inverse of [`descriptor_len`](Self::descriptor_len).
    pub fn from_descriptor_len(len: usize, class_count: usize) -> Result<Self> {
        (1..=MAX_LEVELS)
            .map(|l| PyramidConfig { levels: l })
            .find(|p| p.descriptor_len(class_count) == len)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "length {len} is not a pyramid descriptor length for {class_count} classes"
                ))
            })
    }

    /// Every cell of the pyramid in descriptor order.
    pub fn cells(self, height: usize, width: usize) -> Vec<CellRect> {
        let mut cells = Vec::with_capacity(self.cell_count());
        for level in 0..self.levels {
            let n = 1 << level;
            for r in 0..n {
                for c in 0..n {
                    cells.push(CellRect {
                        row_start: r * height / n,
                        row_end: (r + 1) * height / n,
                        col_start: c * width / n,
                        col_end: (c + 1) * width / n,
                    });
                }
            }
        }
        cells
    }
}

/// Half-open pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl CellRect {
    pub fn full(map: &LabelMap) -> Self {
        CellRect {
            row_start: 0,
            row_end: map.height(),
            col_start: 0,
            col_end: map.width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
    pub pyramid: PyramidConfig,
    pub class_count: usize,
}

fn check_rect(map: &LabelMap, cell: CellRect) -> Result<()> {
    if cell.row_start >= cell.row_end || cell.col_start >= cell.col_end {
        return Err(Error::InvalidArgument(format!("empty cell {cell:?}")));
    }
    if cell.row_end > map.height() || cell.col_end > map.width() {
        return Err(Error::InvalidArgument(format!(
            "cell {cell:?} exceeds {}x{} map",
            map.height(),
            map.width()
        )));
    }
    Ok(())
}

fn count_labels(map: &LabelMap, cell: CellRect, counts: &mut [u64]) -> Result<u64> {
    let class_count = counts.len();
    let mut total = 0;
    for row in cell.row_start..cell.row_end {
        for (offset, &label) in map.row(row)[cell.col_start..cell.col_end]
            .iter()
            .enumerate()
        {
            if label == VOID_ID {
                continue;
            }
            let class = usize::from(label);
            if class >= class_count {
                return Err(Error::ClassOutOfRange {
                    value: label,
                    class_count,
                    row,
                    col: cell.col_start + offset,
                });
            }
            counts[class] += 1;
            total += 1;
        }
    }
    Ok(total)
}

/// Fraction of the cell's non-void pixels carrying each class; all zeros when
/// the whole cell is void.
pub fn cell_histogram(map: &LabelMap, cell: CellRect, class_count: usize) -> Result<Vec<f64>> {
    check_rect(map, cell)?;
    let mut counts = vec![0u64; class_count];
    let total = count_labels(map, cell, &mut counts)?;
    Ok(normalize(&counts, total))
}

fn normalize(counts: &[u64], total: u64) -> Vec<f64> {
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&n| n as f64 / total as f64).collect()
}

pub fn spp_descriptor(
    map: &LabelMap,
    pyramid: PyramidConfig,
    class_count: usize,
) -> Result<Descriptor> {
    let finest = 1 << (pyramid.levels() - 1);
    if map.height() < finest || map.width() < finest {
        return Err(Error::InvalidArgument(format!(
            "{}x{} map is too small for {} pyramid levels",
            map.height(),
            map.width(),
            pyramid.levels()
        )));
    }
    let mut values = Vec::with_capacity(pyramid.descriptor_len(class_count));
    let mut counts = vec![0u64; class_count];
    for cell in pyramid.cells(map.height(), map.width()) {
        counts.iter_mut().for_each(|c| *c = 0);
        let total = count_labels(map, cell, &mut counts)?;
        values.extend(normalize(&counts, total));
    }
    Ok(Descriptor {
        values,
        pyramid,
        class_count,
    })
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    /// Columns with (numerically) zero variance; their std is stored as 1.
    pub degenerate: Vec<bool>,
}

impl Standardization {
    /// Fits on training rows only; population (divide-by-N) variance.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("cannot standardize zero rows".into()));
        }
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut std = Array1::zeros(x.ncols());
        let mut degenerate = vec![false; x.ncols()];
        for (j, column) in x.axis_iter(Axis(1)).enumerate() {
            let var = column.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd <= 1e-12 * mean[j].abs().max(1.0) {
                std[j] = 1.0;
                degenerate[j] = true;
            } else {
                std[j] = sd;
            }
        }
        Ok(Standardization {
            mean,
            std,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        Ok((&x - &self.mean) / &self.std)
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

pub fn fit_standardization(x: ArrayView2<f64>) -> Result<Standardization> {
    Standardization::fit(x)
}

pub fn apply_standardization(x: ArrayView2<f64>, s: &Standardization) -> Result<Array2<f64>> {
    s.apply(x)
}

/// One featurized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub frame_id: String,
    pub features: Vec<f64>,
    pub speed_kmh: f64,
    pub scenario: Scenario,
    pub split: Split,
}

/// Descriptors of every manifest frame, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
    pub dim: usize,
}

impl FeatureTable {
    pub fn new(rows: Vec<FeatureRow>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.features.len());
        if let Some(bad) = rows.iter().find(|r| r.features.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.features.len(),
            });
        }
        Ok(FeatureTable { rows, dim })
    }

    pub fn select(&self, scenario: Option<Scenario>, split: Split) -> FeatureTable {
        FeatureTable {
            rows: self
                .rows
                .iter()
                .filter(|r| r.split == split && scenario.is_none_or(|s| r.scenario == s))
                .cloned()
                .collect(),
            dim: self.dim,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Design matrix using the first `columns` features (a coarser pyramid
    /// is a prefix of a finer one) and the target vector.
    pub fn design(&self, columns: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        if columns > self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: columns,
            });
        }
        let mut x = Array2::zeros((self.rows.len(), columns));
        for (mut out, row) in x.axis_iter_mut(Axis(0)).zip(&self.rows) {
            out.assign(&ndarray::ArrayView1::from(&row.features[..columns]));
        }
        let y = self.rows.iter().map(|r| r.speed_kmh).collect();
        Ok((x, y))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("frame_id");
        for j in 0..self.dim {
            write!(out, ",f{j}").unwrap();
        }
        out.push_str(",speed_kmh,scenario,split\n");
        for row in &self.rows {
            out.push_str(&row.frame_id);
            for v in &row.features {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{},{},{}", row.speed_kmh, row.scenario, row.split).unwrap();
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::FeatureCache(format!("line {line}: {msg}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".into()))?
            .split(',')
            .collect();
        let dim = header.len().saturating_sub(4);
        let expected_header = header.len() >= 4
            && header[0] == "frame_id"
            && header[1..=dim]
                .iter()
                .enumerate()
                .all(|(j, h)| *h == format!("f{j}"))
            && header[dim + 1..] == ["speed_kmh", "scenario", "split"];
        if !expected_header {
            return Err(bad(
                1,
                "expected frame_id,f0..,speed_kmh,scenario,split".into(),
            ));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(bad(line_no, format!("expected {} fields", header.len())));
            }
            let number = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(line_no, format!("bad number {s:?}")))
            };
            rows.push(FeatureRow {
                frame_id: fields[0].to_string(),
                features: fields[1..=dim]
                    .iter()
                    .map(|s| number(s))
                    .collect::<Result<_>>()?,
                speed_kmh: number(fields[dim + 1])?,
                scenario: fields[dim + 2].parse().map_err(|e| bad(line_no, e))?,
                split: fields[dim + 3].parse().map_err(|e| bad(line_no, e))?,
            });
        }
        Ok(FeatureTable { rows, dim })
    }
}

pub fn write_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, table.to_csv_string()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_table(path: &Path) -> Result<FeatureTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FeatureTable::parse_csv(&text)
}

/// Loads every label map of the manifest and computes its descriptor. Rows
/// come back in manifest order whatever the degree of parallelism.
pub fn featurize(manifest: &Manifest, pyramid: PyramidConfig, jobs: usize) -> Result<FeatureTable> {
    let one = |sample: &crate::dataset::Sample| -> Result<FeatureRow> {
        let map = manifest.load_label_map(sample)?;
        Ok(FeatureRow {
            frame_id: sample.frame_id.clone(),
            features: spp_descriptor(&map, pyramid, manifest.class_count)?.values,
            speed_kmh: sample.speed_kmh,
            scenario: sample.scenario,
            split: sample.split,
        })
    };
    let rows = if jobs <= 1 {
        manifest
            .samples
            .iter()
            .map(one)
            .collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| {
            manifest
                .samples
                .par_iter()
                .map(one)
                .collect::<Result<Vec<_>>>()
        })?
    };
    let mut table = FeatureTable::new(rows)?;
    table.dim = pyramid.descriptor_len(manifest.class_count);
    Ok(table)
}
