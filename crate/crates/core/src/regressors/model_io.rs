//! Binary model files.
//!
//! Every integer and float is little-endian; floats are IEEE-754 `f64`, so
//! a decoded model is bit-identical to the one encoded.
//!
//! ```text
//! magic      8 bytes  "ISA2MODL"
//! version    u32      1
//! kind       u8       1 = linear, 2 = boosted trees, 3 = MLP
//! payload
//!
//! linear:   solver u8 (0 ols, 1 ridge, 2 lasso, 3 svr)
//!           ridge: lambda f64
//!           lasso: lambda f64, tol f64, max_sweeps u64, sweeps u64, converged u8
//!           svr:   cost f64, epsilon f64, epochs u64
//!           dim u32, weights f64 x dim, bias f64
//! boosted:  feature_count u32, base f64, shrinkage f64, max_depth u32,
//!           tree_count u32, then per tree: node_count u32 and per node
//!           tag u8 (0 leaf: value f64 | 1 split: feature u32, threshold f64,
//!           left u32, right u32)
//! mlp:      input_dim u32, hidden u32,
//!           input mean f64 x input_dim, input std f64 x input_dim,
//!           degenerate flags u8 x input_dim,
//!           hidden weights f64 x hidden*input_dim (row-major),
//!           hidden bias f64 x hidden, output weights f64 x hidden,
//!           output bias f64, loss curve length u32, loss curve f64 x length
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{
    BoostedModel, LinearKind, LinearModel, MlpModel, Node, RegressionTree, RegressorModel,
};
use crate::error::{Error, Result};
use crate::features::Standardization;

pub const MODEL_MAGIC: &[u8; 8] = b"ISA2MODL";
pub const MODEL_VERSION: u32 = 1;

const KIND_LINEAR: u8 = 1;
const KIND_BOOSTED: u8 = 2;
const KIND_MLP: u8 = 3;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        vs.into_iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        // guard against absurd lengths before allocating
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::ModelFormat(format!("length {n} exceeds file size")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn encode_model(model: &RegressorModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(MODEL_VERSION as usize);
    match model {
        RegressorModel::Linear(m) => {
            w.u8(KIND_LINEAR);
            match m.kind {
                LinearKind::Ols => w.u8(0),
                LinearKind::Ridge { lambda } => {
                    w.u8(1);
                    w.f64(lambda);
                }
                LinearKind::Lasso {
                    lambda,
                    tol,
                    max_sweeps,
                    sweeps,
                    converged,
                } => {
                    w.u8(2);
                    w.f64(lambda);
                    w.f64(tol);
                    w.u64(max_sweeps);
                    w.u64(sweeps);
                    w.u8(converged as u8);
                }
                LinearKind::Svr {
                    cost,
                    epsilon,
                    epochs,
                } => {
                    w.u8(3);
                    w.f64(cost);
                    w.f64(epsilon);
                    w.u64(epochs);
                }
            }
            w.u32(m.weights.len());
            w.f64s(m.weights.iter());
            w.f64(m.bias);
        }
        RegressorModel::Boosted(m) => {
            w.u8(KIND_BOOSTED);
            w.u32(m.feature_count);
            w.f64(m.base_prediction);
            w.f64(m.shrinkage);
            w.u32(m.max_depth);
            w.u32(m.trees.len());
            for tree in &m.trees {
                w.u32(tree.nodes.len());
                for node in &tree.nodes {
                    match *node {
                        Node::Leaf { value } => {
                            w.u8(0);
                            w.f64(value);
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            w.u8(1);
                            w.u32(feature);
                            w.f64(threshold);
                            w.u32(left);
                            w.u32(right);
                        }
                    }
                }
            }
        }
        RegressorModel::Mlp(m) => {
            w.u8(KIND_MLP);
            w.u32(m.input_dim());
            w.u32(m.hidden_width());
            w.f64s(m.input.mean.iter());
            w.f64s(m.input.std.iter());
            m.input.degenerate.iter().for_each(|&d| w.u8(d as u8));
            w.f64s(m.hidden_weights.iter());
            w.f64s(m.hidden_bias.iter());
            w.f64s(m.output_weights.iter());
            w.f64(m.output_bias);
            w.u32(m.loss_curve.len());
            w.f64s(m.loss_curve.iter());
        }
    }
    w.0
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::ModelFormat(format!("non-finite {what}")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<RegressorModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(&MODEL_MAGIC[..]) {
        return Err(Error::ModelFormat("missing ISA2MODL magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION as usize {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let model = match r.u8()? {
        KIND_LINEAR => {
            let kind = match r.u8()? {
                0 => LinearKind::Ols,
                1 => LinearKind::Ridge { lambda: r.f64()? },
                2 => LinearKind::Lasso {
                    lambda: r.f64()?,
                    tol: r.f64()?,
                    max_sweeps: r.u64()?,
                    sweeps: r.u64()?,
                    converged: r.u8()? != 0,
                },
                3 => LinearKind::Svr {
                    cost: r.f64()?,
                    epsilon: r.f64()?,
                    epochs: r.u64()?,
                },
                other => {
                    return Err(Error::ModelFormat(format!(
                        "unknown linear solver tag {other}"
                    )))
                }
            };
            let dim = r.u32()?;
            let weights = r.f64s(dim)?;
            let bias = r.f64()?;
            check_finite(&weights, "weight")?;
            check_finite(&[bias], "bias")?;
            RegressorModel::Linear(LinearModel {
                weights: Array1::from(weights),
                bias,
                kind,
            })
        }
        KIND_BOOSTED => {
            let feature_count = r.u32()?;
            let base_prediction = r.f64()?;
            let shrinkage = r.f64()?;
            let max_depth = r.u32()?;
            let tree_count = r.u32()?;
            let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
            for _ in 0..tree_count {
                let node_count = r.u32()?;
                let mut nodes = Vec::with_capacity(node_count.min(1 << 16));
                for _ in 0..node_count {
                    nodes.push(match r.u8()? {
                        0 => Node::Leaf { value: r.f64()? },
                        1 => Node::Split {
                            feature: r.u32()?,
                            threshold: r.f64()?,
                            left: r.u32()?,
                            right: r.u32()?,
                        },
                        other => {
                            return Err(Error::ModelFormat(format!("unknown node tag {other}")))
                        }
                    });
                }
                for node in &nodes {
                    match *node {
                        Node::Leaf { value } => check_finite(&[value], "leaf value")?,
                        Node::Split {
                            feature,
                            left,
                            right,
                            ..
                        } => {
                            if feature >= feature_count || left >= node_count || right >= node_count
                            {
                                return Err(Error::ModelFormat(
                                    "split node index out of range".into(),
                                ));
                            }
                        }
                    }
                }
                if nodes.is_empty() {
                    return Err(Error::ModelFormat("empty tree".into()));
                }
                trees.push(RegressionTree { nodes });
            }
            RegressorModel::Boosted(BoostedModel {
                trees,
                shrinkage,
                base_prediction,
                max_depth,
                feature_count,
            })
        }
        KIND_MLP => {
            let d = r.u32()?;
            let h = r.u32()?;
            let mean = r.f64s(d)?;
            let std = r.f64s(d)?;
            let degenerate = (0..d)
                .map(|_| r.u8().map(|b| b != 0))
                .collect::<Result<Vec<_>>>()?;
            let hidden_weights = r.f64s(h * d)?;
            let hidden_bias = r.f64s(h)?;
            let output_weights = r.f64s(h)?;
            let output_bias = r.f64()?;
            let curve_len = r.u32()?;
            let loss_curve = r.f64s(curve_len)?;
            for (v, what) in [
                (&mean, "input mean"),
                (&std, "input std"),
                (&hidden_weights, "hidden weight"),
                (&hidden_bias, "hidden bias"),
                (&output_weights, "output weight"),
            ] {
                check_finite(v, what)?;
            }
            RegressorModel::Mlp(MlpModel {
                input: Standardization {
                    mean: Array1::from(mean),
                    std: Array1::from(std),
                    degenerate,
                },
                hidden_weights: Array2::from_shape_vec((h, d), hidden_weights)
                    .map_err(|e| Error::ModelFormat(e.to_string()))?,
                hidden_bias: Array1::from(hidden_bias),
                output_weights: Array1::from(output_weights),
                output_bias,
                loss_curve,
            })
        }
        other => return Err(Error::ModelFormat(format!("unknown model kind {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn write_model(path: &Path, model: &RegressorModel) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<RegressorModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
