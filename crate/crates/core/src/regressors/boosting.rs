//! Least-squares gradient boosting with exact greedy regression trees.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Axis-aligned regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub trees: Vec<RegressionTree>,
    pub shrinkage: f64,
    pub base_prediction: f64,
    pub max_depth: usize,
    pub feature_count: usize,
}

impl BoostedModel {
    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.base_prediction + self.shrinkage * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Clone, Copy)]
struct NodeStats {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

impl NodeStats {
    fn sse(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum_sq - self.sum * self.sum / self.count as f64).max(0.0)
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Tree fitted to `residual` over the rows in `members`, grown level by level.
/// `sorted[j]` lists every row ordered by feature `j`.
fn grow_tree(
    x: ArrayView2<f64>,
    residual: &Array1<f64>,
    sorted: &[Vec<usize>],
    members: &[bool],
    max_depth: usize,
) -> RegressionTree {
    const NONE: usize = usize::MAX;
    let n = x.nrows();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut node_of: Vec<usize> = (0..n).map(|i| if members[i] { 0 } else { NONE }).collect();
    let mut frontier = vec![0usize];

    for depth in 0..=max_depth {
        let mut stats = vec![
            NodeStats {
                count: 0,
                sum: 0.0,
                sum_sq: 0.0
            };
            nodes.len()
        ];
        for i in 0..n {
            if node_of[i] != NONE {
                let s = &mut stats[node_of[i]];
                s.count += 1;
                s.sum += residual[i];
                s.sum_sq += residual[i] * residual[i];
            }
        }
        for &k in &frontier {
            let s = stats[k];
            let value = if s.count > 0 {
                s.sum / s.count as f64
            } else {
                0.0
            };
            nodes[k] = Node::Leaf { value };
        }
        if depth == max_depth {
            break;
        }

        // exact greedy scan: per node running left sums along each feature
        let mut best: Vec<Option<Candidate>> = vec![None; nodes.len()];
        let splittable: Vec<bool> = (0..nodes.len())
            .map(|k| frontier.contains(&k) && stats[k].count >= 2 && stats[k].sse() > 0.0)
            .collect();
        let mut left_count = vec![0usize; nodes.len()];
        let mut left_sum = vec![0.0f64; nodes.len()];
        let mut last_value = vec![f64::NAN; nodes.len()];
        for (feature, order) in sorted.iter().enumerate() {
            left_count.iter_mut().for_each(|c| *c = 0);
            left_sum.iter_mut().for_each(|c| *c = 0.0);
            for &i in order {
                let k = node_of[i];
                if k == NONE || !splittable[k] {
                    continue;
                }
                let v = x[[i, feature]];
                let nl = left_count[k];
                if nl > 0 && v > last_value[k] {
                    let s = stats[k];
                    let sl = left_sum[k];
                    let nr = s.count - nl;
                    let sr = s.sum - sl;
                    let gain =
                        sl * sl / nl as f64 + sr * sr / nr as f64 - s.sum * s.sum / s.count as f64;
                    if best[k].is_none_or(|c| gain > c.gain) {
                        let a = last_value[k];
                        let mut threshold = a + (v - a) * 0.5;
                        if !(threshold < v) {
                            threshold = a;
                        }
                        best[k] = Some(Candidate {
                            gain,
                            feature,
                            threshold,
                        });
                    }
                }
                left_count[k] += 1;
                left_sum[k] += residual[i];
                last_value[k] = v;
            }
        }

        let mut next = Vec::new();
        for &k in &frontier {
            let Some(c) = best[k] else { continue };
            // splits that do not reduce the squared error leave a leaf
            if !(c.gain > 1e-12 * stats[k].sse()) || c.gain <= 0.0 {
                continue;
            }
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[k] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right: left + 1,
            };
            next.push(left);
            next.push(left + 1);
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            let k = node_of[i];
            if k == NONE {
                continue;
            }
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = nodes[k]
            {
                node_of[i] = if x[[i, feature]] <= threshold {
                    left
                } else {
                    right
                };
            }
        }
        frontier = next;
    }
    RegressionTree { nodes }
}

/// Boosts `tree_count` trees on the squared loss. `subsample < 1` grows each
/// tree on a seeded random subset of rows; at 1.0 the fit is fully
/// deterministic and the seed is unused.
pub fn fit_boosting(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tree_count: usize,
    max_depth: usize,
    shrinkage: f64,
    subsample: f64,
    seed: u64,
) -> Result<BoostedModel> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if n != y.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if tree_count == 0 || max_depth == 0 {
        return Err(Error::InvalidArgument(
            "tree_count and max_depth must be >= 1".into(),
        ));
    }
    if !(shrinkage > 0.0 && shrinkage <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage must be in (0, 1], got {shrinkage}"
        )));
    }
    if !(subsample > 0.0 && subsample <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample must be in (0, 1], got {subsample}"
        )));
    }

    let sorted: Vec<Vec<usize>> = (0..x.ncols())
        .map(|j| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x[[a, j]].total_cmp(&x[[b, j]]));
            order
        })
        .collect();

    let base_prediction = y.mean().expect("non-empty");
    let mut residual = &y - base_prediction;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = vec![true; n];
    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        if subsample < 1.0 {
            let k = ((subsample * n as f64).ceil() as usize).clamp(1, n);
            members.iter_mut().for_each(|m| *m = false);
            for i in index::sample(&mut rng, n, k) {
                members[i] = true;
            }
        }
        let tree = grow_tree(x, &residual, &sorted, &members, max_depth);
        for (i, r) in residual.iter_mut().enumerate() {
            *r -= shrinkage * tree.predict(x.row(i));
        }
        trees.push(tree);
    }

    Ok(BoostedModel {
        trees,
        shrinkage,
        base_prediction,
        max_depth,
        feature_count: x.ncols(),
    })
}
