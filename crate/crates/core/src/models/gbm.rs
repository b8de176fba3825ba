use serde::{Deserialize, Serialize};

use super::{check_training, sigmoid, softplus, GbmParams, ModelError};
use crate::features::Matrix;

const MIN_HESSIAN: f64 = 1e-12;
const LEAF_CLAMP: f64 = 10.0;
// Relative slack for treating two split gains as tied and a gain as zero.
const GAIN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Regression tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub n_features: usize,
}

impl GbmModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

/// Mean binary log-loss of margins `f` against labels `y`.
pub fn log_loss(f: &[f64], y: &[u8]) -> f64 {
    let total: f64 = f
        .iter()
        .zip(y)
        .map(|(&z, &yi)| softplus(z) - f64::from(yi) * z)
        .sum();
    total / f.len() as f64
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    count: usize,
    sum: f64,
    sum_sq: f64,
    hess: f64,
}

impl Stats {
    fn add(&mut self, r: f64, h: f64) {
        self.count += 1;
        self.sum += r;
        self.sum_sq += r * r;
        self.hess += h;
    }

    fn leaf_value(&self) -> f64 {
        (self.sum / self.hess.max(MIN_HESSIAN)).clamp(-LEAF_CLAMP, LEAF_CLAMP)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

// Per-node accumulator while scanning one feature in sorted order.
#[derive(Debug, Clone, Copy, Default)]
struct Scan {
    count: usize,
    sum: f64,
    last: f64,
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    order: &'a [Vec<u32>],
    params: &'a GbmParams,
}

impl TreeBuilder<'_> {
    /// Grow one tree level by level on residuals `r` with hessians `h`.
    /// `leaf_of` receives, for every row, the index of the leaf it lands in.
    fn build(&self, r: &[f64], h: &[f64], leaf_of: &mut [usize]) -> Tree {
        let n = r.len();
        let mut root = Stats::default();
        for i in 0..n {
            root.add(r[i], h[i]);
        }
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut stats = vec![root];
        leaf_of.iter_mut().for_each(|v| *v = 0);
        let mut frontier = vec![0usize];

        for _depth in 0..self.params.max_depth {
            if frontier.is_empty() {
                break;
            }
            let best = self.best_splits(&frontier, &stats, r, leaf_of, nodes.len());
            let mut next = Vec::new();
            let mut child_of = vec![None; nodes.len()];
            for (slot, &node) in frontier.iter().enumerate() {
                let Some(c) = best[slot] else { continue };
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                stats.push(Stats::default());
                stats.push(Stats::default());
                nodes[node] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                child_of[node] = Some((c.feature, c.threshold, left));
                next.push(left);
                next.push(left + 1);
            }
            for i in 0..n {
                if let Some((feature, threshold, left)) = child_of[leaf_of[i]] {
                    let child = if self.x.get(i, feature) <= threshold { left } else { left + 1 };
                    leaf_of[i] = child;
                    stats[child].add(r[i], h[i]);
                }
            }
            frontier = next;
        }
        for (node, s) in nodes.iter_mut().zip(&stats) {
            if let Node::Leaf { value } = node {
                *value = s.leaf_value();
            }
        }
        Tree { nodes }
    }

    /// Best squared-error-reduction split of every frontier node. Features are
    /// scanned in ascending index and thresholds in ascending value, and a
    /// candidate must beat the incumbent by a relative margin, so ties go to
    /// the lowest feature, then the lowest threshold.
    fn best_splits(
        &self,
        frontier: &[usize],
        stats: &[Stats],
        r: &[f64],
        leaf_of: &[usize],
        n_nodes: usize,
    ) -> Vec<Option<Candidate>> {
        let mut slot_of = vec![usize::MAX; n_nodes];
        for (slot, &node) in frontier.iter().enumerate() {
            slot_of[node] = slot;
        }
        let totals: Vec<Stats> = frontier.iter().map(|&node| stats[node]).collect();
        let eps: Vec<f64> = totals
            .iter()
            .map(|t| GAIN_EPS * (t.sum_sq + f64::MIN_POSITIVE))
            .collect();
        let parent_term: Vec<f64> = totals
            .iter()
            .map(|t| t.sum * t.sum / t.count.max(1) as f64)
            .collect();
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        let msl = self.params.min_samples_leaf;
        let mut scans = vec![Scan::default(); frontier.len()];

        for (feature, order) in self.order.iter().enumerate() {
            scans.iter_mut().for_each(|s| *s = Scan::default());
            for &row in order {
                let row = row as usize;
                let slot = slot_of[leaf_of[row]];
                if slot == usize::MAX {
                    continue;
                }
                let v = self.x.get(row, feature);
                let s = &mut scans[slot];
                if s.count > 0 && v > s.last {
                    let t = &totals[slot];
                    let n_left = s.count;
                    let n_right = t.count - n_left;
                    if n_left >= msl && n_right >= msl {
                        let sum_right = t.sum - s.sum;
                        let gain = s.sum * s.sum / n_left as f64 + sum_right * sum_right / n_right as f64
                            - parent_term[slot];
                        let incumbent = best[slot].map_or(0.0, |c| c.gain);
                        if gain > incumbent + eps[slot] {
                            let mut threshold = 0.5 * (s.last + v);
                            if !(threshold < v) {
                                threshold = s.last;
                            }
                            best[slot] = Some(Candidate {
                                gain,
                                feature,
                                threshold,
                            });
                        }
                    }
                }
                s.count += 1;
                s.sum += r[row];
                s.last = v;
            }
        }
        best
    }
}

fn sorted_orders(x: &Matrix) -> Vec<Vec<u32>> {
    (0..x.n_cols())
        .map(|j| {
            let mut idx: Vec<u32> = (0..x.n_rows() as u32).collect();
            idx.sort_by(|&a, &b| {
                x.get(a as usize, j)
                    .total_cmp(&x.get(b as usize, j))
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

/// Gradient boosting on the binary log-loss. Returns the model and the mean
/// training log-loss before the first tree and after every round.
pub fn fit_gbm_traced(x: &Matrix, y: &[u8], params: &GbmParams) -> Result<(GbmModel, Vec<f64>), ModelError> {
    let prevalence = check_training(x, y)?;
    let base_score = (prevalence / (1.0 - prevalence)).ln();
    let n = x.n_rows();
    let order = sorted_orders(x);
    let builder = TreeBuilder {
        x,
        order: &order,
        params,
    };

    let mut margin = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    let mut leaf_of = vec![0usize; n];
    let mut trace = Vec::with_capacity(params.n_trees + 1);
    trace.push(log_loss(&margin, y));
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            residual[i] = f64::from(y[i]) - p;
            hessian[i] = p * (1.0 - p);
        }
        let tree = builder.build(&residual, &hessian, &mut leaf_of);
        for i in 0..n {
            if let Node::Leaf { value } = tree.nodes[leaf_of[i]] {
                margin[i] += params.learning_rate * value;
            }
        }
        trace.push(log_loss(&margin, y));
        trees.push(tree);
    }
    Ok((
        GbmModel {
            trees,
            learning_rate: params.learning_rate,
            base_score,
            n_trees: params.n_trees,
            max_depth: params.max_depth,
            n_features: x.n_cols(),
        },
        trace,
    ))
}

pub fn fit_gbm(x: &Matrix, y: &[u8], params: &GbmParams) -> Result<GbmModel, ModelError> {
    fit_gbm_traced(x, y, params).map(|(m, _)| m)
}

pub fn predict_proba_gbm(model: &GbmModel, x: &Matrix) -> Result<Vec<f64>, ModelError> {
    if x.n_cols() != model.n_features {
        return Err(ModelError::WidthMismatch {
            expected: model.n_features,
            actual: x.n_cols(),
        });
    }
    Ok(x.rows().map(|r| sigmoid(model.margin(r))).collect())
}
