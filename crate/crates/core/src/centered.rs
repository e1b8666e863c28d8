//! Centered random forests.
//!
//! Each tree starts from `[0,1]^d`, picks a feature at every node with fixed
//! probabilities `p`, cuts the node's cell at its midpoint along that
//! feature, and repeats to an exact depth. The partition never looks at the
//! data; leaves store the mean training response of the points they hold
//! and predict `0` when empty.
//!
//! Nodes are numbered in heap order (root `1`, children `2h` and `2h+1`).
//! The feature drawn at node `h` is a pure function of the tree's stream key
//! and `h`, so a depth-`k` tree is exactly the top `k` levels of any deeper
//! tree on the same stream. Depth selection by cross-validation relies on
//! this to score every candidate depth from one deep tree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix};
use crate::dcov::FeatureWeights;
use crate::error::{check_len, Error, Result};
use crate::rng;

/// Dense heap storage needs `2^depth` leaves per tree.
pub const MAX_DEPTH: usize = 24;

/// Per-tree randomization. Feature draws are keyed by node id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStream(pub u64);

impl TreeStream {
    pub fn for_tree(seed: u64, tree: usize) -> Self {
        TreeStream(rng::derive(seed, &[tree as u64]))
    }

    fn feature_at(&self, node: u64, weights: &[f64]) -> usize {
        sample_index(weights, rng::unit_draw(self.0, node))
    }
}

/// Index `j` with probability `p_j` given `u ~ U[0,1)`. Zero-weight entries
/// are never returned.
pub(crate) fn sample_index(p: &[f64], u: f64) -> usize {
    let total: f64 = p.iter().sum();
    let target = u * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (j, &w) in p.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cum += w;
        last = j;
        if target < cum {
            return j;
        }
    }
    last
}

/// Hyper-rectangle `[lo, hi)`, closed on a side where `hi_j = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cell {
    pub fn unit(d: usize) -> Self {
        Self {
            lo: vec![0.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo && (v < hi || (hi == 1.0 && v <= 1.0)))
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(lo, hi)| hi - lo).product()
    }

    fn split(&self, j: usize) -> (Cell, Cell, f64) {
        let mid = 0.5 * (self.lo[j] + self.hi[j]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[j] = mid;
        right.lo[j] = mid;
        (left, right, mid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub mean: f64,
    pub count: usize,
}

impl Leaf {
    fn predict(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.mean
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredTree {
    pub(crate) d: usize,
    pub(crate) depth: usize,
    /// Split feature of internal node `h` at index `h - 1`.
    pub(crate) features: Vec<u32>,
    pub(crate) split_values: Vec<f64>,
    /// Leaves left to right.
    pub(crate) leaves: Vec<Leaf>,
}

/// Split structure (features, midpoints) of the top `depth` levels.
fn grow_structure(d: usize, p: &[f64], depth: usize, stream: TreeStream) -> (Vec<u32>, Vec<f64>) {
    let internal = (1usize << depth) - 1;
    let mut features = Vec::with_capacity(internal);
    let mut split_values = Vec::with_capacity(internal);
    // Breadth-first over heap ids keeps the arrays in heap order.
    let mut cells = vec![Cell::unit(d)];
    for _level in 0..depth {
        let mut next = Vec::with_capacity(cells.len() * 2);
        for cell in &cells {
            let node = features.len() as u64 + 1;
            let j = stream.feature_at(node, p);
            let (left, right, mid) = cell.split(j);
            features.push(j as u32);
            split_values.push(mid);
            next.push(left);
            next.push(right);
        }
        cells = next;
    }
    (features, split_values)
}

fn validate(data: &Dataset, weights: &FeatureWeights, depth: usize) -> Result<()> {
    data.require_nonempty()?;
    check_len(weights.len(), data.n_features())?;
    if depth > MAX_DEPTH {
        return Err(Error::invalid(format!("depth {depth} exceeds {MAX_DEPTH}")));
    }
    Ok(())
}

/// Walk `levels` levels from the root; returns the heap id reached.
#[inline]
fn descend(features: &[u32], split_values: &[f64], levels: usize, x: impl Fn(usize) -> f64) -> usize {
    let mut node = 1usize;
    for _ in 0..levels {
        let i = node - 1;
        node = if x(features[i] as usize) >= split_values[i] {
            2 * node + 1
        } else {
            2 * node
        };
    }
    node
}

pub fn build_centered_tree(
    data: &Dataset,
    weights: &FeatureWeights,
    depth: usize,
    stream: TreeStream,
) -> Result<CenteredTree> {
    validate(data, weights, depth)?;
    let d = data.n_features();
    let (features, split_values) = grow_structure(d, weights.as_slice(), depth, stream);
    let n_leaves = 1usize << depth;
    let mut sums = vec![0.0; n_leaves];
    let mut counts = vec![0usize; n_leaves];
    for i in 0..data.len() {
        let node = descend(&features, &split_values, depth, |j| data.x.get(i, j));
        sums[node - n_leaves] += data.y[i];
        counts[node - n_leaves] += 1;
    }
    let leaves = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| Leaf {
            mean: if c == 0 { 0.0 } else { s / c as f64 },
            count: c,
        })
        .collect();
    Ok(CenteredTree {
        d,
        depth,
        features,
        split_values,
        leaves,
    })
}

impl CenteredTree {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_features(&self) -> usize {
        self.d
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn split_features(&self) -> &[u32] {
        &self.features
    }

    pub fn split_values(&self) -> &[f64] {
        &self.split_values
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        descend(&self.features, &self.split_values, self.depth, |j| x[j]) - (1usize << self.depth)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaves[self.leaf_index(x)].predict()
    }

    /// Cells of all leaves, left to right.
    pub fn leaf_cells(&self) -> Vec<Cell> {
        let mut cells = vec![Cell::unit(self.d)];
        for _ in 0..self.depth {
            let offset = cells.len() - 1;
            cells = cells
                .iter()
                .enumerate()
                .flat_map(|(k, c)| {
                    let (l, r, _) = c.split(self.features[offset + k] as usize);
                    [l, r]
                })
                .collect();
        }
        cells
    }

    /// Number of splits along each feature on the path to every leaf.
    pub fn leaf_split_counts(&self) -> Vec<Vec<usize>> {
        (0..self.leaves.len())
            .map(|leaf| {
                let mut counts = vec![0; self.d];
                let mut node = leaf + (1usize << self.depth);
                while node > 1 {
                    node /= 2;
                    counts[self.features[node - 1] as usize] += 1;
                }
                counts
            })
            .collect()
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        let internal = (1usize << self.depth) - 1;
        if self.features.len() != internal
            || self.split_values.len() != internal
            || self.leaves.len() != internal + 1
        {
            return Err(Error::Model("tree arrays do not match depth".into()));
        }
        if self.features.iter().any(|&f| f as usize >= self.d) {
            return Err(Error::Model("split feature out of range".into()));
        }
        Ok(())
    }
}

pub fn predict_tree(tree: &CenteredTree, x: &[f64]) -> f64 {
    tree.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredForest {
    pub(crate) trees: Vec<CenteredTree>,
    pub(crate) weights: FeatureWeights,
    pub(crate) depth: usize,
    pub(crate) seed: u64,
}

/// `n_trees` trees on the same training data, tree `t` on stream
/// `(seed, t)`.
pub fn build_forest(
    data: &Dataset,
    weights: &FeatureWeights,
    depth: usize,
    n_trees: usize,
    seed: u64,
) -> Result<CenteredForest> {
    if n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    validate(data, weights, depth)?;
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| build_centered_tree(data, weights, depth, TreeStream::for_tree(seed, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CenteredForest {
        trees,
        weights: weights.clone(),
        depth,
        seed,
    })
}

impl CenteredForest {
    pub fn trees(&self) -> &[CenteredTree] {
        &self.trees
    }

    pub fn weights(&self) -> &FeatureWeights {
        &self.weights
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .into_par_iter()
            .map(|i| self.predict(&x.row(i)))
            .collect()
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Model("forest has no trees".into()));
        }
        for t in &self.trees {
            t.check_consistent()?;
            if t.depth != self.depth || t.d != self.weights.len() {
                return Err(Error::Model("tree shape differs from forest".into()));
            }
        }
        Ok(())
    }
}

/// Odd depths `h ≤ log₂ n`; `{1}` when none qualify.
pub fn candidate_depths(n: usize) -> Vec<usize> {
    let limit = if n == 0 { 0.0 } else { (n as f64).log2() };
    let mut out: Vec<usize> = (0..)
        .map(|k| 2 * k + 1)
        .take_while(|&h| h as f64 <= limit && h <= MAX_DEPTH)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

/// Visit counts and response sums at every node of a depth-`max_depth`
/// tree, so any shallower tree on the same stream can be read off.
struct NodeProfile {
    features: Vec<u32>,
    split_values: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl NodeProfile {
    fn build(data: &Dataset, p: &[f64], max_depth: usize, stream: TreeStream) -> Self {
        let (features, split_values) = grow_structure(data.n_features(), p, max_depth, stream);
        let n_nodes = (1usize << (max_depth + 1)) - 1;
        let mut sums = vec![0.0; n_nodes];
        let mut counts = vec![0usize; n_nodes];
        for i in 0..data.len() {
            let mut node = 1usize;
            for level in 0..=max_depth {
                sums[node - 1] += data.y[i];
                counts[node - 1] += 1;
                if level == max_depth {
                    break;
                }
                let k = node - 1;
                node = if data.x.get(i, features[k] as usize) >= split_values[k] {
                    2 * node + 1
                } else {
                    2 * node
                };
            }
        }
        Self {
            features,
            split_values,
            sums,
            counts,
        }
    }

    /// Predictions at each requested depth (ascending) for one point.
    fn predict_depths(&self, x: impl Fn(usize) -> f64, depths: &[usize], out: &mut [f64]) {
        let mut node = 1usize;
        let mut level = 0;
        for (slot, &h) in out.iter_mut().zip(depths) {
            while level < h {
                let k = node - 1;
                node = if x(self.features[k] as usize) >= self.split_values[k] {
                    2 * node + 1
                } else {
                    2 * node
                };
                level += 1;
            }
            let c = self.counts[node - 1];
            *slot = if c == 0 { 0.0 } else { self.sums[node - 1] / c as f64 };
        }
    }
}

/// Held-out mean squared error for each candidate depth.
pub fn cv_depth_errors(
    data: &Dataset,
    weights: &FeatureWeights,
    n_trees: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    validate(data, weights, 0)?;
    let n = data.len();
    if n < folds {
        return Err(Error::invalid(format!("{n} samples is fewer than {folds} folds")));
    }
    let depths = candidate_depths(n);
    let max_depth = *depths.last().unwrap();
    let assignment = fold_assignment(n, folds, rng::derive(seed, &[u64::MAX]));

    let mut total = vec![0.0; depths.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        let train_data = data.subset(&train);
        let per_tree: Vec<Vec<f64>> = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let profile = NodeProfile::build(
                    &train_data,
                    weights.as_slice(),
                    max_depth,
                    TreeStream::for_tree(seed, t),
                );
                let mut preds = vec![0.0; held.len() * depths.len()];
                for (k, &i) in held.iter().enumerate() {
                    let slot = &mut preds[k * depths.len()..(k + 1) * depths.len()];
                    profile.predict_depths(|j| data.x.get(i, j), &depths, slot);
                }
                preds
            })
            .collect();
        let mut sums = vec![0.0; held.len() * depths.len()];
        for preds in &per_tree {
            for (s, p) in sums.iter_mut().zip(preds) {
                *s += p;
            }
        }
        for (c, tot) in total.iter_mut().enumerate() {
            let mse = held
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let pred = sums[k * depths.len() + c] / n_trees as f64;
                    (pred - data.y[i]).powi(2)
                })
                .sum::<f64>()
                / held.len() as f64;
            *tot += mse;
        }
    }
    Ok(depths
        .into_iter()
        .zip(total)
        .map(|(h, t)| (h, t / folds as f64))
        .collect())
}

/// Candidate depth with the lowest mean held-out MSE; ties go to the
/// shallower depth.
pub fn cv_select_depth(
    data: &Dataset,
    weights: &FeatureWeights,
    n_trees: usize,
    folds: usize,
    seed: u64,
) -> Result<usize> {
    let errors = cv_depth_errors(data, weights, n_trees, folds, seed)?;
    let mut best = errors[0];
    for &(h, e) in &errors[1..] {
        if e < best.1 {
            best = (h, e);
        }
    }
    Ok(best.0)
}

/// Shuffled round-robin fold labels.
pub(crate) fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::chacha(seed));
    let mut labels = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        labels[i] = k % folds;
    }
    labels
}
