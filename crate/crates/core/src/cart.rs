//! Bootstrap CART forests with weighted feature-subset sampling.
//!
//! At every node a subset of `mtry` features is drawn without replacement
//! with probabilities proportional to the forest's feature weights, and the
//! node is split at the best SSE threshold among those features only. With
//! uniform weights this is Breiman's random forest.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centered::sample_index;
use crate::data::{Dataset, FeatureMatrix};
use crate::dcov::FeatureWeights;
use crate::error::{check_len, Error, Result};
use crate::rng;

/// `m` distinct feature indices, ascending.
///
/// Draws are sequential with the remaining weights renormalized after each
/// pick. Zero-weight features only enter once every positive-weight feature
/// has been taken, and then uniformly.
pub fn weighted_subset<R: Rng + ?Sized>(
    d: usize,
    m: usize,
    weights: &FeatureWeights,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_len(weights.len(), d)?;
    if m == 0 || m > d {
        return Err(Error::invalid(format!("subset size {m} not in 1..={d}")));
    }
    if m == d {
        return Ok((0..d).collect());
    }
    let mut remaining: Vec<f64> = weights.as_slice().to_vec();
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; d];
    while chosen.len() < m && remaining.iter().any(|&w| w > 0.0) {
        let j = sample_index(&remaining, rng.random::<f64>());
        remaining[j] = 0.0;
        taken[j] = true;
        chosen.push(j);
    }
    if chosen.len() < m {
        let mut rest: Vec<usize> = (0..d).filter(|&j| !taken[j]).collect();
        while chosen.len() < m {
            let k = rng.random_range(0..rest.len());
            chosen.push(rest.swap_remove(k));
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Sum of the children's SSE.
    pub sse: f64,
}

/// Best SSE split of `rows` over `candidates`.
///
/// Thresholds are midpoints between consecutive distinct values. Ties (up to
/// `1e-12` of the node SSE) go to the lowest feature index, then the
/// smallest threshold. `None` when the node is pure or every candidate is
/// constant on it.
pub fn best_split(data: &Dataset, rows: &[usize], candidates: &[usize]) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let mean = rows.iter().map(|&i| data.y[i]).sum::<f64>() / n as f64;
    if rows.iter().all(|&i| data.y[i] == data.y[rows[0]]) {
        return None;
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let node_sse: f64 = rows.iter().map(|&i| (data.y[i] - mean).powi(2)).sum();
    // candidates inducing the same partition differ only by roundoff
    let tie = 1e-12 * node_sse;
    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &j in &sorted {
        let col = data.x.column(j);
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (col[i], data.y[i] - mean)));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        let total_s: f64 = pairs.iter().map(|p| p.1).sum();
        let total_q: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let (mut s, mut q) = (0.0, 0.0);
        for k in 1..n {
            s += pairs[k - 1].1;
            q += pairs[k - 1].1 * pairs[k - 1].1;
            if pairs[k - 1].0 == pairs[k].0 {
                continue;
            }
            let nl = k as f64;
            let nr = (n - k) as f64;
            let sse_l = (q - s * s / nl).max(0.0);
            let sr = total_s - s;
            let sse_r = ((total_q - q) - sr * sr / nr).max(0.0);
            let sse = sse_l + sse_r;
            if best.is_none_or(|b| sse < b.sse - tie) {
                let (lo, hi) = (pairs[k - 1].0, pairs[k].0);
                let mut threshold = 0.5 * (lo + hi);
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some(SplitCandidate {
                    feature: j,
                    threshold,
                    sse,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CartNode {
    Leaf {
        value: f64,
        count: usize,
    },
    /// `x[feature] < threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartTree {
    pub(crate) nodes: Vec<CartNode>,
}

/// Record of one split decision, for auditing subset sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub node: usize,
    pub subset: Vec<usize>,
    pub feature: Option<usize>,
}

struct Grower<'a, R> {
    data: &'a Dataset,
    weights: &'a FeatureWeights,
    mtry: usize,
    max_depth: Option<usize>,
    rng: &'a mut R,
    nodes: Vec<CartNode>,
    trace: Option<Vec<NodeTrace>>,
}

impl<R: Rng> Grower<'_, R> {
    fn leaf(&self, rows: &[usize]) -> CartNode {
        let value = rows.iter().map(|&i| self.data.y[i]).sum::<f64>() / rows.len() as f64;
        CartNode::Leaf {
            value,
            count: rows.len(),
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> Result<usize> {
        let id = self.nodes.len();
        self.nodes.push(CartNode::Leaf {
            value: 0.0,
            count: 0,
        });
        if rows.len() < 2 || self.max_depth.is_some_and(|m| depth >= m) {
            self.nodes[id] = self.leaf(&rows);
            return Ok(id);
        }
        let subset = weighted_subset(self.data.n_features(), self.mtry, self.weights, self.rng)?;
        let split = best_split(self.data, &rows, &subset);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(NodeTrace {
                node: id,
                subset,
                feature: split.map(|s| s.feature),
            });
        }
        let Some(split) = split else {
            self.nodes[id] = self.leaf(&rows);
            return Ok(id);
        };
        let col = self.data.x.column(split.feature);
        let count = rows.len();
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| col[i] < split.threshold);
        let left = self.grow(left_rows, depth + 1)?;
        let right = self.grow(right_rows, depth + 1)?;
        self.nodes[id] = CartNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            count,
        };
        Ok(id)
    }
}

fn grow_tree<R: Rng>(
    data: &Dataset,
    weights: &FeatureWeights,
    mtry: usize,
    max_depth: Option<usize>,
    rng: &mut R,
    trace: bool,
) -> Result<(CartTree, Option<Vec<NodeTrace>>)> {
    data.require_nonempty()?;
    check_len(weights.len(), data.n_features())?;
    let mut grower = Grower {
        data,
        weights,
        mtry,
        max_depth,
        rng,
        nodes: Vec::new(),
        trace: trace.then(Vec::new),
    };
    grower.grow((0..data.len()).collect(), 0)?;
    Ok((CartTree { nodes: grower.nodes }, grower.trace))
}

/// One CART tree on all rows of `data` (no bootstrap).
pub fn build_cart_tree<R: Rng>(
    data: &Dataset,
    weights: &FeatureWeights,
    mtry: usize,
    max_depth: Option<usize>,
    rng: &mut R,
) -> Result<CartTree> {
    Ok(grow_tree(data, weights, mtry, max_depth, rng, false)?.0)
}

pub fn build_cart_tree_traced<R: Rng>(
    data: &Dataset,
    weights: &FeatureWeights,
    mtry: usize,
    max_depth: Option<usize>,
    rng: &mut R,
) -> Result<(CartTree, Vec<NodeTrace>)> {
    let (tree, trace) = grow_tree(data, weights, mtry, max_depth, rng, true)?;
    Ok((tree, trace.unwrap_or_default()))
}

impl CartTree {
    pub fn nodes(&self) -> &[CartNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                CartNode::Leaf { value, .. } => return *value,
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[CartNode], id: usize) -> usize {
            match &nodes[id] {
                CartNode::Leaf { .. } => 0,
                CartNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub(crate) fn check_consistent(&self, d: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Model("empty CART tree".into()));
        }
        for node in &self.nodes {
            if let CartNode::Split {
                feature,
                left,
                right,
                ..
            } = node
            {
                if *feature >= d || *left >= self.nodes.len() || *right >= self.nodes.len() {
                    return Err(Error::Model("CART node index out of range".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bootstrap {
    /// `n` rows drawn with replacement.
    WithReplacement(usize),
    /// Every tree sees the training rows as given.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub n_trees: usize,
    pub mtry: usize,
    pub bootstrap: Bootstrap,
    /// `None` grows until no valid split remains.
    pub max_depth: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartForest {
    pub(crate) trees: Vec<CartTree>,
    pub(crate) weights: FeatureWeights,
    pub(crate) params: CartParams,
}

/// Bootstrap row indices used by tree `tree` of a forest seeded with `seed`.
pub fn bootstrap_rows(n: usize, bootstrap: Bootstrap, seed: u64, tree: usize) -> Vec<usize> {
    match bootstrap {
        Bootstrap::Identity => (0..n).collect(),
        Bootstrap::WithReplacement(size) => {
            let mut r = rng::chacha(rng::derive(seed, &[tree as u64, 0]));
            (0..size).map(|_| r.random_range(0..n)).collect()
        }
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    rng::chacha(rng::derive(seed, &[tree as u64, 1]))
}

pub fn build_cart_forest(
    data: &Dataset,
    weights: &FeatureWeights,
    params: CartParams,
) -> Result<CartForest> {
    data.require_nonempty()?;
    check_len(weights.len(), data.n_features())?;
    if params.n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    if params.mtry == 0 || params.mtry > data.n_features() {
        return Err(Error::invalid(format!(
            "mtry {} not in 1..={}",
            params.mtry,
            data.n_features()
        )));
    }
    if params.bootstrap == Bootstrap::WithReplacement(0) {
        return Err(Error::invalid("bootstrap size must be at least 1"));
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let rows = bootstrap_rows(data.len(), params.bootstrap, params.seed, t);
            let sample = data.subset(&rows);
            build_cart_tree(
                &sample,
                weights,
                params.mtry,
                params.max_depth,
                &mut tree_rng(params.seed, t),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CartForest {
        trees,
        weights: weights.clone(),
        params,
    })
}

impl CartForest {
    pub fn trees(&self) -> &[CartTree] {
        &self.trees
    }

    pub fn weights(&self) -> &FeatureWeights {
        &self.weights
    }

    pub fn params(&self) -> &CartParams {
        &self.params
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
        self.trees
            .iter()
            .try_for_each(|t| t.check_consistent(self.weights.len()))
    }
}

pub fn predict_cart(forest: &CartForest, x: &[f64]) -> f64 {
    forest.predict(x)
}
