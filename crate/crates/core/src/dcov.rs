//! Sample distance covariance between univariate samples.
//!
//! Three estimators are provided:
//!
//! * [`dcov_v2`]: the biased V-statistic `(1/n²) Σ A_kl B_kl` over
//!   double-centered distance matrices. Always non-negative.
//! * [`dcov_u`]: the unbiased U-statistic `(n(n-3))⁻¹ Σ_{i≠j} Ã_ij B̃_ij`
//!   over U-centered distance matrices, `O(n²)`.
//! * [`dcov_fast`]: the same U-statistic in `O(n log n)` from sorted
//!   prefix sums and a merge-sort pass over the joint ranks.
//!
//! The U-statistics are unbiased for the population distance covariance
//! and can therefore be negative on independent samples.
//! [`feature_weights`] clamps those to zero before normalizing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};

/// Above this sample size the V-statistic streams row statistics instead of
/// materializing the two `n × n` centered matrices.
pub const V_STREAM_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DCovKind {
    V,
    U,
    #[default]
    FastU,
}

impl std::str::FromStr for DCovKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v" => Ok(DCovKind::V),
            "u" => Ok(DCovKind::U),
            "fast_u" | "fastu" | "fast" => Ok(DCovKind::FastU),
            other => Err(Error::invalid(format!("unknown dcov estimator `{other}`"))),
        }
    }
}

/// A squared distance covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DCovEstimate {
    pub value: f64,
    pub kind: DCovKind,
    pub n: usize,
}

/// Per-feature selection probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    p: Vec<f64>,
}

impl FeatureWeights {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("feature weights"));
        }
        if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("feature weights must be finite and non-negative"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("feature weights sum to {sum}, expected 1")));
        }
        Ok(Self { p })
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            p: vec![1.0 / d as f64; d],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.p.len() as f64;
        self.p.iter().all(|&v| v == u)
    }
}

/// `|x_k - x_l|` for all pairs.
pub fn pairwise_dist(x: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|&xi| x.iter().map(|&xj| (xi - xj).abs()).collect())
        .collect()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<usize> {
    check_len(x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::Empty("sample"));
    }
    Ok(x.len())
}

fn check_u(n: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::InsufficientSample(n));
    }
    Ok(())
}

/// Row sums `a_i. = Σ_j |x_i - x_j|` in `O(n log n)`.
fn distance_row_sums(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let order = argsort(x);
    let total: f64 = x.iter().sum();
    let mut sums = vec![0.0; n];
    let mut prefix = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let v = x[i];
        let below = v * k as f64 - prefix;
        let above = (total - prefix - v) - v * (n - 1 - k) as f64;
        sums[i] = below + above;
        prefix += v;
    }
    sums
}

/// Direct `O(n)` row sums, used where the caller wants the plain `O(n²)` form.
fn distance_row_sums_direct(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| x.iter().map(|&xj| (xi - xj).abs()).sum())
        .collect()
}

fn double_center(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let nf = n as f64;
    let row: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>() / nf).collect();
    let grand = row.iter().sum::<f64>() / nf;
    for (k, r) in a.iter_mut().enumerate() {
        for (l, v) in r.iter_mut().enumerate() {
            *v = *v - row[k] - row[l] + grand;
        }
    }
    a
}

/// Biased V-statistic of squared distance covariance.
pub fn dcov_v2(x: &[f64], y: &[f64]) -> Result<DCovEstimate> {
    let n = check_pair(x, y)?;
    let raw = if n <= V_STREAM_THRESHOLD {
        dcov_v2_materialized(x, y)
    } else {
        dcov_v2_streaming(x, y)
    };
    Ok(DCovEstimate {
        value: raw.max(0.0),
        kind: DCovKind::V,
        n,
    })
}

fn dcov_v2_materialized(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let a = double_center(pairwise_dist(x));
    let b = double_center(pairwise_dist(y));
    let s: f64 = a
        .iter()
        .zip(&b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(p, q)| p * q).sum::<f64>())
        .sum();
    s / (n * n)
}

pub(crate) fn dcov_v2_streaming(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let ra: Vec<f64> = distance_row_sums(x).into_iter().map(|s| s / nf).collect();
    let rb: Vec<f64> = distance_row_sums(y).into_iter().map(|s| s / nf).collect();
    let ga = ra.iter().sum::<f64>() / nf;
    let gb = rb.iter().sum::<f64>() / nf;
    let s: f64 = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut acc = 0.0;
            for l in 0..n {
                let a = (x[k] - x[l]).abs() - ra[k] - ra[l] + ga;
                let b = (y[k] - y[l]).abs() - rb[k] - rb[l] + gb;
                acc += a * b;
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    s / (nf * nf)
}

/// Unbiased U-statistic, direct `O(n²)` U-centering.
pub fn dcov_u(x: &[f64], y: &[f64]) -> Result<DCovEstimate> {
    let n = check_pair(x, y)?;
    check_u(n)?;
    let nf = n as f64;
    let ra = distance_row_sums_direct(x);
    let rb = distance_row_sums_direct(y);
    let ta: f64 = ra.iter().sum();
    let tb: f64 = rb.iter().sum();
    let ca = ta / ((nf - 1.0) * (nf - 2.0));
    let cb = tb / ((nf - 1.0) * (nf - 2.0));
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = (x[i] - x[j]).abs() - (ra[i] + ra[j]) / (nf - 2.0) + ca;
            let b = (y[i] - y[j]).abs() - (rb[i] + rb[j]) / (nf - 2.0) + cb;
            s += a * b;
        }
    }
    Ok(DCovEstimate {
        value: s / (nf * (nf - 3.0)),
        kind: DCovKind::U,
        n,
    })
}

/// Unbiased U-statistic in `O(n log n)`.
///
/// Uses `Ω = T1/(n(n-3)) - 2·T2/(n(n-2)(n-3)) + T3/(n(n-1)(n-2)(n-3))` with
/// `T1 = Σ_{i≠j} a_ij b_ij`, `T2 = Σ_i a_i. b_i.` and `T3 = a.. b..`.
/// `T1` comes from one merge-sort pass over the `x`-sorted sequence keyed by
/// `y`. Arguments are put in a canonical order first so that swapping them
/// gives a bit-identical result.
pub fn dcov_fast(x: &[f64], y: &[f64]) -> Result<DCovEstimate> {
    let n = check_pair(x, y)?;
    check_u(n)?;
    let (x, y) = if lex_le(x, y) { (x, y) } else { (y, x) };
    let xc = centered(x);
    let yc = centered(y);

    let ra = distance_row_sums(&xc);
    let rb = distance_row_sums(&yc);
    let t2: f64 = ra.iter().zip(&rb).map(|(a, b)| a * b).sum();
    let t3 = ra.iter().sum::<f64>() * rb.iter().sum::<f64>();
    let t1 = cross_distance_sum(&xc, &yc);

    let nf = n as f64;
    let value = t1 / (nf * (nf - 3.0)) - 2.0 * t2 / (nf * (nf - 2.0) * (nf - 3.0))
        + t3 / (nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0));
    Ok(DCovEstimate {
        value,
        kind: DCovKind::FastU,
        n,
    })
}

pub fn estimate(kind: DCovKind, x: &[f64], y: &[f64]) -> Result<DCovEstimate> {
    match kind {
        DCovKind::V => dcov_v2(x, y),
        DCovKind::U => dcov_u(x, y),
        DCovKind::FastU => dcov_fast(x, y),
    }
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn lex_le(x: &[f64], y: &[f64]) -> bool {
    for (a, b) in x.iter().zip(y) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

/// Stable argsort; ties keep index order.
fn argsort(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    idx
}

#[derive(Clone, Copy)]
struct Item {
    y: f64,
    // weights 1, x, y, x·y
    w: [f64; 4],
    pos: usize,
}

/// `Σ_{i≠j} |x_i - x_j| |y_i - y_j|`.
///
/// In `x`-sorted order, `Σ_{j<i} (x_i - x_j)|y_i - y_j|` expands into four
/// sums `Σ_{j<i} s_ij c_j` with `s_ij = sign(y_i - y_j)` and
/// `c ∈ {1, x, y, xy}`. Each equals `2·L_c(i) - P_c(i)` where `P_c` is the
/// plain prefix sum and `L_c(i)` sums `c_j` over earlier positions with
/// smaller `y`; the latter is accumulated while merge-sorting by `y`. Pairs
/// tied in `x` or `y` contribute zero whatever sign they receive.
fn cross_distance_sum(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let order = argsort(x);
    let mut items: Vec<Item> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| Item {
            y: y[i],
            w: [1.0, x[i], y[i], x[i] * y[i]],
            pos,
        })
        .collect();
    let mut lower = vec![[0.0f64; 4]; n];
    let mut scratch = items.clone();
    merge_sort_accumulate(&mut items, &mut scratch, &mut lower);

    let mut prefix = [0.0f64; 4];
    let mut total = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        let (xi, yi) = (x[i], y[i]);
        let s: [f64; 4] = std::array::from_fn(|c| 2.0 * lower[pos][c] - prefix[c]);
        total += xi * yi * s[0] - xi * s[2] - yi * s[1] + s[3];
        prefix[0] += 1.0;
        prefix[1] += xi;
        prefix[2] += yi;
        prefix[3] += xi * yi;
    }
    2.0 * total
}

/// Stable merge sort on `y`; for each element adds the weights of elements
/// from earlier positions that sort before it.
fn merge_sort_accumulate(items: &mut [Item], scratch: &mut [Item], lower: &mut [[f64; 4]]) {
    let n = items.len();
    if n <= 1 {
        return;
    }
    let mid = n / 2;
    {
        let (left, right) = items.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        merge_sort_accumulate(left, sl, lower);
        merge_sort_accumulate(right, sr, lower);
    }
    let (mut i, mut j, mut k) = (0, mid, 0);
    let mut acc = [0.0f64; 4];
    while i < mid && j < n {
        if items[i].y <= items[j].y {
            for (a, w) in acc.iter_mut().zip(items[i].w) {
                *a += w;
            }
            scratch[k] = items[i];
            i += 1;
        } else {
            let target = &mut lower[items[j].pos];
            for (t, a) in target.iter_mut().zip(acc) {
                *t += a;
            }
            scratch[k] = items[j];
            j += 1;
        }
        k += 1;
    }
    while i < mid {
        scratch[k] = items[i];
        i += 1;
        k += 1;
    }
    while j < n {
        let target = &mut lower[items[j].pos];
        for (t, a) in target.iter_mut().zip(acc) {
            *t += a;
        }
        scratch[k] = items[j];
        j += 1;
        k += 1;
    }
    items.copy_from_slice(&scratch[..n]);
}

/// Normalize estimates into selection probabilities.
///
/// Negative estimates are clamped to zero. If nothing above `1e-12`
/// remains the result is uniform.
pub fn feature_weights(estimates: &[DCovEstimate]) -> Result<FeatureWeights> {
    if estimates.is_empty() {
        return Err(Error::Empty("dcov estimates"));
    }
    let d = estimates.len();
    let clamped: Vec<f64> = estimates
        .iter()
        .map(|e| if e.value.is_finite() { e.value.max(0.0) } else { 0.0 })
        .collect();
    if clamped.iter().all(|&v| v <= 1e-12) {
        return Ok(FeatureWeights::uniform(d));
    }
    let sum: f64 = clamped.iter().sum();
    Ok(FeatureWeights {
        p: clamped.into_iter().map(|v| v / sum).collect(),
    })
}

/// One estimate per feature column against the response.
pub fn feature_dcov(data: &Dataset, kind: DCovKind) -> Result<Vec<DCovEstimate>> {
    (0..data.n_features())
        .into_par_iter()
        .map(|j| estimate(kind, data.x.column(j), &data.y))
        .collect()
}

/// Selection probabilities from [`feature_dcov`]. A single feature gets
/// weight one without estimating anything, so tiny samples are accepted.
pub fn dcov_weights(data: &Dataset, kind: DCovKind) -> Result<FeatureWeights> {
    if data.n_features() == 1 {
        data.require_nonempty()?;
        return Ok(FeatureWeights::uniform(1));
    }
    feature_weights(&feature_dcov(data, kind)?)
}
