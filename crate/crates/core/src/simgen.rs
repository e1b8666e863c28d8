//! Synthetic source/target regression designs.
//!
//! Features are i.i.d. `U(0,1)`, noise is Gaussian. The source function is
//! `f_s(x) = Σ_{i≤d/2} e^{-x_i} + Σ_{i>d/2} tanh(x_i)`; the target replaces
//! the tanh terms past `d0 = d - ⌊d·r⌋` with `6 sin(2π x_i)`. The difference
//! `R = f_t - f_s = Σ_{i>d0} (6 sin(2π x_i) - tanh(x_i))` therefore depends on
//! the last `⌊d·r⌋` coordinates only.
//!
//! Streams are `ChaCha8Rng` seeded through [`crate::rng::derive`]; uniforms
//! come from `rand`'s standard `f64` conversion and noise from
//! `rand_distr::Normal`. Rows are drawn in order, `d` uniforms followed by
//! one normal per row.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
    Test,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Source => 1,
            Domain::Target => 2,
            Domain::Test => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_s: usize,
    pub n_t: usize,
    pub n_test: usize,
    pub d: usize,
    /// Discrepancy ratio in `[0, 0.5]`.
    pub r: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_s: 5000,
            n_t: 400,
            n_test: 200,
            d: 20,
            r: 0.1,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_even(self.d)?;
        if !(0.0..=0.5).contains(&self.r) {
            return Err(Error::invalid(format!("discrepancy ratio {} not in [0, 0.5]", self.r)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid("noise_sd must be finite and non-negative"));
        }
        Ok(())
    }

    /// Number of coordinates on which source and target differ, `⌊d·r⌋`.
    pub fn n_different(&self) -> usize {
        // guard against d·r landing a hair under an integer
        (self.d as f64 * self.r + 1e-9).floor() as usize
    }

    /// First differing coordinate (1-based), `d - ⌊d·r⌋`.
    pub fn d0(&self) -> usize {
        self.d - self.n_different()
    }

    /// 0-based indices of the coordinates `R` depends on.
    pub fn difference_features(&self) -> std::ops::Range<usize> {
        self.d0()..self.d
    }

    pub fn n_for(&self, domain: Domain) -> usize {
        match domain {
            Domain::Source => self.n_s,
            Domain::Target => self.n_t,
            Domain::Test => self.n_test,
        }
    }

    /// Conditional mean of the response in `domain`.
    pub fn mean_function(&self, domain: Domain, x: &[f64]) -> Result<f64> {
        match domain {
            Domain::Source => f_source(x),
            Domain::Target | Domain::Test => f_target(x, self.d0()),
        }
    }
}

fn check_even(d: usize) -> Result<()> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::invalid(format!("feature count {d} must be even and positive")));
    }
    Ok(())
}

fn check_d0(d: usize, d0: usize) -> Result<()> {
    check_even(d)?;
    if d0 < d / 2 || d0 > d {
        return Err(Error::invalid(format!("d0 = {d0} not in [{}, {d}]", d / 2)));
    }
    Ok(())
}

pub fn f_source(x: &[f64]) -> Result<f64> {
    check_even(x.len())?;
    let h = x.len() / 2;
    Ok(x[..h].iter().map(|v| (-v).exp()).sum::<f64>() + x[h..].iter().map(|v| v.tanh()).sum::<f64>())
}

pub fn f_target(x: &[f64], d0: usize) -> Result<f64> {
    check_d0(x.len(), d0)?;
    let h = x.len() / 2;
    Ok(x[..h].iter().map(|v| (-v).exp()).sum::<f64>()
        + x[h..d0].iter().map(|v| v.tanh()).sum::<f64>()
        + x[d0..].iter().map(|v| 6.0 * (2.0 * PI * v).sin()).sum::<f64>())
}

/// Target-shaped function with dominant sinusoid features past `d0`.
pub fn f1_dominant(x: &[f64], d0: usize) -> Result<f64> {
    f_target(x, d0)
}

/// Source-shaped function with no dominant feature.
pub fn f2_flat(x: &[f64]) -> Result<f64> {
    f_source(x)
}

/// `R(x) = f_t(x) - f_s(x)`.
pub fn difference(x: &[f64], d0: usize) -> Result<f64> {
    check_d0(x.len(), d0)?;
    Ok(x[d0..]
        .iter()
        .map(|v| 6.0 * (2.0 * PI * v).sin() - v.tanh())
        .sum())
}

/// Features, noisy responses and the noiseless means.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    pub data: Dataset,
    pub mean: Vec<f64>,
}

/// `n` rows of `U(0,1)^d` with `y = f(x) + N(0, noise_sd²)`.
pub fn sample_regression(
    n: usize,
    d: usize,
    noise_sd: f64,
    seed: u64,
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<SimSample> {
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = rng::chacha(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
        let m = f(&row)?;
        let eps = noise.sample(&mut r);
        y.push(m + eps);
        mean.push(m);
        rows.push(row);
    }
    let x = if n == 0 {
        FeatureMatrix::from_columns(vec![Vec::new(); d])?
    } else {
        FeatureMatrix::from_rows(&rows)?
    };
    Ok(SimSample {
        data: Dataset::new(x, y)?,
        mean,
    })
}

pub fn generate(config: &SimConfig, domain: Domain) -> Result<SimSample> {
    config.validate()?;
    let seed = rng::derive(config.seed, &[domain.tag()]);
    sample_regression(config.n_for(domain), config.d, config.noise_sd, seed, |x| {
        config.mean_function(domain, x)
    })
}

pub fn gen_dataset(config: &SimConfig, domain: Domain) -> Result<Dataset> {
    Ok(generate(config, domain)?.data)
}
