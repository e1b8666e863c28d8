//! Replicated experiments over a sweep variable.
//!
//! Each `(sweep value, replicate)` cell draws fresh data from a seed derived
//! from the experiment seed and the replicate index (the same replicate seed
//! is reused across sweep values), fits every method on that data and
//! scores it on the test rows. Methods share data within a cell. Rows come
//! out ordered by sweep value, replicate, then method, however many workers
//! ran the cells.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::harness::ingest::{Encoder, RawTable, Schema};
use crate::harness::methods::{fit_method, Method, ModelSettings};
use crate::harness::metrics::{mse, one_minus_auc};
use crate::rng;
use crate::simgen::{generate, Domain, SimConfig};

pub const RESULT_HEADER: &str =
    "method,sweep_name,sweep_value,replicate,seed,metric_name,metric_value,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Mse,
    OneMinusAuc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::OneMinusAuc => "one_minus_auc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    #[default]
    None,
    /// Discrepancy ratio (simulated data).
    R,
    /// Target sample size (simulated data).
    NT,
    /// Features per CART node, all CART forests.
    Mtry,
    /// Target training rows (simulated or CSV).
    TargetTrainSize,
    /// Target rows restricted to one value of the CSV group column.
    TargetGroup,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::None => "none",
            SweepVariable::R => "r",
            SweepVariable::NT => "n_t",
            SweepVariable::Mtry => "mtry",
            SweepVariable::TargetTrainSize => "target_train_size",
            SweepVariable::TargetGroup => "target_group",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            variable: SweepVariable::None,
            values: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// A random `test_fraction` of the target rows is held out per replicate.
    Holdout { test_fraction: f64 },
    /// `test_size` target rows are held out once for the whole experiment;
    /// training rows are redrawn from the rest per replicate.
    FixedTest { test_size: usize },
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::Holdout { test_fraction: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default)]
    pub schema: Schema,
    #[serde(default)]
    pub scenario: Scenario,
    /// Numeric column identifying e.g. the hospital; never a feature.
    #[serde(default)]
    pub group_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Sim(SimConfig),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub data: DataSource,
    pub replications: usize,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub models: ModelSettings,
    /// Write measured fit time to `wall_ms`; otherwise the column is `0`
    /// and reruns are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("experiment spec: {e}")))
    }

    /// Resolve relative CSV paths against `base`.
    pub fn resolve_paths(&mut self, base: &std::path::Path) {
        if let DataSource::Csv(csv) = &mut self.data {
            for p in [&mut csv.source, &mut csv.target] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("experiment lists no methods"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::invalid("sweep has no values"));
        }
        let sim = matches!(self.data, DataSource::Sim(_));
        match self.sweep.variable {
            SweepVariable::R | SweepVariable::NT if !sim => {
                return Err(Error::invalid(format!(
                    "sweep `{}` needs simulated data",
                    self.sweep.variable.name()
                )))
            }
            SweepVariable::TargetGroup => match &self.data {
                DataSource::Csv(c) if c.group_column.is_some() => {}
                _ => return Err(Error::invalid("sweep `target_group` needs a CSV group_column")),
            },
            _ => {}
        }
        for &v in &self.sweep.values {
            let integral = v >= 0.0 && v.fract() == 0.0;
            let ok = match self.sweep.variable {
                SweepVariable::None => true,
                SweepVariable::R => (0.0..=0.5).contains(&v),
                SweepVariable::TargetGroup => v.is_finite(),
                SweepVariable::NT | SweepVariable::Mtry | SweepVariable::TargetTrainSize => {
                    integral && v >= 1.0
                }
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "invalid value {v} for sweep `{}`",
                    self.sweep.variable.name()
                )));
            }
        }
        if let DataSource::Sim(c) = &self.data {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub sweep_name: &'static str,
    pub sweep_value: f64,
    pub replicate: usize,
    pub seed: u64,
    pub metric: Metric,
    pub metric_value: f64,
    pub wall_ms: u64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.sweep_name,
            self.sweep_value,
            self.replicate,
            self.seed,
            self.metric.name(),
            self.metric_value,
            self.wall_ms
        )
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    Ok(())
}

pub fn results_to_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_results(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// One cell's data: optional source, target training rows, test rows and
/// the values test predictions are scored against.
struct Prepared {
    source: Option<Dataset>,
    target: Dataset,
    test_x: FeatureMatrix,
    test_truth: Vec<f64>,
}

struct CsvTables {
    source: RawTable,
    target: RawTable,
    schema: Schema,
    groups: Option<Vec<f64>>,
}

const FIXED_TEST_STREAM: u64 = 0xF1;
const SPLIT_STREAM: u64 = 0x5A;
const MODEL_STREAM: u64 = 0x3D;

fn load_tables(csv: &CsvSource) -> Result<CsvTables> {
    let source = RawTable::read(&csv.source)?;
    let target = RawTable::read(&csv.target)?;
    if source.headers != target.headers {
        return Err(Error::invalid("source and target CSV headers differ"));
    }
    let mut schema = csv.schema.clone();
    let groups = match &csv.group_column {
        Some(g) => {
            if !schema.ignore.contains(g) {
                schema.ignore.push(g.clone());
            }
            Some(target.numeric_column(g, &target.all_rows())?)
        }
        None => None,
    };
    Ok(CsvTables {
        source,
        target,
        schema,
        groups,
    })
}

fn prepare_sim(base: &SimConfig, sweep: &Sweep, value: f64, rep_seed: u64) -> Result<Prepared> {
    let mut cfg = SimConfig {
        seed: rep_seed,
        ..*base
    };
    match sweep.variable {
        SweepVariable::R => cfg.r = value,
        SweepVariable::NT | SweepVariable::TargetTrainSize => cfg.n_t = value as usize,
        _ => {}
    }
    let source = generate(&cfg, Domain::Source)?;
    let target = generate(&cfg, Domain::Target)?;
    let test = generate(&cfg, Domain::Test)?;
    Ok(Prepared {
        source: Some(source.data),
        target: target.data,
        test_x: test.data.x,
        test_truth: test.mean,
    })
}

fn prepare_csv(
    tables: &CsvTables,
    spec: &ExperimentSpec,
    csv: &CsvSource,
    value: f64,
    rep_seed: u64,
) -> Result<Prepared> {
    let mut pool: Vec<usize> = tables.target.all_rows();
    if spec.sweep.variable == SweepVariable::TargetGroup {
        let groups = tables.groups.as_ref().expect("validated");
        pool.retain(|&i| groups[i] == value);
        if pool.is_empty() {
            return Err(Error::invalid(format!("no target rows in group {value}")));
        }
    }
    let (train, test) = match csv.scenario {
        Scenario::Holdout { test_fraction } => {
            if !(0.0 < test_fraction && test_fraction < 1.0) {
                return Err(Error::invalid("test_fraction must be in (0, 1)"));
            }
            let mut order = pool.clone();
            order.shuffle(&mut rng::chacha(rng::derive(rep_seed, &[SPLIT_STREAM])));
            let n_test = ((order.len() as f64 * test_fraction).round() as usize).clamp(1, order.len() - 1);
            let test = order[..n_test].to_vec();
            let mut train = order[n_test..].to_vec();
            if spec.sweep.variable == SweepVariable::TargetTrainSize {
                train.truncate(value as usize);
            }
            (train, test)
        }
        Scenario::FixedTest { test_size } => {
            let mut order = pool.clone();
            let group_key = if spec.sweep.variable == SweepVariable::TargetGroup {
                value.to_bits()
            } else {
                0
            };
            order.shuffle(&mut rng::chacha(rng::derive(
                spec.seed,
                &[FIXED_TEST_STREAM, group_key],
            )));
            if test_size == 0 || test_size >= order.len() {
                return Err(Error::invalid(format!(
                    "test_size {test_size} leaves no training rows out of {}",
                    order.len()
                )));
            }
            let test = order[..test_size].to_vec();
            let mut rest = order[test_size..].to_vec();
            rest.shuffle(&mut rng::chacha(rng::derive(rep_seed, &[SPLIT_STREAM])));
            if spec.sweep.variable == SweepVariable::TargetTrainSize {
                let k = value as usize;
                if k > rest.len() {
                    return Err(Error::invalid(format!(
                        "asked for {k} training rows, only {} available",
                        rest.len()
                    )));
                }
                rest.truncate(k);
            }
            (rest, test)
        }
    };
    let source_rows = tables.source.all_rows();
    let encoder = Encoder::fit(
        &[(&tables.source, &source_rows), (&tables.target, &train)],
        &tables.schema,
    )?;
    let source = encoder.transform(&tables.source, &source_rows)?;
    let target = encoder.transform(&tables.target, &train)?;
    let test = encoder.transform(&tables.target, &test)?;
    Ok(Prepared {
        source: Some(source),
        target,
        test_x: test.x,
        test_truth: test.y,
    })
}

fn score(metric: Metric, pred: &[f64], truth: &[f64]) -> Result<f64> {
    let v = match metric {
        Metric::Mse => mse(pred, truth)?,
        Metric::OneMinusAuc => one_minus_auc(pred, truth)?,
    };
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite {} value", metric.name())));
    }
    Ok(v)
}

fn run_cell(
    spec: &ExperimentSpec,
    tables: Option<&CsvTables>,
    value: f64,
    replicate: usize,
) -> Result<Vec<ResultRow>> {
    cell_rows(spec, tables, value, replicate).map_err(|e| {
        e.context(format!(
            "{} = {value}, replicate {replicate}",
            spec.sweep.variable.name()
        ))
    })
}

fn cell_rows(
    spec: &ExperimentSpec,
    tables: Option<&CsvTables>,
    value: f64,
    replicate: usize,
) -> Result<Vec<ResultRow>> {
    let rep_seed = rng::derive(spec.seed, &[replicate as u64]);
    let prepared = match (&spec.data, tables) {
        (DataSource::Sim(base), _) => prepare_sim(base, &spec.sweep, value, rep_seed)?,
        (DataSource::Csv(csv), Some(t)) => prepare_csv(t, spec, csv, value, rep_seed)?,
        (DataSource::Csv(_), None) => unreachable!("tables loaded for CSV sources"),
    };
    let mut settings = spec.models;
    if spec.sweep.variable == SweepVariable::Mtry {
        settings.set_mtry(value as usize);
    }
    let model_seed = rng::derive(rep_seed, &[MODEL_STREAM]);
    spec.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let model = fit_method(
                method,
                prepared.source.as_ref(),
                &prepared.target,
                &settings,
                model_seed,
            )?;
            let pred = model.predict_matrix(&prepared.test_x);
            let metric_value = score(spec.metric, &pred, &prepared.test_truth)?;
            let wall_ms = if spec.record_timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            Ok(ResultRow {
                method,
                sweep_name: spec.sweep.variable.name(),
                sweep_value: value,
                replicate,
                seed: rep_seed,
                metric: spec.metric,
                metric_value,
                wall_ms,
            })
        })
        .collect()
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let tables = match &spec.data {
        DataSource::Csv(csv) => Some(load_tables(csv)?),
        DataSource::Sim(_) => None,
    };
    let cells: Vec<(f64, usize)> = spec
        .sweep
        .values
        .iter()
        .flat_map(|&v| (0..spec.replications).map(move |r| (v, r)))
        .collect();
    let per_cell = cells
        .par_iter()
        .map(|&(v, r)| run_cell(spec, tables.as_ref(), v, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// [`run_experiment`] on a dedicated pool of `workers` threads.
pub fn run_experiment_with_workers(spec: &ExperimentSpec, workers: usize) -> Result<Vec<ResultRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| run_experiment(spec))
}
