//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use tlforest::cart::best_split;
use tlforest::centered::{build_centered_tree, build_forest, TreeStream};
use tlforest::dcov::{dcov_fast, dcov_v2, DCovKind};
use tlforest::harness::experiment::{results_to_string, DataSource, Metric, Sweep, SweepVariable};
use tlforest::harness::{
    auc, load_csv, mse, run_experiment, run_experiment_with_workers, ExperimentSpec, Method,
    ModelSettings, ResultRow, Schema,
};
use tlforest::rng::{chacha, derive};
use tlforest::simgen::{f1_dominant, f2_flat, gen_dataset, sample_regression, Domain, SimConfig};
use tlforest::transfer::{
    fit_rf_dcov, fit_srf, fit_tlcrf, BootSize, CrfSettings, SrfSettings, TlcrfConfig, TlsrfConfig,
};
use tlforest::{Dataset, FeatureWeights};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn rows_for(rows: &[ResultRow], method: Method, sweep_value: f64) -> Vec<f64> {
    let mut v: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.method == method && r.sweep_value == sweep_value)
        .map(|r| (r.replicate, r.metric_value))
        .collect();
    v.sort_by_key(|p| p.0);
    v.into_iter().map(|p| p.1).collect()
}

/// U-centered distance covariance from explicit n×n matrices.
fn u_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let center = |v: &[f64]| {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (v[i] - v[j]).abs();
            }
        }
        let row: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
        let total: f64 = row.iter().sum();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = if i == j {
                    0.0
                } else {
                    a[i * n + j] - (row[i] + row[j]) / (nf - 2.0) + total / ((nf - 1.0) * (nf - 2.0))
                };
            }
        }
        a
    };
    let a = center(x);
    let b = center(y);
    a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / (nf * (nf - 3.0))
}

fn c1_fast_matches_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = chacha(0xC1);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let n = r.random_range(4..=512);
        let (x, y): (Vec<f64>, Vec<f64>) = if k % 5 == 0 {
            // heavy ties
            (0..n).map(|_| (r.random_range(0..6) as f64, r.random_range(0..4) as f64)).unzip()
        } else {
            (0..n)
                .map(|_| {
                    let a: f64 = r.random_range(-10.0..10.0);
                    (a, a.sin() + r.random::<f64>())
                })
                .unzip()
        };
        let o = u_oracle(&x, &y);
        let f = dcov_fast(&x, &y).unwrap().value;
        // the estimate can sit at zero; scale by the marginal dCovs then
        let ox = u_oracle(&x, &x).abs().sqrt() * u_oracle(&y, &y).abs().sqrt();
        let rel = (f - o).abs() / o.abs().max(1e-6 * ox).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && t < Duration::from_secs(10),
        format!("worst relative error {worst:.2e} over 1000 pairs, {:.1} s", secs(t)),
    )
}

fn c2_hand_values() -> Outcome {
    let a = dcov_v2(&[0.0, 1.0], &[0.0, 1.0]).unwrap().value;
    let b = dcov_v2(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap().value;
    let ea = (a - 0.25).abs();
    let eb = (b - 40.0 / 81.0).abs();
    outcome(
        ea <= 1e-12 && eb <= 1e-12,
        format!("V(0,1) = {a}, V(0,1,2) = {b} (errors {ea:.1e}, {eb:.1e})"),
    )
}

fn c3_screening() -> Outcome {
    let start = Instant::now();
    let reps = 50;
    let mut wins = 0;
    for rep in 0..reps {
        let sim = SimConfig {
            r: 0.1,
            seed: derive(0xC3, &[rep]),
            ..SimConfig::default()
        };
        let source = gen_dataset(&sim, Domain::Source).unwrap();
        let target = gen_dataset(&sim, Domain::Target).unwrap();
        // the residual forest does not feed into the weights
        let config = TlcrfConfig {
            residual: CrfSettings {
                n_trees: 1,
                depth: Some(1),
                folds: 5,
            },
            seed: derive(0xC3, &[rep, 1]),
            ..TlcrfConfig::default()
        };
        let model = fit_tlcrf(&source, &target, &config).unwrap();
        let w = model.dcov_weights.as_slice();
        let diff = sim.difference_features();
        let inside: Vec<f64> = w[diff.clone()].to_vec();
        let outside: Vec<f64> = w[..diff.start].to_vec();
        let mi = inside.iter().sum::<f64>() / inside.len() as f64;
        let mo = outside.iter().sum::<f64>() / outside.len() as f64;
        if mi > mo {
            wins += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        wins * 10 >= reps * 9 && t < Duration::from_secs(120),
        format!("difference features outweigh the rest in {wins}/{reps} reps, {:.1} s", secs(t)),
    )
}

fn crf_spec(methods: Vec<Method>, sweep: Sweep, seed: u64) -> ExperimentSpec {
    ExperimentSpec {
        methods,
        data: DataSource::Sim(SimConfig::default()),
        replications: 30,
        sweep,
        metric: Metric::Mse,
        seed,
        models: ModelSettings::default(),
        record_timing: false,
    }
}

fn c4_c5_tlcrf() -> (Outcome, Outcome) {
    let start = Instant::now();
    let spec = crf_spec(
        vec![Method::Crf, Method::Tlcrf, Method::SourceOnly],
        Sweep {
            variable: SweepVariable::R,
            values: vec![0.1, 0.3],
        },
        0xC4,
    );
    let rows = run_experiment(&spec).unwrap();
    let t = start.elapsed();
    let crf = rows_for(&rows, Method::Crf, 0.1);
    let tl = rows_for(&rows, Method::Tlcrf, 0.1);
    let (mc, mt) = (median(&crf), median(&tl));
    let c4 = outcome(
        mt < mc && t < Duration::from_secs(600),
        format!(
            "r = 0.1: median MSE TLCRF {mt:.4} vs CRF {mc:.4} over 30 reps ({:.1} s for both r values)",
            secs(t)
        ),
    );
    let tl = rows_for(&rows, Method::Tlcrf, 0.3);
    let src = rows_for(&rows, Method::SourceOnly, 0.3);
    let wins = tl.iter().zip(&src).filter(|(a, b)| a < b).count();
    let c5 = outcome(
        wins * 10 >= 9 * tl.len() && t < Duration::from_secs(600),
        format!(
            "r = 0.3: TLCRF beats source-only in {wins}/{} reps (median {:.4} vs {:.4})",
            tl.len(),
            median(&tl),
            median(&src)
        ),
    );
    (c4, c5)
}

fn c6_target_size() -> Outcome {
    let start = Instant::now();
    let sizes = [100.0, 400.0, 1600.0];
    let spec = crf_spec(
        vec![Method::Tlcrf],
        Sweep {
            variable: SweepVariable::NT,
            values: sizes.to_vec(),
        },
        0xC6,
    );
    let rows = run_experiment(&spec).unwrap();
    let meds: Vec<f64> = sizes.iter().map(|&n| median(&rows_for(&rows, Method::Tlcrf, n))).collect();
    let ok = meds.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        ok,
        format!(
            "median TLCRF MSE at n_t = 100/400/1600: {:.4} / {:.4} / {:.4}, {:.1} s",
            meds[0],
            meds[1],
            meds[2],
            secs(start.elapsed())
        ),
    )
}

fn rf_pair(f: fn(&[f64]) -> f64, seed: u64) -> (f64, f64) {
    let settings = SrfSettings {
        n_trees: 100,
        mtry: Some(6),
        bootstrap: BootSize::Rows(1000),
        max_depth: Some(10),
    };
    let g = |x: &[f64]| Ok(f(x));
    let train = sample_regression(4000, 20, 1.0, derive(seed, &[0]), g).unwrap();
    let test = sample_regression(200, 20, 1.0, derive(seed, &[1]), g).unwrap();
    let model_seed = derive(seed, &[2]);
    let rf = fit_srf(&train.data, &FeatureWeights::uniform(20), &settings, model_seed).unwrap();
    let dc = fit_rf_dcov(&train.data, &settings, DCovKind::FastU, model_seed).unwrap();
    (
        mse(&rf.predict_matrix(&test.data.x), &test.mean).unwrap(),
        mse(&dc.predict_matrix(&test.data.x), &test.mean).unwrap(),
    )
}

fn c7_rf_dcov() -> Outcome {
    let start = Instant::now();
    let f1: fn(&[f64]) -> f64 = |x| f1_dominant(x, 10).unwrap();
    let f2: fn(&[f64]) -> f64 = |x| f2_flat(x).unwrap();
    let run = |f, tag| {
        let (rf, dc): (Vec<f64>, Vec<f64>) = (0..30).map(|rep| rf_pair(f, derive(0xC7, &[tag, rep]))).unzip();
        (median(&rf), median(&dc))
    };
    let (rf1, dc1) = run(f1, 1);
    let (rf2, dc2) = run(f2, 2);
    let rel = (dc2 - rf2).abs() / rf2.max(dc2);
    outcome(
        dc1 < rf1 && rel < 0.15,
        format!(
            "f1 median MSE RF-DCOV {dc1:.4} vs RF {rf1:.4}; f2 {dc2:.4} vs {rf2:.4} ({:.1}% apart), {:.1} s",
            100.0 * rel,
            secs(start.elapsed())
        ),
    )
}

fn c8_tlsrf() -> Outcome {
    let start = Instant::now();
    let small = SrfSettings {
        n_trees: 50,
        mtry: Some(6),
        bootstrap: BootSize::Rows(100),
        max_depth: Some(7),
    };
    let defaults = ModelSettings::default();
    let models = ModelSettings {
        srf: small,
        tlsrf: TlsrfConfig {
            source: SrfSettings {
                bootstrap: BootSize::Rows(1000),
                max_depth: Some(10),
                ..small
            },
            residual: small,
            ..defaults.tlsrf
        },
        ..defaults
    };
    let spec = ExperimentSpec {
        models,
        ..crf_spec(vec![Method::Srf, Method::Tlsrf], Sweep::default(), 0xC8)
    };
    let rows = run_experiment(&spec).unwrap();
    let srf = rows_for(&rows, Method::Srf, 0.0);
    let tl = rows_for(&rows, Method::Tlsrf, 0.0);
    let wins = tl.iter().zip(&srf).filter(|(a, b)| a < b).count();
    let (ms, mt) = (median(&srf), median(&tl));
    outcome(
        mt < ms && wins * 5 >= 4 * tl.len(),
        format!(
            "median MSE TLSRF {mt:.4} vs SRF {ms:.4}; TLSRF lower in {wins}/{} reps, {:.1} s",
            tl.len(),
            secs(start.elapsed())
        ),
    )
}

fn uniform_data(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = chacha(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random::<f64>()).collect()).collect();
    let y = rows.iter().map(|x| x.iter().sum::<f64>() + r.random::<f64>()).collect();
    Dataset::from_rows(&rows, y).unwrap()
}

fn random_weights(d: usize, r: &mut impl Rng) -> FeatureWeights {
    let v: Vec<f64> = (0..d).map(|_| r.random::<f64>() + 0.01).collect();
    let s: f64 = v.iter().sum();
    let mut p: Vec<f64> = v.iter().map(|x| x / s).collect();
    let rest: f64 = p[1..].iter().sum();
    p[0] = 1.0 - rest;
    FeatureWeights::new(p).unwrap()
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|y| (y - m).powi(2)).sum()
}

/// Lowest SSE over every feature and every midpoint, by enumeration.
fn brute_best(data: &Dataset, rows: &[usize], features: &[usize]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &j in features {
        let mut vals: Vec<f64> = rows.iter().map(|&i| data.x.get(i, j)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<f64>, Vec<f64>) = rows.iter().map(|&i| (data.x.get(i, j), data.y[i])).fold(
                (Vec::new(), Vec::new()),
                |(mut l, mut r), (x, y)| {
                    if x < t {
                        l.push(y)
                    } else {
                        r.push(y)
                    }
                    (l, r)
                },
            );
            let s = sse(&l) + sse(&r);
            best = Some(best.map_or(s, |b: f64| b.min(s)));
        }
    }
    best
}

fn c9_structural() -> Outcome {
    let start = Instant::now();
    let mut r = chacha(0xC9);
    let mut failures = Vec::new();

    // tiling, membership, side lengths
    for case in 0..200u64 {
        let d = r.random_range(1..6);
        let depth = r.random_range(0..9);
        let w = random_weights(d, &mut r);
        let data = uniform_data(30, d, case);
        let tree = build_centered_tree(&data, &w, depth, TreeStream(case)).unwrap();
        let cells = tree.leaf_cells();
        let vol: f64 = cells.iter().map(|c| c.volume()).sum();
        if (vol - 1.0).abs() > 1e-12 {
            failures.push(format!("volume {vol}"));
        }
        for k in 0..100 {
            let x: Vec<f64> = (0..d)
                .map(|_| if k % 3 == 0 { r.random_range(0..=8) as f64 / 8.0 } else { r.random::<f64>() })
                .collect();
            let hits = cells.iter().filter(|c| c.contains(&x)).count();
            if hits != 1 {
                failures.push(format!("{hits} cells hold {x:?}"));
            }
        }
        for (cell, s) in cells.iter().zip(tree.leaf_split_counts()) {
            for j in 0..d {
                if cell.hi[j] - cell.lo[j] != 0.5f64.powi(s[j] as i32) {
                    failures.push("side length".into());
                }
            }
        }
    }

    // forest mean
    for case in 0..50u64 {
        let m = 1 + (case as usize % 11);
        let data = uniform_data(60, 3, case);
        let forest = build_forest(&data, &FeatureWeights::uniform(3), 3, m, case).unwrap();
        for x in uniform_data(10, 3, case + 1000).x.rows() {
            let mean = forest.trees().iter().map(|t| t.predict(&x)).sum::<f64>() / m as f64;
            if forest.predict(&x) != mean {
                failures.push("forest mean".into());
            }
        }
    }

    // best split against enumeration on small nodes
    for case in 0..300u64 {
        let n = r.random_range(2..=50);
        let d = r.random_range(1..5);
        let mut data = uniform_data(n, d, case);
        if case % 4 == 0 {
            for j in 0..d {
                let col: Vec<f64> = data.x.column(j).iter().map(|v| (v * 4.0).floor()).collect();
                let rows: Vec<Vec<f64>> = (0..n).map(|i| {
                    let mut row = data.x.row(i);
                    row[j] = col[i];
                    row
                }).collect();
                data = Dataset::from_rows(&rows, data.y.clone()).unwrap();
            }
        }
        let rows: Vec<usize> = (0..n).collect();
        let feats: Vec<usize> = (0..d).collect();
        let got = best_split(&data, &rows, &feats).map(|s| s.sse);
        let want = brute_best(&data, &rows, &feats);
        let ok = match (got, want) {
            (Some(g), Some(w)) => g <= w + 1e-12 * sse(&data.y).max(1.0),
            (None, None) => true,
            (None, Some(_)) => sse(&data.y) == 0.0,
            (Some(_), None) => false,
        };
        if !ok {
            failures.push(format!("best split {got:?} vs {want:?}"));
        }
    }

    // split frequencies
    let w = FeatureWeights::new(vec![0.7, 0.3]).unwrap();
    let forest = build_forest(&uniform_data(20, 2, 8), &w, 7, 79, 2718).unwrap();
    let splits: Vec<u32> = forest.trees().iter().flat_map(|t| t.split_features().to_vec()).collect();
    let freq = splits.iter().filter(|&&f| f == 0).count() as f64 / splits.len() as f64;
    if (freq - 0.7).abs() > 0.02 {
        failures.push(format!("split frequency {freq}"));
    }

    let t = start.elapsed();
    outcome(
        failures.is_empty() && t < Duration::from_secs(60),
        format!(
            "{} violations; split frequency {freq:.4} over {} draws; {:.1} s{}",
            failures.len(),
            splits.len(),
            secs(t),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

const CLI_SPEC: &str = r#"
methods = ["crf", "srf", "tlcrf", "tlsrf", "source_only"]
replications = 4
seed = 99

[data]
kind = "sim"
n_s = 400
n_t = 80
n_test = 40
d = 6
r = 0.2

[sweep]
variable = "n_t"
values = [40, 80]

[models.crf]
n_trees = 10

[models.srf]
n_trees = 10

[models.tlcrf.source]
n_trees = 10

[models.tlcrf.residual]
n_trees = 10

[models.tlsrf.source]
n_trees = 10

[models.tlsrf.residual]
n_trees = 10
"#;

fn c10_determinism() -> Outcome {
    let spec = ExperimentSpec::from_toml(CLI_SPEC).unwrap();
    let lib: Vec<String> = [1, 1, 2, 4]
        .iter()
        .map(|&w| results_to_string(&run_experiment_with_workers(&spec, w).unwrap()))
        .collect();
    let lib_ok = lib.iter().all(|s| *s == lib[0]);

    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.toml");
    std::fs::write(&spec_path, CLI_SPEC).unwrap();
    let mut outputs = Vec::new();
    for (k, workers) in ["1", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_tlforest"))
            .arg("experiment")
            .arg(&spec_path)
            .args(["--workers", workers, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        outputs.push(status.success().then(|| std::fs::read(&out).unwrap()));
    }
    let cli_ok = outputs.iter().all(|o| o.is_some() && *o == outputs[0]);
    let same = outputs[0].as_deref() == Some(lib[0].as_bytes());
    outcome(
        lib_ok && cli_ok && same,
        format!(
            "library reruns identical: {lib_ok}; CLI reruns identical: {cli_ok}; CLI matches library: {same} ({} rows)",
            lib[0].lines().count() - 1
        ),
    )
}

fn c11_metrics() -> Outcome {
    let a = auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap();
    let m = [
        mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
        mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
        mse(&[3.0], &[1.0]).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("icu.csv");
    common::write_icu_csv(&p, 300, 11, &[1, 2, 3], 0.0);
    let schema = Schema {
        response: "death".into(),
        categorical: common::categorical_names(),
        ignore: vec!["hospitalid".into()],
    };
    let (data, _) = load_csv(&p, &schema).unwrap();
    outcome(
        a == 0.75 && m == [0.0, 1.0, 4.0] && data.n_features() == 20,
        format!("AUC {a}; MSE cases {m:?}; 11 raw columns encode to {}", data.n_features()),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; a name filter skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 dcov fast vs oracle", c1_fast_matches_oracle()),
        ("2 dcov hand values", c2_hand_values()),
        ("3 weight screening", c3_screening()),
    ];
    let (c4, c5) = c4_c5_tlcrf();
    results.push(("4 TLCRF vs CRF", c4));
    results.push(("5 TLCRF vs source-only", c5));
    results.push(("6 target-size trend", c6_target_size()));
    results.push(("7 RF-DCOV vs RF", c7_rf_dcov()));
    results.push(("8 TLSRF vs SRF", c8_tlsrf()));
    results.push(("9 structural invariants", c9_structural()));
    results.push(("10 determinism", c10_determinism()));
    results.push(("11 metrics and encoding", c11_metrics()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} [{name}] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
