#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use rand::Rng;
use tlforest::rng::chacha;

pub const NUMERIC: [&str; 7] = ["age", "bmi", "heart_rate", "resp_rate", "sao2", "temperature", "gcs"];
pub const CATEGORICAL: [(&str, &[&str]); 4] = [
    ("gender", &["female", "male"]),
    ("unit_type", &["cardiac", "medical", "neuro", "surgical"]),
    ("ethnicity", &["asian", "black", "caucasian", "hispanic"]),
    ("oxygen", &["mask", "nasal", "none"]),
];

pub fn categorical_names() -> Vec<String> {
    CATEGORICAL.iter().map(|(n, _)| n.to_string()).collect()
}

/// ICU-style table: hospital id, 7 numeric and 4 categorical features
/// (11 raw, 20 after one-hot), binary `death`. `shift` moves the risk
/// surface so different hospital sets behave differently.
pub fn write_icu_csv(path: &Path, n: usize, seed: u64, hospitals: &[u32], shift: f64) {
    let mut r = chacha(seed);
    let mut f = std::fs::File::create(path).unwrap();
    let mut header = vec!["hospitalid".to_string()];
    header.extend(NUMERIC.iter().map(|s| s.to_string()));
    header.extend(categorical_names());
    header.push("death".into());
    writeln!(f, "{}", header.join(",")).unwrap();
    for i in 0..n {
        // every level shows up early so each split sees all categories
        let h = hospitals[i % hospitals.len()];
        let nums: Vec<f64> = vec![
            r.random_range(18.0..90.0),
            r.random_range(15.0..45.0),
            r.random_range(40.0..160.0),
            r.random_range(8.0..40.0),
            r.random_range(80.0..100.0),
            r.random_range(34.0..40.0),
            r.random_range(3.0..15.0f64).round(),
        ];
        let cats: Vec<&str> = CATEGORICAL
            .iter()
            .enumerate()
            .map(|(k, (_, levels))| {
                if i < 4 {
                    levels[(i + k) % levels.len()]
                } else {
                    levels[r.random_range(0..levels.len())]
                }
            })
            .collect();
        let z = 0.06 * (nums[0] - 60.0) + 0.04 * (nums[2] - 100.0) - 0.5 * (nums[6] - 9.0)
            + if cats[3] == "none" { 0.0 } else { 1.0 }
            + shift * (nums[4] - 90.0) / 5.0
            - 1.0;
        let p = 1.0 / (1.0 + (-z).exp());
        let death = u8::from(r.random::<f64>() < p);
        let mut rec = vec![h.to_string()];
        rec.extend(nums.iter().map(|v| v.to_string()));
        rec.extend(cats.iter().map(|s| s.to_string()));
        rec.push(death.to_string());
        writeln!(f, "{}", rec.join(",")).unwrap();
    }
}
