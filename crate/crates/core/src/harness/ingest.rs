//! CSV ingestion: one-hot encoding and min-max scaling to `[0,1]`.
//!
//! An [`Encoder`] is fitted on training rows only and then applied to any
//! rows of any table with the same columns. Test values outside the fitted
//! range are clamped, unseen categories encode as all zeros.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Column roles. Feature columns are every column that is not the
/// response or ignored; those listed in `categorical` are one-hot encoded,
/// the rest are numeric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub response: String,
    pub categorical: Vec<String>,
    pub ignore: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            response: "y".into(),
            categorical: Vec::new(),
            ignore: Vec::new(),
        }
    }
}

/// Unparsed CSV contents.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let table = Self::from_reader(file)?;
        if table.headers.is_empty() || table.rows.is_empty() {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        Ok(table)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_owned).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    }

    pub fn numeric_cell(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row,
                column: self.headers[col].clone(),
                value: raw.clone(),
            })
    }

    pub fn numeric_column(&self, name: &str, rows: &[usize]) -> Result<Vec<f64>> {
        let c = self.column_index(name)?;
        rows.iter().map(|&i| self.numeric_cell(i, c)).collect()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Numeric { name: String, min: f64, max: f64 },
    Categorical { name: String, levels: Vec<String> },
}

impl ColumnEncoding {
    fn name(&self) -> &str {
        match self {
            ColumnEncoding::Numeric { name, .. } | ColumnEncoding::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric { .. } => 1,
            ColumnEncoding::Categorical { levels, .. } => levels.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub response: String,
    pub columns: Vec<ColumnEncoding>,
    /// Number of rows the statistics were computed from.
    pub fit_rows: usize,
    /// Digest of the (table, row) pairs the statistics were computed from.
    pub fit_digest: u64,
}

fn digest(parts: &[(&RawTable, &[usize])]) -> u64 {
    let mut h = 0u64;
    for (t, (_, rows)) in parts.iter().enumerate() {
        for &r in rows.iter() {
            h = rng::mix64(h ^ rng::derive(t as u64, &[r as u64]));
        }
    }
    h
}

impl Encoder {
    /// Fit scaling ranges and category levels on the given rows of one or
    /// more tables sharing the same header.
    pub fn fit(parts: &[(&RawTable, &[usize])], schema: &Schema) -> Result<Self> {
        let (first, _) = parts.first().ok_or(Error::Empty("encoder input"))?;
        let fit_rows: usize = parts.iter().map(|(_, r)| r.len()).sum();
        if fit_rows == 0 {
            return Err(Error::Empty("encoder training rows"));
        }
        for name in schema
            .categorical
            .iter()
            .chain(&schema.ignore)
            .chain(std::iter::once(&schema.response))
        {
            first.column_index(name)?;
        }
        let mut columns = Vec::new();
        for name in &first.headers {
            if *name == schema.response || schema.ignore.contains(name) {
                continue;
            }
            if schema.categorical.contains(name) {
                let mut levels = BTreeSet::new();
                for (table, rows) in parts {
                    let c = table.column_index(name)?;
                    levels.extend(rows.iter().map(|&i| table.rows[i][c].clone()));
                }
                columns.push(ColumnEncoding::Categorical {
                    name: name.clone(),
                    levels: levels.into_iter().collect(),
                });
            } else {
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for (table, rows) in parts {
                    for v in table.numeric_column(name, rows)? {
                        min = min.min(v);
                        max = max.max(v);
                    }
                }
                columns.push(ColumnEncoding::Numeric {
                    name: name.clone(),
                    min,
                    max,
                });
            }
        }
        // parse the response now so bad cells surface at fit time
        for (table, rows) in parts {
            table.numeric_column(&schema.response, rows)?;
        }
        Ok(Self {
            response: schema.response.clone(),
            columns,
            fit_rows,
            fit_digest: digest(parts),
        })
    }

    pub fn n_features(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c {
                ColumnEncoding::Numeric { name, .. } => vec![name.clone()],
                ColumnEncoding::Categorical { name, levels } => {
                    levels.iter().map(|l| format!("{name}={l}")).collect()
                }
            })
            .collect()
    }

    pub fn transform_features(&self, table: &RawTable, rows: &[usize]) -> Result<FeatureMatrix> {
        let mut out = Vec::with_capacity(self.n_features());
        for col in &self.columns {
            let c = table.column_index(col.name())?;
            match col {
                ColumnEncoding::Numeric { min, max, .. } => {
                    let span = max - min;
                    let v = rows
                        .iter()
                        .map(|&i| {
                            let raw = table.numeric_cell(i, c)?;
                            Ok(if span > 0.0 {
                                ((raw - min) / span).clamp(0.0, 1.0)
                            } else {
                                0.0
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    out.push(v);
                }
                ColumnEncoding::Categorical { levels, .. } => {
                    let index: HashMap<&str, usize> =
                        levels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
                    let mut dummies = vec![vec![0.0; rows.len()]; levels.len()];
                    for (r, &i) in rows.iter().enumerate() {
                        if let Some(&k) = index.get(table.rows[i][c].as_str()) {
                            dummies[k][r] = 1.0;
                        }
                    }
                    out.extend(dummies);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Empty("feature columns"));
        }
        FeatureMatrix::from_columns(out)
    }

    pub fn transform(&self, table: &RawTable, rows: &[usize]) -> Result<Dataset> {
        let x = self.transform_features(table, rows)?;
        let y = table.numeric_column(&self.response, rows)?;
        Dataset::new(x, y)
    }
}

/// Read a CSV and encode every row with statistics fitted on all of them.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<(Dataset, Encoder)> {
    let table = RawTable::read(path)?;
    let rows = table.all_rows();
    let encoder = Encoder::fit(&[(&table, &rows)], schema)?;
    let data = encoder.transform(&table, &rows)?;
    Ok((data, encoder))
}

/// Write `data` as CSV with header `x1..xd,y`.
pub fn write_dataset_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=data.n_features()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (row, y) in data.x.rows().zip(&data.y) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
