//! Data ingestion and the structured output document.
//!
//! Input is headered comma-separated text with one column named `y`, design
//! columns prefixed `x_`, and optional nuisance-feature columns prefixed
//! `z_`. The output document is a single self-describing JSON document;
//! floating-point values survive a write/read cycle bit-exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{Theorem1Report, Theorem2Report};
use crate::rotation::Dataset;
use crate::{Error, Result};

/// A parsed dataset plus the column names, in file order.
#[derive(Clone, Debug)]
pub struct CsvDataset {
    pub dataset: Dataset,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

/// Parse the CSV layout from raw bytes.
pub fn parse_dataset_csv(bytes: &[u8]) -> Result<CsvDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .clone();
    let mut y_col = None;
    let mut x_cols = Vec::new();
    let mut z_cols = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        if name == "y" {
            if y_col.is_some() {
                return Err(Error::Parse("duplicate y column".into()));
            }
            y_col = Some(idx);
        } else if name.starts_with("x_") {
            x_cols.push((idx, name.to_string()));
        } else if name.starts_with("z_") {
            z_cols.push((idx, name.to_string()));
        } else {
            return Err(Error::Parse(format!(
                "unrecognized column {name:?}: expected y, x_*, or z_*"
            )));
        }
    }
    let y_col = y_col.ok_or_else(|| Error::Parse("missing y column".into()))?;
    if x_cols.is_empty() {
        return Err(Error::Parse("no x_ columns found".into()));
    }

    let mut y = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut z_rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {}: {e}", row_idx + 2)))?;
        let parse = |idx: usize| -> Result<f64> {
            let field = record
                .get(idx)
                .ok_or_else(|| Error::Parse(format!("row {} is short", row_idx + 2)))?;
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad number {field:?}", row_idx + 2)))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite value", row_idx + 2)));
            }
            Ok(v)
        };
        y.push(parse(y_col)?);
        x_rows.push(x_cols.iter().map(|(i, _)| parse(*i)).collect::<Result<_>>()?);
        z_rows.push(z_cols.iter().map(|(i, _)| parse(*i)).collect::<Result<_>>()?);
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Parse("no data rows".into()));
    }

    let p = x_cols.len();
    let q = z_cols.len();
    let x = DMatrix::from_fn(n, p, |i, j| x_rows[i][j]);
    let z = if q > 0 {
        Some(DMatrix::from_fn(n, q, |i, j| z_rows[i][j]))
    } else {
        None
    };
    let dataset = Dataset::new(DVector::from_vec(y), x, z, None)?;
    Ok(CsvDataset {
        dataset,
        x_names: x_cols.into_iter().map(|(_, n)| n).collect(),
        z_names: z_cols.into_iter().map(|(_, n)| n).collect(),
    })
}

pub fn read_dataset_csv(path: &Path) -> Result<CsvDataset> {
    let bytes = std::fs::read(path)?;
    parse_dataset_csv(&bytes)
}

/// Standardize the response and every column of X and Z to zero mean and
/// unit Euclidean norm, in place.
pub fn standardize(data: &mut Dataset) -> Result<()> {
    let center = |v: &mut DVector<f64>| -> Result<()> {
        let mean = v.mean();
        v.apply(|x| *x -= mean);
        let norm = v.norm();
        if norm < 1e-12 {
            return Err(Error::Config("constant column cannot be standardized".into()));
        }
        v.apply(|x| *x /= norm);
        Ok(())
    };
    center(&mut data.y)?;
    for j in 0..data.x.ncols() {
        let mut col = data.x.column(j).into_owned();
        center(&mut col)?;
        data.x.set_column(j, &col);
    }
    if let Some(z) = &mut data.z {
        for j in 0..z.ncols() {
            let mut col = z.column(j).into_owned();
            center(&mut col)?;
            z.set_column(j, &col);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Output document
// ---------------------------------------------------------------------------

/// Per-variable posterior summary. Inclusion columns are absent for priors
/// without a point mass (plain Gaussian).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariableSummary {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inclusion_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_odds: Option<f64>,
    pub post_mean: f64,
    pub post_sd: f64,
}

/// Marginal posterior density of one coordinate on a grid (continuous part;
/// the point mass at zero is reported separately).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariableDensity {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_at_zero: Option<f64>,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sigma2Info {
    pub value: f64,
    pub estimated: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunResults {
    Fit {
        variables: Vec<VariableSummary>,
        sigma2: Sigma2Info,
        densities: Vec<VariableDensity>,
    },
    Select {
        variables: Vec<VariableSummary>,
        block_size: usize,
        sigma2_known: bool,
    },
    Oracle {
        variables: Vec<VariableSummary>,
        method: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        avg_batch_se: Option<f64>,
    },
    Diagnose {
        report: Theorem1Report,
        #[serde(skip_serializing_if = "Option::is_none")]
        scalar_bound: Option<Theorem2Report>,
    },
}

/// The structured output document: resolved configuration, results, and
/// wall-clock timings. Everything needed to re-run the job identically is in
/// `config` (timings are informational only).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OutputDocument {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub results: RunResults,
    pub timings: Vec<(String, f64)>,
}

impl OutputDocument {
    /// The document with timings cleared, for determinism comparisons.
    pub fn without_timings(&self) -> OutputDocument {
        let mut doc = self.clone();
        doc.timings.clear();
        doc
    }
}

pub fn output_to_json(doc: &OutputDocument) -> String {
    serde_json::to_string_pretty(doc).expect("output document serializes")
}

pub fn parse_output_document(bytes: &[u8]) -> Result<OutputDocument> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("output document: {e}")))
}
