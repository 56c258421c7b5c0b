//! File formats: row-major CSV for dense matrices, JSON for compressed
//! uniform-block matrices, dependence vectors, fit results, and study reports.
//!
//! JSON documents carry a `spec_version` field; the dependence-vector format
//! tags its parameter ordering explicitly (`"order": "row-major-upper"`).

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::inference::TestResult;
use crate::params::{GammaVector, RhoVector};
use crate::part::PartitionVector;
use crate::simgen::McReport;
use crate::ub::UniformBlockMatrix;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const SPEC_VERSION: &str = "1";
pub const GAMMA_ORDER: &str = "row-major-upper";

/// Writes a dense matrix as comma-separated rows, '.' decimal, no header.
pub fn write_dense_csv<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_float(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(",")).map_err(Error::from)?;
    }
    Ok(())
}

/// Reads a dense matrix from CSV; `header` skips one leading row.
pub fn read_dense_csv<R: Read>(r: R, header: bool) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("csv row {}: {e}", i + 1)))?;
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("csv row {}, column {}: not a number: {field:?}", i + 1, j + 1))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "csv row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("csv contains no data rows".into()));
    }
    let (n, p) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn format_float(v: f64) -> String {
    // shortest representation that round-trips
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// JSON form of a compressed UB matrix: sizes, diagonal coefficients, and the
/// upper triangle of the between-community coefficients in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UbDocument {
    pub spec_version: String,
    pub sizes: Vec<usize>,
    pub a: Vec<f64>,
    pub b_upper: Vec<f64>,
}

impl UbDocument {
    pub fn from_matrix(m: &UniformBlockMatrix) -> Self {
        Self {
            spec_version: SPEC_VERSION.to_string(),
            sizes: m.part().sizes().to_vec(),
            a: m.a().iter().copied().collect(),
            b_upper: m.b_upper(),
        }
    }

    pub fn into_matrix(self) -> Result<UniformBlockMatrix> {
        let part = PartitionVector::new(self.sizes)?;
        UniformBlockMatrix::from_upper(self.a, &self.b_upper, part)
    }
}

/// JSON form of a dependence vector with its ordering tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DependenceDocument {
    pub spec_version: String,
    pub order: String,
    pub sizes: Vec<usize>,
    pub values: Vec<f64>,
}

impl DependenceDocument {
    pub fn from_gamma(g: &GammaVector) -> Self {
        Self {
            spec_version: SPEC_VERSION.to_string(),
            order: GAMMA_ORDER.to_string(),
            sizes: g.part().sizes().to_vec(),
            values: g.values().iter().copied().collect(),
        }
    }

    pub fn from_rho(r: &RhoVector) -> Self {
        Self {
            spec_version: SPEC_VERSION.to_string(),
            order: GAMMA_ORDER.to_string(),
            sizes: r.part().sizes().to_vec(),
            values: r.values().iter().copied().collect(),
        }
    }

    fn check_order(&self) -> Result<()> {
        if self.order != GAMMA_ORDER {
            return Err(Error::Parse(format!(
                "unsupported parameter order {:?}, expected {GAMMA_ORDER:?}",
                self.order
            )));
        }
        Ok(())
    }

    /// Reads the vector back, against an optional externally-supplied partition.
    pub fn into_gamma(self, part: Option<PartitionVector>) -> Result<GammaVector> {
        self.check_order()?;
        let part = match part {
            Some(p) => {
                if !self.sizes.is_empty() && p.sizes() != self.sizes.as_slice() {
                    return Err(Error::PartitionMismatch { left: p.sizes().to_vec(), right: self.sizes });
                }
                p
            }
            None => PartitionVector::new(self.sizes)?,
        };
        GammaVector::new(DVector::from_vec(self.values), part)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnosticsDocument {
    pub iterations: usize,
    pub final_score_norm: f64,
    pub log_likelihood: f64,
    pub fisher_spectrum_over_n: Vec<f64>,
    pub moment_start_used: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_disagreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fgls_max_abs_diff: Option<f64>,
}

/// Versioned JSON document for a complete fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub spec_version: String,
    pub sizes: Vec<usize>,
    pub n: usize,
    /// `R x p`, row per outcome feature.
    pub beta: Vec<Vec<f64>>,
    /// Standard errors, same layout as `beta`.
    pub beta_se: Vec<Vec<f64>>,
    pub gamma: DependenceDocument,
    pub rho: DependenceDocument,
    pub gamma_se: Vec<f64>,
    pub gamma_cov: Vec<Vec<f64>>,
    pub sigma: UbDocument,
    pub xtx_inv: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnosticsDocument,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

impl FitDocument {
    pub fn from_result(f: &FitResult) -> Self {
        let se = f.beta_cov.se_matrix();
        let m = f.gamma.part().num_params();
        Self {
            spec_version: SPEC_VERSION.to_string(),
            sizes: f.gamma.part().sizes().to_vec(),
            n: f.n,
            beta: matrix_rows(&f.beta),
            beta_se: matrix_rows(&se),
            gamma: DependenceDocument::from_gamma(&f.gamma),
            rho: DependenceDocument::from_rho(&f.rho),
            gamma_se: (0..m).map(|j| f.gamma_se(j)).collect(),
            gamma_cov: matrix_rows(&f.gamma_cov),
            sigma: UbDocument::from_matrix(f.beta_cov.sigma()),
            xtx_inv: matrix_rows(f.beta_cov.xtx_inv()),
            diagnostics: FitDiagnosticsDocument {
                iterations: f.diagnostics.scoring.iterations,
                final_score_norm: f.diagnostics.scoring.final_score_norm,
                log_likelihood: f.diagnostics.scoring.log_likelihood,
                fisher_spectrum_over_n: f.diagnostics.fisher_spectrum_over_n.clone(),
                moment_start_used: f.diagnostics.moment_start_used,
                start_disagreement: f.diagnostics.start_disagreement,
                fgls_max_abs_diff: f.diagnostics.fgls_max_abs_diff,
            },
        }
    }
}

/// Test table CSV: `label,estimate,se,statistic,p_value,p_adjusted,rejected`.
pub fn write_test_table_csv<W: Write>(w: W, tests: &[TestResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["label", "estimate", "se", "statistic", "p_value", "p_adjusted", "rejected"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for t in tests {
        wtr.write_record([
            t.label.to_string(),
            format_float(t.estimate),
            format_float(t.standard_error),
            format_float(t.statistic),
            format_float(t.p_value),
            t.adjusted_p_value.map(format_float).unwrap_or_default(),
            t.rejected.map(|r| r.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Per-replicate loss rows, boxplot-ready.
pub fn write_loss_csv<W: Write>(w: W, report: &McReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "replicate",
        "maud_frobenius",
        "maud_spectral",
        "baseline_frobenius",
        "baseline_spectral",
    ])
    .map_err(|e| Error::Io(e.to_string()))?;
    for l in &report.losses {
        wtr.write_record([
            l.replicate.to_string(),
            format_float(l.maud_frobenius),
            format_float(l.maud_spectral),
            format_float(l.baseline_frobenius),
            format_float(l.baseline_spectral),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Per-parameter summary rows in the study-table layout.
pub fn write_param_csv<W: Write>(w: W, report: &McReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["parameter", "truth", "bias", "mcsd", "ase", "coverage"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for p in &report.params {
        wtr.write_record([
            p.parameter.clone(),
            format_float(p.truth),
            format_float(p.bias),
            format_float(p.mcsd),
            format_float(p.ase),
            format_float(p.coverage),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

pub fn from_json_str<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}
