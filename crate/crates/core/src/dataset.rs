//! Observational data `(X, Z, R)`: covariates, binary treatment, response.
//!
//! A [`Dataset`] is immutable once built. Structural checks (lengths, finiteness,
//! binary treatment) happen at construction; [`Dataset::validate`] adds the
//! analysis-level checks (both arms present, constant columns).

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Array2<f64>,
    covariate_names: Vec<String>,
    treatment: Vec<u8>,
    response: Vec<f64>,
    response_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub p: usize,
    pub n_treated: usize,
    pub n_control: usize,
    /// Names of covariate columns that take a single value.
    pub constant_columns: Vec<String>,
}

impl Dataset {
    pub fn new(
        covariates: Array2<f64>,
        covariate_names: Vec<String>,
        treatment: Vec<u8>,
        response: Vec<f64>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
        }
        if response.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: response.len(),
            });
        }
        if covariates.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariates.nrows(),
            });
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch {
                expected: covariates.ncols(),
                got: covariate_names.len(),
            });
        }
        if let Some((row, &z)) = treatment.iter().enumerate().find(|(_, &z)| z > 1) {
            return Err(Error::InvalidTreatment {
                row: row + 1,
                value: z.to_string(),
            });
        }
        if response.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("response".into()));
        }
        for (j, col) in covariates.columns().into_iter().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "covariate `{}`",
                    covariate_names[j]
                )));
            }
        }
        Ok(Self {
            covariates,
            covariate_names,
            treatment,
            response,
            response_bounds: None,
        })
    }

    /// Convenience constructor naming covariates `x1..xp`.
    pub fn from_columns(
        covariates: Array2<f64>,
        treatment: Vec<u8>,
        response: Vec<f64>,
    ) -> Result<Self> {
        let names = (1..=covariates.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(covariates, names, treatment, response)
    }

    /// Reads a header-first CSV. Every column other than the treatment and
    /// response columns becomes a covariate, in header order.
    pub fn load_csv(
        path: impl AsRef<Path>,
        treatment_col: &str,
        response_col: &str,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file, treatment_col, response_col)
    }

    pub fn read_csv<R: std::io::Read>(
        reader: R,
        treatment_col: &str,
        response_col: &str,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Csv(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let z_idx = find(treatment_col)?;
        let r_idx = find(response_col)?;
        let cov_idx: Vec<usize> = (0..header.len())
            .filter(|&j| j != z_idx && j != r_idx)
            .collect();

        let mut cov_values = Vec::new();
        let mut treatment = Vec::new();
        let mut response = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            // data rows are numbered from 1, after the header
            let row = i + 1;
            let record = record.map_err(|e| Error::Csv(e.to_string()))?;
            if record.len() != header.len() {
                return Err(Error::Csv(format!(
                    "row {row}: expected {} fields, found {}",
                    header.len(),
                    record.len()
                )));
            }
            let parse = |j: usize| -> Result<f64> {
                let raw = record[j].trim();
                let v: f64 = raw.parse().map_err(|_| Error::UnparseableCell {
                    row,
                    column: header[j].clone(),
                    value: raw.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "row {row}, column `{}`",
                        header[j]
                    )));
                }
                Ok(v)
            };
            let z = parse(z_idx).map_err(|_| Error::InvalidTreatment {
                row,
                value: record[z_idx].trim().to_string(),
            })?;
            let z = if z == 0.0 {
                0
            } else if z == 1.0 {
                1
            } else {
                return Err(Error::InvalidTreatment {
                    row,
                    value: record[z_idx].trim().to_string(),
                });
            };
            treatment.push(z);
            response.push(parse(r_idx)?);
            for &j in &cov_idx {
                cov_values.push(parse(j)?);
            }
        }
        let n = treatment.len();
        let covariates = Array2::from_shape_vec((n, cov_idx.len()), cov_values)
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        let names = cov_idx.iter().map(|&j| header[j].clone()).collect();
        Self::new(covariates, names, treatment, response)
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        let n_treated = self.n_treated();
        let n_control = self.n() - n_treated;
        if n_treated == 0 {
            return Err(Error::SingleArm(0));
        }
        if n_control == 0 {
            return Err(Error::SingleArm(1));
        }
        let constant_columns = self
            .covariates
            .columns()
            .into_iter()
            .zip(&self.covariate_names)
            .filter(|(col, _)| col.iter().all(|&v| v == col[0]))
            .map(|(_, name)| name.clone())
            .collect();
        Ok(ValidationReport {
            n: self.n(),
            p: self.p(),
            n_treated,
            n_control,
            constant_columns,
        })
    }

    /// Maps the response affinely onto [0, 1], recording the original bounds.
    /// Already-scaled data is returned unchanged.
    pub fn scale_response(&self) -> Result<Self> {
        if self.response_bounds.is_some() {
            return Ok(self.clone());
        }
        let (lo, hi) = self
            .response
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(r), hi.max(r))
            });
        if lo == hi {
            return Err(Error::ConstantResponse(lo));
        }
        let width = hi - lo;
        let mut out = self.clone();
        out.response = self
            .response
            .iter()
            .map(|&r| ((r - lo) / width).clamp(0.0, 1.0))
            .collect();
        out.response_bounds = Some((lo, hi));
        Ok(out)
    }

    /// Inverse of [`Dataset::scale_response`]; a no-op on unscaled data.
    pub fn unscale_response(&self) -> Self {
        let mut out = self.clone();
        if let Some((lo, hi)) = self.response_bounds {
            out.response = self.response.iter().map(|&r| lo + r * (hi - lo)).collect();
            out.response_bounds = None;
        }
        out
    }

    /// Maps a counterfactual-mean value from the working scale to the original scale.
    pub fn to_original_scale(&self, value: f64) -> f64 {
        match self.response_bounds {
            Some((lo, hi)) => lo + value * (hi - lo),
            None => value,
        }
    }

    /// Added to a working-scale value, gives the original value divided by the
    /// range, so zero sits where it does on the original scale. Horvitz-Thompson
    /// weighting is not shift-invariant and is applied at this location.
    pub fn response_location(&self) -> f64 {
        self.response_bounds.map_or(0.0, |(lo, hi)| lo / (hi - lo))
    }

    /// Multiplier from working-scale differences (effects, EIF values) to the original scale.
    pub fn response_range(&self) -> f64 {
        self.response_bounds.map_or(1.0, |(lo, hi)| hi - lo)
    }

    /// Replaces the response, keeping covariates and treatment.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            self.covariate_names.clone(),
            self.treatment.clone(),
            response,
        )
    }

    /// Rows `idx` as a new dataset; scaling bounds carry over.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let covariates = self.covariates.select(ndarray::Axis(0), idx);
        let mut out = Self::new(
            covariates,
            self.covariate_names.clone(),
            idx.iter().map(|&i| self.treatment[i]).collect(),
            idx.iter().map(|&i| self.response[i]).collect(),
        )?;
        out.response_bounds = self.response_bounds;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&z| z == 1).count()
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn covariate(&self, j: usize) -> ArrayView1<'_, f64> {
        self.covariates.column(j)
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&z| f64::from(z)).collect()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn response_bounds(&self) -> Option<(f64, f64)> {
        self.response_bounds
    }
}
