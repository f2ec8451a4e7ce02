//! Sample containers, model specifications and CSV ingestion.
//!
//! Files are plain CSV with a header row, comma separators and `.` decimals.
//! Column names are matched case-sensitively. An intercept is never stored in
//! a file; it is appended when a [`ModelSpec`] builds its design matrix.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The non-probability sample: covariates and the study variable.
#[derive(Debug, Clone)]
pub struct NonProbSample {
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl NonProbSample {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Validation(format!(
                "covariate rows ({}) do not match response length ({})",
                x.nrows(),
                y.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::Validation(format!(
                "non-probability sample needs at least 2 units, got {}",
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "non-probability sample contains non-finite values".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?, y)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    /// Rows picked by index, repeats allowed.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(idx);
        let y = idx.iter().map(|&i| self.y[i]).collect();
        Self::new(x, y)
    }
}

/// The reference probability sample: covariates and design weights.
#[derive(Debug, Clone)]
pub struct ProbSample {
    x: DMatrix<f64>,
    d: Vec<f64>,
}

impl ProbSample {
    pub fn new(x: DMatrix<f64>, d: Vec<f64>) -> Result<Self> {
        if x.nrows() != d.len() {
            return Err(Error::Validation(format!(
                "covariate rows ({}) do not match weight length ({})",
                x.nrows(),
                d.len()
            )));
        }
        if let Some(i) = d.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Validation(format!(
                "design weight at row {} must be positive and finite, got {}",
                i + 1,
                d[i]
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "probability sample contains non-finite covariates".into(),
            ));
        }
        Ok(Self { x, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], d: Vec<f64>) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?, d)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    /// Estimated population size, the sum of the design weights.
    pub fn n_hat(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(idx);
        let d = idx.iter().map(|&i| self.d[i]).collect();
        Self::new(x, d)
    }
}

/// A finite population with known covariates and responses.
#[derive(Debug, Clone)]
pub struct PopulationFrame {
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl PopulationFrame {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::Validation(
                "population needs matching, non-empty x rows and y".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    pub fn mean_x(&self) -> Vec<f64> {
        let n = self.size() as f64;
        self.x.column_iter().map(|c| c.sum() / n).collect()
    }
}

/// Mean function of a working model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

/// Variance function v(x). Only the homoscedastic case is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceFunction {
    #[default]
    Constant,
}

/// Which covariates enter a working model, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub link: Link,
    #[serde(default)]
    pub variance_function: VarianceFunction,
    #[serde(default = "default_true")]
    pub include_intercept: bool,
    pub columns: Vec<usize>,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(link: Link, columns: Vec<usize>) -> Self {
        Self {
            link,
            variance_function: VarianceFunction::Constant,
            include_intercept: true,
            columns,
        }
    }

    /// Logit model with an intercept on all of the first `q` covariates.
    pub fn logit_all(q: usize) -> Self {
        Self::new(Link::Logit, (0..q).collect())
    }

    pub fn n_coef(&self) -> usize {
        self.columns.len() + usize::from(self.include_intercept)
    }

    pub fn check_columns(&self, q: usize) -> Result<()> {
        if let Some(&c) = self.columns.iter().find(|&&c| c >= q) {
            return Err(Error::Validation(format!(
                "model uses covariate index {c} but only {q} covariates are available"
            )));
        }
        if self.n_coef() == 0 {
            return Err(Error::Validation("model has no terms".into()));
        }
        Ok(())
    }

    /// Design matrix: optional leading intercept followed by the chosen columns.
    pub fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let off = usize::from(self.include_intercept);
        DMatrix::from_fn(x.nrows(), self.n_coef(), |i, j| {
            if j < off {
                1.0
            } else {
                x[(i, self.columns[j - off])]
            }
        })
    }
}

/// Checks that the two samples can be analysed together.
pub fn validate_pair(a: &NonProbSample, b: &ProbSample) -> Result<()> {
    if b.n() < 2 {
        return Err(Error::Validation(format!(
            "probability sample needs at least 2 units, got {}",
            b.n()
        )));
    }
    if a.q() != b.q() {
        return Err(Error::DimensionMismatch {
            nonprob: a.q(),
            prob: b.q(),
        });
    }
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let q = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != q) {
        return Err(Error::Validation("ragged covariate rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]))
}

/// Reads the named columns of a CSV source as numbers, column-major.
fn read_numeric_columns<R: Read>(
    source: R,
    label: &str,
    names: &[&str],
) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let positions = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn {
                    path: label.to_string(),
                    column: name.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut columns = vec![Vec::new(); names.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (k, &pos) in positions.iter().enumerate() {
            let cell = record.get(pos).unwrap_or("");
            let cell_err = |message: String| Error::Cell {
                path: label.to_string(),
                row,
                column: names[k].to_string(),
                message,
            };
            if cell.is_empty() {
                return Err(cell_err("blank cell".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| cell_err(format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(cell_err(format!("non-finite value: {cell:?}")));
            }
            columns[k].push(v);
        }
    }
    if columns.first().is_none_or(Vec::is_empty) {
        return Err(Error::EmptyFile {
            path: label.to_string(),
        });
    }
    Ok(columns)
}

fn columns_to_matrix(n: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

pub fn read_nonprob_sample<R: Read>(
    source: R,
    label: &str,
    y_column: &str,
    x_columns: &[&str],
) -> Result<NonProbSample> {
    let mut names = vec![y_column];
    names.extend_from_slice(x_columns);
    let mut cols = read_numeric_columns(source, label, &names)?;
    let y = cols.remove(0);
    NonProbSample::new(columns_to_matrix(y.len(), &cols), y)
}

pub fn read_prob_sample<R: Read>(
    source: R,
    label: &str,
    weight_column: &str,
    x_columns: &[&str],
) -> Result<ProbSample> {
    let mut names = vec![weight_column];
    names.extend_from_slice(x_columns);
    let mut cols = read_numeric_columns(source, label, &names)?;
    let d = cols.remove(0);
    if let Some(i) = d.iter().position(|&w| w <= 0.0) {
        return Err(Error::Cell {
            path: label.to_string(),
            row: i + 1,
            column: weight_column.to_string(),
            message: format!("design weight must be positive, got {}", d[i]),
        });
    }
    ProbSample::new(columns_to_matrix(d.len(), &cols), d)
}

pub fn load_nonprob_sample(
    path: impl AsRef<Path>,
    y_column: &str,
    x_columns: &[&str],
) -> Result<NonProbSample> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_nonprob_sample(file, &path.display().to_string(), y_column, x_columns)
}

pub fn load_prob_sample(
    path: impl AsRef<Path>,
    weight_column: &str,
    x_columns: &[&str],
) -> Result<ProbSample> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_prob_sample(file, &path.display().to_string(), weight_column, x_columns)
}

// f64 Display is the shortest representation that parses back to the same
// bits, so written files round-trip exactly.
fn write_columns<W: Write>(
    sink: W,
    names: &[&str],
    first: &[f64],
    x: &DMatrix<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(names)?;
    for i in 0..first.len() {
        let mut rec = Vec::with_capacity(names.len());
        rec.push(first[i].to_string());
        rec.extend((0..x.ncols()).map(|j| x[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn header<'a>(first: &'a str, x_names: &[&'a str], q: usize) -> Result<Vec<&'a str>> {
    if x_names.len() != q {
        return Err(Error::Validation(format!(
            "{} covariate names given for {} columns",
            x_names.len(),
            q
        )));
    }
    let mut names = vec![first];
    names.extend_from_slice(x_names);
    Ok(names)
}

pub fn write_nonprob_sample<W: Write>(
    sink: W,
    sample: &NonProbSample,
    y_name: &str,
    x_names: &[&str],
) -> Result<()> {
    let names = header(y_name, x_names, sample.q())?;
    write_columns(sink, &names, sample.y(), sample.x())
}

pub fn write_prob_sample<W: Write>(
    sink: W,
    sample: &ProbSample,
    weight_name: &str,
    x_names: &[&str],
) -> Result<()> {
    let names = header(weight_name, x_names, sample.q())?;
    write_columns(sink, &names, sample.d(), sample.x())
}
