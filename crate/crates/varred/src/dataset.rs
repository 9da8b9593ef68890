//! Experiment datasets: loading, validation, and imputation.
//!
//! The on-disk format is a UTF-8 CSV with a header row. Columns are
//! recognized by name: `w` (0/1 treatment flag), `y` (outcome), any number
//! of `x_<name>` pre-experiment covariates, any number of `z_<name>`
//! in-experiment covariates, and an optional `unit_id`. Empty cells are
//! allowed only in `x_*` columns and are recorded as missing values until
//! [`impute_missing_pre`] runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-unit experiment data: treatment flag, outcome, and covariates.
///
/// Missing pre-experiment values are stored as `NaN` in `x`; all other
/// numeric fields are complete by construction.
#[derive(Debug, Clone)]
pub struct ExperimentDataset {
    experiment_id: String,
    unit_ids: Option<Vec<String>>,
    w: Vec<u8>,
    y: Vec<f64>,
    x: Matrix,
    x_names: Vec<String>,
    z: Matrix,
    z_names: Vec<String>,
}

impl ExperimentDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        experiment_id: impl Into<String>,
        w: Vec<u8>,
        y: Vec<f64>,
        x: Matrix,
        x_names: Vec<String>,
        z: Matrix,
        z_names: Vec<String>,
        unit_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = w.len();
        if y.len() != n {
            return Err(Error::Contract(format!(
                "y has {} rows, w has {}",
                y.len(),
                n
            )));
        }
        if x.n_rows() != n || z.n_rows() != n {
            return Err(Error::Contract(format!(
                "covariate row counts ({}, {}) do not match w ({})",
                x.n_rows(),
                z.n_rows(),
                n
            )));
        }
        if x_names.len() != x.n_cols() {
            return Err(Error::Contract(format!(
                "{} x names for {} x columns",
                x_names.len(),
                x.n_cols()
            )));
        }
        if z_names.len() != z.n_cols() {
            return Err(Error::Contract(format!(
                "{} z names for {} z columns",
                z_names.len(),
                z.n_cols()
            )));
        }
        if let Some(ids) = &unit_ids {
            if ids.len() != n {
                return Err(Error::Contract(format!(
                    "{} unit ids for {} rows",
                    ids.len(),
                    n
                )));
            }
        }
        if let Some(bad) = w.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!(
                "treatment flag must be 0 or 1, found {} at row {}",
                w[bad], bad
            )));
        }
        for names in [&x_names, &z_names] {
            let mut seen = std::collections::BTreeSet::new();
            for name in names {
                if !seen.insert(name) {
                    return Err(Error::Contract(format!("duplicate column name `{}`", name)));
                }
            }
        }
        Ok(Self {
            experiment_id: experiment_id.into(),
            unit_ids,
            w,
            y,
            x,
            x_names,
            z,
            z_names,
        })
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// Treatment-arm size.
    pub fn n1(&self) -> usize {
        self.w.iter().filter(|&&v| v == 1).count()
    }

    /// Control-arm size.
    pub fn n0(&self) -> usize {
        self.n() - self.n1()
    }

    /// Number of pre-experiment covariate columns.
    pub fn d(&self) -> usize {
        self.x.n_cols()
    }

    /// Number of in-experiment covariate columns.
    pub fn m(&self) -> usize {
        self.z.n_cols()
    }

    pub fn w(&self) -> &[u8] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn unit_ids(&self) -> Option<&[String]> {
        self.unit_ids.as_deref()
    }

    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    pub fn has_missing_x(&self) -> bool {
        self.x
            .columns()
            .iter()
            .any(|c| c.iter().any(|v| v.is_nan()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Error => write!(f, "error"),
            Severity::Warning => write!(f, "warning"),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub column: Option<String>,
    pub message: String,
}

/// Outcome of [`validate_dataset`]: diagnoses, never an `Err`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<ValidationIssue>,
    pub missing_fraction_per_x_column: BTreeMap<String, f64>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }
}

/// How to fill missing pre-experiment values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputePolicy {
    /// Column mean over observed entries (0 when nothing is observed),
    /// plus a 0/1 missingness indicator column.
    MeanPlusIndicator,
    /// Zero fill plus a 0/1 missingness indicator column.
    ZeroPlusIndicator,
}

/// Load a dataset from a prefix-schema CSV file.
///
/// The experiment id is the file stem. Empty cells in `x_*` columns become
/// missing markers; empty cells anywhere else are an error.
pub fn load_experiment_csv(path: impl AsRef<Path>) -> Result<ExperimentDataset> {
    let path = path.as_ref();
    let experiment_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".to_string());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_to_error)?;

    let headers = reader.headers().map_err(csv_to_error)?.clone();
    let mut w_col = None;
    let mut y_col = None;
    let mut id_col = None;
    let mut x_cols: Vec<(usize, String)> = Vec::new();
    let mut z_cols: Vec<(usize, String)> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        match name {
            "w" => {
                if w_col.replace(j).is_some() {
                    return Err(Error::Domain("duplicate column `w`".into()));
                }
            }
            "y" => {
                if y_col.replace(j).is_some() {
                    return Err(Error::Domain("duplicate column `y`".into()));
                }
            }
            "unit_id" => {
                if id_col.replace(j).is_some() {
                    return Err(Error::Domain("duplicate column `unit_id`".into()));
                }
            }
            _ if name.starts_with("x_") => x_cols.push((j, name.to_string())),
            _ if name.starts_with("z_") => z_cols.push((j, name.to_string())),
            other => {
                return Err(Error::Domain(format!(
                    "unrecognized column `{}` (expected w, y, unit_id, x_*, z_*)",
                    other
                )));
            }
        }
    }
    let w_col = w_col.ok_or_else(|| Error::Domain("missing required column `w`".into()))?;
    let y_col = y_col.ok_or_else(|| Error::Domain("missing required column `y`".into()))?;

    let mut w = Vec::new();
    let mut y = Vec::new();
    let mut unit_ids = id_col.map(|_| Vec::new());
    let mut x_data: Vec<Vec<f64>> = vec![Vec::new(); x_cols.len()];
    let mut z_data: Vec<Vec<f64>> = vec![Vec::new(); z_cols.len()];

    for record in reader.records() {
        let record = record.map_err(csv_to_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or_default();

        let w_raw = parse_cell(&record, w_col, "w", line)?;
        let w_val =
            w_raw.ok_or_else(|| Error::Domain(format!("empty `w` cell at line {}", line)))?;
        if w_val != 0.0 && w_val != 1.0 {
            return Err(Error::Domain(format!(
                "treatment flag must be 0 or 1, found {} at line {}",
                w_val, line
            )));
        }
        w.push(w_val as u8);

        let y_val = parse_cell(&record, y_col, "y", line)?
            .ok_or_else(|| Error::Domain(format!("empty `y` cell at line {}", line)))?;
        y.push(y_val);

        if let (Some(ids), Some(j)) = (unit_ids.as_mut(), id_col) {
            ids.push(record.get(j).unwrap_or("").to_string());
        }

        for (k, (j, name)) in x_cols.iter().enumerate() {
            match parse_cell(&record, *j, name, line)? {
                Some(v) => x_data[k].push(v),
                None => x_data[k].push(f64::NAN),
            }
        }
        for (k, (j, name)) in z_cols.iter().enumerate() {
            let v = parse_cell(&record, *j, name, line)?
                .ok_or_else(|| Error::Domain(format!("empty `{}` cell at line {}", name, line)))?;
            z_data[k].push(v);
        }
    }

    let n = w.len();
    let x = Matrix::from_columns(n, x_data)?;
    let z = Matrix::from_columns(n, z_data)?;
    ExperimentDataset::new(
        experiment_id,
        w,
        y,
        x,
        x_cols.into_iter().map(|(_, name)| name).collect(),
        z,
        z_cols.into_iter().map(|(_, name)| name).collect(),
        unit_ids,
    )
}

/// Write a dataset in the same CSV schema that [`load_experiment_csv`] reads.
///
/// Numbers use the shortest representation that parses back to the same
/// `f64`, so a write/load round trip is bitwise exact. Missing `x` entries
/// are written as empty cells.
pub fn write_experiment_csv(ds: &ExperimentDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_to_error)?;
    let mut header: Vec<String> = Vec::new();
    if ds.unit_ids().is_some() {
        header.push("unit_id".into());
    }
    header.push("w".into());
    header.push("y".into());
    header.extend(ds.x_names().iter().cloned());
    header.extend(ds.z_names().iter().cloned());
    writer.write_record(&header).map_err(csv_to_error)?;

    for i in 0..ds.n() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ids) = ds.unit_ids() {
            row.push(ids[i].clone());
        }
        row.push(format!("{}", ds.w()[i]));
        row.push(format_cell(ds.y()[i]));
        for j in 0..ds.d() {
            let v = ds.x().value(i, j);
            row.push(if v.is_nan() {
                String::new()
            } else {
                format_cell(v)
            });
        }
        for j in 0..ds.m() {
            row.push(format_cell(ds.z().value(i, j)));
        }
        writer.write_record(&row).map_err(csv_to_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn format_cell(v: f64) -> String {
    format!("{}", v)
}

/// `Ok(None)` for an empty cell; the caller decides whether that is legal.
fn parse_cell(record: &csv::StringRecord, j: usize, name: &str, line: u64) -> Result<Option<f64>> {
    let raw = record.get(j).ok_or_else(|| Error::Parse {
        line,
        message: format!("row is missing column `{}`", name),
    })?;
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse `{}` in column `{}` as a number", raw, name),
    })
}

fn csv_to_error(e: csv::Error) -> Error {
    let line = match e.position() {
        Some(pos) => pos.line(),
        None => 0,
    };
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Domain(format!("cannot read csv: {}", e)),
        _ => Error::Parse {
            line,
            message: e.to_string(),
        },
    }
}

/// Diagnose a dataset without rejecting it.
///
/// Errors flag conditions under which the estimators are undefined (an arm
/// smaller than two units, a zero-variance `z` column); warnings flag
/// conditions that merely deserve a look.
pub fn validate_dataset(ds: &ExperimentDataset) -> ValidationReport {
    let mut issues = Vec::new();
    let n1 = ds.n1();
    let n0 = ds.n0();
    if n1 < 2 {
        issues.push(ValidationIssue {
            severity: Severity::Error,
            column: None,
            message: format!("n1 < 2: treatment arm has {} unit(s)", n1),
        });
    }
    if n0 < 2 {
        issues.push(ValidationIssue {
            severity: Severity::Error,
            column: None,
            message: format!("n0 < 2: control arm has {} unit(s)", n0),
        });
    }
    if let Some(i) = ds.y().iter().position(|v| !v.is_finite()) {
        issues.push(ValidationIssue {
            severity: Severity::Error,
            column: Some("y".into()),
            message: format!("non-finite outcome at row {}", i),
        });
    }

    for (j, name) in ds.z_names().iter().enumerate() {
        let col = ds.z().column(j);
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            issues.push(ValidationIssue {
                severity: Severity::Error,
                column: Some(name.clone()),
                message: format!("non-finite value at row {}", i),
            });
            continue;
        }
        if is_constant(col.iter().copied()) {
            issues.push(ValidationIssue {
                severity: Severity::Error,
                column: Some(name.clone()),
                message: format!(
                    "in-experiment covariate `{}` has zero variance; its adjustment coefficient is undefined",
                    name
                ),
            });
            continue;
        }
        if n1 > 0 && n0 > 0 {
            let constant_1 = is_constant(arm_values(col, ds.w(), 1));
            let constant_0 = is_constant(arm_values(col, ds.w(), 0));
            if constant_1 != constant_0 {
                let arm = if constant_1 { "treatment" } else { "control" };
                issues.push(ValidationIssue {
                    severity: Severity::Warning,
                    column: Some(name.clone()),
                    message: format!("`{}` is constant within the {} arm only", name, arm),
                });
            }
        }
    }

    let mut missing = BTreeMap::new();
    for (j, name) in ds.x_names().iter().enumerate() {
        let col = ds.x().column(j);
        if let Some(i) = col.iter().position(|v| v.is_infinite()) {
            issues.push(ValidationIssue {
                severity: Severity::Error,
                column: Some(name.clone()),
                message: format!("infinite value at row {}", i),
            });
        }
        let n_missing = col.iter().filter(|v| v.is_nan()).count();
        let fraction = if col.is_empty() {
            0.0
        } else {
            n_missing as f64 / col.len() as f64
        };
        if fraction == 1.0 {
            issues.push(ValidationIssue {
                severity: Severity::Warning,
                column: Some(name.clone()),
                message: format!("`{}` is entirely missing", name),
            });
        }
        missing.insert(name.clone(), fraction);
    }

    ValidationReport {
        ok: !issues.iter().any(|i| i.severity == Severity::Error),
        issues,
        missing_fraction_per_x_column: missing,
    }
}

fn arm_values<'a>(col: &'a [f64], w: &'a [u8], arm: u8) -> impl Iterator<Item = f64> + 'a {
    col.iter()
        .zip(w.iter())
        .filter_map(move |(&v, &wi)| (wi == arm).then_some(v))
}

fn is_constant(mut values: impl Iterator<Item = f64>) -> bool {
    match values.next() {
        None => true,
        Some(first) => values.all(|v| v == first),
    }
}

/// Replace missing `x` entries under the given policy.
///
/// Every `x` column with at least one missing entry is filled (pooled mean
/// over observed entries, or zero) and gains a companion `<col>__miss`
/// indicator column. Columns without missing entries, and all of `w`, `y`,
/// `z`, are returned untouched.
pub fn impute_missing_pre(
    ds: &ExperimentDataset,
    policy: ImputePolicy,
) -> Result<ExperimentDataset> {
    if !ds.has_missing_x() {
        return Ok(ds.clone());
    }
    let mut x_cols: Vec<Vec<f64>> = ds.x().columns().to_vec();
    let mut x_names = ds.x_names().to_vec();
    let mut indicators: Vec<(String, Vec<f64>)> = Vec::new();

    for (j, name) in ds.x_names().iter().enumerate() {
        let col = &mut x_cols[j];
        if !col.iter().any(|v| v.is_nan()) {
            continue;
        }
        let fill = match policy {
            ImputePolicy::ZeroPlusIndicator => 0.0,
            ImputePolicy::MeanPlusIndicator => {
                let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
                if observed.is_empty() {
                    0.0
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                }
            }
        };
        let indicator: Vec<f64> = col
            .iter()
            .map(|v| if v.is_nan() { 1.0 } else { 0.0 })
            .collect();
        for v in col.iter_mut() {
            if v.is_nan() {
                *v = fill;
            }
        }
        indicators.push((format!("{}__miss", name), indicator));
    }

    for (name, column) in indicators {
        x_names.push(name);
        x_cols.push(column);
    }
    let x = Matrix::from_columns(ds.n(), x_cols)?;
    ExperimentDataset::new(
        ds.experiment_id().to_string(),
        ds.w().to_vec(),
        ds.y().to_vec(),
        x,
        x_names,
        ds.z().clone(),
        ds.z_names().to_vec(),
        ds.unit_ids().map(|ids| ids.to_vec()),
    )
}
