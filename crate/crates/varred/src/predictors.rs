//! Outcome models used for regression adjustment.
//!
//! Estimators only ever see the [`Predictor`] contract, so a linear model,
//! the in-repo boosted trees, and externally supplied predictions are
//! interchangeable.

use std::path::Path;

use crate::dataset::ExperimentDataset;
use crate::error::{Error, Result};
use crate::gbt::{fit_gbt, GbtHyperparams, GbtModel};
use crate::matrix::Matrix;
use crate::stats::{mean, ols_fit, OlsFit};

/// A fitted (or externally supplied) outcome model.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Linear(OlsFit),
    BoostedTrees(GbtModel),
    /// Precomputed predictions keyed to dataset row order.
    External(Vec<f64>),
}

impl Predictor {
    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Linear(_) => "linear",
            Predictor::BoostedTrees(_) => "boosted_trees",
            Predictor::External(_) => "external",
        }
    }

    /// Predictions for every row of `x`.
    ///
    /// For fitted predictors the column count must match the training
    /// features; for external predictions the row count must match the
    /// stored vector (rows are assumed to be in dataset order).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            Predictor::Linear(fit) => fit.predict(x),
            Predictor::BoostedTrees(model) => model.predict(x),
            Predictor::External(values) => {
                if values.len() != x.n_rows() {
                    return Err(Error::Contract(format!(
                        "external predictions cover {} rows, dataset has {}",
                        values.len(),
                        x.n_rows()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Least-squares linear outcome model.
pub fn fit_linear_predictor(x: &Matrix, y: &[f64]) -> Result<Predictor> {
    Ok(Predictor::Linear(ols_fit(x, y)?))
}

/// Boosted-tree outcome model; see [`GbtHyperparams`] for the knobs.
pub fn fit_gbt_predictor(x: &Matrix, y: &[f64], params: &GbtHyperparams) -> Result<Predictor> {
    Ok(Predictor::BoostedTrees(fit_gbt(x, y, params)?))
}

/// Load predictions produced by an outside model and align them to `ds`.
///
/// Accepts a single-column CSV (header `f_hat`) in dataset row order, or a
/// two-column CSV (`unit_id`, `f_hat`) joined on the dataset's unit ids.
pub fn load_external_predictions(
    path: impl AsRef<Path>,
    ds: &ExperimentDataset,
) -> Result<Predictor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::Domain(format!("cannot read predictions: {}", e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Domain(e.to_string()))?
        .clone();

    let mut f_col = None;
    let mut id_col = None;
    for (j, name) in headers.iter().enumerate() {
        match name {
            "f_hat" => f_col = Some(j),
            "unit_id" => id_col = Some(j),
            other => {
                return Err(Error::Domain(format!(
                    "unrecognized predictions column `{}`",
                    other
                )))
            }
        }
    }
    let f_col = f_col.ok_or_else(|| Error::Domain("missing column `f_hat`".into()))?;

    let mut rows: Vec<(Option<String>, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Domain(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or_default();
        let raw = record.get(f_col).unwrap_or("");
        let value: f64 = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("cannot parse `{}` as a prediction", raw),
        })?;
        let id = id_col.map(|j| record.get(j).unwrap_or("").to_string());
        rows.push((id, value));
    }

    let aligned = match id_col {
        None => {
            if rows.len() != ds.n() {
                return Err(Error::Alignment(format!(
                    "predictions file has {} rows, dataset has {}",
                    rows.len(),
                    ds.n()
                )));
            }
            rows.into_iter().map(|(_, v)| v).collect()
        }
        Some(_) => {
            let ids = ds.unit_ids().ok_or_else(|| {
                Error::Alignment(
                    "predictions are keyed by unit_id but the dataset has no unit_id column".into(),
                )
            })?;
            if rows.len() != ds.n() {
                return Err(Error::Alignment(format!(
                    "predictions file has {} rows, dataset has {}",
                    rows.len(),
                    ds.n()
                )));
            }
            let mut by_id = std::collections::BTreeMap::new();
            for (id, value) in rows {
                let id = id.expect("id column present");
                if by_id.insert(id.clone(), value).is_some() {
                    return Err(Error::Alignment(format!("duplicate unit_id `{}`", id)));
                }
            }
            let mut aligned = Vec::with_capacity(ds.n());
            for id in ids {
                match by_id.get(id) {
                    Some(&v) => aligned.push(v),
                    None => {
                        return Err(Error::Alignment(format!(
                            "no prediction for unit_id `{}`",
                            id
                        )))
                    }
                }
            }
            aligned
        }
    };
    Ok(Predictor::External(aligned))
}

/// Coefficient of determination, `1 - SSE/SST`, centered at `mean(y)`.
/// Can go negative for predictions worse than the constant mean.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Contract(format!(
            "length mismatch: {} outcomes vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Degenerate(
            "r_squared needs at least 2 observations".into(),
        ));
    }
    let y_bar = mean(y);
    let sst: f64 = y.iter().map(|v| (v - y_bar) * (v - y_bar)).sum();
    if sst == 0.0 {
        return Err(Error::Degenerate(
            "r_squared is undefined for a constant outcome".into(),
        ));
    }
    let sse: f64 = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - sse / sst)
}
