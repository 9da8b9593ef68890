use crate::error::{Error, Result};

/// Dense column-major matrix of `f64`.
///
/// Covariate matrices are accessed column-wise almost everywhere (means,
/// variances, split search), so columns are stored as contiguous vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl Matrix {
    /// Matrix with `n_rows` rows and no columns.
    pub fn empty(n_rows: usize) -> Self {
        Self {
            n_rows,
            columns: Vec::new(),
        }
    }

    pub fn from_columns(n_rows: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n_rows {
                return Err(Error::Contract(format!(
                    "column {} has {} rows, expected {}",
                    j,
                    col.len(),
                    n_rows
                )));
            }
        }
        Ok(Self { n_rows, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn push_column(&mut self, column: Vec<f64>) -> Result<()> {
        if column.len() != self.n_rows {
            return Err(Error::Contract(format!(
                "new column has {} rows, expected {}",
                column.len(),
                self.n_rows
            )));
        }
        self.columns.push(column);
        Ok(())
    }

    /// New matrix holding the listed columns, in the listed order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        let mut columns = Vec::with_capacity(indices.len());
        for &j in indices {
            let col = self
                .columns
                .get(j)
                .ok_or_else(|| Error::Contract(format!("column index {} out of range", j)))?;
            columns.push(col.clone());
        }
        Ok(Self {
            n_rows: self.n_rows,
            columns,
        })
    }

    /// Rows as owned vectors; handy for row-oriented consumers.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}
