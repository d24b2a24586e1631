use serde::{Deserialize, Serialize};

use crate::error::{CsfError, Result};

/// Dense row-major matrix of covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(CsfError::param(format!(
                "matrix data has {} values, expected {nrows}x{ncols}",
                data.len()
            )));
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(CsfError::param(format!(
                    "row {i} has {} columns, expected {ncols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            nrows: rows.len(),
            ncols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.ncols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.ncols..(row + 1) * self.ncols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, col)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.ncols.max(1)).take(self.nrows)
    }

    /// Keeps the rows listed in `ids`, in that order.
    pub fn select_rows(&self, ids: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(ids.len() * self.ncols);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            nrows: ids.len(),
            ncols: self.ncols,
            data,
        }
    }

    /// Appends a column on the right.
    pub fn with_column(&self, values: &[f64]) -> Result<Matrix> {
        if values.len() != self.nrows {
            return Err(CsfError::param("appended column length differs from row count"));
        }
        let ncols = self.ncols + 1;
        let mut data = Vec::with_capacity(self.nrows * ncols);
        for (i, v) in values.iter().enumerate() {
            data.extend_from_slice(self.row(i));
            data.push(*v);
        }
        Ok(Matrix {
            nrows: self.nrows,
            ncols,
            data,
        })
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        &self.data
    }
}
