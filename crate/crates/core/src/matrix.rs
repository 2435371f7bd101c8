//! Dense row-major feature matrix with named columns.
//!
//! Missing cells are represented as NaN while a frame is being loaded;
//! after imputation every estimator requires fully finite data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::data(format!(
                "matrix data length {} does not match {} x {}",
                data.len(),
                n_rows,
                n_cols
            )));
        }
        if names.len() != n_cols {
            return Err(Error::data(format!(
                "expected {} column names, got {}",
                n_cols,
                names.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::data(format!("duplicate column name '{name}'")));
            }
        }
        Ok(Self { n_rows, n_cols, data, names })
    }

    /// Matrix with auto-generated column names x1..xp.
    pub fn from_flat(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        let names = (1..=n_cols).map(|i| format!("x{i}")).collect();
        Self::new(n_rows, n_cols, data, names)
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self::from_flat(n_rows, n_cols, vec![0.0; n_rows * n_cols]).expect("consistent shape")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n_cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        assert_eq!(values.len(), self.n_rows);
        for (r, v) in values.iter().enumerate() {
            self.set(r, col, *v);
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
            names: self.names.clone(),
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for r in 0..self.n_rows {
            let row = self.row(r);
            for &c in cols {
                data.push(row[c]);
            }
        }
        Matrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            data,
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
        }
    }

    pub fn has_missing(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
