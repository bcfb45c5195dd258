//! JSON wire formats shared by the library types and the CLI.
//!
//! Complex numbers travel as `[re, im]`, matrices as row-major nested arrays.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::CMatrix;

pub type ComplexMatrixJson = Vec<Vec<[f64; 2]>>;
pub type RealMatrixJson = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityOperatorJson {
    pub dim: usize,
    pub matrix: ComplexMatrixJson,
}

pub fn complex_matrix_to_json(m: &CMatrix) -> ComplexMatrixJson {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn complex_matrix_from_json(rows: &ComplexMatrixJson) -> Result<CMatrix> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidInput("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

pub fn real_matrix_to_json(m: &DMatrix<f64>) -> RealMatrixJson {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn real_matrix_from_json(rows: &RealMatrixJson) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidInput("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}
