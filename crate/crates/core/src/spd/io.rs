use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SpdMatrix;
use crate::error::{Error, Result};

/// Checkpoint form of a square matrix: `{"dim": n, "data": [row-major]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * m.ncols());
        for i in 0..n {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixJson { dim: n, data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.dim * self.dim {
            return Err(Error::Parse(format!(
                "matrix JSON declares dim {} but has {} entries",
                self.dim,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.data))
    }
}

impl From<SpdMatrix> for MatrixJson {
    fn from(m: SpdMatrix) -> Self {
        MatrixJson::from_matrix(m.as_matrix())
    }
}

impl TryFrom<MatrixJson> for SpdMatrix {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Self> {
        SpdMatrix::new(j.to_matrix()?)
    }
}

/// Dense row-major CSV, one matrix row per line.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix CSV".into()));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}
