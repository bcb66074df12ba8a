//! Dense row-major node feature matrices.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// `rows x cols` dense matrix, row-major. Rows are nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "FeatureMatrix::from_vec",
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "FeatureMatrix::from_rows",
                    expected: (rows.len(), cols),
                    found: (i, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix from a vector of scalars.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &FeatureMatrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_same_shape(&self, other: &FeatureMatrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    /// Rows scaled by per-row factors.
    pub fn scale_rows(&self, factors: &[f64]) -> FeatureMatrix {
        debug_assert_eq!(factors.len(), self.rows);
        let mut out = self.clone();
        for (i, f) in factors.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v *= f);
        }
        out
    }

    /// Keeps only the listed rows, in the listed order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Dense product `self * rhs` where `rhs` is `cols x k`, row-major.
    pub fn matmul(&self, rhs: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "FeatureMatrix::matmul",
                expected: (self.cols, rhs.cols),
                found: rhs.shape(),
            });
        }
        let mut out = FeatureMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (ov, bv) in o.iter_mut().zip(rhs.row(k)) {
                    *ov += aik * bv;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`; both matrices must share the row count.
    pub fn transpose_matmul(&self, rhs: &FeatureMatrix) -> FeatureMatrix {
        debug_assert_eq!(self.rows, rhs.rows);
        let mut out = FeatureMatrix::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = rhs.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (ov, bv) in o.iter_mut().zip(b) {
                    *ov += ai * bv;
                }
            }
        }
        out
    }

    /// `self * rhs^T`; both matrices must share the column count.
    pub fn matmul_transpose(&self, rhs: &FeatureMatrix) -> FeatureMatrix {
        debug_assert_eq!(self.cols, rhs.cols);
        let mut out = FeatureMatrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = a.iter().zip(rhs.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Parses a headerless CSV, one row per node.
    pub fn parse_csv(text: &str, path: &str) -> Result<FeatureMatrix> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut row = Vec::new();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    message: format!("cannot parse `{}` as a number", field.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        message: "non-finite feature value".into(),
                    });
                }
                row.push(v);
            }
            if let Some(first) = rows.first().map(Vec::len) {
                if first != row.len() {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        message: format!("expected {first} columns, found {}", row.len()),
                    });
                }
            }
            rows.push(row);
        }
        FeatureMatrix::from_rows(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.rows {
            let fields: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }
}

impl Index<(usize, usize)> for FeatureMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for FeatureMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}
