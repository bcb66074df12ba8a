//! Compressed sparse row matrices and the kernels the diffusion needs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Below this many multiply-adds `spmm` stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// CSR matrix. Column indices are strictly increasing within each row, so a
/// row never stores the same column twice.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1 || offsets[0] != 0 {
            return Err(Error::invalid(
                "offsets",
                "length must be rows + 1 starting at 0",
            ));
        }
        if *offsets.last().unwrap() != indices.len() || indices.len() != values.len() {
            return Err(Error::invalid(
                "indices",
                "length disagrees with offsets/values",
            ));
        }
        for i in 0..rows {
            if offsets[i] > offsets[i + 1] {
                return Err(Error::invalid(
                    "offsets",
                    format!("not monotone at row {i}"),
                ));
            }
            let row = &indices[offsets[i]..offsets[i + 1]];
            for (k, &j) in row.iter().enumerate() {
                if j >= cols {
                    return Err(Error::invalid("indices", format!("column {j} >= {cols}")));
                }
                if k > 0 && row[k - 1] >= j {
                    return Err(Error::invalid(
                        "indices",
                        format!("row {i} columns not strictly increasing"),
                    ));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(i, j, _) in &sorted {
            if i >= rows || j >= cols {
                return Err(Error::invalid(
                    "triplets",
                    format!("entry ({i}, {j}) outside {rows}x{cols}"),
                ));
            }
        }
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut offsets = vec![0; rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(j);
            values.push(v);
            offsets[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        Self::new(rows, cols, offsets, indices, values)
    }

    /// Keeps every nonzero of a dense row-major matrix.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut trip = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::ShapeMismatch {
                    op: "SparseMatrix::from_dense",
                    expected: (n, m),
                    found: (i, r.len()),
                });
            }
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, m, &trip)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Same sparsity pattern with every value replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "pattern size mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            offsets: self.offsets.clone(),
            indices: self.indices.clone(),
            values,
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

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// `(columns, values)` of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_range(i);
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// Slot of `(i, j)` in the value array, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|k| self.offsets[i] + k)
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.shape() == other.shape()
            && self.offsets == other.offsets
            && self.indices == other.indices
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                trip.push((j, i, v));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, &trip).expect("transpose stays in bounds")
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Checks nonnegativity and unit row sums within `tol`.
    pub fn check_row_stochastic(&self, tol: f64) -> Result<()> {
        for i in 0..self.rows {
            let (_, vals) = self.row(i);
            let sum: f64 = vals.iter().sum();
            if (sum - 1.0).abs() > tol || vals.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::NotRowStochastic { row: i, sum });
            }
        }
        Ok(())
    }

    /// `diag(factors) * self`.
    pub fn scale_rows(&self, factors: &[f64]) -> SparseMatrix {
        assert_eq!(factors.len(), self.rows);
        let mut out = self.clone();
        for (i, &f) in factors.iter().enumerate() {
            let r = out.row_range(i);
            out.values[r].iter_mut().for_each(|v| *v *= f);
        }
        out
    }

    /// `a * self + b * other` on the union of the two patterns.
    pub fn add_scaled(&self, a: f64, other: &SparseMatrix, b: f64) -> Result<SparseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "SparseMatrix::add_scaled",
                expected: self.shape(),
                found: other.shape(),
            });
        }
        if self.same_pattern(other) {
            let values = self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect();
            return Ok(self.with_values(values));
        }
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        offsets.push(0);
        for i in 0..self.rows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let take_a = q >= cb.len() || (p < ca.len() && ca[p] <= cb[q]);
                let take_b = p >= ca.len() || (q < cb.len() && cb[q] <= ca[p]);
                let (col, v) = match (take_a, take_b) {
                    (true, true) => {
                        let r = (ca[p], a * va[p] + b * vb[q]);
                        p += 1;
                        q += 1;
                        r
                    }
                    (true, false) => {
                        let r = (ca[p], a * va[p]);
                        p += 1;
                        r
                    }
                    _ => {
                        let r = (cb[q], b * vb[q]);
                        q += 1;
                        r
                    }
                };
                indices.push(col);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            offsets,
            indices,
            values,
        })
    }

    /// Frobenius norm of `self - other` on the union pattern.
    pub fn distance(&self, other: &SparseMatrix) -> Result<f64> {
        Ok(self.add_scaled(1.0, other, -1.0)?.frobenius_norm())
    }
}

/// `(max column absolute sum, max row absolute sum)` in one pass over the
/// stored entries.
pub fn norm_1_inf(mat: &SparseMatrix) -> (f64, f64) {
    let mut col_sums = vec![0.0; mat.cols];
    let mut row_max: f64 = 0.0;
    for i in 0..mat.rows {
        let (cols, vals) = mat.row(i);
        let mut s = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            s += v.abs();
            col_sums[j] += v.abs();
        }
        row_max = row_max.max(s);
    }
    let col_max = col_sums.iter().fold(0.0_f64, |m, &v| m.max(v));
    (col_max, row_max)
}

fn spmm_row(mat: &SparseMatrix, x: &FeatureMatrix, i: usize, out: &mut [f64]) {
    let (cols, vals) = mat.row(i);
    for (&j, &v) in cols.iter().zip(vals) {
        for (o, xv) in out.iter_mut().zip(x.row(j)) {
            *o += v * xv;
        }
    }
}

/// Sparse-dense product `mat * x`. Each output row accumulates its stored
/// entries left to right, so the parallel and sequential paths agree bit for
/// bit.
pub fn spmm(mat: &SparseMatrix, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if mat.cols != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "spmm",
            expected: (mat.cols, x.cols()),
            found: x.shape(),
        });
    }
    let d = x.cols();
    let mut out = FeatureMatrix::zeros(mat.rows, d);
    if d == 0 {
        return Ok(out);
    }
    if mat.nnz() * d >= PAR_THRESHOLD {
        out.as_mut_slice()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, row)| spmm_row(mat, x, i, row));
    } else {
        for (i, row) in out.as_mut_slice().chunks_mut(d).enumerate() {
            spmm_row(mat, x, i, row);
        }
    }
    Ok(out)
}

/// `mat^T * x` without materializing the transpose.
pub fn spmm_transpose(mat: &SparseMatrix, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if mat.rows != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "spmm_transpose",
            expected: (mat.rows, x.cols()),
            found: x.shape(),
        });
    }
    let mut out = FeatureMatrix::zeros(mat.cols, x.cols());
    for i in 0..mat.rows {
        let (cols, vals) = mat.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let xi = x.row(i);
            for (o, xv) in out.row_mut(j).iter_mut().zip(xi) {
                *o += v * xv;
            }
        }
    }
    Ok(out)
}
