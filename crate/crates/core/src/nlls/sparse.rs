//! Compressed-row sparse matrices and a banded Cholesky solver for the
//! damped normal equations.

use std::io::{self, Write};

use crate::error::{Error, Result};

/// Tikhonov floor added to the normal matrix diagonal.
pub const NORMAL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Row-by-row builder. Entries within a row may arrive in any order;
/// duplicates are summed and exact zeros dropped.
#[derive(Debug)]
pub struct RowBuilder {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl RowBuilder {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        self.scratch.clear();
        self.scratch.extend(entries);
        self.scratch.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.scratch {
            debug_assert!(c < self.cols);
            if v == 0.0 {
                continue;
            }
            if last == Some(c) {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.col_idx.push(c);
                self.values.push(v);
                last = Some(c);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn build(self) -> SparseMatrix {
        SparseMatrix {
            rows: self.row_ptr.len() - 1,
            cols: self.cols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            values: self.values,
        }
    }
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(dense: &[Vec<f64>], cols: usize) -> Self {
        let mut b = RowBuilder::new(cols);
        for row in dense {
            b.push_row(
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v)),
            );
        }
        b.build()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                row[*c] = *v;
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(c, v)| v * x[*c]).sum()
            })
            .collect()
    }

    /// `J^T r`.
    pub fn transpose_mul_vec(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, ri) in r.iter().enumerate().take(self.rows) {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                out[*c] += v * ri;
            }
        }
        out
    }

    /// Half-bandwidth of `J^T J`: the widest column span of any row.
    pub fn normal_bandwidth(&self) -> usize {
        (0..self.rows)
            .filter_map(|i| {
                let (cols, _) = self.row(i);
                Some(cols.last()? - cols.first()?)
            })
            .max()
            .unwrap_or(0)
    }

    /// Stacks `self` on top of `other` (same column count).
    pub fn vstack(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.cols, other.cols);
        let offset = self.values.len();
        let mut row_ptr = self.row_ptr.clone();
        row_ptr.extend(other.row_ptr[1..].iter().map(|p| p + offset));
        let mut col_idx = self.col_idx.clone();
        col_idx.extend_from_slice(&other.col_idx);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        SparseMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Debug dump: header `M N nnz`, then one `row col value` line per nonzero.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {c} {v:e}")?;
            }
        }
        Ok(())
    }
}

/// Symmetric positive definite band matrix, lower band stored row-wise.
struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    // requires j <= i <= j + bw
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * (self.bw + 1) + (j + self.bw - i)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (j + self.bw - i)]
    }

    /// In-place `L L^T` factorization.
    fn cholesky(&mut self) -> Result<()> {
        let diag_max = (0..self.n)
            .map(|i| self.get(i, i).abs())
            .fold(0.0, f64::max);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let kmin = lo.max(j.saturating_sub(self.bw));
                let mut s = self.get(i, j);
                for k in kmin..j {
                    s -= self.get(i, k) * self.get(j, k);
                }
                if i == j {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::SingularSystem {
                            pivot: i,
                            value: s,
                            diag_max,
                        });
                    }
                    *self.at(i, i) = s.sqrt();
                } else {
                    let d = self.get(j, j);
                    *self.at(i, j) = s / d;
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::needless_range_loop)]
    fn solve_in_place(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = b[i];
            for k in lo..i {
                s -= self.get(i, k) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = b[i];
            for k in i + 1..=hi {
                s -= self.get(k, i) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
    }
}

/// Solves `(J^T J + lambda * diag(J^T J) + eps I) delta = -J^T r` by banded
/// Cholesky; the band is the widest column span of any row of `J`.
pub fn sparse_normal_solve(jac: &SparseMatrix, r: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if r.len() != jac.rows() {
        return Err(Error::DimensionMismatch {
            what: "residual vector",
            expected: jac.rows(),
            got: r.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "damping must be nonnegative, got {lambda}"
        )));
    }
    let n = jac.cols();
    if n == 0 {
        return Ok(Vec::new());
    }
    let bw = jac.normal_bandwidth().min(n - 1);
    let mut a = BandMatrix::new(n, bw);
    for i in 0..jac.rows() {
        let (cols, vals) = jac.row(i);
        for (p, (&ci, &vi)) in cols.iter().zip(vals).enumerate() {
            for (&cj, &vj) in cols[..=p].iter().zip(&vals[..=p]) {
                *a.at(ci, cj) += vi * vj;
            }
        }
    }
    for i in 0..n {
        let d = a.get(i, i);
        *a.at(i, i) = d + lambda * d + NORMAL_EPSILON;
    }
    let mut rhs: Vec<f64> = jac.transpose_mul_vec(r).into_iter().map(|g| -g).collect();
    a.cholesky()?;
    a.solve_in_place(&mut rhs);
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let j = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        let d = sparse_normal_solve(&j, &[0.5, -2.0], 0.0).unwrap();
        assert!((d[0] + 0.5).abs() < 1e-10 && (d[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn damping_shrinks_step() {
        let j = SparseMatrix::from_dense(
            &[
                vec![2.0, 1.0, 0.0],
                vec![0.0, 1.0, 3.0],
                vec![1.0, 0.0, 1.0],
            ],
            3,
        );
        let r = [1.0, -1.0, 0.5];
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 1e3, 1e6] {
            let d = sparse_normal_solve(&j, &r, lambda).unwrap();
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn singular_reported() {
        let j = SparseMatrix::from_dense(&[vec![1.0, 0.0]], 2);
        // the epsilon floor keeps the empty column solvable
        assert!(sparse_normal_solve(&j, &[1.0], 0.0).is_ok());
        let bad = SparseMatrix::from_dense(&[vec![f64::NAN, 0.0]], 2);
        assert!(matches!(
            sparse_normal_solve(&bad, &[1.0], 0.0),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn triplet_dump_format() {
        let j = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, -2.5]], 2);
        let mut buf = Vec::new();
        j.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "2 2 2\n0 0 1e0\n1 1 -2.5e0\n");
    }

    #[test]
    fn vstack_and_products() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0]], 2);
        let b = SparseMatrix::from_dense(&[vec![0.0, 3.0]], 2);
        let s = a.vstack(&b);
        assert_eq!(s.to_dense(), vec![vec![1.0, 2.0], vec![0.0, 3.0]]);
        assert_eq!(s.mul_vec(&[1.0, 1.0]), vec![3.0, 3.0]);
        assert_eq!(s.transpose_mul_vec(&[1.0, 1.0]), vec![1.0, 5.0]);
    }
}
