//! Minimal CSR sparse matrix used for stencil operators and assembled systems.
//!
//! Deliberately small: the only consumers are the stencil machinery and the
//! bottom-spectrum solver, which hands the normal matrix to `faer` for the
//! sparse Cholesky factorization.

use crate::dual::Real;

#[derive(Clone, Debug)]
pub struct SparseMat {
    pub nrows: usize,
    pub ncols: usize,
    /// Row offsets, length `nrows + 1`.
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Triplet accumulator; duplicate entries are summed on `to_csr`.
#[derive(Clone, Debug, Default)]
pub struct Coo {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Coo {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Coo { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, val));
    }

    pub fn to_csr(&self) -> SparseMat {
        let mut counts = vec![0usize; self.nrows + 1];
        for &(r, _, _) in &self.entries {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut indices = vec![0usize; self.entries.len()];
        let mut values = vec![0.0; self.entries.len()];
        let mut cursor = counts.clone();
        for &(r, c, v) in &self.entries {
            let k = cursor[r];
            indices[k] = c;
            values[k] = v;
            cursor[r] += 1;
        }
        let mut m = SparseMat {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: counts,
            indices,
            values,
        };
        m.sort_and_merge();
        m
    }
}

impl SparseMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMat {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    fn sort_and_merge(&mut self) {
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.nrows {
            row.clear();
            for k in self.indptr[r]..self.indptr[r + 1] {
                row.push((self.indices[k], self.values[k]));
            }
            row.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let col = row[i].0;
                let mut v = row[i].1;
                let mut j = i + 1;
                while j < row.len() && row[j].0 == col {
                    v += row[j].1;
                    j += 1;
                }
                if v != 0.0 {
                    indices.push(col);
                    values.push(v);
                }
                i = j;
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    /// `y = A x` for any `Real` scalar (used to differentiate through stencils).
    pub fn apply<T: Real>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![T::zero(); self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = T::zero();
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                acc += x[c].scale(v);
            }
            y[r] = acc;
        }
        y
    }

    /// Apply a single row to a callback-provided vector.
    pub fn apply_row<T: Real>(&self, r: usize, x: impl Fn(usize) -> T) -> T {
        let (cols, vals) = self.row(r);
        let mut acc = T::zero();
        for (&c, &v) in cols.iter().zip(vals.iter()) {
            acc += x(c).scale(v);
        }
        acc
    }

    /// `y = A x` for grids of 3-vectors.
    pub fn apply_vec3<T: Real>(&self, x: &[[T; 3]]) -> Vec<[T; 3]> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![[T::zero(); 3]; self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = [T::zero(); 3];
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                acc[0] += x[c][0].scale(v);
                acc[1] += x[c][1].scale(v);
                acc[2] += x[c][2].scale(v);
            }
            y[r] = acc;
        }
        y
    }

    pub fn apply_f64(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
    }

    pub fn apply_transpose_f64(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let xr = x[r];
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                y[c] += v * xr;
            }
        }
    }

    pub fn transpose(&self) -> SparseMat {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut cursor = counts.clone();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                let k = cursor[c];
                indices[k] = r;
                values[k] = v;
                cursor[c] += 1;
            }
        }
        SparseMat {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    /// CSR matrix product `self * other`.
    pub fn matmul(&self, other: &SparseMat) -> SparseMat {
        assert_eq!(self.ncols, other.nrows);
        let mut coo = Coo::new(self.nrows, other.ncols);
        let mut acc: Vec<f64> = vec![0.0; other.ncols];
        let mut seen: Vec<bool> = vec![false; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                let (oc, ov) = other.row(c);
                for (&c2, &v2) in oc.iter().zip(ov.iter()) {
                    if !seen[c2] {
                        seen[c2] = true;
                        touched.push(c2);
                    }
                    acc[c2] += v * v2;
                }
            }
            for &c2 in &touched {
                if acc[c2] != 0.0 {
                    coo.push(r, c2, acc[c2]);
                }
                acc[c2] = 0.0;
                seen[c2] = false;
            }
            touched.clear();
        }
        coo.to_csr()
    }

    pub fn add(&self, other: &SparseMat) -> SparseMat {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut coo = Coo::new(self.nrows, self.ncols);
        for m in [self, other] {
            for r in 0..m.nrows {
                let (cols, vals) = m.row(r);
                for (&c, &v) in cols.iter().zip(vals.iter()) {
                    coo.push(r, c, v);
                }
            }
        }
        coo.to_csr()
    }

    pub fn scale_rows(&mut self, w: &[f64]) {
        debug_assert_eq!(w.len(), self.nrows);
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                self.values[k] *= w[r];
            }
        }
    }

    pub fn scale_all(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Max over rows of the 1-norm of the row.
    pub fn max_row_norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        for r in 0..self.nrows {
            let (_, vals) = self.row(r);
            let s: f64 = vals.iter().map(|v| v.abs()).sum();
            best = best.max(s);
        }
        best
    }

    /// Stack blocks vertically; column counts must agree.
    pub fn vstack(blocks: &[&SparseMat]) -> SparseMat {
        let ncols = blocks[0].ncols;
        let nrows: usize = blocks.iter().map(|b| b.nrows).sum();
        let nnz: usize = blocks.iter().map(|b| b.nnz()).sum();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for b in blocks {
            assert_eq!(b.ncols, ncols);
            for r in 0..b.nrows {
                let (cols, vals) = b.row(r);
                indices.extend_from_slice(cols);
                values.extend_from_slice(vals);
                indptr.push(indices.len());
            }
        }
        SparseMat { nrows, ncols, indptr, indices, values }
    }

    /// Place this block into a wider matrix at column offset `at`, width `ncols`.
    pub fn pad_cols(&self, at: usize, ncols: usize) -> SparseMat {
        assert!(at + self.ncols <= ncols);
        SparseMat {
            nrows: self.nrows,
            ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.iter().map(|&c| c + at).collect(),
            values: self.values.clone(),
        }
    }

    pub fn norm_1(&self) -> f64 {
        let mut col = vec![0.0_f64; self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                col[c] += v.abs();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        let mut best: f64 = 0.0;
        for r in 0..self.nrows {
            let (_, vals) = self.row(r);
            best = best.max(vals.iter().map(|v| v.abs()).sum());
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseMat {
        let mut coo = Coo::new(2, 3);
        coo.push(0, 0, 1.0);
        coo.push(0, 2, 2.0);
        coo.push(1, 1, -1.0);
        coo.push(0, 2, 0.5); // duplicate, should merge
        coo.to_csr()
    }

    #[test]
    fn coo_merges_duplicates() {
        let m = small();
        assert_eq!(m.nnz(), 3);
        let mut y = vec![0.0; 2];
        m.apply_f64(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.5, -1.0]);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = small();
        let mut coo = Coo::new(3, 2);
        coo.push(0, 0, 2.0);
        coo.push(1, 1, 3.0);
        coo.push(2, 0, 1.0);
        coo.push(2, 1, -1.0);
        let b = coo.to_csr();
        let p = a.matmul(&b);
        // dense check
        let ad = [[1.0, 0.0, 2.5], [0.0, -1.0, 0.0]];
        let bd = [[2.0, 0.0], [0.0, 3.0], [1.0, -1.0]];
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| ad[i][k] * bd[k][j]).sum();
                let got = {
                    let (cols, vals) = p.row(i);
                    cols.iter().zip(vals).find(|(&c, _)| c == j).map(|(_, &v)| v).unwrap_or(0.0)
                };
                assert!((want - got).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn transpose_apply() {
        let m = small();
        let mut y = vec![0.0; 3];
        m.apply_transpose_f64(&[1.0, 2.0], &mut y);
        assert_eq!(y, vec![1.0, -2.0, 2.5]);
    }
}
