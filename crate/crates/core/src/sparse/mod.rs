//! Compressed-sparse-row matrices and a direct LU solver.
//!
//! Everything downstream (Newton iterations, adjoint solves, Jacobian
//! propagation) goes through [`SparseMatrix`]. Structural operations are
//! exact: no entry is dropped, even when it evaluates to zero, so that
//! sparsity patterns stay predictable.

mod lu;

pub use lu::{factorize, LuFactors};

use crate::error::{check_len, Error, Result};

/// A CSR matrix. Column indices are strictly increasing inside each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, validating the structural invariants.
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_len("row_offsets", rows + 1, row_offsets.len())?;
        check_len("values", col_indices.len(), values.len())?;
        if row_offsets[0] != 0 || row_offsets[rows] != values.len() {
            return Err(Error::Shape(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        for r in 0..rows {
            let (s, e) = (row_offsets[r], row_offsets[r + 1]);
            if e < s {
                return Err(Error::Shape(format!("row_offsets decreases at row {r}")));
            }
            for k in s..e {
                if col_indices[k] >= cols {
                    return Err(Error::Shape(format!(
                        "column index {} out of range in row {r}",
                        col_indices[k]
                    )));
                }
                if k > s && col_indices[k] <= col_indices[k - 1] {
                    return Err(Error::Shape(format!(
                        "column indices not strictly increasing in row {r}"
                    )));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!(
                    "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        let mut counts = vec![0usize; rows + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for r in 0..rows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut cols_tmp = vec![0usize; triplets.len()];
        let mut vals_tmp = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols_tmp[next[r]] = c;
            vals_tmp[next[r]] = v;
            next[r] += 1;
        }

        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..rows {
            order.clear();
            order.extend(counts[r]..counts[r + 1]);
            order.sort_by_key(|&k| cols_tmp[k]);
            for &k in &order {
                let c = cols_tmp[k];
                if col_indices.len() > row_offsets[r] && *col_indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += vals_tmp[k];
                } else {
                    col_indices.push(c);
                    values.push(vals_tmp[k]);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Keeps every entry of a dense row-major matrix whose value is nonzero.
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let rows = dense.len();
        let cols = dense.first().map_or(0, Vec::len);
        let mut triplets = Vec::new();
        for (r, row) in dense.iter().enumerate() {
            check_len("from_dense row", cols, row.len())?;
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(rows, cols, &triplets)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        out
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

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_offsets[r + 1] - self.row_offsets[r]
    }

    /// Iterates the stored `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("spmv", self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    /// `y = Aᵀ x` without forming the transpose.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("spmv_transpose", self.rows, x.len())?;
        let mut y = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                col_indices[next[c]] = r;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    /// `a·A + b·B` over the union of both patterns.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        check_len("add (rows)", self.rows, other.rows)?;
        check_len("add (cols)", self.cols, other.cols)?;
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_offsets.push(0);
        for r in 0..self.rows {
            let (mut i, ie) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let (mut j, je) = (other.row_offsets[r], other.row_offsets[r + 1]);
            while i < ie || j < je {
                let ci = if i < ie {
                    self.col_indices[i]
                } else {
                    usize::MAX
                };
                let cj = if j < je {
                    other.col_indices[j]
                } else {
                    usize::MAX
                };
                if ci < cj {
                    col_indices.push(ci);
                    values.push(a * self.values[i]);
                    i += 1;
                } else if cj < ci {
                    col_indices.push(cj);
                    values.push(b * other.values[j]);
                    j += 1;
                } else {
                    col_indices.push(ci);
                    values.push(a * self.values[i] + b * other.values[j]);
                    i += 1;
                    j += 1;
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.linear_combination(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.linear_combination(1.0, other, -1.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(d)·A`: scales row `i` by `d[i]`.
    pub fn diag_left_mul(&self, d: &[f64]) -> Result<Self> {
        check_len("diag_left_mul", self.rows, d.len())?;
        let mut out = self.clone();
        for (r, &dr) in d.iter().enumerate() {
            for v in &mut out.values[self.row_offsets[r]..self.row_offsets[r + 1]] {
                *v *= dr;
            }
        }
        Ok(out)
    }

    /// `[A B]`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        check_len("hstack", self.rows, other.rows)?;
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_offsets.push(0);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                col_indices.push(c);
                values.push(v);
            }
            for (c, v) in other.row(r) {
                col_indices.push(self.cols + c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols + other.cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// `[A; B]`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        check_len("vstack", self.cols, other.cols)?;
        let mut out = self.clone();
        let base = self.nnz();
        out.col_indices.extend_from_slice(&other.col_indices);
        out.values.extend_from_slice(&other.values);
        out.row_offsets
            .extend(other.row_offsets[1..].iter().map(|o| o + base));
        out.rows += other.rows;
        Ok(out)
    }

    /// Sparse product `A·B` (row-wise Gustavson). The result pattern is the
    /// full symbolic product pattern, including numerically cancelled entries.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_len("matmul", self.cols, other.rows)?;
        let mut acc = vec![0.0; other.cols];
        let mut mark = vec![usize::MAX; other.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.rows {
            touched.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_indices.push(c);
                values.push(acc[c]);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &r in rows {
            if r >= self.rows {
                return Err(Error::Shape(format!("row {r} out of range")));
            }
            let range = self.row_offsets[r]..self.row_offsets[r + 1];
            col_indices.extend_from_slice(&self.col_indices[range.clone()]);
            values.extend_from_slice(&self.values[range]);
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols: self.cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| {
                let mut it = self.row(r);
                matches!(it.next(), Some((c, v)) if c == r && v == 1.0) && it.next().is_none()
            })
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.rows).map(|r| self.row_nnz(r)).max().unwrap_or(0)
    }
}

pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    a.spmv(x)
}

pub fn transpose(a: &SparseMatrix) -> SparseMatrix {
    a.transpose()
}

pub fn add(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    a.add(b)
}

pub fn scale(a: &SparseMatrix, s: f64) -> SparseMatrix {
    a.scale(s)
}

pub fn diag_left_mul(d: &[f64], a: &SparseMatrix) -> Result<SparseMatrix> {
    a.diag_left_mul(d)
}

pub fn hstack(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    a.hstack(b)
}

/// Solves `A x = b` with factors from [`factorize`].
pub fn solve(f: &LuFactors, b: &[f64]) -> Result<Vec<f64>> {
    f.solve(b)
}

/// Solves `Aᵀ x = b` with factors of `A`.
pub fn solve_transpose(f: &LuFactors, b: &[f64]) -> Result<Vec<f64>> {
    f.solve_transpose(b)
}

/// The 1D Dirichlet Laplacian `tridiag(1, -2, 1) / h²` on `n` interior nodes.
pub fn laplacian_1d(n: usize, h: f64) -> SparseMatrix {
    let mut t = Vec::with_capacity(3 * n);
    let s = 1.0 / (h * h);
    for i in 0..n {
        if i > 0 {
            t.push((i, i - 1, s));
        }
        t.push((i, i, -2.0 * s));
        if i + 1 < n {
            t.push((i, i + 1, s));
        }
    }
    SparseMatrix::from_triplets(n, n, &t).expect("valid stencil")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (n, k, m) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; m]; n];
        for i in 0..n {
            for l in 0..k {
                for j in 0..m {
                    out[i][j] += a[i][l] * b[l][j];
                }
            }
        }
        out
    }

    fn random_sparse(rows: usize, cols: usize, density: f64, seed: u64) -> SparseMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.gen::<f64>() < density {
                    t.push((r, c, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(rows, cols, &t).unwrap()
    }

    #[test]
    fn spmv_examples() {
        let i3 = SparseMatrix::identity(3);
        assert_eq!(i3.spmv(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let z = SparseMatrix::zeros(3, 4);
        assert_eq!(z.spmv(&[1.0, -2.0, 3.0, 9.0]).unwrap(), vec![0.0; 3]);

        let h = 0.25;
        let lap = laplacian_1d(3, h);
        let x: Vec<f64> = (1..=3)
            .map(|i| i as f64 * h)
            .map(|x| x * (1.0 - x))
            .collect();
        let y = lap.spmv(&x).unwrap();
        for v in y {
            assert!((v + 2.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let a = SparseMatrix::identity(3);
        assert!(matches!(
            a.spmv(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicates_are_summed() {
        let a =
            SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.5), (1, 0, 1.0)]).unwrap();
        assert_eq!(a.get(0, 1), 3.5);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn invalid_csr_is_rejected() {
        assert!(SparseMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 1], vec![0], vec![1.0]).is_ok());
    }

    #[test]
    fn structural_identities() {
        let a = random_sparse(6, 4, 0.4, 7);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.diag_left_mul(&[1.0; 6]).unwrap(), a);
        let d = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let scaled = a.diag_left_mul(&d).unwrap().to_dense();
        for (r, row) in a.to_dense().iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(scaled[r][c], v * d[r]);
            }
        }
    }

    #[test]
    fn hstack_matches_dense_concatenation() {
        for seed in 0..10 {
            let a = random_sparse(5, 5, 0.5, seed);
            let b = random_sparse(5, 1, 0.5, seed + 100);
            let h = a.hstack(&b).unwrap().to_dense();
            let (ad, bd) = (a.to_dense(), b.to_dense());
            for r in 0..5 {
                let mut expect = ad[r].clone();
                expect.extend_from_slice(&bd[r]);
                assert_eq!(h[r], expect);
            }
        }
    }

    #[test]
    fn select_rows_and_vstack() {
        let a = random_sparse(5, 3, 0.6, 3);
        let top = a.select_rows(&[0, 1]).unwrap();
        let bottom = a.select_rows(&[2, 3, 4]).unwrap();
        assert_eq!(top.vstack(&bottom).unwrap(), a);
    }

    proptest! {
        #[test]
        fn structural_ops_agree_with_dense(n in 1usize..20, m in 1usize..20, seed in 0u64..1000, s in -3.0f64..3.0) {
            let a = random_sparse(n, m, 0.3, seed);
            let b = random_sparse(n, m, 0.3, seed ^ 0xabc);
            let c = random_sparse(m, n, 0.3, seed ^ 0x123);
            let (ad, bd, cd) = (a.to_dense(), b.to_dense(), c.to_dense());

            let sum = a.add(&b).unwrap().to_dense();
            let sc = a.scale(s).to_dense();
            let t = a.transpose().to_dense();
            let prod = a.matmul(&c).unwrap().to_dense();
            let prod_dense = dense_mul(&ad, &cd);
            for i in 0..n {
                for j in 0..m {
                    prop_assert!((sum[i][j] - (ad[i][j] + bd[i][j])).abs() < 1e-14);
                    prop_assert_eq!(sc[i][j], s * ad[i][j]);
                    prop_assert_eq!(t[j][i], ad[i][j]);
                }
                for j in 0..n {
                    prop_assert!((prod[i][j] - prod_dense[i][j]).abs() < 1e-12);
                }
            }
            let x: Vec<f64> = (0..m).map(|k| (k as f64 * 0.37).sin()).collect();
            let y = a.spmv(&x).unwrap();
            for i in 0..n {
                let e: f64 = (0..m).map(|k| ad[i][k] * x[k]).sum();
                prop_assert!((y[i] - e).abs() < 1e-12);
            }
            let yt = a.spmv_transpose(&y).unwrap();
            let yt2 = a.transpose().spmv(&y).unwrap();
            for k in 0..m {
                prop_assert!((yt[k] - yt2[k]).abs() < 1e-12);
            }
        }
    }
}
