//! Left-looking sparse LU with partial pivoting (Gilbert–Peierls).
//!
//! Column `k` of `L` and `U` comes from a sparse triangular solve against the
//! columns already factored; the nonzero pattern of that solve is found by a
//! depth-first search over the graph of `L`, so work is proportional to the
//! flops actually performed. No fill-reducing ordering is applied: the
//! systems solved here are banded in their natural ordering.

use super::SparseMatrix;
use crate::error::{check_len, Error, Result};

/// Pivots smaller than this fraction of `‖A‖_∞` are treated as zero.
pub const PIVOT_THRESHOLD: f64 = 1e-14;

/// `P·A = L·U`, with `L` unit lower triangular.
///
/// Internally both factors are kept column-wise: `l_cols` holds `Lᵀ` and
/// `u_cols` holds `Uᵀ` as CSR matrices, so row `j` of each is column `j` of
/// the factor.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    /// `pinv[i]` is the position of original row `i` after pivoting.
    pinv: Vec<usize>,
    l_cols: SparseMatrix,
    u_cols: SparseMatrix,
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row permutation as `pinv`: original row `i` lands in row `pinv[i]` of `P·A`.
    pub fn permutation(&self) -> &[usize] {
        &self.pinv
    }

    pub fn lower(&self) -> SparseMatrix {
        self.l_cols.transpose()
    }

    pub fn upper(&self) -> SparseMatrix {
        self.u_cols.transpose()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("lu solve", self.n, b.len())?;
        let mut x = vec![0.0; self.n];
        for (i, &bi) in b.iter().enumerate() {
            x[self.pinv[i]] = bi;
        }
        // L x = P b, column oriented; the unit diagonal is the first entry.
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for (i, v) in self.l_cols.row(j).skip(1) {
                    x[i] -= v * xj;
                }
            }
        }
        // U x = y; the diagonal is the last entry of each column.
        for j in (0..self.n).rev() {
            let (s, e) = (
                self.u_cols.row_offsets()[j],
                self.u_cols.row_offsets()[j + 1],
            );
            let diag = self.u_cols.values()[e - 1];
            x[j] /= diag;
            let xj = x[j];
            if xj != 0.0 {
                for k in s..e - 1 {
                    x[self.u_cols.col_indices()[k]] -= self.u_cols.values()[k] * xj;
                }
            }
        }
        Ok(x)
    }

    /// Solves `Aᵀ x = b` using the same factors: `Aᵀ = Uᵀ Lᵀ P`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("lu solve_transpose", self.n, b.len())?;
        let mut z = b.to_vec();
        // Uᵀ z = b (lower triangular, row j of Uᵀ is column j of U).
        for j in 0..self.n {
            let (s, e) = (
                self.u_cols.row_offsets()[j],
                self.u_cols.row_offsets()[j + 1],
            );
            let mut acc = z[j];
            for k in s..e - 1 {
                acc -= self.u_cols.values()[k] * z[self.u_cols.col_indices()[k]];
            }
            z[j] = acc / self.u_cols.values()[e - 1];
        }
        // Lᵀ y = z (unit upper triangular).
        for j in (0..self.n).rev() {
            let mut acc = z[j];
            for (i, v) in self.l_cols.row(j).skip(1) {
                acc -= v * z[i];
            }
            z[j] = acc;
        }
        Ok((0..self.n).map(|i| z[self.pinv[i]]).collect())
    }
}

/// Factorizes a square matrix. Fails on a structurally or numerically zero
/// pivot (below [`PIVOT_THRESHOLD`]`·‖A‖_∞`).
pub fn factorize(a: &SparseMatrix) -> Result<LuFactors> {
    let n = a.rows();
    check_len("factorize (square)", n, a.cols())?;
    let norm = a.norm_inf();
    if n > 0 && norm == 0.0 {
        return Err(Error::Singular("zero matrix".into()));
    }
    let tol = PIVOT_THRESHOLD * norm;

    // Column access to A.
    let at = a.transpose();
    let (ap, ai, ax) = (at.row_offsets(), at.col_indices(), at.values());

    let mut lp = Vec::with_capacity(n + 1);
    let mut li: Vec<usize> = Vec::with_capacity(4 * a.nnz() + n);
    let mut lx: Vec<f64> = Vec::with_capacity(4 * a.nnz() + n);
    let mut up = Vec::with_capacity(n + 1);
    let mut ui: Vec<usize> = Vec::with_capacity(4 * a.nnz() + n);
    let mut ux: Vec<f64> = Vec::with_capacity(4 * a.nnz() + n);

    const UNSET: usize = usize::MAX;
    let mut pinv = vec![UNSET; n];
    let mut x = vec![0.0; n];
    let mut xi = vec![0usize; n];
    let mut stack = vec![0usize; n];
    let mut pstack = vec![0usize; n];
    let mut mark = vec![UNSET; n];

    for k in 0..n {
        lp.push(li.len());
        up.push(ui.len());

        // Reach: nodes of the triangular solve's nonzero pattern, topologically ordered in xi[top..].
        let mut top = n;
        for p in ap[k]..ap[k + 1] {
            let start = ai[p];
            if mark[start] == k {
                continue;
            }
            let mut head = 0usize;
            stack[0] = start;
            loop {
                let j = stack[head];
                let jnew = pinv[j];
                if mark[j] != k {
                    mark[j] = k;
                    pstack[head] = if jnew == UNSET { 0 } else { lp[jnew] };
                }
                let end = if jnew == UNSET { 0 } else { lp[jnew + 1] };
                let mut descended = false;
                let mut q = pstack[head];
                while q < end {
                    let i = li[q];
                    q += 1;
                    if mark[i] == k {
                        continue;
                    }
                    pstack[head] = q;
                    head += 1;
                    stack[head] = i;
                    descended = true;
                    break;
                }
                if !descended {
                    top -= 1;
                    xi[top] = j;
                    if head == 0 {
                        break;
                    }
                    head -= 1;
                }
            }
        }

        // Numeric triangular solve x = L \ A(:,k).
        for &j in &xi[top..n] {
            x[j] = 0.0;
        }
        for p in ap[k]..ap[k + 1] {
            x[ai[p]] = ax[p];
        }
        for px in top..n {
            let j = xi[px];
            let jnew = pinv[j];
            if jnew == UNSET {
                continue;
            }
            let xj = x[j];
            // Unit diagonal stored first.
            for q in lp[jnew] + 1..lp[jnew + 1] {
                x[li[q]] -= lx[q] * xj;
            }
        }

        // Partial pivoting over rows not yet pivotal.
        let mut ipiv = UNSET;
        let mut best = -1.0;
        for &i in &xi[top..n] {
            if pinv[i] == UNSET {
                let t = x[i].abs();
                if t > best {
                    best = t;
                    ipiv = i;
                }
            } else {
                ui.push(pinv[i]);
                ux.push(x[i]);
            }
        }
        if ipiv == UNSET || best <= tol {
            return Err(Error::Singular(format!(
                "pivot {best:e} in column {k} is below threshold {tol:e}"
            )));
        }
        let pivot = x[ipiv];
        ui.push(k);
        ux.push(pivot);
        pinv[ipiv] = k;
        li.push(ipiv);
        lx.push(1.0);
        for &i in &xi[top..n] {
            if pinv[i] == UNSET {
                li.push(i);
                lx.push(x[i] / pivot);
            }
            x[i] = 0.0;
        }
    }
    lp.push(li.len());
    up.push(ui.len());

    for r in &mut li {
        *r = pinv[*r];
    }

    Ok(LuFactors {
        n,
        pinv,
        l_cols: sorted_columns(n, &lp, &li, &lx),
        u_cols: sorted_columns(n, &up, &ui, &ux),
    })
}

fn sorted_columns(n: usize, ptr: &[usize], idx: &[usize], val: &[f64]) -> SparseMatrix {
    let mut col_indices = Vec::with_capacity(idx.len());
    let mut values = Vec::with_capacity(idx.len());
    let mut order = Vec::new();
    for j in 0..n {
        order.clear();
        order.extend(ptr[j]..ptr[j + 1]);
        order.sort_unstable_by_key(|&q| idx[q]);
        for &q in &order {
            col_indices.push(idx[q]);
            values.push(val[q]);
        }
    }
    SparseMatrix::new(n, n, ptr.to_vec(), col_indices, values)
        .expect("factor columns are well formed")
}
