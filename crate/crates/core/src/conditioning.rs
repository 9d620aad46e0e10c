//! Conditioning of the penalty formulation on the linear model problem
//! `min ‖u − u₀‖²` subject to `A u = θ y`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major dense matrix for the small studies in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows in dense matrix".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .take(self.rows)
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("dense matvec", self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|r| (0..self.cols).map(|c| self[(r, c)] * x[c]).sum())
            .collect())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| (0..r).all(|c| (self[(r, c)] - self[(c, r)]).abs() <= tol))
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `[[I, 0], [√λ A, −√λ y]]`, a `2n × (n+1)` matrix.
pub fn assemble_a_lambda(a: &DenseMatrix, y: &[f64], lambda: f64) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!(
            "A must be square, got {}x{}",
            n,
            a.cols()
        )));
    }
    crate::error::check_len("right-hand side y", n, y.len())?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "penalty weight must be positive, got {lambda}"
        )));
    }
    let s = lambda.sqrt();
    let mut m = DenseMatrix::zeros(2 * n, n + 1);
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in 0..n {
            m[(n + i, j)] = s * a[(i, j)];
        }
        m[(n + i, n)] = -s * y[i];
    }
    Ok(m)
}

/// Singular values in decreasing order, by one-sided Jacobi rotations.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    let work = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, cols) = (work.rows(), work.cols());
    // Column-major copy so rotations touch contiguous memory.
    let mut u: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| work[(r, c)]).collect())
        .collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = u[p].iter().map(|v| v * v).sum();
                let beta: f64 = u[q].iter().map(|v| v * v).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(a, b)| a * b).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = u.split_at_mut(q);
                for (a, b) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = u
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `σ_max / σ_min`.
pub fn condition_number(m: &DenseMatrix) -> Result<f64> {
    if m.rows() < m.cols() {
        return Err(Error::Singular(format!(
            "a {}x{} matrix cannot have full column rank",
            m.rows(),
            m.cols()
        )));
    }
    let sv = singular_values(m);
    let (max, min) = (sv[0], *sv.last().unwrap());
    if !(min > 1e-14 * max) {
        return Err(Error::Singular(format!(
            "rank deficient: σ_min = {min:e}, σ_max = {max:e}"
        )));
    }
    Ok(max / min)
}

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix,
/// by cyclic Jacobi rotations. Column `k` of the returned matrix is the
/// eigenvector of eigenvalue `k`.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = a.rows();
    if !a.is_symmetric(1e-12 * a.data.iter().fold(1.0f64, |m, v| m.max(v.abs()))) {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)] * m[(r, c)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, new)] = v[(r, old)];
        }
    }
    Ok((values, vecs))
}

/// Lower Cholesky factor, or `None` if the matrix is not positive definite.
pub fn cholesky(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if !(d > 0.0) {
            return None;
        }
        l[(j, j)] = d.sqrt();
        for i in j + 1..n {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / l[(j, j)];
        }
    }
    Some(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningStudy {
    pub a: DenseMatrix,
    pub y: Vec<f64>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremRow {
    pub lambda: f64,
    pub kappa_a_lambda: f64,
    pub kappa_a_squared: f64,
    pub ratio: f64,
}

impl ConditioningStudy {
    pub fn new(a: DenseMatrix, y: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() == 0 || a.rows() > 64 {
            return Err(Error::Shape(format!(
                "study matrix must be square with 1..=64 rows, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        crate::error::check_len("right-hand side y", a.rows(), y.len())?;
        if lambdas.iter().any(|l| !(*l > 0.0)) || lambdas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "penalty weights must be positive and increasing".into(),
            ));
        }
        Ok(Self { a, y, lambdas })
    }

    /// `n` equally spaced diagonal entries `1..=n` with `y = 1`.
    pub fn diagonal(n: usize, lambdas: Vec<f64>) -> Result<Self> {
        let d: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        Self::new(DenseMatrix::diag(&d), vec![1.0; n], lambdas)
    }
}

/// `κ(A_λ)` against `κ(A)²` for every λ in the study.
pub fn verify_theorem(study: &ConditioningStudy) -> Result<Vec<TheoremRow>> {
    let ka = condition_number(&study.a)?;
    study
        .lambdas
        .iter()
        .map(|&lambda| {
            let k = condition_number(&assemble_a_lambda(&study.a, &study.y, lambda)?)?;
            Ok(TheoremRow {
                lambda,
                kappa_a_lambda: k,
                kappa_a_squared: ka * ka,
                ratio: k / (ka * ka),
            })
        })
        .collect()
}

pub fn write_theorem_csv<W: Write>(rows: &[TheoremRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "kappa_A_lambda", "kappa_A_squared", "ratio"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(
            [r.lambda, r.kappa_a_lambda, r.kappa_a_squared, r.ratio].map(|v| v.to_string()),
        )
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// The arrowhead matrix `[[(1/λ)I + Σ², α], [αᵀ, s]]` with the data it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrowhead {
    /// Shifted poles `σᵢ² + 1/λ`, ascending.
    pub poles: Vec<f64>,
    /// `α = −Σ Uᵀ y`, aligned with `poles`.
    pub alpha: Vec<f64>,
    pub s: f64,
}

impl Arrowhead {
    /// For symmetric positive definite `A`, whose SVD is its eigendecomposition.
    pub fn new(a: &DenseMatrix, y: &[f64], lambda: f64) -> Result<Self> {
        crate::error::check_len("right-hand side y", a.rows(), y.len())?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "penalty weight must be positive, got {lambda}"
            )));
        }
        if !a.is_symmetric(1e-12) || cholesky(a).is_none() {
            return Err(Error::InvalidInput(
                "secular check needs a symmetric positive definite A".into(),
            ));
        }
        let (sigma, q) = symmetric_eigen(a)?;
        let n = sigma.len();
        let mut alpha = Vec::with_capacity(n);
        for (k, sk) in sigma.iter().enumerate() {
            let uy: f64 = (0..n).map(|r| q[(r, k)] * y[r]).sum();
            alpha.push(-sk * uy);
        }
        Ok(Self {
            poles: sigma.iter().map(|s| s * s + 1.0 / lambda).collect(),
            alpha,
            s: y.iter().map(|v| v * v).sum(),
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.poles.len();
        let mut b = DenseMatrix::diag(
            &self
                .poles
                .iter()
                .copied()
                .chain([self.s])
                .collect::<Vec<_>>(),
        );
        for i in 0..n {
            b[(i, n)] = self.alpha[i];
            b[(n, i)] = self.alpha[i];
        }
        b
    }

    /// `s − x − Σ αᵢ² / (dᵢ − x)`.
    pub fn secular(&self, x: f64) -> f64 {
        self.s
            - x
            - self
                .poles
                .iter()
                .zip(&self.alpha)
                .map(|(d, a)| a * a / (d - x))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecularReport {
    /// All `n+1` eigenvalues of B, ascending.
    pub eigenvalues: Vec<f64>,
    /// Final bisection intervals `(a, b)` with `f(a) > 0 > f(b)`, one per secular root.
    pub brackets: Vec<(f64, f64)>,
    /// Eigenvalues taken directly from poles with vanishing weight.
    pub deflated: Vec<f64>,
    /// True when some `αᵢ` vanish or poles repeat.
    pub degenerate: bool,
    pub positive_definite: bool,
    /// Each open pole interval holds exactly one secular root.
    pub interlaced: bool,
}

/// Locates the eigenvalues of the arrowhead matrix through the sign changes
/// of its secular function.
pub fn secular_check(a: &DenseMatrix, y: &[f64], lambda: f64) -> Result<SecularReport> {
    let b = Arrowhead::new(a, y, lambda)?;
    let scale = b
        .poles
        .iter()
        .fold(b.s.abs(), |m, d| m.max(d.abs()))
        .max(f64::MIN_POSITIVE);
    let tiny = 1e-14 * scale;
    // Merge equal poles and drop vanishing weights.
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut deflated = Vec::new();
    for (d, a) in b.poles.iter().zip(&b.alpha) {
        match groups.last_mut() {
            Some((gd, ga)) if (*gd - d).abs() <= tiny => {
                *ga += a * a;
                deflated.push(*d);
            }
            _ => groups.push((*d, a * a)),
        }
    }
    let asq_total: f64 = b.alpha.iter().map(|a| a * a).sum();
    let weight_tol = 1e-28 * scale * scale;
    let mut active = Vec::new();
    for (d, w) in groups {
        if w <= weight_tol {
            deflated.push(d);
        } else {
            active.push((d, w));
        }
    }
    let degenerate = !deflated.is_empty();
    let f = |x: f64| b.s - x - active.iter().map(|(d, w)| w / (d - x)).sum::<f64>();
    let lo_end = b.s.min(active.first().map_or(b.s, |p| p.0)).min(0.0) - 1.0 - asq_total;
    let hi_end = b.s.max(active.last().map_or(b.s, |p| p.0)) + 1.0 + asq_total;
    let mut edges = vec![lo_end];
    edges.extend(active.iter().map(|p| p.0));
    edges.push(hi_end);
    let mut brackets = Vec::with_capacity(edges.len() - 1);
    let mut roots = Vec::with_capacity(edges.len() - 1);
    let mut interlaced = true;
    for w in edges.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        // Step inside the open interval until the signs are as expected.
        let mut eps = 1e-300f64.max((hi - lo) * 1e-16);
        let mut a0 = lo;
        let mut b0 = hi;
        for _ in 0..200 {
            a0 = if lo == lo_end { lo } else { lo + eps };
            b0 = if hi == hi_end { hi } else { hi - eps };
            if f(a0) > 0.0 && f(b0) < 0.0 {
                break;
            }
            eps *= 4.0;
            if a0 >= b0 {
                break;
            }
        }
        if !(f(a0) > 0.0 && f(b0) < 0.0) {
            interlaced = false;
            continue;
        }
        lo = a0;
        hi = b0;
        for _ in 0..200 {
            if hi - lo <= 1e-13 * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        brackets.push((lo, hi));
        roots.push(0.5 * (lo + hi));
    }
    let mut eigenvalues: Vec<f64> = roots.iter().chain(&deflated).copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let positive_definite =
        eigenvalues.first().is_some_and(|&e| e > 0.0) && cholesky(&b.to_dense()).is_some();
    Ok(SecularReport {
        eigenvalues,
        brackets,
        deflated,
        degenerate,
        positive_definite,
        interlaced: interlaced && roots.len() == active.len() + 1,
    })
}
