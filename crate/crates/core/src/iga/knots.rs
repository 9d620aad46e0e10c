use crate::error::{Error, Result};

/// An open knot vector on `[0, 1]` with its degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::InvalidInput(format!(
                "{} knots are too few for degree {p}",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidInput("knots must be nondecreasing".into()));
        }
        let n = knots.len();
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[n - p - 1..].iter().any(|&k| k != 1.0) {
            return Err(Error::InvalidInput(format!(
                "knot vector must be open on [0, 1] with end multiplicity {}",
                p + 1
            )));
        }
        // Interior multiplicity above p would disconnect the basis.
        let mut run = 1;
        for w in knots[p..n - p].windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run > p && w[0] != 0.0 && w[0] != 1.0 {
                return Err(Error::InvalidInput(
                    "interior knot multiplicity exceeds the degree".into(),
                ));
            }
        }
        Ok(Self { knots, degree })
    }

    /// `p+1` zeros, `n_elems − 1` uniform interior knots, `p+1` ones.
    pub fn uniform(degree: usize, n_elems: usize) -> Result<Self> {
        let mut k = vec![0.0; degree + 1];
        k.extend((1..n_elems).map(|i| i as f64 / n_elems as f64));
        k.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(k, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knot values in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.knots.clone();
        b.dedup();
        b
    }

    /// Index `k` with `ξ_k ≤ ξ < ξ_{k+1}`, using the last nonempty span at `ξ = 1`.
    pub fn find_span(&self, xi: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        if xi >= self.knots[n] {
            return n - 1;
        }
        if xi <= self.knots[p] {
            return p;
        }
        // Largest k in [p, n−1] with knots[k] ≤ ξ.
        let k = self.knots[..=n].partition_point(|&t| t <= xi) - 1;
        k.clamp(p, n - 1)
    }

    fn check_param(xi: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::InvalidInput(format!(
                "parameter {xi} lies outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Derivative `order` of `N_{i,deg}` at ξ, given the span of ξ.
    fn eval_rec(&self, i: usize, deg: usize, xi: f64, order: usize, span: usize) -> f64 {
        let t = &self.knots;
        if deg == 0 {
            return if order == 0 && i == span { 1.0 } else { 0.0 };
        }
        let d1 = t[i + deg] - t[i];
        let d2 = t[i + deg + 1] - t[i + 1];
        if order == 0 {
            let a = if d1 > 0.0 {
                (xi - t[i]) / d1 * self.eval_rec(i, deg - 1, xi, 0, span)
            } else {
                0.0
            };
            let b = if d2 > 0.0 {
                (t[i + deg + 1] - xi) / d2 * self.eval_rec(i + 1, deg - 1, xi, 0, span)
            } else {
                0.0
            };
            a + b
        } else {
            let a = if d1 > 0.0 {
                self.eval_rec(i, deg - 1, xi, order - 1, span) / d1
            } else {
                0.0
            };
            let b = if d2 > 0.0 {
                self.eval_rec(i + 1, deg - 1, xi, order - 1, span) / d2
            } else {
                0.0
            };
            deg as f64 * (a - b)
        }
    }

    /// `N_{i,p}^{(order)}(ξ)` for `order ≤ 2`.
    pub fn basis(&self, i: usize, xi: f64, order: usize) -> Result<f64> {
        if i >= self.n_basis() {
            return Err(Error::InvalidInput(format!(
                "basis index {i} out of range {}",
                self.n_basis()
            )));
        }
        if order > 2 {
            return Err(Error::InvalidInput(format!(
                "derivative order {order} is not supported"
            )));
        }
        Self::check_param(xi)?;
        Ok(self.eval_rec(i, self.degree, xi, order, self.find_span(xi)))
    }

    /// The `p+1` functions that can be nonzero at ξ: returns the first index
    /// and `[value, first, second]` derivative rows.
    pub fn nonzero_basis(&self, xi: f64) -> Result<(usize, [Vec<f64>; 3])> {
        Self::check_param(xi)?;
        let p = self.degree;
        let span = self.find_span(xi);
        let first = span - p;
        let rows = [0, 1, 2].map(|k| {
            (first..=span)
                .map(|i| self.eval_rec(i, p, xi, k, span))
                .collect::<Vec<f64>>()
        });
        Ok((first, rows))
    }

    /// Averages of `p` consecutive knots.
    pub fn greville(&self) -> Result<Vec<f64>> {
        let p = self.degree;
        if p == 0 {
            return Err(Error::InvalidInput(
                "Greville abscissae need degree >= 1".into(),
            ));
        }
        Ok((0..self.n_basis())
            .map(|i| {
                let g = self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64;
                // Snap the exact ends, which summation can miss by rounding.
                g.clamp(0.0, 1.0)
            })
            .collect())
    }

    /// Midpoints of every nonempty knot interval.
    pub fn interval_midpoints(&self) -> Vec<f64> {
        self.breakpoints()
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    /// Boehm insertion of one knot into a curve with homogeneous control
    /// points `(w x, w y, w)`.
    pub fn insert_knot(&self, xi: f64, points: &[[f64; 3]]) -> Result<(KnotVector, Vec<[f64; 3]>)> {
        if points.len() != self.n_basis() {
            return Err(Error::DimensionMismatch {
                context: "knot insertion control points",
                expected: self.n_basis(),
                got: points.len(),
            });
        }
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "can only insert interior knots, got {xi}"
            )));
        }
        let p = self.degree;
        let k = self.find_span(xi);
        let t = &self.knots;
        let mut out = Vec::with_capacity(points.len() + 1);
        for i in 0..=points.len() {
            let q = if i + p <= k {
                points[i]
            } else if i > k {
                points[i - 1]
            } else {
                let a = (xi - t[i]) / (t[i + p] - t[i]);
                let (pi, pm) = (points[i], points[i - 1]);
                [0, 1, 2].map(|c| a * pi[c] + (1.0 - a) * pm[c])
            };
            out.push(q);
        }
        let mut knots = t.clone();
        knots.insert(k + 1, xi);
        Ok((KnotVector::new(knots, p)?, out))
    }

    /// Raises the degree of a single-segment (Bézier) curve by one.
    pub fn elevate_bezier(&self, points: &[[f64; 3]]) -> Result<(KnotVector, Vec<[f64; 3]>)> {
        let p = self.degree;
        if self.knots.len() != 2 * (p + 1) {
            return Err(Error::InvalidInput(
                "degree elevation is only supported before refinement (no interior knots)".into(),
            ));
        }
        if points.len() != p + 1 {
            return Err(Error::DimensionMismatch {
                context: "degree elevation control points",
                expected: p + 1,
                got: points.len(),
            });
        }
        let mut out = Vec::with_capacity(p + 2);
        for i in 0..=p + 1 {
            let a = i as f64 / (p + 1) as f64;
            let q = if i == 0 {
                points[0]
            } else if i == p + 1 {
                points[p]
            } else {
                [0, 1, 2].map(|c| a * points[i - 1][c] + (1.0 - a) * points[i][c])
            };
            out.push(q);
        }
        let mut knots = vec![0.0; p + 2];
        knots.extend(std::iter::repeat_n(1.0, p + 2));
        Ok((KnotVector::new(knots, p + 1)?, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bernstein2() -> KnotVector {
        KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap()
    }

    fn cubic_with_knots() -> KnotVector {
        KnotVector::new(
            vec![0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 0.5, 0.8, 1.0, 1.0, 1.0, 1.0],
            3,
        )
        .unwrap()
    }

    #[test]
    fn bernstein_values() {
        let kv = bernstein2();
        let want = [0.49, 0.42, 0.09];
        for i in 0..3 {
            assert!((kv.basis(i, 0.3, 0).unwrap() - want[i]).abs() < 1e-15);
        }
        let d = [-2.0 * 0.7, 2.0 - 4.0 * 0.3, 2.0 * 0.3];
        for i in 0..3 {
            assert!((kv.basis(i, 0.3, 1).unwrap() - d[i]).abs() < 1e-14);
        }
        assert!((kv.basis(1, 0.3, 2).unwrap() + 4.0).abs() < 1e-14);
        assert!(kv.basis(3, 0.3, 0).is_err());
        assert!(kv.basis(0, 1.5, 0).is_err());
    }

    #[test]
    fn endpoint_is_left_closed() {
        let kv = cubic_with_knots();
        let n = kv.n_basis();
        assert_eq!(kv.basis(n - 1, 1.0, 0).unwrap(), 1.0);
        assert_eq!(kv.basis(0, 0.0, 0).unwrap(), 1.0);
        // Right-continuous at an interior knot.
        let at = kv.basis(3, 0.25, 0).unwrap();
        let right = kv.basis(3, 0.25 + 1e-12, 0).unwrap();
        assert!((at - right).abs() < 1e-9);
    }

    #[test]
    fn greville_examples() {
        assert_eq!(bernstein2().greville().unwrap(), vec![0.0, 0.5, 1.0]);
        let lin = KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(lin.greville().unwrap(), vec![0.0, 1.0]);
        let zero = KnotVector::new(vec![0.0, 1.0], 0).unwrap();
        assert!(zero.greville().is_err());
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(KnotVector::new(vec![0.0, 0.0, 1.0], 1).is_err());
        assert!(KnotVector::new(vec![0.0, 0.0, 0.6, 0.5, 1.0, 1.0], 1).is_err());
        assert!(KnotVector::new(vec![0.0, 0.1, 1.0, 1.0], 1).is_err());
    }

    #[test]
    fn derivatives_match_fd() {
        let kv = cubic_with_knots();
        let h = 1e-6;
        for &xi in &[0.1, 0.33, 0.6, 0.9] {
            for i in 0..kv.n_basis() {
                let d1 = kv.basis(i, xi, 1).unwrap();
                let fd1 =
                    (kv.basis(i, xi + h, 0).unwrap() - kv.basis(i, xi - h, 0).unwrap()) / (2.0 * h);
                assert!((d1 - fd1).abs() < 1e-7);
                let d2 = kv.basis(i, xi, 2).unwrap();
                let fd2 =
                    (kv.basis(i, xi + h, 1).unwrap() - kv.basis(i, xi - h, 1).unwrap()) / (2.0 * h);
                assert!((d2 - fd2).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nonzero_basis_matches_scalar() {
        let kv = cubic_with_knots();
        for &xi in &[0.0, 0.25, 0.49, 0.5, 0.77, 1.0] {
            let (first, rows) = kv.nonzero_basis(xi).unwrap();
            for k in 0..3 {
                for (j, v) in rows[k].iter().enumerate() {
                    assert_eq!(*v, kv.basis(first + j, xi, k).unwrap());
                }
            }
        }
    }

    #[test]
    fn insertion_keeps_the_curve() {
        let kv = cubic_with_knots();
        let pts: Vec<[f64; 3]> = (0..kv.n_basis())
            .map(|i| {
                let w = 1.0 + 0.1 * i as f64;
                [w * (i as f64).sin(), w * (i as f64 * 0.5).cos(), w]
            })
            .collect();
        let curve = |kv: &KnotVector, pts: &[[f64; 3]], xi: f64| {
            let mut s = [0.0; 3];
            for (i, p) in pts.iter().enumerate() {
                let b = kv.basis(i, xi, 0).unwrap();
                for c in 0..3 {
                    s[c] += b * p[c];
                }
            }
            [s[0] / s[2], s[1] / s[2]]
        };
        let (kv2, pts2) = kv.insert_knot(0.4, &pts).unwrap();
        assert_eq!(kv2.n_basis(), kv.n_basis() + 1);
        for k in 0..=20 {
            let xi = k as f64 / 20.0;
            let (a, b) = (curve(&kv, &pts, xi), curve(&kv2, &pts2, xi));
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        let (kv3, pts3) = bernstein2().elevate_bezier(&pts[..3]).unwrap();
        for k in 0..=20 {
            let xi = k as f64 / 20.0;
            let (a, b) = (curve(&bernstein2(), &pts[..3], xi), curve(&kv3, &pts3, xi));
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        assert!(kv.elevate_bezier(&pts).is_err());
    }

    proptest! {
        #[test]
        fn partition_of_unity(xi in 0.0f64..=1.0) {
            let kv = cubic_with_knots();
            let (_, rows) = kv.nonzero_basis(xi).unwrap();
            prop_assert!((rows[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(rows[1].iter().sum::<f64>().abs() < 1e-10);
            prop_assert!(rows[2].iter().sum::<f64>().abs() < 1e-8);
            prop_assert!(rows[0].iter().all(|&v| v >= 0.0));
        }
    }
}
