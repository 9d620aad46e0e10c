use std::fmt::Write as _;
use std::path::Path;

use super::knots::KnotVector;
use crate::error::{Error, Result};

/// A NURBS surface. Control point `(i, j)` is stored at `i + n·j`, with `i`
/// running along the `u` (ξ) direction.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsSurface {
    u: KnotVector,
    v: KnotVector,
    weights: Vec<f64>,
    points: Vec<[f64; 2]>,
}

/// Rational basis values at one parameter point: the global indices of the
/// nonzero functions and, per function, `[R, R_ξ, R_η, R_ξξ, R_ξη, R_ηη]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub indices: Vec<usize>,
    pub values: Vec<[f64; 6]>,
}

/// Geometry map and its parametric derivatives up to second order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: [f64; 2],
    pub d_xi: [f64; 2],
    pub d_eta: [f64; 2],
    pub d_xixi: [f64; 2],
    pub d_xieta: [f64; 2],
    pub d_etaeta: [f64; 2],
}

impl SurfacePoint {
    /// `[[x_ξ, x_η], [y_ξ, y_η]]`.
    pub fn jacobian(&self) -> [[f64; 2]; 2] {
        [[self.d_xi[0], self.d_eta[0]], [self.d_xi[1], self.d_eta[1]]]
    }

    pub fn det(&self) -> f64 {
        self.d_xi[0] * self.d_eta[1] - self.d_eta[0] * self.d_xi[1]
    }
}

impl NurbsSurface {
    pub fn new(
        u: KnotVector,
        v: KnotVector,
        weights: Vec<f64>,
        points: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let count = u.n_basis() * v.n_basis();
        if weights.len() != count || points.len() != count {
            return Err(Error::DimensionMismatch {
                context: "NURBS control net",
                expected: count,
                got: weights.len().min(points.len()),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("NURBS weights must be positive".into()));
        }
        Ok(Self {
            u,
            v,
            weights,
            points,
        })
    }

    pub fn u_knots(&self) -> &KnotVector {
        &self.u
    }

    pub fn v_knots(&self) -> &KnotVector {
        &self.v
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// `(n, m)` control points along u and v.
    pub fn shape(&self) -> (usize, usize) {
        (self.u.n_basis(), self.v.n_basis())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.u.n_basis() * j
    }

    /// The square `[−1, 1]²`: biquadratic, one element, unit weights.
    pub fn square() -> Self {
        let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap();
        let points = vec![
            [-1.0, 1.0],
            [-1.0, 0.0],
            [-1.0, -1.0],
            [0.0, 1.0],
            [0.0, 0.0],
            [0.0, -1.0],
            [1.0, 1.0],
            [1.0, 0.0],
            [1.0, -1.0],
        ];
        Self::new(kv.clone(), kv, vec![1.0; 9], points).unwrap()
    }

    /// A quarter annulus with radii 1 and 2: linear in u (radial), quadratic
    /// rational in v (angular).
    pub fn pipe() -> Self {
        let u = KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1).unwrap();
        let v = KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let weights = vec![1.0, 1.0, s, s, 1.0, 1.0];
        let points = vec![
            [1.0, 0.0],
            [2.0, 0.0],
            [1.0, 1.0],
            [2.0, 2.0],
            [0.0, 1.0],
            [0.0, 2.0],
        ];
        Self::new(u, v, weights, points).unwrap()
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "square" => Ok(Self::square()),
            "pipe" => Ok(Self::pipe()),
            other => Err(Error::InvalidInput(format!(
                "unknown built-in mesh '{other}'"
            ))),
        }
    }

    fn homogeneous(&self, k: usize) -> [f64; 3] {
        let w = self.weights[k];
        [w * self.points[k][0], w * self.points[k][1], w]
    }

    fn from_homogeneous(u: KnotVector, v: KnotVector, h: Vec<[f64; 3]>) -> Result<Self> {
        let weights = h.iter().map(|p| p[2]).collect();
        let points = h.iter().map(|p| [p[0] / p[2], p[1] / p[2]]).collect();
        Self::new(u, v, weights, points)
    }

    /// Applies a curve operation to every row along u.
    fn map_u<F>(&self, op: F) -> Result<Self>
    where
        F: Fn(&KnotVector, &[[f64; 3]]) -> Result<(KnotVector, Vec<[f64; 3]>)>,
    {
        let (n, m) = self.shape();
        let mut new_u = None;
        let mut rows = Vec::with_capacity(m);
        for j in 0..m {
            let row: Vec<_> = (0..n).map(|i| self.homogeneous(self.index(i, j))).collect();
            let (kv, r) = op(&self.u, &row)?;
            new_u = Some(kv);
            rows.push(r);
        }
        let h = rows.into_iter().flatten().collect();
        Self::from_homogeneous(new_u.unwrap(), self.v.clone(), h)
    }

    fn map_v<F>(&self, op: F) -> Result<Self>
    where
        F: Fn(&KnotVector, &[[f64; 3]]) -> Result<(KnotVector, Vec<[f64; 3]>)>,
    {
        let (n, m) = self.shape();
        let mut new_v = None;
        let mut cols = Vec::with_capacity(n);
        for i in 0..n {
            let col: Vec<_> = (0..m).map(|j| self.homogeneous(self.index(i, j))).collect();
            let (kv, c) = op(&self.v, &col)?;
            new_v = Some(kv);
            cols.push(c);
        }
        let new_v = new_v.unwrap();
        let m2 = new_v.n_basis();
        let mut h = Vec::with_capacity(n * m2);
        for j in 0..m2 {
            for col in &cols {
                h.push(col[j]);
            }
        }
        Self::from_homogeneous(self.u.clone(), new_v, h)
    }

    /// Inserts a knot at the midpoint of every nonempty interval in both directions.
    pub fn h_refine(&self) -> Result<Self> {
        let insert_all = |kv: &KnotVector, pts: &[[f64; 3]]| {
            let mut kv = kv.clone();
            let mut pts = pts.to_vec();
            for xi in kv.interval_midpoints() {
                let (k, p) = kv.insert_knot(xi, &pts)?;
                kv = k;
                pts = p;
            }
            Ok((kv, pts))
        };
        self.map_u(insert_all)?.map_v(insert_all)
    }

    /// `levels` successive calls to [`Self::h_refine`].
    pub fn refined(&self, levels: usize) -> Result<Self> {
        let mut s = self.clone();
        for _ in 0..levels {
            s = s.h_refine()?;
        }
        Ok(s)
    }

    /// Raises the degree along u (`dir = 0`) or v (`dir = 1`) by one. Only
    /// single-element directions are supported.
    pub fn elevate_degree(&self, dir: usize) -> Result<Self> {
        match dir {
            0 => self.map_u(|kv, pts| kv.elevate_bezier(pts)),
            1 => self.map_v(|kv, pts| kv.elevate_bezier(pts)),
            _ => Err(Error::InvalidInput(format!(
                "direction {dir} is not 0 or 1"
            ))),
        }
    }

    /// Rational basis functions and derivatives at `(ξ, η)`.
    pub fn basis(&self, xi: f64, eta: f64) -> Result<BasisEval> {
        let (fu, bu) = self.u.nonzero_basis(xi)?;
        let (fv, bv) = self.v.nonzero_basis(eta)?;
        let (nu, nv) = (bu[0].len(), bv[0].len());
        let mut indices = Vec::with_capacity(nu * nv);
        // A = N M w and its derivatives, then W = Σ A.
        let mut a = Vec::with_capacity(nu * nv);
        let mut w = [0.0; 6];
        for b in 0..nv {
            for c in 0..nu {
                let k = self.index(fu + c, fv + b);
                let wk = self.weights[k];
                let (n0, n1, n2) = (bu[0][c], bu[1][c], bu[2][c]);
                let (m0, m1, m2) = (bv[0][b], bv[1][b], bv[2][b]);
                let ak = [n0 * m0, n1 * m0, n0 * m1, n2 * m0, n1 * m1, n0 * m2].map(|v| v * wk);
                for (s, v) in w.iter_mut().zip(&ak) {
                    *s += v;
                }
                indices.push(k);
                a.push(ak);
            }
        }
        let values = a
            .iter()
            .map(|ak| {
                let r = ak[0] / w[0];
                let rx = (ak[1] - r * w[1]) / w[0];
                let ry = (ak[2] - r * w[2]) / w[0];
                let rxx = (ak[3] - 2.0 * rx * w[1] - r * w[3]) / w[0];
                let rxy = (ak[4] - rx * w[2] - ry * w[1] - r * w[4]) / w[0];
                let ryy = (ak[5] - 2.0 * ry * w[2] - r * w[5]) / w[0];
                [r, rx, ry, rxx, rxy, ryy]
            })
            .collect();
        Ok(BasisEval { indices, values })
    }

    /// Geometry map and parametric derivatives at `(ξ, η)`.
    pub fn eval(&self, xi: f64, eta: f64) -> Result<SurfacePoint> {
        let b = self.basis(xi, eta)?;
        let mut acc = [[0.0; 2]; 6];
        for (&k, r) in b.indices.iter().zip(&b.values) {
            for d in 0..6 {
                acc[d][0] += r[d] * self.points[k][0];
                acc[d][1] += r[d] * self.points[k][1];
            }
        }
        Ok(SurfacePoint {
            x: acc[0],
            d_xi: acc[1],
            d_eta: acc[2],
            d_xixi: acc[3],
            d_xieta: acc[4],
            d_etaeta: acc[5],
        })
    }

    /// Text form: `degrees p q`, the u and v knot lines, `n m`, then one
    /// `w x y` line per control point with `i` fastest.
    pub fn to_mesh_string(&self) -> String {
        let join = |k: &[f64]| {
            k.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let (n, m) = self.shape();
        let mut s = format!("degrees {} {}\n", self.u.degree(), self.v.degree());
        let _ = writeln!(s, "{}", join(self.u.knots()));
        let _ = writeln!(s, "{}", join(self.v.knots()));
        let _ = writeln!(s, "{n} {m}");
        for (w, p) in self.weights.iter().zip(&self.points) {
            let _ = writeln!(s, "{w} {} {}", p[0], p[1]);
        }
        s
    }

    pub fn from_mesh_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("mesh ends before the {what}")))
        };
        let nums = |(ln, line): (usize, &str)| -> Result<Vec<f64>> {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Parse(format!("mesh line {}: bad number '{t}'", ln + 1))
                    })
                })
                .collect()
        };
        let (ln, header) = next("degree line")?;
        let deg: Vec<&str> = header.split_whitespace().collect();
        if deg.len() != 3 || deg[0] != "degrees" {
            return Err(Error::Parse(format!(
                "mesh line {}: expected 'degrees p q'",
                ln + 1
            )));
        }
        let parse_deg = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| Error::Parse(format!("mesh line {}: bad degree '{t}'", ln + 1)))
        };
        let (p, q) = (parse_deg(deg[1])?, parse_deg(deg[2])?);
        let u = KnotVector::new(nums(next("u knot vector")?)?, p)?;
        let v = KnotVector::new(nums(next("v knot vector")?)?, q)?;
        let shape = nums(next("control net size")?)?;
        if shape.len() != 2 || shape.iter().any(|s| s.fract() != 0.0 || *s < 0.0) {
            return Err(Error::Parse("control net size must be two integers".into()));
        }
        let (n, m) = (shape[0] as usize, shape[1] as usize);
        if n != u.n_basis() || m != v.n_basis() {
            return Err(Error::Parse(format!(
                "control net {n}x{m} does not match knot vectors ({}x{})",
                u.n_basis(),
                v.n_basis()
            )));
        }
        let mut weights = Vec::with_capacity(n * m);
        let mut points = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            let row = nums(next("control points")?)?;
            if row.len() != 3 {
                return Err(Error::Parse("control point lines hold 'w x y'".into()));
            }
            weights.push(row[0]);
            points.push([row[1], row[2]]);
        }
        if lines.next().is_some() {
            return Err(Error::Parse(
                "trailing content after the control points".into(),
            ));
        }
        Self::new(u, v, weights, points)
    }

    pub fn read_mesh(path: &Path) -> Result<Self> {
        Self::from_mesh_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_mesh(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_mesh_string())?;
        Ok(())
    }
}
