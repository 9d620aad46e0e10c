//! Uniform finite-difference grids on the unit interval and unit square.

use crate::jacprop::DiscretizationOperators;
use crate::sparse::SparseMatrix;

/// `n` intervals on `[0, 1]`, nodes `x_i = i/n` for `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1d {
    pub n: usize,
}

impl Grid1d {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| i as f64 * self.h()).collect()
    }

    /// Cell-midpoint averages `(u_i + u_{i+1}) / 2`, an `n × (n+1)` map.
    pub fn midpoint_average(&self) -> SparseMatrix {
        let t: Vec<_> = (0..self.n)
            .flat_map(|i| [(i, i, 0.5), (i, i + 1, 0.5)])
            .collect();
        SparseMatrix::from_triplets(self.n, self.n + 1, &t).expect("valid stencil")
    }

    /// Cell differences `(u_{i+1} - u_i) / h`.
    pub fn difference(&self) -> SparseMatrix {
        let s = 1.0 / self.h();
        let t: Vec<_> = (0..self.n)
            .flat_map(|i| [(i, i, -s), (i, i + 1, s)])
            .collect();
        SparseMatrix::from_triplets(self.n, self.n + 1, &t).expect("valid stencil")
    }
}

/// Interior nodes of a uniform grid on the unit square with homogeneous
/// Dirichlet ghost values; node `(i, j)` is stored at `i + nx·j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorGrid2d {
    pub nx: usize,
    pub ny: usize,
}

impl InteriorGrid2d {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        1.0 / (self.nx + 1) as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / (self.ny + 1) as f64
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    fn forward_difference(&self, along_x: bool) -> SparseMatrix {
        let n = self.len();
        let mut t = Vec::with_capacity(2 * n);
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = self.index(i, j);
                let (h, next) = if along_x {
                    (self.hx(), (i + 1 < self.nx).then(|| self.index(i + 1, j)))
                } else {
                    (self.hy(), (j + 1 < self.ny).then(|| self.index(i, j + 1)))
                };
                t.push((k, k, -1.0 / h));
                if let Some(nk) = next {
                    t.push((k, nk, 1.0 / h));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &t).expect("valid stencil")
    }

    /// Identity value map, forward differences for gradients and the
    /// adjoint (backward) differences for divergence.
    pub fn operators(&self) -> DiscretizationOperators {
        let n = self.len();
        let mx = self.forward_difference(true);
        let my = self.forward_difference(false);
        let div_x = mx.transpose().scale(-1.0);
        let div_y = my.transpose().scale(-1.0);
        DiscretizationOperators::new(SparseMatrix::identity(n))
            .with_first_derivatives(mx, my)
            .and_then(|o| o.with_divergence(div_x, div_y))
            .expect("consistent grid operators")
    }

    /// Whether `(r, k)` lies in the five-point neighbourhood of `r`.
    pub fn in_five_point_stencil(&self, r: usize, k: usize) -> bool {
        let (ri, rj) = self.coords(r);
        let (ki, kj) = self.coords(k);
        ri.abs_diff(ki) + rj.abs_diff(kj) <= 1
    }
}

/// All nodes (boundary included) of an `n × n` uniform grid on the unit
/// square; node `(i, j)` sits at `(i h, j h)` with `h = 1/(n-1)` and is
/// stored at `i + n·j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGrid2d {
    pub n: usize,
}

impl NodeGrid2d {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    pub fn point(&self, k: usize) -> (f64, f64) {
        let h = self.h();
        ((k % self.n) as f64 * h, (k / self.n) as f64 * h)
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = (k % self.n, k / self.n);
        i == 0 || j == 0 || i + 1 == self.n || j + 1 == self.n
    }

    /// 1.0 at interior nodes, 0.0 on the boundary.
    pub fn interior_mask(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| if self.is_boundary(k) { 0.0 } else { 1.0 })
            .collect()
    }

    /// Number of edges in one direction: `(n-1)·n`.
    pub fn n_edges(&self) -> usize {
        (self.n - 1) * self.n
    }

    /// Edge `e` in direction x joins `(i, j)`–`(i+1, j)` with `e = i + (n-1)·j`;
    /// in direction y it joins `(j, i)`–`(j, i+1)` with the same numbering
    /// after swapping roles.
    fn edge_ends(&self, e: usize, along_x: bool) -> (usize, usize) {
        let (a, b) = (e % (self.n - 1), e / (self.n - 1));
        if along_x {
            (self.index(a, b), self.index(a + 1, b))
        } else {
            (self.index(b, a), self.index(b, a + 1))
        }
    }

    /// Edge-midpoint averages of node values.
    pub fn edge_average(&self, along_x: bool) -> SparseMatrix {
        let t: Vec<_> = (0..self.n_edges())
            .flat_map(|e| {
                let (p, q) = self.edge_ends(e, along_x);
                [(e, p, 0.5), (e, q, 0.5)]
            })
            .collect();
        SparseMatrix::from_triplets(self.n_edges(), self.len(), &t).expect("valid stencil")
    }

    /// Edge differences `(u_q - u_p) / h`.
    pub fn edge_difference(&self, along_x: bool) -> SparseMatrix {
        let s = 1.0 / self.h();
        let t: Vec<_> = (0..self.n_edges())
            .flat_map(|e| {
                let (p, q) = self.edge_ends(e, along_x);
                [(e, p, -s), (e, q, s)]
            })
            .collect();
        SparseMatrix::from_triplets(self.n_edges(), self.len(), &t).expect("valid stencil")
    }
}
