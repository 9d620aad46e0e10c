//! Fixtures shared by the kernel benchmarks.

use pclbench_core::benchmarks::{
    Domain, HelmholtzProblem, Law2d, Poisson2DProblem, SourceShape, TestSet,
};
use pclbench_core::fd::InteriorGrid2d;
use pclbench_core::jacprop::{self, DiscretizationOperators, Field};
use pclbench_core::{Result, SparseMatrix};

pub fn helmholtz(refinement: usize) -> HelmholtzProblem {
    HelmholtzProblem::new(Domain::Square, refinement, 0.5).expect("built-in mesh")
}

pub fn poisson2d(n: usize) -> Poisson2DProblem {
    Poisson2DProblem::with_source(n, Law2d::Truth(TestSet::Three), SourceShape::Uniform, 1.0)
        .expect("valid grid")
}

/// `∇·((1 + u²)∇u)` with its propagated Jacobian.
pub fn nonlinear_diffusion(ops: &DiscretizationOperators, c: &[f64]) -> Result<Field> {
    let u = jacprop::from_coefficients(ops, c)?;
    let g = jacprop::grad(ops, &u)?;
    let a = jacprop::add_scalar(&jacprop::unary(&u, |x| x * x, |x| 2.0 * x)?, 1.0);
    jacprop::div(ops, &jacprop::mul_vector(&a, &g)?)
}

pub fn diffusion_ops(n: usize) -> DiscretizationOperators {
    InteriorGrid2d::new(n, n).operators()
}

/// The 5-point Laplacian plus a unit shift, a well-conditioned sparse system.
pub fn shifted_laplacian(n: usize) -> SparseMatrix {
    let ops = diffusion_ops(n);
    let c = vec![0.0; n * n];
    let f = nonlinear_diffusion(&ops, &c).expect("operators are complete");
    let eye = SparseMatrix::identity(n * n);
    eye.sub(f.jacobian()).expect("same shape")
}

/// Deterministic pseudo-random values in `[-0.5, 0.5)`.
pub fn wiggle(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i * 7919 % 101) as f64) / 101.0 - 0.5)
        .collect()
}
