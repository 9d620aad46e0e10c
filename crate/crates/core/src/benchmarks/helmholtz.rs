//! Recovering the coefficient field `g` of `Δu + k² g(x) u = 0`, `u = 1` on
//! the boundary, from boundary normal derivatives, with `g` quadratic:
//! `g = a x² + b xy + c y² + d x + e y + f`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_pcl, run_pm, validate_lambda, BenchmarkTrace, Method};
use crate::error::{check_len, Error, Result};
use crate::iga::{CollocationSpace, NurbsSurface};
use crate::optimize::LbfgsSettings;
use crate::pcl::{newton_solve, ConstraintSystem, NewtonSettings, ObservationLoss, PclProblem};
use crate::penalty::PenaltyProblem;
use crate::sparse::{factorize, SparseMatrix};

/// Data-generating parameters: `g = 5x² + 2y²`.
pub const THETA_STAR: [f64; 6] = [5.0, 0.0, 2.0, 0.0, 0.0, 0.0];

/// `‖θ − θ*‖₂`.
pub fn helmholtz_error(theta: &[f64]) -> f64 {
    theta
        .iter()
        .zip(THETA_STAR)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Square,
    Pipe,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Square => "square",
            Domain::Pipe => "pipe",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Domain::Square),
            "pipe" => Ok(Domain::Pipe),
            other => Err(Error::InvalidInput(format!(
                "unknown domain '{other}' (expected square or pipe)"
            ))),
        }
    }
}

impl Domain {
    /// The collocation surface at a refinement level.
    pub fn surface(self, refinement: usize) -> Result<NurbsSurface> {
        match self {
            Domain::Square => NurbsSurface::square().refined(refinement),
            // The radial direction is linear; collocation needs second derivatives.
            Domain::Pipe => NurbsSurface::pipe().elevate_degree(0)?.refined(refinement),
        }
    }
}

fn quadratic_basis(p: [f64; 2]) -> [f64; 6] {
    let [x, y] = p;
    [x * x, x * y, y * y, x, y, 1.0]
}

/// Collocation rows: `(Δc)_l + k² g(x_l) (Mc)_l` inside, `(Mc)_l − 1` on the boundary.
#[derive(Debug, Clone)]
pub struct HelmholtzSystem {
    space: CollocationSpace,
    k: f64,
    /// Laplacian rows inside, value rows on the boundary.
    base: SparseMatrix,
    /// Value map restricted to interior rows.
    m_interior: SparseMatrix,
    /// Quadratic monomials at each collocation point.
    phi: Vec<[f64; 6]>,
    rhs: Vec<f64>,
}

impl HelmholtzSystem {
    pub fn new(space: CollocationSpace, k: f64) -> Result<Self> {
        if !k.is_finite() || k < 0.0 {
            return Err(Error::InvalidInput(format!(
                "frequency k must be finite and >= 0, got {k}"
            )));
        }
        let ops = space.operators();
        let mxx = ops.mxx.as_ref().ok_or(Error::MissingOperator("M_xx"))?;
        let myy = ops.myy.as_ref().ok_or(Error::MissingOperator("M_yy"))?;
        let lap = mxx.add(myy)?;
        let n = space.len();
        let mut base = Vec::new();
        let mut mint = Vec::new();
        let mut rhs = vec![0.0; n];
        for l in 0..n {
            if space.is_boundary(l) {
                base.extend(ops.m.row(l).map(|(c, v)| (l, c, v)));
                rhs[l] = 1.0;
            } else {
                base.extend(lap.row(l).map(|(c, v)| (l, c, v)));
                mint.extend(ops.m.row(l).map(|(c, v)| (l, c, v)));
            }
        }
        let phi = space.points().iter().map(|&p| quadratic_basis(p)).collect();
        Ok(Self {
            base: SparseMatrix::from_triplets(n, n, &base)?,
            m_interior: SparseMatrix::from_triplets(n, n, &mint)?,
            phi,
            rhs,
            space,
            k,
        })
    }

    pub fn space(&self) -> &CollocationSpace {
        &self.space
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `k² g(x_l)` at every collocation point.
    fn reaction(&self, theta: &[f64]) -> Vec<f64> {
        let k2 = self.k * self.k;
        self.phi
            .iter()
            .map(|p| k2 * p.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// The collocation matrix `A(θ)`; the system is linear in the coefficients.
    pub fn matrix(&self, theta: &[f64]) -> Result<SparseMatrix> {
        check_len("Helmholtz parameters", 6, theta.len())?;
        self.base
            .add(&self.m_interior.diag_left_mul(&self.reaction(theta))?)
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }
}

impl ConstraintSystem for HelmholtzSystem {
    fn dim_u(&self) -> usize {
        self.space.len()
    }

    fn dim_theta(&self) -> usize {
        6
    }

    fn residual(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("Helmholtz parameters", 6, theta.len())?;
        let bu = self.base.spmv(u)?;
        let mu = self.m_interior.spmv(u)?;
        let r = self.reaction(theta);
        Ok((0..u.len())
            .map(|l| bu[l] + r[l] * mu[l] - self.rhs[l])
            .collect())
    }

    fn jacobian_u(&self, theta: &[f64], _u: &[f64]) -> Result<SparseMatrix> {
        self.matrix(theta)
    }

    fn theta_pullback(&self, theta: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len("Helmholtz parameters", 6, theta.len())?;
        check_len("Helmholtz adjoint", self.space.len(), w.len())?;
        let mu = self.m_interior.spmv(u)?;
        let k2 = self.k * self.k;
        let mut g = vec![0.0; 6];
        for ((p, m), wl) in self.phi.iter().zip(&mu).zip(w) {
            for (gj, pj) in g.iter_mut().zip(p) {
                *gj += k2 * wl * m * pj;
            }
        }
        Ok(g)
    }
}

/// Solves `A(θ) c = b` and returns the coefficients and `∂u/∂n` at the
/// boundary collocation points. A singular system (for example a resonant
/// `k`) is reported as an error.
pub fn helmholtz_forward(system: &HelmholtzSystem, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let lu = factorize(&system.matrix(theta)?).map_err(|e| match e {
        Error::Singular(m) => {
            Error::Singular(format!("Helmholtz system is singular (resonant k?): {m}"))
        }
        other => other,
    })?;
    let c = lu.solve(system.rhs())?;
    let dn = system.space().boundary_normal_derivative(&c)?;
    Ok((c, dn))
}

/// A configured instance with synthetic observations at θ*.
#[derive(Debug, Clone)]
pub struct HelmholtzProblem {
    pub system: HelmholtzSystem,
    pub observations: Vec<f64>,
}

impl HelmholtzProblem {
    pub fn new(domain: Domain, refinement: usize, k: f64) -> Result<Self> {
        let space = CollocationSpace::build(&domain.surface(refinement)?)?;
        let system = HelmholtzSystem::new(space, k)?;
        // Same solver path as the inversion, so θ* reproduces the data exactly.
        let u0 = vec![1.0; system.dim_u()];
        let c = newton_solve(&system, &THETA_STAR, &u0, &NewtonSettings::default())?.u;
        let observations = system.space().boundary_normal_derivative(&c)?;
        Ok(Self {
            system,
            observations,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    /// `(1/n_obs) Σ (∂u/∂n(x_i) − h_i)²`.
    pub fn loss(&self) -> ObservationLoss {
        ObservationLoss {
            operator: self.system.space().normal_derivative_operator().clone(),
            data: self.observations.clone(),
            scale: 1.0 / self.n_obs() as f64,
        }
    }

    /// Starting state for Newton: the boundary data extended by ones.
    pub fn initial_state(&self) -> Vec<f64> {
        vec![1.0; self.system.dim_u()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelmholtzConfig {
    pub method: Method,
    pub domain: Domain,
    pub refinement: usize,
    pub k: f64,
    pub lambda: Option<f64>,
    /// Defaults to zeros for PCL and ones for PM.
    pub theta0: Option<Vec<f64>>,
    /// Stop once `‖θ − θ*‖` falls to this value.
    pub target_error: Option<f64>,
    pub optimizer: LbfgsSettings,
}

impl HelmholtzConfig {
    pub fn new(method: Method, domain: Domain, refinement: usize, k: f64) -> Self {
        Self {
            method,
            domain,
            refinement,
            k,
            lambda: None,
            theta0: None,
            target_error: None,
            optimizer: LbfgsSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_lambda(self.method, self.lambda)?;
        if self.refinement > 6 {
            return Err(Error::InvalidInput(format!(
                "refinement {} is above the supported 0..=6",
                self.refinement
            )));
        }
        if let Some(t) = &self.theta0 {
            check_len("initial parameters", 6, t.len())?;
        }
        self.optimizer.validate()
    }

    pub fn initial_theta(&self) -> Vec<f64> {
        self.theta0.clone().unwrap_or_else(|| match self.method {
            Method::Pcl => vec![0.0; 6],
            Method::Pm => vec![1.0; 6],
        })
    }
}

pub fn run_helmholtz(config: &HelmholtzConfig) -> Result<BenchmarkTrace> {
    config.validate()?;
    let problem = HelmholtzProblem::new(config.domain, config.refinement, config.k)?;
    let theta0 = config.initial_theta();
    let target = config.target_error.unwrap_or(f64::NEG_INFINITY);
    let loss = problem.loss();
    let u0 = problem.initial_state();
    match config.method {
        Method::Pcl => {
            let mut pcl = PclProblem::new(problem.system, loss, u0)?;
            run_pcl(
                &mut pcl,
                &theta0,
                &config.optimizer,
                helmholtz_error,
                target,
            )
        }
        Method::Pm => {
            let pm = PenaltyProblem::new(problem.system, loss, config.lambda.unwrap_or(0.0))?;
            run_pm(
                &pm,
                &theta0,
                &u0,
                &NewtonSettings::default(),
                &config.optimizer,
                helmholtz_error,
                target,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcl::{adjoint_gradient, Loss};

    #[test]
    fn error_examples() {
        assert_eq!(helmholtz_error(&THETA_STAR), 0.0);
        assert!((helmholtz_error(&[0.0; 6]) - 5.385_164_807_134_5).abs() < 1e-12);
        assert!((helmholtz_error(&[1.0; 6]) - 4.582_575_694_955_84).abs() < 1e-12);
    }

    #[test]
    fn zero_frequency_gives_constant() {
        for domain in [Domain::Square, Domain::Pipe] {
            let space = CollocationSpace::build(&domain.surface(1).unwrap()).unwrap();
            let sys = HelmholtzSystem::new(space, 0.0).unwrap();
            let (c, dn) = helmholtz_forward(&sys, &[3.0, -1.0, 2.0, 0.5, 0.1, 7.0]).unwrap();
            assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-10), "{domain}");
            assert!(dn.iter().all(|v| v.abs() < 1e-9), "{domain}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = HelmholtzProblem::new(Domain::Square, 3, 0.5).unwrap();
        let b = HelmholtzProblem::new(Domain::Square, 3, 0.5).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.observations), bits(&b.observations));
        assert_eq!(a.n_obs(), 4 * 10 - 4);
    }

    #[test]
    fn manufactured_residual_shrinks_with_refinement() {
        // Interpolate a smooth field and compare the collocated Laplacian with the exact one.
        let mut last = f64::INFINITY;
        for r in 1..=4 {
            let space = CollocationSpace::build(&Domain::Pipe.surface(r).unwrap()).unwrap();
            let exact = |x: f64, y: f64| (x * x + 1.0).ln() * y.cos() + x.exp() * y;
            let c = space.interpolate(exact).unwrap();
            let ops = space.operators();
            let lap = ops
                .mxx
                .as_ref()
                .unwrap()
                .add(ops.myy.as_ref().unwrap())
                .unwrap()
                .spmv(&c)
                .unwrap();
            let err = space
                .interior()
                .iter()
                .map(|&l| {
                    let [x, y] = space.points()[l];
                    let uxx = 2.0 * (1.0 - x * x) / (1.0 + x * x).powi(2) * y.cos() + x.exp() * y;
                    let uyy = -(x * x + 1.0).ln() * y.cos();
                    (lap[l] - uxx - uyy).abs()
                })
                .fold(0.0f64, f64::max);
            assert!(err < last, "level {r}: {err} !< {last}");
            last = err;
        }
        assert!(last < 0.1);
    }

    #[test]
    fn newton_is_one_step_and_matches_forward() {
        let p = HelmholtzProblem::new(Domain::Square, 2, 0.5).unwrap();
        let rep = newton_solve(
            &p.system,
            &THETA_STAR,
            &p.initial_state(),
            &NewtonSettings::default(),
        )
        .unwrap();
        assert!(rep.iterations <= 2);
        let (c, _) = helmholtz_forward(&p.system, &THETA_STAR).unwrap();
        for (a, b) in rep.u.iter().zip(&c) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_crime_and_gradient() {
        for domain in [Domain::Square, Domain::Pipe] {
            let p = HelmholtzProblem::new(domain, 2, 0.5).unwrap();
            let loss = p.loss();
            let c = newton_solve(
                &p.system,
                &THETA_STAR,
                &p.initial_state(),
                &NewtonSettings::default(),
            )
            .unwrap()
            .u;
            let adj = adjoint_gradient(&p.system, &loss, &THETA_STAR, &c).unwrap();
            assert!(adj.loss <= 1e-18);
            assert!(adj.gradient.iter().all(|g| g.abs() <= 1e-8));
            let checks = super::super::check_adjoint_gradient(
                &p.system,
                &loss,
                &[1.0, 0.5, -0.3, 0.2, 0.1, 0.7],
                &p.initial_state(),
                &NewtonSettings::default(),
                &[0, 1, 2, 3, 4, 5],
            )
            .unwrap();
            for ch in checks {
                assert!(ch.rel_error < 1e-5, "{domain}: {ch:?}");
            }
            assert!(loss.value(&vec![1.0; c.len()]).unwrap() > 0.0);
        }
    }

    #[test]
    fn pcl_from_theta_star_stops_immediately() {
        let mut cfg = HelmholtzConfig::new(Method::Pcl, Domain::Square, 2, 0.5);
        cfg.theta0 = Some(THETA_STAR.to_vec());
        let t = run_helmholtz(&cfg).unwrap();
        assert_eq!(t.iterations(), 0);
        assert_eq!(t.final_error, 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = HelmholtzConfig::new(Method::Pm, Domain::Square, 2, 0.5);
        assert!(cfg.validate().is_err());
        cfg.lambda = Some(1.0);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.initial_theta(), vec![1.0; 6]);
        cfg.theta0 = Some(vec![0.0; 5]);
        assert!(cfg.validate().is_err());
        assert_eq!("pipe".parse::<Domain>().unwrap(), Domain::Pipe);
        assert!("disk".parse::<Domain>().is_err());
    }
}
