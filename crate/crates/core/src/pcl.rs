//! Physics constrained learning: Newton solves of `F(θ, u) = 0` and the
//! adjoint gradient of `L(u(θ))`.

use crate::autodiff::Tape;
use crate::error::{check_len, Error, Result};
use crate::sparse::{factorize, SparseMatrix};

/// A discretized constraint `F(θ, u) = 0` with `dim_u` equations.
pub trait ConstraintSystem {
    fn dim_u(&self) -> usize;
    fn dim_theta(&self) -> usize;
    fn residual(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    fn jacobian_u(&self, theta: &[f64], u: &[f64]) -> Result<SparseMatrix>;
    /// `∇_θ (wᵀ F(θ, u))` with `w` and `u` held fixed.
    fn theta_pullback(&self, theta: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>>;

    fn residual_and_jacobian(&self, theta: &[f64], u: &[f64]) -> Result<(Vec<f64>, SparseMatrix)> {
        Ok((self.residual(theta, u)?, self.jacobian_u(theta, u)?))
    }
}

/// A scalar loss on the state with its gradient.
pub trait Loss {
    fn value_and_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, u: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(u)?.0)
    }
}

/// `scale · ‖B u − h‖²` for a fixed observation operator `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLoss {
    pub operator: SparseMatrix,
    pub data: Vec<f64>,
    pub scale: f64,
}

impl ObservationLoss {
    pub fn new(operator: SparseMatrix, data: Vec<f64>, scale: f64) -> Result<Self> {
        check_len("observation data", operator.rows(), data.len())?;
        Ok(Self {
            operator,
            data,
            scale,
        })
    }

    /// `‖u − target‖²`.
    pub fn distance(target: Vec<f64>) -> Self {
        Self {
            operator: SparseMatrix::identity(target.len()),
            data: target,
            scale: 1.0,
        }
    }

    /// Observes `u` at the given indices.
    pub fn at_indices(n: usize, indices: &[usize], data: Vec<f64>, scale: f64) -> Result<Self> {
        let t: Vec<_> = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| (r, c, 1.0))
            .collect();
        Self::new(
            SparseMatrix::from_triplets(indices.len(), n, &t)?,
            data,
            scale,
        )
    }
}

impl Loss for ObservationLoss {
    fn value_and_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("observation loss state", self.operator.cols(), u.len())?;
        let mut tape = Tape::new();
        let x = tape.input(u.to_vec())?;
        let bu = tape.spmv_const(&self.operator, x)?;
        let h = tape.constant(self.data.clone());
        let r = tape.sub(bu, h)?;
        let rr = tape.dot(r, r)?;
        let s = tape.scalar(self.scale);
        let out = tape.mul(rr, s)?;
        tape.set_output(out);
        Ok((tape.scalar_value(out), tape.reverse_grad(&[x])?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Absolute tolerance on `‖F‖∞`.
    pub residual_tol: f64,
    pub max_iters: usize,
    pub backtrack_factor: f64,
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            max_iters: 50,
            backtrack_factor: 0.5,
            max_halvings: 30,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidInput(
                "Newton tolerance must be positive".into(),
            ));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidInput(
                "backtracking factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub u: Vec<f64>,
    /// Newton steps taken.
    pub iterations: usize,
    /// `‖F‖∞` before each step and at the end.
    pub residual_history: Vec<f64>,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| {
        if x.abs() > m || x.is_nan() {
            x.abs()
        } else {
            m
        }
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iteration with backtracking on `‖F‖₂`.
pub fn newton_solve(
    system: &dyn ConstraintSystem,
    theta: &[f64],
    u0: &[f64],
    settings: &NewtonSettings,
) -> Result<NewtonReport> {
    settings.validate()?;
    check_len("Newton initial state", system.dim_u(), u0.len())?;
    check_len("Newton parameters", system.dim_theta(), theta.len())?;
    let mut u = u0.to_vec();
    let mut f = system.residual(theta, &u)?;
    let mut history = vec![norm_inf(&f)];
    let (mut best_u, mut best_res) = (u.clone(), history[0]);
    let not_converged = |iterations, residual, best_u| Error::NotConverged {
        iterations,
        residual,
        best_u,
    };
    if !history[0].is_finite() {
        return Err(Error::Domain(
            "non-finite residual at the initial state".into(),
        ));
    }
    for it in 0..settings.max_iters {
        if *history.last().unwrap() <= settings.residual_tol {
            return Ok(NewtonReport {
                u,
                iterations: it,
                residual_history: history,
            });
        }
        let jac = system.jacobian_u(theta, &u)?;
        let step = factorize(&jac)?.solve(&f)?;
        let merit = norm2(&f);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, d)| a - alpha * d).collect();
            if let Ok(ft) = system.residual(theta, &trial) {
                let m = norm2(&ft);
                if m.is_finite()
                    && (m <= (1.0 - 1e-4 * alpha) * merit || norm_inf(&ft) <= settings.residual_tol)
                {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= settings.backtrack_factor;
        }
        let Some((un, fnew)) = accepted else {
            return Err(not_converged(it + 1, best_res, best_u));
        };
        u = un;
        f = fnew;
        let r = norm_inf(&f);
        history.push(r);
        if r < best_res {
            best_res = r;
            best_u.clone_from(&u);
        }
    }
    let last = *history.last().unwrap();
    if last <= settings.residual_tol {
        return Ok(NewtonReport {
            u,
            iterations: settings.max_iters,
            residual_history: history,
        });
    }
    Err(not_converged(settings.max_iters, best_res, best_u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointResult {
    pub gradient: Vec<f64>,
    /// Solution of `(∂F/∂u)ᵀ w = (∂L/∂u)ᵀ`.
    pub w: Vec<f64>,
    pub loss: f64,
}

/// `∇_θ L̃ = −∇_θ(wᵀF)` with `(∂F/∂u)ᵀ w = (∂L/∂u)ᵀ`: one transpose solve and
/// one pullback.
pub fn adjoint_gradient(
    system: &dyn ConstraintSystem,
    loss: &dyn Loss,
    theta: &[f64],
    u: &[f64],
) -> Result<AdjointResult> {
    let (value, dl) = loss.value_and_grad(u)?;
    let jac = system.jacobian_u(theta, u)?;
    let w = factorize(&jac)?.solve_transpose(&dl)?;
    let g = system.theta_pullback(theta, u, &w)?;
    Ok(AdjointResult {
        gradient: g.into_iter().map(|x| -x).collect(),
        w,
        loss: value,
    })
}

/// Reference gradient through the full sensitivity `du/dθ = −J⁻¹ ∂F/∂θ`,
/// costing one forward solve per parameter. Intended for checking
/// [`adjoint_gradient`] on small problems.
pub fn sensitivity_gradient(
    system: &dyn ConstraintSystem,
    loss: &dyn Loss,
    theta: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    let n = system.dim_u();
    let (_, dl) = loss.value_and_grad(u)?;
    let lu = factorize(&system.jacobian_u(theta, u)?)?;
    // Row i of ∂F/∂θ is the pullback of the unit vector e_i.
    let mut df_dtheta = vec![vec![0.0; n]; system.dim_theta()];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        for (j, v) in system.theta_pullback(theta, u, &e)?.into_iter().enumerate() {
            df_dtheta[j][i] = v;
        }
    }
    df_dtheta
        .iter()
        .map(|col| {
            let du = lu.solve(col)?;
            Ok(-dl.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PclStats {
    pub evaluations: usize,
    pub newton_iterations: usize,
    pub transpose_solves: usize,
    pub failed_solves: usize,
}

/// A constrained learning problem with a warm-started state.
pub struct PclProblem<S, L> {
    pub system: S,
    pub loss: L,
    pub initial_u: Vec<f64>,
    pub newton: NewtonSettings,
    warm_u: Vec<f64>,
    stats: PclStats,
}

impl<S: ConstraintSystem, L: Loss> PclProblem<S, L> {
    pub fn new(system: S, loss: L, initial_u: Vec<f64>) -> Result<Self> {
        check_len("initial state", system.dim_u(), initial_u.len())?;
        Ok(Self {
            system,
            loss,
            warm_u: initial_u.clone(),
            initial_u,
            newton: NewtonSettings::default(),
            stats: PclStats::default(),
        })
    }

    pub fn with_newton(mut self, newton: NewtonSettings) -> Self {
        self.newton = newton;
        self
    }

    pub fn stats(&self) -> PclStats {
        self.stats
    }

    /// The most recent converged state.
    pub fn state(&self) -> &[f64] {
        &self.warm_u
    }

    pub fn reset_warm_start(&mut self) {
        self.warm_u.clone_from(&self.initial_u);
    }

    /// Solves the constraint at θ, starting from the last converged state
    /// and falling back to `initial_u` if that fails.
    pub fn solve_state(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        let first = newton_solve(&self.system, theta, &self.warm_u, &self.newton);
        let report = match first {
            Ok(r) => r,
            Err(Error::NotConverged { .. } | Error::Singular(_) | Error::Domain(_))
                if self.warm_u != self.initial_u =>
            {
                newton_solve(&self.system, theta, &self.initial_u, &self.newton)?
            }
            Err(e) => return Err(e),
        };
        self.stats.newton_iterations += report.iterations;
        self.warm_u.clone_from(&report.u);
        Ok(report.u)
    }

    /// Loss and gradient at θ. Solver failures propagate.
    pub fn loss_and_grad(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("parameters", self.system.dim_theta(), theta.len())?;
        self.stats.evaluations += 1;
        let u = self.solve_state(theta)?;
        let adj = adjoint_gradient(&self.system, &self.loss, theta, &u)?;
        self.stats.transpose_solves += 1;
        Ok((adj.loss, adj.gradient))
    }

    /// Like [`Self::loss_and_grad`] but maps solver failures to an infinite
    /// loss so a line search can back off.
    pub fn objective(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.loss_and_grad(theta) {
            Ok(v) => Ok(v),
            Err(Error::NotConverged { .. } | Error::Singular(_) | Error::Domain(_)) => {
                self.stats.failed_solves += 1;
                Ok((f64::INFINITY, vec![0.0; theta.len()]))
            }
            Err(e) => Err(e),
        }
    }
}

/// `A u − θ y` with scalar θ: the model problem used to compare conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConstraint {
    pub a: SparseMatrix,
    pub y: Vec<f64>,
}

impl ModelConstraint {
    pub fn new(a: SparseMatrix, y: Vec<f64>) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Shape(format!(
                "model matrix is {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        check_len("model right-hand side", a.rows(), y.len())?;
        Ok(Self { a, y })
    }
}

impl ConstraintSystem for ModelConstraint {
    fn dim_u(&self) -> usize {
        self.y.len()
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn residual(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("model parameters", 1, theta.len())?;
        let au = self.a.spmv(u)?;
        Ok(au
            .iter()
            .zip(&self.y)
            .map(|(a, y)| a - theta[0] * y)
            .collect())
    }

    fn jacobian_u(&self, _theta: &[f64], _u: &[f64]) -> Result<SparseMatrix> {
        Ok(self.a.clone())
    }

    fn theta_pullback(&self, theta: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len("model pullback weights", self.y.len(), w.len())?;
        let mut tape = Tape::new();
        let t = tape.input(theta.to_vec())?;
        let au = tape.constant(self.a.spmv(u)?);
        let y = tape.constant(self.y.clone());
        let ty = tape.mul(t, y)?;
        let f = tape.sub(au, ty)?;
        let wn = tape.constant(w.to_vec());
        let out = tape.dot(wn, f)?;
        tape.set_output(out);
        tape.reverse_grad(&[t])
    }
}
