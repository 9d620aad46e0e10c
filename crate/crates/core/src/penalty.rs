//! The penalty method: joint minimization of `L(u) + λ‖F(θ, u)‖²` over `z = (θ, u)`.

use crate::error::{check_len, Error, Result};
use crate::pcl::{newton_solve, ConstraintSystem, Loss, NewtonSettings};

pub struct PenaltyProblem<S, L> {
    pub system: S,
    pub loss: L,
    lambda: f64,
}

impl<S: ConstraintSystem, L: Loss> PenaltyProblem<S, L> {
    pub fn new(system: S, loss: L, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "penalty weight {lambda} must be finite and >= 0"
            )));
        }
        Ok(Self {
            system,
            loss,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim_theta(&self) -> usize {
        self.system.dim_theta()
    }

    pub fn dim_z(&self) -> usize {
        self.system.dim_theta() + self.system.dim_u()
    }

    /// `z = (θ, u)`.
    pub fn pack(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("penalty parameters", self.system.dim_theta(), theta.len())?;
        check_len("penalty state", self.system.dim_u(), u.len())?;
        Ok(theta.iter().chain(u).copied().collect())
    }

    pub fn unpack<'a>(&self, z: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        check_len("penalty joint variable", self.dim_z(), z.len())?;
        Ok(z.split_at(self.system.dim_theta()))
    }

    /// Starting point: θ₀ with the state solving the constraint at θ₀.
    pub fn initial_point(
        &self,
        theta0: &[f64],
        u_guess: &[f64],
        newton: &NewtonSettings,
    ) -> Result<Vec<f64>> {
        let u = newton_solve(&self.system, theta0, u_guess, newton)?.u;
        self.pack(theta0, &u)
    }

    /// `‖F(θ, u)‖²` at `z`.
    pub fn constraint_norm_sq(&self, z: &[f64]) -> Result<f64> {
        let (theta, u) = self.unpack(z)?;
        Ok(self.system.residual(theta, u)?.iter().map(|v| v * v).sum())
    }

    /// Value and gradient over `z`. The u-block of the penalty term is
    /// `2λ (∂F/∂u)ᵀ F`; the θ-block is the pullback of `w = 2λF`.
    pub fn loss_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (theta, u) = self.unpack(z)?;
        let (l, dl) = self.loss.value_and_grad(u)?;
        let (f, jac) = self.system.residual_and_jacobian(theta, u)?;
        let ff: f64 = f.iter().map(|v| v * v).sum();
        let w: Vec<f64> = f.iter().map(|v| 2.0 * self.lambda * v).collect();
        let mut grad = if self.lambda == 0.0 {
            vec![0.0; theta.len()]
        } else {
            self.system.theta_pullback(theta, u, &w)?
        };
        let ju = jac.spmv_transpose(&w)?;
        grad.extend(dl.iter().zip(&ju).map(|(a, b)| a + b));
        Ok((l + self.lambda * ff, grad))
    }

    /// Maps non-finite evaluations and domain failures to an infinite loss.
    pub fn objective(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.loss_and_grad(z) {
            Ok((l, g)) if l.is_finite() => Ok((l, g)),
            Ok(_) | Err(Error::Domain(_)) => Ok((f64::INFINITY, vec![0.0; z.len()])),
            Err(e) => Err(e),
        }
    }
}
