//! Reproducible inverse problems, each runnable with constrained learning
//! (PCL) or the penalty method (PM), with per-iteration traces.

mod helmholtz;
mod poisson1d;
mod poisson2d;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use helmholtz::{
    helmholtz_error, helmholtz_forward, run_helmholtz, Domain, HelmholtzConfig, HelmholtzProblem,
    HelmholtzSystem, THETA_STAR,
};
pub use poisson1d::{
    poisson1d_jacobian, poisson1d_loss_grad_dldu, poisson1d_residual, run_poisson_1d, Law1d,
    Poisson1DConfig, Poisson1DProblem,
};
pub use poisson2d::{
    calibrate_source, nn_error_metric, poisson2d_residual, run_poisson_nn, test_function_set,
    Law2d, Poisson2DProblem, PoissonNNConfig, PoissonNNInstance, SourceShape, TestSet,
};

use crate::error::{Error, Result};
use crate::optimize::{minimize_until, IterRecord, LbfgsSettings, StopReason};
use crate::pcl::{adjoint_gradient, ConstraintSystem, Loss, NewtonSettings, PclProblem};
use crate::penalty::PenaltyProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pcl,
    Pm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pcl => "pcl",
            Method::Pm => "pm",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcl" => Ok(Method::Pcl),
            "pm" => Ok(Method::Pm),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}' (expected pcl or pm)"
            ))),
        }
    }
}

/// Checks `λ` against the method: required and positive for PM, absent for PCL.
pub fn validate_lambda(method: Method, lambda: Option<f64>) -> Result<()> {
    match (method, lambda) {
        (Method::Pm, None) => Err(Error::InvalidInput(
            "the penalty method needs a penalty weight λ".into(),
        )),
        (Method::Pm, Some(l)) if !(l >= 0.0) || !l.is_finite() => Err(Error::InvalidInput(
            format!("penalty weight must be finite and >= 0, got {l}"),
        )),
        (Method::Pcl, Some(_)) => Err(Error::InvalidInput(
            "λ only applies to the penalty method".into(),
        )),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkTrace {
    pub method: Method,
    pub records: Vec<IterRecord>,
    pub stop_reason: StopReason,
    /// Final parameters (the θ-block for PM).
    pub theta: Vec<f64>,
    pub final_error: f64,
    pub final_loss: f64,
    pub wall_time_s: f64,
}

impl BenchmarkTrace {
    /// Accepted optimizer iterations.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    /// First iteration whose error is at most `tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.error <= tol)
            .map(|r| r.iteration)
    }

    /// `iteration,loss,error,grad_norm`, one row per iteration.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["iteration", "loss", "error", "grad_norm"])
            .map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.loss.to_string(),
                r.error.to_string(),
                r.grad_norm.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Run summary with the configuration echoed back.
    pub fn summary<C: Serialize>(&self, config: &C) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "config": serde_json::to_value(config).map_err(|e| Error::Parse(e.to_string()))?,
            "method": self.method,
            "stop_reason": self.stop_reason.to_string(),
            "iterations": self.iterations(),
            "final_error": self.final_error,
            "final_loss": self.final_loss,
            "wall_time_s": self.wall_time_s,
        }))
    }
}

/// Drives L-BFGS over θ with the constraint solved at every evaluation.
pub(crate) fn run_pcl<S, L>(
    problem: &mut PclProblem<S, L>,
    theta0: &[f64],
    settings: &LbfgsSettings,
    error: impl Fn(&[f64]) -> f64,
    target: f64,
) -> Result<BenchmarkTrace>
where
    S: ConstraintSystem,
    L: Loss,
{
    let start = Instant::now();
    let r = minimize_until(
        |t: &[f64]| problem.objective(t),
        theta0,
        settings,
        &error,
        target,
    )?;
    Ok(BenchmarkTrace {
        method: Method::Pcl,
        final_error: error(&r.z),
        final_loss: r.loss,
        records: r.trace.records,
        stop_reason: r.stop_reason,
        theta: r.z,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Drives L-BFGS over `z = (θ, u)`, starting from the forward solution at θ₀.
pub(crate) fn run_pm<S, L>(
    problem: &PenaltyProblem<S, L>,
    theta0: &[f64],
    u_guess: &[f64],
    newton: &NewtonSettings,
    settings: &LbfgsSettings,
    error: impl Fn(&[f64]) -> f64,
    target: f64,
) -> Result<BenchmarkTrace>
where
    S: ConstraintSystem,
    L: Loss,
{
    let start = Instant::now();
    let z0 = problem.initial_point(theta0, u_guess, newton)?;
    let nt = problem.dim_theta();
    let r = minimize_until(
        |z: &[f64]| problem.objective(z),
        &z0,
        settings,
        |z| error(&z[..nt]),
        target,
    )?;
    let theta = r.z[..nt].to_vec();
    Ok(BenchmarkTrace {
        method: Method::Pm,
        final_error: error(&theta),
        final_loss: r.loss,
        records: r.trace.records,
        stop_reason: r.stop_reason,
        theta,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One coordinate of an adjoint-versus-finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub index: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

/// Compares the adjoint gradient of `θ ↦ L(u(θ))` with central differences
/// at the given coordinates. Each perturbed state is re-solved from `u_guess`.
pub fn check_adjoint_gradient(
    system: &dyn ConstraintSystem,
    loss: &dyn Loss,
    theta: &[f64],
    u_guess: &[f64],
    newton: &NewtonSettings,
    coords: &[usize],
) -> Result<Vec<GradientCheck>> {
    let solve = |t: &[f64]| crate::pcl::newton_solve(system, t, u_guess, newton).map(|r| r.u);
    let u = solve(theta)?;
    let adj = adjoint_gradient(system, loss, theta, &u)?;
    let gscale = adj.gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    coords
        .iter()
        .map(|&j| {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[j] += h;
            tm[j] -= h;
            let fd = (loss.value(&solve(&tp)?)? - loss.value(&solve(&tm)?)?) / (2.0 * h);
            let a = adj.gradient[j];
            let denom = a
                .abs()
                .max(fd.abs())
                .max(1e-6 * gscale)
                .max(f64::MIN_POSITIVE);
            Ok(GradientCheck {
                index: j,
                adjoint: a,
                finite_difference: fd,
                rel_error: (a - fd).abs() / denom,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parsing_and_lambda_rules() {
        assert_eq!("pcl".parse::<Method>().unwrap(), Method::Pcl);
        assert_eq!("pm".parse::<Method>().unwrap(), Method::Pm);
        assert!("adam".parse::<Method>().is_err());
        assert!(validate_lambda(Method::Pm, None).is_err());
        assert!(validate_lambda(Method::Pm, Some(-1.0)).is_err());
        assert!(validate_lambda(Method::Pcl, Some(1.0)).is_err());
        assert!(validate_lambda(Method::Pm, Some(10.0)).is_ok());
        assert!(validate_lambda(Method::Pcl, None).is_ok());
    }

    #[test]
    fn trace_csv_format() {
        let rec = |i: usize, e: f64| IterRecord {
            iteration: i,
            loss: 0.5,
            grad_norm: 1.25,
            step_len: 0.0,
            error: e,
            evaluations: i + 1,
        };
        let t = BenchmarkTrace {
            method: Method::Pcl,
            records: vec![rec(0, 2.0), rec(1, 0.1)],
            stop_reason: StopReason::GradTol,
            theta: vec![],
            final_error: 0.1,
            final_loss: 0.5,
            wall_time_s: 0.0,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,loss,error,grad_norm\n0,0.5,2,1.25\n1,0.5,0.1,1.25\n"
        );
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.iterations_to(0.5), Some(1));
        assert_eq!(t.iterations_to(0.01), None);
        let s = t.summary(&serde_json::json!({"k": 0.5})).unwrap();
        assert_eq!(s["stop_reason"], "grad_tol");
        assert_eq!(s["config"]["k"], 0.5);
    }
}
