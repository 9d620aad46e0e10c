//! `(f(u; θ) u′)′ = g` on `(0, 1)` with `u(0) = u(1) = 0`, discretized with
//! midpoint-averaged diffusivities on `n` uniform intervals.

use serde::{Deserialize, Serialize};

use super::{run_pcl, run_pm, validate_lambda, BenchmarkTrace, Method};
use crate::autodiff::Tape;
use crate::error::{check_len, Error, Result};
use crate::fd::Grid1d;
use crate::nn::Mlp;
use crate::optimize::LbfgsSettings;
use crate::pcl::{newton_solve, ConstraintSystem, NewtonSettings, ObservationLoss, PclProblem};
use crate::penalty::PenaltyProblem;
use crate::sparse::SparseMatrix;

/// The diffusivity `f(u; θ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Law1d {
    /// `Σ_k θ_k u^k`.
    Polynomial { degree: usize },
    /// A one-output network plus a fixed offset.
    Network { net: Mlp, offset: f64 },
}

impl Law1d {
    /// A network law whose offset makes `f(0; θ₀) = 1`.
    pub fn network(net: Mlp, theta0: &[f64]) -> Result<Self> {
        if net.n_outputs() != 1 {
            return Err(Error::InvalidInput(
                "the 1D diffusivity network needs one output".into(),
            ));
        }
        let f0 = net.forward(theta0, &[0.0])?[0][0];
        Ok(Law1d::Network {
            net,
            offset: 1.0 - f0,
        })
    }

    pub fn n_params(&self) -> usize {
        match self {
            Law1d::Polynomial { degree } => degree + 1,
            Law1d::Network { net, .. } => net.n_params(),
        }
    }

    /// Values and `∂f/∂u` at each sample.
    pub fn eval(&self, theta: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("diffusivity parameters", self.n_params(), theta.len())?;
        match self {
            Law1d::Polynomial { .. } => Ok(u
                .iter()
                .map(|&x| {
                    let (mut v, mut d, mut p) = (0.0, 0.0, 1.0);
                    for (k, c) in theta.iter().enumerate() {
                        v += c * p;
                        if k + 1 < theta.len() {
                            d += (k + 1) as f64 * theta[k + 1] * p;
                        }
                        p *= x;
                    }
                    (v, d)
                })
                .unzip()),
            Law1d::Network { net, offset } => {
                let (f, df) = net.forward_with_derivative(theta, u)?;
                Ok((
                    f.iter().map(|v| v[0] + offset).collect(),
                    df.iter().map(|v| v[0]).collect(),
                ))
            }
        }
    }

    /// `Σ_c cot_c ∇_θ f(u_c; θ)`.
    pub fn pullback(&self, theta: &[f64], u: &[f64], cot: &[f64]) -> Result<Vec<f64>> {
        check_len("diffusivity cotangent", u.len(), cot.len())?;
        match self {
            Law1d::Polynomial { .. } => {
                let mut g = vec![0.0; theta.len()];
                for (&x, &c) in u.iter().zip(cot) {
                    let mut p = c;
                    for gk in g.iter_mut() {
                        *gk += p;
                        p *= x;
                    }
                }
                Ok(g)
            }
            Law1d::Network { net, .. } => {
                let mut tape = Tape::new();
                let t = tape.input(theta.to_vec())?;
                let un = tape.constant(u.to_vec());
                let f = net.forward_tape(&mut tape, t, un)?;
                let c = tape.constant(cot.to_vec());
                let out = tape.dot(f, c)?;
                tape.set_output(out);
                tape.reverse_grad(&[t])
            }
        }
    }
}

/// The discrete problem; unknowns are the `n − 1` interior nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct Poisson1DProblem {
    pub grid: Grid1d,
    pub law: Law1d,
    /// `g` at all `n + 1` nodes.
    pub source: Vec<f64>,
    /// Observed node indices (full numbering, interior only).
    pub obs_index: Vec<usize>,
    pub obs: Vec<f64>,
}

impl Poisson1DProblem {
    pub fn new(n: usize, law: Law1d, source: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidInput(format!(
                "need at least 3 intervals, got {n}"
            )));
        }
        check_len("source samples", n + 1, source.len())?;
        Ok(Self {
            grid: Grid1d::new(n),
            law,
            source,
            obs_index: Vec::new(),
            obs: Vec::new(),
        })
    }

    /// `g(x) = −π² sin(πx)`: with `f ≡ 1` the solution is `sin(πx)`.
    pub fn sine_source(n: usize) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        Grid1d::new(n)
            .nodes()
            .iter()
            .map(|x| -pi * pi * (pi * x).sin())
            .collect()
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn with_observations(mut self, index: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len("observations", index.len(), data.len())?;
        if let Some(&i) = index.iter().find(|&&i| i == 0 || i >= self.n()) {
            return Err(Error::InvalidInput(format!(
                "observation index {i} is not an interior node of 0..={}",
                self.n()
            )));
        }
        self.obs_index = index;
        self.obs = data;
        Ok(self)
    }

    pub fn with_law(mut self, law: Law1d) -> Self {
        self.law = law;
        self
    }

    /// Replaces the observations by this problem's own solution at θ.
    pub fn synthesize(self, theta: &[f64], index: Vec<usize>) -> Result<Self> {
        let u = newton_solve(
            &self,
            theta,
            &vec![0.0; self.dim_u()],
            &NewtonSettings::default(),
        )?
        .u;
        let full = self.embed(&u);
        let data = index
            .iter()
            .map(|&i| full.get(i).copied().unwrap_or(f64::NAN))
            .collect();
        self.with_observations(index, data)
    }

    /// Interior values padded with the zero boundary values.
    pub fn embed(&self, u: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(u.len() + 2);
        v.push(0.0);
        v.extend_from_slice(u);
        v.push(0.0);
        v
    }

    fn interior_of<'a>(&self, u_full: &'a [f64]) -> Result<&'a [f64]> {
        check_len("nodal values", self.n() + 1, u_full.len())?;
        if u_full[0] != 0.0 || u_full[self.n()] != 0.0 {
            return Err(Error::InvalidInput("boundary values must be zero".into()));
        }
        Ok(&u_full[1..self.n()])
    }

    fn cell_diffusivity(
        &self,
        theta: &[f64],
        full: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mid = self.grid.midpoint_average().spmv(full)?;
        let (f, df) = self.law.eval(theta, &mid)?;
        Ok((mid, f, df))
    }

    /// `Σ_{i ∈ I_obs} (u_i − u_i,obs)²` over interior unknowns.
    pub fn loss(&self) -> Result<ObservationLoss> {
        let idx: Vec<usize> = self.obs_index.iter().map(|i| i - 1).collect();
        ObservationLoss::at_indices(self.dim_u(), &idx, self.obs.clone(), 1.0)
    }
}

/// `F_i = f(ū_{i+½})(u_{i+1} − u_i)/h² − f(ū_{i−½})(u_i − u_{i−1})/h² − g_i` for
/// interior nodes `i`, from the full nodal vector.
pub fn poisson1d_residual(
    problem: &Poisson1DProblem,
    theta: &[f64],
    u_full: &[f64],
) -> Result<Vec<f64>> {
    problem.interior_of(u_full)?;
    let (_, f, _) = problem.cell_diffusivity(theta, u_full)?;
    let h2 = problem.grid.h().powi(2);
    Ok((1..problem.n())
        .map(|i| {
            (f[i] * (u_full[i + 1] - u_full[i]) - f[i - 1] * (u_full[i] - u_full[i - 1])) / h2
                - problem.source[i]
        })
        .collect())
}

/// `∂F/∂u` over the interior unknowns, including the `∂f/∂u` terms.
pub fn poisson1d_jacobian(
    problem: &Poisson1DProblem,
    theta: &[f64],
    u_full: &[f64],
) -> Result<SparseMatrix> {
    problem.interior_of(u_full)?;
    let (_, f, df) = problem.cell_diffusivity(theta, u_full)?;
    let n = problem.n();
    let h2 = problem.grid.h().powi(2);
    let mut t = Vec::with_capacity(3 * n);
    for i in 1..n {
        let (dr, dl) = (u_full[i + 1] - u_full[i], u_full[i] - u_full[i - 1]);
        let mut add = |node: usize, v: f64| {
            if node >= 1 && node < n {
                t.push((i - 1, node - 1, v / h2));
            }
        };
        add(i + 1, f[i] + 0.5 * df[i] * dr);
        add(
            i,
            -f[i] - f[i - 1] + 0.5 * df[i] * dr - 0.5 * df[i - 1] * dl,
        );
        add(i - 1, f[i - 1] - 0.5 * df[i - 1] * dl);
    }
    SparseMatrix::from_triplets(n - 1, n - 1, &t)
}

/// `2(u_i − u_i,obs)` on observed nodes, zero elsewhere, over all nodes.
pub fn poisson1d_loss_grad_dldu(problem: &Poisson1DProblem, u_full: &[f64]) -> Result<Vec<f64>> {
    check_len("nodal values", problem.n() + 1, u_full.len())?;
    let mut g = vec![0.0; u_full.len()];
    for (&i, &o) in problem.obs_index.iter().zip(&problem.obs) {
        g[i] = 2.0 * (u_full[i] - o);
    }
    Ok(g)
}

impl ConstraintSystem for Poisson1DProblem {
    fn dim_u(&self) -> usize {
        self.n() - 1
    }

    fn dim_theta(&self) -> usize {
        self.law.n_params()
    }

    fn residual(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("interior values", self.dim_u(), u.len())?;
        poisson1d_residual(self, theta, &self.embed(u))
    }

    fn jacobian_u(&self, theta: &[f64], u: &[f64]) -> Result<SparseMatrix> {
        check_len("interior values", self.dim_u(), u.len())?;
        poisson1d_jacobian(self, theta, &self.embed(u))
    }

    fn theta_pullback(&self, theta: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint", self.dim_u(), w.len())?;
        let full = self.embed(u);
        let mid = self.grid.midpoint_average().spmv(&full)?;
        let h2 = self.grid.h().powi(2);
        let n = self.n();
        // Cell c enters row c (as the right flux) and row c+1 (as the left flux).
        let cot: Vec<f64> = (0..n)
            .map(|c| {
                let d = (full[c + 1] - full[c]) / h2;
                let right_of_row = if c >= 1 { w[c - 1] } else { 0.0 };
                let left_of_row = if c + 1 < n { w[c] } else { 0.0 };
                d * (right_of_row - left_of_row)
            })
            .collect();
        self.law.pullback(theta, &mid, &cot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poisson1DConfig {
    pub method: Method,
    pub n: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub lambda: Option<f64>,
    pub seed: u64,
    /// Observe every `obs_stride`-th interior node.
    pub obs_stride: usize,
    pub optimizer: LbfgsSettings,
}

impl Poisson1DConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            n: 31,
            hidden_layers: 1,
            width: 20,
            lambda: None,
            seed,
            obs_stride: 2,
            optimizer: LbfgsSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_lambda(self.method, self.lambda)?;
        if self.n < 3
            || self.obs_stride == 0
            || !(1..=5).contains(&self.hidden_layers)
            || self.width == 0
        {
            return Err(Error::InvalidInput(
                "poisson-1d needs n >= 3, obs_stride >= 1, 1..=5 hidden layers and positive width"
                    .into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// Truth `f(u) = 1 + u²`.
pub const TRUE_LAW_1D: [f64; 3] = [1.0, 0.0, 1.0];

impl Poisson1DProblem {
    /// Observations from `f = 1 + u²` and the sine source, then a network law
    /// initialized from `seed`. Returns the problem and the initial weights.
    pub fn benchmark(config: &Poisson1DConfig) -> Result<(Self, Vec<f64>)> {
        let index: Vec<usize> = (1..config.n).step_by(config.obs_stride).collect();
        let truth = Poisson1DProblem::new(
            config.n,
            Law1d::Polynomial { degree: 2 },
            Self::sine_source(config.n),
        )?
        .synthesize(&TRUE_LAW_1D, index)?;
        let net = Mlp::with_hidden(config.hidden_layers, config.width, 1)?;
        let theta0 = net.init_params(config.seed);
        let law = Law1d::network(net, &theta0)?;
        Ok((truth.with_law(law), theta0))
    }

    /// `√Σ (f*(u_i) − f(u_i; θ))²` at 100 points spanning `[0, max u_obs]`.
    pub fn law_error(&self, theta: &[f64]) -> f64 {
        let top = self.obs.iter().fold(0.0f64, |m, v| m.max(*v));
        let u: Vec<f64> = (0..100).map(|i| top * i as f64 / 99.0).collect();
        match self.law.eval(theta, &u) {
            Ok((f, _)) => u
                .iter()
                .zip(f)
                .map(|(x, v)| (1.0 + x * x - v).powi(2))
                .sum::<f64>()
                .sqrt(),
            Err(_) => f64::NAN,
        }
    }
}

pub fn run_poisson_1d(config: &Poisson1DConfig) -> Result<BenchmarkTrace> {
    config.validate()?;
    let (problem, theta0) = Poisson1DProblem::benchmark(config)?;
    let loss = problem.loss()?;
    let u0 = vec![0.0; problem.dim_u()];
    let metric = {
        let p = problem.clone();
        move |t: &[f64]| p.law_error(t)
    };
    match config.method {
        Method::Pcl => {
            let mut pcl = PclProblem::new(problem, loss, u0)?;
            run_pcl(
                &mut pcl,
                &theta0,
                &config.optimizer,
                metric,
                f64::NEG_INFINITY,
            )
        }
        Method::Pm => {
            let pm = PenaltyProblem::new(problem, loss, config.lambda.unwrap_or(0.0))?;
            run_pm(
                &pm,
                &theta0,
                &u0,
                &NewtonSettings::default(),
                &config.optimizer,
                metric,
                f64::NEG_INFINITY,
            )
        }
    }
}
