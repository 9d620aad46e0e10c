//! `−∇·(diag(f₁(u), f₂(u)) ∇u) = h` on the unit square with `u = 0` on the
//! boundary, on a uniform node grid with edge-averaged diffusivities.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_pcl, run_pm, validate_lambda, BenchmarkTrace, Method};
use crate::autodiff::Tape;
use crate::error::{check_len, Error, Result};
use crate::fd::NodeGrid2d;
use crate::jacprop::{self, Field};
use crate::nn::Mlp;
use crate::optimize::LbfgsSettings;
use crate::pcl::{newton_solve, ConstraintSystem, NewtonSettings, ObservationLoss, PclProblem};
use crate::penalty::PenaltyProblem;
use crate::sparse::SparseMatrix;

/// The four reference diffusivity pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestSet {
    One,
    Two,
    Three,
    Four,
}

pub fn test_function_set(id: u8) -> Result<TestSet> {
    match id {
        1 => Ok(TestSet::One),
        2 => Ok(TestSet::Two),
        3 => Ok(TestSet::Three),
        4 => Ok(TestSet::Four),
        other => Err(Error::InvalidInput(format!(
            "test function set must be 1..=4, got {other}"
        ))),
    }
}

impl TestSet {
    pub fn id(self) -> u8 {
        match self {
            TestSet::One => 1,
            TestSet::Two => 2,
            TestSet::Three => 3,
            TestSet::Four => 4,
        }
    }

    /// `(f₁, f₁′)`. Fractional powers use `max(u, 0)`.
    pub fn f1(self, u: f64) -> (f64, f64) {
        let up = u.max(0.0);
        match self {
            TestSet::One => (0.1 + up.powf(3.1), 3.1 * up.powf(2.1)),
            TestSet::Two => (0.1 + 0.1 * u.cos(), -0.1 * u.sin()),
            TestSet::Three => (0.1 + u.powi(3), 3.0 * u * u),
            TestSet::Four => (0.1 + u * u, 2.0 * u),
        }
    }

    /// `(f₂, f₂′)`; the kink of set 4 takes the left derivative.
    pub fn f2(self, u: f64) -> (f64, f64) {
        let up = u.max(0.0);
        match self {
            TestSet::One => (0.1 + up.powf(3.5), 3.5 * up.powf(2.5)),
            TestSet::Two => (0.1 + 0.1 * u.sin(), 0.1 * u.cos()),
            TestSet::Three => {
                let d = 1.0 + u * u;
                (0.1 + 0.1 / d, -0.2 * u / (d * d))
            }
            TestSet::Four => (0.1 + (u - 0.3).max(0.0), if u > 0.3 { 1.0 } else { 0.0 }),
        }
    }
}

/// `√(Σ (f₁(u_i) − f₁(u_i; θ))² + Σ (f₂(u_i) − f₂(u_i; θ))²)` over
/// `u_i = 0.6 i / 99`, `i = 0..=99`.
pub fn nn_error_metric(net: &Mlp, theta: &[f64], set: TestSet) -> Result<f64> {
    let u: Vec<f64> = (0..100).map(|i| 0.6 * i as f64 / 99.0).collect();
    let out = net.forward(theta, &u)?;
    Ok(u.iter()
        .zip(&out)
        .map(|(&x, o)| (set.f1(x).0 - o[0]).powi(2) + (set.f2(x).0 - o[1]).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Spatial profile of the source `h = s · shape(x, y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceShape {
    /// `sin(πx) sin(πy)`. With constant diffusivities the solution then
    /// depends on `f₁ + f₂` only, so the two are weakly separable.
    Sine,
    /// `1`: excites modes with unequal x and y frequencies.
    #[default]
    Uniform,
}

impl SourceShape {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        let pi = std::f64::consts::PI;
        match self {
            SourceShape::Sine => (pi * x).sin() * (pi * y).sin(),
            SourceShape::Uniform => 1.0,
        }
    }
}

impl FromStr for SourceShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(SourceShape::Sine),
            "uniform" => Ok(SourceShape::Uniform),
            other => Err(Error::InvalidInput(format!(
                "unknown source '{other}' (expected sine or uniform)"
            ))),
        }
    }
}

/// The diffusivity pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Law2d {
    Constant(f64),
    Truth(TestSet),
    /// A two-output network: output 0 is `f₁`, output 1 is `f₂`.
    Network(Mlp),
}

/// Diffusivities and their `u`-derivatives on x-edges and y-edges.
struct EdgeValues {
    f1: Vec<f64>,
    d1: Vec<f64>,
    f2: Vec<f64>,
    d2: Vec<f64>,
}

impl Law2d {
    pub fn n_params(&self) -> usize {
        match self {
            Law2d::Network(net) => net.n_params(),
            _ => 0,
        }
    }

    fn eval(&self, theta: &[f64], ux: &[f64], uy: &[f64]) -> Result<EdgeValues> {
        check_len("diffusivity parameters", self.n_params(), theta.len())?;
        let pointwise = |g: &dyn Fn(f64) -> (f64, f64), u: &[f64]| -> (Vec<f64>, Vec<f64>) {
            u.iter().map(|&x| g(x)).unzip()
        };
        let ((f1, d1), (f2, d2)) = match self {
            Law2d::Constant(k) => (
                (vec![*k; ux.len()], vec![0.0; ux.len()]),
                (vec![*k; uy.len()], vec![0.0; uy.len()]),
            ),
            Law2d::Truth(set) => (pointwise(&|x| set.f1(x), ux), pointwise(&|x| set.f2(x), uy)),
            Law2d::Network(net) => {
                let (fx, dx) = net.forward_with_derivative(theta, ux)?;
                let (fy, dy) = net.forward_with_derivative(theta, uy)?;
                (
                    (
                        fx.iter().map(|v| v[0]).collect(),
                        dx.iter().map(|v| v[0]).collect(),
                    ),
                    (
                        fy.iter().map(|v| v[1]).collect(),
                        dy.iter().map(|v| v[1]).collect(),
                    ),
                )
            }
        };
        Ok(EdgeValues { f1, d1, f2, d2 })
    }

    /// `Σ_e cx_e ∇_θ f₁(ux_e) + Σ_e cy_e ∇_θ f₂(uy_e)`.
    fn pullback(
        &self,
        theta: &[f64],
        ux: &[f64],
        uy: &[f64],
        cx: &[f64],
        cy: &[f64],
    ) -> Result<Vec<f64>> {
        let Law2d::Network(net) = self else {
            return Ok(Vec::new());
        };
        let mut tape = Tape::new();
        let t = tape.input(theta.to_vec())?;
        let u = tape.constant(ux.iter().chain(uy).copied().collect());
        let f = net.forward_tape(&mut tape, t, u)?;
        // Outputs are stored sample by sample, two per sample.
        let mut cot = vec![0.0; 2 * (ux.len() + uy.len())];
        for (e, c) in cx.iter().enumerate() {
            cot[2 * e] = *c;
        }
        for (e, c) in cy.iter().enumerate() {
            cot[2 * (ux.len() + e) + 1] = *c;
        }
        let c = tape.constant(cot);
        let out = tape.dot(f, c)?;
        tape.set_output(out);
        tape.reverse_grad(&[t])
    }
}

/// Unknowns are the interior nodal values in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct Poisson2DProblem {
    pub grid: NodeGrid2d,
    pub law: Law2d,
    /// `h` at the interior nodes.
    pub source: Vec<f64>,
    interior: Vec<usize>,
    embed: SparseMatrix,
    avg_x: SparseMatrix,
    avg_y: SparseMatrix,
    diff_x: SparseMatrix,
    diff_y: SparseMatrix,
    /// Interior rows of `D_xᵀ`, `D_yᵀ`: flux differences at interior nodes.
    div_x: SparseMatrix,
    div_y: SparseMatrix,
}

impl Poisson2DProblem {
    /// `n × n` nodes, boundary included.
    pub fn new(n: usize, law: Law2d, source: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidInput(format!(
                "need at least 3 nodes per side, got {n}"
            )));
        }
        let grid = NodeGrid2d::new(n);
        let interior: Vec<usize> = (0..grid.len()).filter(|&k| !grid.is_boundary(k)).collect();
        let t: Vec<_> = interior
            .iter()
            .enumerate()
            .map(|(c, &k)| (k, c, 1.0))
            .collect();
        let embed = SparseMatrix::from_triplets(grid.len(), interior.len(), &t)?;
        let restrict = embed.transpose();
        let (diff_x, diff_y) = (grid.edge_difference(true), grid.edge_difference(false));
        let src = interior
            .iter()
            .map(|&k| {
                let (x, y) = grid.point(k);
                source(x, y)
            })
            .collect();
        Ok(Self {
            div_x: restrict.matmul(&diff_x.transpose())?,
            div_y: restrict.matmul(&diff_y.transpose())?,
            avg_x: grid.edge_average(true),
            avg_y: grid.edge_average(false),
            diff_x,
            diff_y,
            grid,
            law,
            source: src,
            interior,
            embed,
        })
    }

    /// `h = s · shape(x, y)`.
    pub fn with_source(n: usize, law: Law2d, shape: SourceShape, s: f64) -> Result<Self> {
        Self::new(n, law, |x, y| s * shape.eval(x, y))
    }

    pub fn with_law(mut self, law: Law2d) -> Self {
        self.law = law;
        self
    }

    /// Node index of each unknown.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Interior values extended by zero to every node.
    pub fn embed(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.embed.spmv(u)
    }

    pub fn solve(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(newton_solve(
            self,
            theta,
            &vec![0.0; self.dim_u()],
            &NewtonSettings::default(),
        )?
        .u)
    }

    /// The residual and its Jacobian, propagated through the field operations.
    pub fn residual_field(&self, theta: &[f64], u: &[f64]) -> Result<Field> {
        check_len("interior values", self.dim_u(), u.len())?;
        let full = Field::new(self.embed.spmv(u)?, self.embed.clone())?;
        let ux = jacprop::apply(&self.avg_x, &full)?;
        let uy = jacprop::apply(&self.avg_y, &full)?;
        let ev = self.law.eval(theta, ux.values(), uy.values())?;
        let fx = jacprop::map_pointwise(&ux, ev.f1, ev.d1)?;
        let fy = jacprop::map_pointwise(&uy, ev.f2, ev.d2)?;
        let flux_x = jacprop::mul(&fx, &jacprop::apply(&self.diff_x, &full)?)?;
        let flux_y = jacprop::mul(&fy, &jacprop::apply(&self.diff_y, &full)?)?;
        let r = jacprop::add(
            &jacprop::apply(&self.div_x, &flux_x)?,
            &jacprop::apply(&self.div_y, &flux_y)?,
        )?;
        let minus_h: Vec<f64> = self.source.iter().map(|v| -v).collect();
        jacprop::add_constant(&r, &minus_h)
    }
}

/// Per interior node: `D_xᵀ(f₁(ū_x) D_x u) + D_yᵀ(f₂(ū_y) D_y u) − h`, which is
/// `−∇·(f ∇u) − h` for a smooth field.
pub fn poisson2d_residual(
    problem: &Poisson2DProblem,
    theta: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    check_len("interior values", problem.dim_u(), u.len())?;
    let full = problem.embed.spmv(u)?;
    let ev = problem.law.eval(
        theta,
        &problem.avg_x.spmv(&full)?,
        &problem.avg_y.spmv(&full)?,
    )?;
    let fx: Vec<f64> = problem
        .diff_x
        .spmv(&full)?
        .iter()
        .zip(&ev.f1)
        .map(|(d, f)| d * f)
        .collect();
    let fy: Vec<f64> = problem
        .diff_y
        .spmv(&full)?
        .iter()
        .zip(&ev.f2)
        .map(|(d, f)| d * f)
        .collect();
    let rx = problem.div_x.spmv(&fx)?;
    let ry = problem.div_y.spmv(&fy)?;
    Ok(rx
        .iter()
        .zip(&ry)
        .zip(&problem.source)
        .map(|((a, b), h)| a + b - h)
        .collect())
}

impl ConstraintSystem for Poisson2DProblem {
    fn dim_u(&self) -> usize {
        self.interior.len()
    }

    fn dim_theta(&self) -> usize {
        self.law.n_params()
    }

    fn residual(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        poisson2d_residual(self, theta, u)
    }

    fn jacobian_u(&self, theta: &[f64], u: &[f64]) -> Result<SparseMatrix> {
        Ok(self.residual_field(theta, u)?.into_parts().1)
    }

    fn residual_and_jacobian(&self, theta: &[f64], u: &[f64]) -> Result<(Vec<f64>, SparseMatrix)> {
        Ok(self.residual_field(theta, u)?.into_parts())
    }

    fn theta_pullback(&self, theta: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint", self.dim_u(), w.len())?;
        let full = self.embed.spmv(u)?;
        // ∂F/∂f₁ on edge e is div_x[:, e] · (D_x u)_e.
        let cx: Vec<f64> = self
            .div_x
            .spmv_transpose(w)?
            .iter()
            .zip(self.diff_x.spmv(&full)?)
            .map(|(a, d)| a * d)
            .collect();
        let cy: Vec<f64> = self
            .div_y
            .spmv_transpose(w)?
            .iter()
            .zip(self.diff_y.spmv(&full)?)
            .map(|(a, d)| a * d)
            .collect();
        self.law.pullback(
            theta,
            &self.avg_x.spmv(&full)?,
            &self.avg_y.spmv(&full)?,
            &cx,
            &cy,
        )
    }
}

/// The source scale `s` for which the true solution peaks at `target`,
/// found by bisection on forward solves.
pub fn calibrate_source(n: usize, set: TestSet, shape: SourceShape, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidInput(format!(
            "calibration target must be positive, got {target}"
        )));
    }
    let peak = |s: f64| -> Result<f64> {
        let p = Poisson2DProblem::with_source(n, Law2d::Truth(set), shape, s)?;
        Ok(p.solve(&[])?.iter().fold(0.0f64, |m, v| m.max(*v)))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while peak(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NotConverged {
                iterations: 0,
                residual: target,
                best_u: Vec::new(),
            });
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let p = peak(mid)?;
        if (p - target).abs() <= 1e-6 * target {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonNNConfig {
    pub method: Method,
    pub set: u8,
    pub hidden_layers: usize,
    pub width: usize,
    pub lambda: Option<f64>,
    pub seed: u64,
    /// Nodes per side, boundary included.
    pub grid_n: usize,
    pub source: SourceShape,
    /// Source amplitude; calibrated so that `max u = 0.55` when absent.
    pub source_scale: Option<f64>,
    /// Observe every `obs_stride`-th interior node (1 observes the full solution).
    pub obs_stride: usize,
    pub optimizer: LbfgsSettings,
}

impl PoissonNNConfig {
    pub fn new(method: Method, set: u8, hidden_layers: usize, seed: u64) -> Self {
        Self {
            method,
            set,
            hidden_layers,
            width: 20,
            lambda: None,
            seed,
            grid_n: 31,
            source: SourceShape::default(),
            source_scale: None,
            obs_stride: 1,
            optimizer: LbfgsSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_lambda(self.method, self.lambda)?;
        test_function_set(self.set)?;
        if !(1..=5).contains(&self.hidden_layers) {
            return Err(Error::InvalidInput(format!(
                "hidden layers must be 1..=5, got {}",
                self.hidden_layers
            )));
        }
        if self.width == 0 || self.grid_n < 3 || self.obs_stride == 0 {
            return Err(Error::InvalidInput(
                "width, grid size and observation stride must be positive".into(),
            ));
        }
        self.optimizer.validate()
    }

    pub fn network(&self) -> Result<Mlp> {
        Ok(Mlp::with_hidden(self.hidden_layers, self.width, 2)?.squashed())
    }

    /// Seeded weights with output biases placing both diffusivities near 0.2.
    pub fn initial_theta(&self) -> Result<Vec<f64>> {
        let net = self.network()?;
        let mut theta = net.init_params(self.seed);
        for k in 0..2 {
            theta[net.output_bias_index(k)] = (2.0 * 0.2 - 1.0f64).atanh();
        }
        Ok(theta)
    }
}

/// A ready-to-run instance: the network-law problem and its observation loss.
pub struct PoissonNNInstance {
    pub problem: Poisson2DProblem,
    pub loss: ObservationLoss,
    pub theta0: Vec<f64>,
    pub source_scale: f64,
}

impl PoissonNNConfig {
    pub fn instance(&self) -> Result<PoissonNNInstance> {
        self.validate()?;
        let set = test_function_set(self.set)?;
        let s = match self.source_scale {
            Some(s) => s,
            None => calibrate_source(self.grid_n, set, self.source, 0.55)?,
        };
        let truth = Poisson2DProblem::with_source(self.grid_n, Law2d::Truth(set), self.source, s)?;
        let u = truth.solve(&[])?;
        let idx: Vec<usize> = (0..u.len()).step_by(self.obs_stride).collect();
        let data = idx.iter().map(|&i| u[i]).collect();
        let loss = ObservationLoss::at_indices(u.len(), &idx, data, 1.0)?;
        Ok(PoissonNNInstance {
            problem: truth.with_law(Law2d::Network(self.network()?)),
            loss,
            theta0: self.initial_theta()?,
            source_scale: s,
        })
    }
}

pub fn run_poisson_nn(config: &PoissonNNConfig) -> Result<BenchmarkTrace> {
    let inst = config.instance()?;
    let set = test_function_set(config.set)?;
    let net = config.network()?;
    let metric = move |t: &[f64]| nn_error_metric(&net, t, set).unwrap_or(f64::NAN);
    let u0 = vec![0.0; inst.problem.dim_u()];
    match config.method {
        Method::Pcl => {
            let mut pcl = PclProblem::new(inst.problem, inst.loss, u0)?;
            run_pcl(
                &mut pcl,
                &inst.theta0,
                &config.optimizer,
                metric,
                f64::NEG_INFINITY,
            )
        }
        Method::Pm => {
            let pm = PenaltyProblem::new(inst.problem, inst.loss, config.lambda.unwrap_or(0.0))?;
            run_pm(
                &pm,
                &inst.theta0,
                &u0,
                &NewtonSettings::default(),
                &config.optimizer,
                metric,
                f64::NEG_INFINITY,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcl::{adjoint_gradient, Loss};

    #[test]
    fn test_set_values() {
        assert_eq!(TestSet::One.f1(0.0).0, 0.1);
        assert_eq!(TestSet::One.f2(0.0).0, 0.1);
        assert!((TestSet::Two.f1(0.0).0 - 0.2).abs() < 1e-15);
        assert!((TestSet::Two.f2(0.0).0 - 0.1).abs() < 1e-15);
        assert!((TestSet::Four.f2(0.3).0 - 0.1).abs() < 1e-15);
        assert_eq!(TestSet::Four.f2(0.3 - 1e-9).1, 0.0);
        assert_eq!(TestSet::Four.f2(0.3 + 1e-9).1, 1.0);
        assert!(test_function_set(0).is_err() && test_function_set(5).is_err());
        for id in 1..=4 {
            let s = test_function_set(id).unwrap();
            assert_eq!(s.id(), id);
            for &u in &[0.05, 0.2, 0.45] {
                for f in [TestSet::f1, TestSet::f2] {
                    let fd = (f(s, u + 1e-7).0 - f(s, u - 1e-7).0) / 2e-7;
                    assert!((f(s, u).1 - fd).abs() < 1e-6, "set {id} at {u}");
                }
            }
        }
    }

    #[test]
    fn error_metric_examples() {
        let net = Mlp::with_hidden(1, 3, 2).unwrap();
        let zeros = vec![0.0; net.n_params()];
        let direct: f64 = (0..100)
            .map(|i| {
                let u = 0.6 * i as f64 / 99.0;
                TestSet::One.f1(u).0.powi(2) + TestSet::One.f2(u).0.powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!((nn_error_metric(&net, &zeros, TestSet::One).unwrap() - direct).abs() < 1e-12);
        // A constant network matching set 2 at u = 0 only.
        let mut theta = zeros.clone();
        theta[net.output_bias_index(0)] = 0.2;
        theta[net.output_bias_index(1)] = 0.1;
        let e = nn_error_metric(&net, &theta, TestSet::Two).unwrap();
        let want: f64 = (0..100)
            .map(|i| {
                let u = 0.6 * i as f64 / 99.0;
                (TestSet::Two.f1(u).0 - 0.2).powi(2) + (TestSet::Two.f2(u).0 - 0.1).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!((e - want).abs() < 1e-12);
    }

    #[test]
    fn zero_state_zero_source() {
        let p = Poisson2DProblem::new(7, Law2d::Truth(TestSet::Three), |_, _| 0.0).unwrap();
        let r = poisson2d_residual(&p, &[], &[0.0; 25]).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn manufactured_rate_two() {
        let pi = std::f64::consts::PI;
        let kappa = 0.3;
        let mut errs = Vec::new();
        for n in [9, 17, 33, 65] {
            let p = Poisson2DProblem::new(n, Law2d::Constant(kappa), |_, _| 0.0).unwrap();
            let u: Vec<f64> = p
                .interior()
                .iter()
                .map(|&k| {
                    let (x, y) = p.grid.point(k);
                    (pi * x).sin() * (pi * y).sin()
                })
                .collect();
            let r = poisson2d_residual(&p, &[], &u).unwrap();
            let err = r
                .iter()
                .zip(&u)
                .map(|(ri, ui)| (ri - 2.0 * pi * pi * kappa * ui).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 2.0).abs() < 0.1, "rate {rate} from {errs:?}");
        }
    }

    #[test]
    fn jacobian_matches_dense_fd() {
        let net = Mlp::with_hidden(1, 4, 2).unwrap().squashed();
        let theta = net.init_params(5);
        for law in [
            Law2d::Truth(TestSet::One),
            Law2d::Truth(TestSet::Two),
            Law2d::Network(net),
        ] {
            let p = Poisson2DProblem::with_source(7, law, SourceShape::Sine, 1.0).unwrap();
            let th: &[f64] = if p.dim_theta() > 0 { &theta } else { &[] };
            let u: Vec<f64> = (0..25)
                .map(|i| 0.1 + 0.4 * ((i * 7 % 13) as f64 / 13.0))
                .collect();
            let (r, jac) = p.residual_and_jacobian(th, &u).unwrap();
            let r2 = p.residual(th, &u).unwrap();
            for (a, b) in r.iter().zip(&r2) {
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            }
            let h = 1e-6;
            for c in 0..25 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[c] += h;
                um[c] -= h;
                let rp = p.residual(th, &up).unwrap();
                let rm = p.residual(th, &um).unwrap();
                for row in 0..25 {
                    let fd = (rp[row] - rm[row]) / (2.0 * h);
                    assert!(
                        (jac.get(row, c) - fd).abs() < 1e-6 * fd.abs().max(1.0),
                        "({row},{c})"
                    );
                }
            }
            // Five-point closure.
            for row in 0..25 {
                let (ri, rj) = (p.interior()[row] % 7, p.interior()[row] / 7);
                for (c, _) in jac.row(row) {
                    let (ci, cj) = (p.interior()[c] % 7, p.interior()[c] / 7);
                    assert!(ri.abs_diff(ci) + rj.abs_diff(cj) <= 1);
                }
            }
        }
    }

    #[test]
    fn calibration_hits_target() {
        let s = calibrate_source(15, TestSet::One, SourceShape::Sine, 0.55).unwrap();
        let p = Poisson2DProblem::with_source(15, Law2d::Truth(TestSet::One), SourceShape::Sine, s)
            .unwrap();
        let peak = p.solve(&[]).unwrap().iter().fold(0.0f64, |m, v| m.max(*v));
        assert!((peak - 0.55).abs() < 1e-5);
        assert!(p.solve(&[]).unwrap().iter().all(|v| *v >= 0.0 && *v <= 0.6));
    }

    #[test]
    fn adjoint_matches_fd_and_inverse_crime() {
        let mut cfg = PoissonNNConfig::new(Method::Pcl, 1, 1, 11);
        cfg.grid_n = 15;
        let inst = cfg.instance().unwrap();
        let u0 = vec![0.0; inst.problem.dim_u()];
        let checks = super::super::check_adjoint_gradient(
            &inst.problem,
            &inst.loss,
            &inst.theta0,
            &u0,
            &NewtonSettings::default(),
            &[0, 13, 30, 47, 81],
        )
        .unwrap();
        for c in checks {
            assert!(c.rel_error < 1e-5, "{c:?}");
        }
        let u = inst.problem.solve(&inst.theta0).unwrap();
        let selfgen = ObservationLoss::distance(u.clone());
        let adj = adjoint_gradient(&inst.problem, &selfgen, &inst.theta0, &u).unwrap();
        assert!(adj.loss <= 1e-18);
        assert!(adj.gradient.iter().all(|g| g.abs() <= 1e-8));
        assert!(inst.loss.value(&u).unwrap() > 0.0);
    }

    #[test]
    fn config_rules() {
        let mut cfg = PoissonNNConfig::new(Method::Pm, 2, 1, 0);
        assert!(cfg.validate().is_err());
        cfg.lambda = Some(100.0);
        assert!(cfg.validate().is_ok());
        cfg.hidden_layers = 6;
        assert!(cfg.validate().is_err());
        let cfg = PoissonNNConfig::new(Method::Pcl, 2, 2, 0);
        let net = cfg.network().unwrap();
        let out = net.forward(&cfg.initial_theta().unwrap(), &[0.0]).unwrap();
        assert!((out[0][0] - 0.2).abs() < 0.05 && (out[0][1] - 0.2).abs() < 0.05);
    }
}
