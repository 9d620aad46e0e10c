//! Limited-memory BFGS with a strong Wolfe line search.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub grad_tol: f64,
    pub rel_f_tol: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub initial_step: f64,
    /// Function evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-12,
            rel_f_tol: 1e-12,
            max_iters: 5000,
            c1: 1e-4,
            c2: 0.9,
            initial_step: 1.0,
            max_line_evals: 40,
        }
    }
}

impl LbfgsSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 || self.max_line_evals == 0 || !(self.initial_step > 0.0) {
            return Err(Error::InvalidInput(
                "memory, line-search budget and initial step must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    RelFTol,
    MaxIters,
    LineSearchFailed,
    /// The monitored error reached the requested target.
    TargetReached,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::GradTol => "grad_tol",
            StopReason::RelFTol => "rel_f_tol",
            StopReason::MaxIters => "max_iters",
            StopReason::LineSearchFailed => "line_search_failed",
            StopReason::TargetReached => "target_reached",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// `‖z_k − z_{k−1}‖`; zero at iteration 0.
    pub step_len: f64,
    /// Auxiliary error metric from the monitor, NaN if none.
    pub error: f64,
    /// Cumulative function evaluations.
    pub evaluations: usize,
}

/// One trial point of a line search along `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineEval {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchRecord {
    pub phi0: f64,
    pub dphi0: f64,
    pub evals: Vec<LineEval>,
    /// Index into `evals` of the accepted point.
    pub accepted: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimTrace {
    pub records: Vec<IterRecord>,
    pub line_searches: Vec<LineSearchRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub z: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
    pub trace: OptimTrace,
    pub stop_reason: StopReason,
}

/// Curvature pairs `(s, y, 1/sᵀy)`, newest last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LbfgsHistory {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl LbfgsHistory {
    pub fn new(memory: usize) -> Self {
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores the pair if `sᵀy > 0`; returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > f64::EPSILON * dot(&y, &y)) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }
}

/// `−H g` from the two-loop recursion, with `H₀ = (sᵀy / yᵀy) I` taken from
/// the newest pair.
pub fn two_loop_direction(history: &LbfgsHistory, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((_, y, rho)) = history.pairs.back() {
        let gamma = 1.0 / (rho * dot(y, y));
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    z: &'a [f64],
    d: &'a [f64],
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    record: LineSearchRecord,
    points: Vec<(Vec<f64>, f64, Vec<f64>)>,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> LineSearch<'_, F> {
    fn eval(&mut self, alpha: f64) -> Result<LineEval> {
        let trial: Vec<f64> = self
            .z
            .iter()
            .zip(self.d)
            .map(|(a, b)| a + alpha * b)
            .collect();
        let (phi, g) = (self.f)(&trial)?;
        let phi = if phi.is_nan() { f64::INFINITY } else { phi };
        let dphi = if phi.is_finite() {
            dot(&g, self.d)
        } else {
            f64::NAN
        };
        let e = LineEval { alpha, phi, dphi };
        self.record.evals.push(e);
        self.points.push((trial, phi, g));
        Ok(e)
    }

    fn armijo_fails(&self, e: &LineEval) -> bool {
        !e.phi.is_finite() || e.phi > self.phi0 + self.c1 * e.alpha * self.dphi0
    }

    fn curvature_holds(&self, e: &LineEval) -> bool {
        e.dphi.abs() <= -self.c2 * self.dphi0
    }

    fn accept(&mut self) -> Option<usize> {
        let k = self.record.evals.len() - 1;
        self.record.accepted = Some(k);
        Some(k)
    }

    fn run(&mut self, alpha0: f64) -> Result<Option<usize>> {
        let mut prev = LineEval {
            alpha: 0.0,
            phi: self.phi0,
            dphi: self.dphi0,
        };
        let mut alpha = alpha0;
        let mut first = true;
        while self.record.evals.len() < self.budget {
            let e = self.eval(alpha)?;
            if self.armijo_fails(&e) || (!first && e.phi >= prev.phi) {
                return self.zoom(prev, e);
            }
            if self.curvature_holds(&e) {
                return Ok(self.accept());
            }
            if e.dphi >= 0.0 {
                return self.zoom(e, prev);
            }
            prev = e;
            alpha *= 2.0;
            first = false;
        }
        Ok(None)
    }

    fn zoom(&mut self, mut lo: LineEval, mut hi: LineEval) -> Result<Option<usize>> {
        while self.record.evals.len() < self.budget {
            let width = hi.alpha - lo.alpha;
            if width.abs() <= 1e-16 * lo.alpha.abs().max(hi.alpha.abs()) {
                return Ok(None);
            }
            let mut a = lo.alpha + 0.5 * width;
            if hi.phi.is_finite() {
                // Minimizer of the quadratic through (lo, φ_lo, φ'_lo) and (hi, φ_hi).
                let denom = 2.0 * (hi.phi - lo.phi - lo.dphi * width);
                if denom != 0.0 {
                    let q = lo.alpha - lo.dphi * width * width / denom;
                    let (l, h) = (lo.alpha + 0.1 * width, hi.alpha - 0.1 * width);
                    let (l, h) = if l < h { (l, h) } else { (h, l) };
                    if q.is_finite() {
                        a = q.clamp(l, h);
                    }
                }
            }
            let e = self.eval(a)?;
            if self.armijo_fails(&e) || e.phi >= lo.phi {
                hi = e;
            } else {
                if self.curvature_holds(&e) {
                    return Ok(self.accept());
                }
                if e.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = e;
            }
        }
        Ok(None)
    }
}

/// Minimizes `f` from `z0`.
pub fn minimize<F>(f: F, z0: &[f64], settings: &LbfgsSettings) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_with_monitor(f, z0, settings, |_| f64::NAN)
}

/// As [`minimize`], recording `monitor(z)` as the error column of every
/// iteration record.
pub fn minimize_with_monitor<F, M>(
    f: F,
    z0: &[f64],
    settings: &LbfgsSettings,
    monitor: M,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    M: FnMut(&[f64]) -> f64,
{
    minimize_until(f, z0, settings, monitor, f64::NEG_INFINITY)
}

/// As [`minimize_with_monitor`], also stopping once `monitor(z) <= target`.
pub fn minimize_until<F, M>(
    mut f: F,
    z0: &[f64],
    settings: &LbfgsSettings,
    mut monitor: M,
    target: f64,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    M: FnMut(&[f64]) -> f64,
{
    settings.validate()?;
    let mut z = z0.to_vec();
    let (mut loss, mut g) = f(&z)?;
    if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "objective is not finite at the start point ({loss})"
        )));
    }
    let mut evaluations = 1;
    let mut trace = OptimTrace::default();
    trace.records.push(IterRecord {
        iteration: 0,
        loss,
        grad_norm: norm(&g),
        step_len: 0.0,
        error: monitor(&z),
        evaluations,
    });
    let mut history = LbfgsHistory::new(settings.memory);
    let mut stop = StopReason::MaxIters;
    let already_stationary = norm(&g) < settings.grad_tol || trace.records[0].error <= target;
    if already_stationary {
        stop = if trace.records[0].error <= target {
            StopReason::TargetReached
        } else {
            StopReason::GradTol
        };
    }
    for it in (1..=settings.max_iters).filter(|_| !already_stationary) {
        let mut d = two_loop_direction(&history, &g);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) && !history.is_empty() {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }
        let mut ls = LineSearch {
            f: &mut f,
            z: &z,
            d: &d,
            phi0: loss,
            dphi0,
            c1: settings.c1,
            c2: settings.c2,
            budget: settings.max_line_evals,
            record: LineSearchRecord {
                phi0: loss,
                dphi0,
                evals: Vec::new(),
                accepted: None,
            },
            points: Vec::new(),
        };
        let accepted = ls.run(settings.initial_step)?;
        evaluations += ls.record.evals.len();
        let LineSearch {
            record, mut points, ..
        } = ls;
        trace.line_searches.push(record);
        let Some(k) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let (zn, ln, gn) = points.swap_remove(k);
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step_len = norm(&s);
        history.push(s, y);
        let prev = loss;
        z = zn;
        loss = ln;
        g = gn;
        let grad_norm = norm(&g);
        trace.records.push(IterRecord {
            iteration: it,
            loss,
            grad_norm,
            step_len,
            error: monitor(&z),
            evaluations,
        });
        if trace.records.last().unwrap().error <= target {
            stop = StopReason::TargetReached;
            break;
        }
        let scale = prev.abs().max(loss.abs());
        if (prev - loss).abs() <= settings.rel_f_tol * scale {
            stop = StopReason::RelFTol;
            break;
        }
        if grad_norm < settings.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
    }
    Ok(OptimResult {
        z,
        loss,
        grad: g,
        trace,
        stop_reason: stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic<'a>(
        a: &'a [Vec<f64>],
        b: &'a [f64],
    ) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a {
        move |x: &[f64]| {
            let ax: Vec<f64> = a.iter().map(|row| dot(row, x)).collect();
            let f = 0.5 * dot(x, &ax) - dot(b, x);
            Ok((f, ax.iter().zip(b).map(|(p, q)| p - q).collect()))
        }
    }

    fn spd4() -> Vec<Vec<f64>> {
        vec![
            vec![4.0, 1.0, 0.0, 0.5],
            vec![1.0, 3.0, 0.2, 0.0],
            vec![0.0, 0.2, 2.0, 0.3],
            vec![0.5, 0.0, 0.3, 1.5],
        ]
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    fn assert_strong_wolfe(trace: &OptimTrace, c1: f64, c2: f64) {
        for ls in &trace.line_searches {
            if let Some(k) = ls.accepted {
                let e = ls.evals[k];
                assert!(e.phi <= ls.phi0 + c1 * e.alpha * ls.dphi0);
                assert!(e.dphi.abs() <= c2 * ls.dphi0.abs());
            }
        }
    }

    #[test]
    fn convex_quadratic() {
        let a = spd4();
        let b = [1.0, -2.0, 0.5, 3.0];
        let settings = LbfgsSettings {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = minimize(quadratic(&a, &b), &[0.0; 4], &settings).unwrap();
        assert!(
            r.trace.records.len() - 1 <= 20,
            "{} iterations",
            r.trace.records.len() - 1
        );
        assert!(norm(&r.grad) < 1e-10 || r.stop_reason == StopReason::RelFTol);
        // Closed form: A x = b.
        let ax: Vec<f64> = a.iter().map(|row| dot(row, &r.z)).collect();
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-9);
        }
        assert_strong_wolfe(&r.trace, 1e-4, 0.9);
    }

    #[test]
    fn rosenbrock_converges() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &LbfgsSettings::default()).unwrap();
        assert!(r.loss < 1e-15, "loss {} after {:?}", r.loss, r.stop_reason);
        assert!((r.z[0] - 1.0).abs() < 1e-6 && (r.z[1] - 1.0).abs() < 1e-6);
        assert_strong_wolfe(&r.trace, 1e-4, 0.9);
        for w in r.trace.records.windows(2) {
            assert!(w[1].loss <= w[0].loss);
        }
    }

    #[test]
    fn stationary_start_stops_at_once() {
        let r = minimize(
            |x: &[f64]| Ok((3.0, vec![0.0; x.len()])),
            &[1.0, 2.0],
            &LbfgsSettings::default(),
        )
        .unwrap();
        assert_eq!(r.stop_reason, StopReason::GradTol);
        assert_eq!(r.trace.records.len(), 1);
        assert_eq!(r.z, vec![1.0, 2.0]);
    }

    #[test]
    fn stops_at_monitor_target() {
        let r = minimize_until(
            rosenbrock,
            &[-1.2, 1.0],
            &LbfgsSettings::default(),
            |z| z[0].hypot(z[1]) - 1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(r.stop_reason, StopReason::TargetReached);
        let errs: Vec<f64> = r.trace.records.iter().map(|x| x.error).collect();
        assert!(*errs.last().unwrap() <= 0.0);
        assert!(errs[..errs.len() - 1].iter().all(|e| *e > 0.0));
    }

    #[test]
    fn flat_plateau_stops_on_relative_change() {
        // A very flat bowl on a large offset: f barely moves relative to itself.
        let r = minimize(
            |x: &[f64]| Ok((1e13 + 0.5 * x[0] * x[0], vec![x[0]])),
            &[1.0],
            &LbfgsSettings::default(),
        )
        .unwrap();
        assert_eq!(r.stop_reason, StopReason::RelFTol);
        assert_eq!(r.trace.records.last().unwrap().iteration, 1);
    }

    #[test]
    fn max_iters_and_bad_start() {
        let settings = LbfgsSettings {
            max_iters: 3,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &settings).unwrap();
        assert_eq!(r.stop_reason, StopReason::MaxIters);
        assert_eq!(r.trace.records.len(), 4);
        assert!(minimize(
            |_: &[f64]| Ok((f64::INFINITY, vec![0.0])),
            &[0.0],
            &settings
        )
        .is_err());
        let bad = LbfgsSettings {
            c1: 0.95,
            ..Default::default()
        };
        assert!(minimize(rosenbrock, &[0.0, 0.0], &bad).is_err());
    }

    #[test]
    fn infinite_trial_points_shrink_the_step() {
        // Finite only on x < 1; the minimum at 0.9 sits next to the wall.
        let f = |x: &[f64]| {
            if x[0] >= 1.0 {
                Ok((f64::INFINITY, vec![0.0]))
            } else {
                Ok(((x[0] - 0.9).powi(2), vec![2.0 * (x[0] - 0.9)]))
            }
        };
        let settings = LbfgsSettings {
            initial_step: 1.0,
            ..Default::default()
        };
        let r = minimize(f, &[-5.0], &settings).unwrap();
        assert!((r.z[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn two_loop_basics() {
        let h = LbfgsHistory::new(5);
        assert_eq!(two_loop_direction(&h, &[1.0, -2.0]), vec![-1.0, 2.0]);
        let mut h = LbfgsHistory::new(5);
        assert!(!h.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(h.is_empty());
        let d = two_loop_direction(&h, &[0.5, 0.5]);
        assert!(d.iter().all(|v| v.is_finite()));
        assert!(h.push(vec![1.0, 0.0], vec![2.0, 0.0]));
        let g = [0.3, -0.7];
        assert!(dot(&g, &two_loop_direction(&h, &g)) < 0.0);
    }

    #[test]
    fn two_loop_reproduces_newton_direction() {
        let a = spd4();
        let n = 4;
        // A-conjugate directions by Gram–Schmidt in the A inner product.
        let av = |v: &[f64]| -> Vec<f64> { a.iter().map(|row| dot(row, v)).collect() };
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for k in 0..n {
            let mut v: Vec<f64> = (0..n)
                .map(|i| if i == k { 1.0 } else { 0.1 * (i + k) as f64 })
                .collect();
            for p in &dirs {
                let c = dot(&v, &av(p)) / dot(p, &av(p));
                for (vi, pi) in v.iter_mut().zip(p) {
                    *vi -= c * pi;
                }
            }
            dirs.push(v);
        }
        let mut h = LbfgsHistory::new(n);
        for s in &dirs {
            assert!(h.push(s.clone(), av(s)));
        }
        let g = [0.4, -1.0, 2.0, 0.1];
        let d = two_loop_direction(&h, &g);
        // Dense oracle: A d = −g.
        for (p, q) in av(&d).iter().zip(&g) {
            assert!((p + q).abs() < 1e-8);
        }
    }
}
