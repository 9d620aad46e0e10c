//! Argument parsing, config merging and run dispatch for `pclbench`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use pclbench_core::benchmarks::{
    calibrate_source, check_adjoint_gradient, run_helmholtz, run_poisson_1d, run_poisson_nn,
    test_function_set, BenchmarkTrace, Domain, HelmholtzConfig, HelmholtzProblem, Method,
    Poisson1DConfig, Poisson1DProblem, PoissonNNConfig, SourceShape,
};
use pclbench_core::conditioning::{
    secular_check, verify_theorem, write_theorem_csv, ConditioningStudy, DenseMatrix,
};
use pclbench_core::fd::InteriorGrid2d;
use pclbench_core::jacprop;
use pclbench_core::pcl::{ConstraintSystem, NewtonSettings};

pub const SEED_ENV: &str = "PCLBENCH_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Solver(_) => 2,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pclbench",
    version,
    about = "Physics constrained learning benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover the six coefficients of a Helmholtz wavenumber field on an IGA mesh.
    Helmholtz(HelmholtzArgs),
    /// Learn a 2D anisotropic diffusivity with a neural network.
    PoissonNn(PoissonNnArgs),
    /// Learn a 1D diffusivity with a neural network.
    #[command(name = "poisson-1d")]
    Poisson1d(Poisson1dArgs),
    /// Sweep the penalty weight and record condition numbers.
    Conditioning(ConditioningArgs),
    /// Finite-difference gradient and Jacobian oracle checks on small problems.
    Selftest,
    /// Run a JSON list of benchmark configurations.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Trace CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON path (defaults to the trace path with a .json extension).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON file with configuration values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub method: Option<Method>,
    /// Penalty weight (penalty method only).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// L-BFGS history length.
    #[arg(long)]
    pub memory: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct HelmholtzArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub domain: Option<Domain>,
    #[arg(long = "refine")]
    pub refinement: Option<usize>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Stop once the parameter error falls to this value.
    #[arg(long)]
    pub target_error: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PoissonNnArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Test function set, 1 to 4.
    #[arg(long)]
    pub set: Option<u8>,
    #[arg(long = "layers")]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nodes per side.
    #[arg(long = "grid")]
    pub grid_n: Option<usize>,
    #[arg(long)]
    pub source: Option<SourceShape>,
    #[arg(long)]
    pub source_scale: Option<f64>,
    #[arg(long)]
    pub obs_stride: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct Poisson1dArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of intervals.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "layers")]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub obs_stride: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ConditioningArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// A = diag(1..=n).
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Smallest penalty weight exponent (base 10).
    #[arg(long, default_value_t = 0)]
    pub min_exp: i32,
    /// Largest penalty weight exponent (base 10).
    #[arg(long, default_value_t = 10)]
    pub max_exp: i32,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// JSON array of runs: `{"command": "helmholtz", "name": "...", ...config}`.
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// A fully resolved benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Helmholtz(HelmholtzConfig),
    PoissonNn(PoissonNNConfig),
    Poisson1d(Poisson1DConfig),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Helmholtz(_) => "helmholtz",
            Job::PoissonNn(_) => "poisson-nn",
            Job::Poisson1d(_) => "poisson-1d",
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        match self {
            Job::Helmholtz(c) => c.validate(),
            Job::PoissonNn(c) => c.validate(),
            Job::Poisson1d(c) => c.validate(),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Builds a job from defaults, an optional JSON object and flag overrides, in that order.
    pub fn resolve(
        command: &str,
        file: Option<Value>,
        flags: Map<String, Value>,
    ) -> Result<Self, CliError> {
        let seed = env_seed()?;
        let job = match command {
            "helmholtz" => Job::Helmholtz(merged(
                HelmholtzConfig::new(Method::Pcl, Domain::Square, 3, 0.5),
                file,
                flags,
            )?),
            "poisson-nn" => Job::PoissonNn(merged(
                PoissonNNConfig::new(Method::Pcl, 2, 1, seed),
                file,
                flags,
            )?),
            "poisson-1d" => Job::Poisson1d(merged(
                Poisson1DConfig::new(Method::Pcl, seed),
                file,
                flags,
            )?),
            other => return Err(CliError::Config(format!("unknown benchmark '{other}'"))),
        };
        job.validate()?;
        Ok(job)
    }

    /// Runs the benchmark and returns the trace with its summary.
    pub fn run(&self) -> Result<(BenchmarkTrace, Value), CliError> {
        let solver = |e: pclbench_core::Error| CliError::Solver(e.to_string());
        let out = match self {
            Job::Helmholtz(c) => {
                let t = run_helmholtz(c).map_err(solver)?;
                let s = t.summary(c).map_err(solver)?;
                (t, s)
            }
            Job::PoissonNn(c) => {
                let mut c = c.clone();
                if c.source_scale.is_none() {
                    let set =
                        test_function_set(c.set).map_err(|e| CliError::Config(e.to_string()))?;
                    c.source_scale =
                        Some(calibrate_source(c.grid_n, set, c.source, 0.55).map_err(solver)?);
                }
                let t = run_poisson_nn(&c).map_err(solver)?;
                let s = t.summary(&c).map_err(solver)?;
                (t, s)
            }
            Job::Poisson1d(c) => {
                let t = run_poisson_1d(c).map_err(solver)?;
                let s = t.summary(c).map_err(solver)?;
                (t, s)
            }
        };
        if !out.0.final_loss.is_finite() {
            return Err(CliError::Solver(
                "optimizer ended with a non-finite loss".into(),
            ));
        }
        Ok(out)
    }
}

fn env_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map_err(|_| {
            CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got '{s}'"))
        }),
        Err(_) => Ok(0),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn merged<T: Serialize + DeserializeOwned>(
    defaults: T,
    file: Option<Value>,
    flags: Map<String, Value>,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(defaults).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(f) = file {
        if !f.is_object() {
            return Err(CliError::Config(
                "config file must hold a JSON object".into(),
            ));
        }
        merge(&mut v, f);
    }
    merge(&mut v, Value::Object(flags));
    serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: malformed JSON: {e}", path.display())))
}

fn put<T: Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

impl RunArgs {
    fn flags(&self) -> Map<String, Value> {
        let mut m = Map::new();
        put(&mut m, "method", self.method);
        put(&mut m, "lambda", self.lambda);
        let mut opt = Map::new();
        put(&mut opt, "max_iters", self.max_iters);
        put(&mut opt, "memory", self.memory);
        if !opt.is_empty() {
            m.insert("optimizer".into(), Value::Object(opt));
        }
        m
    }

    fn file(&self) -> Result<Option<Value>, CliError> {
        self.config.as_deref().map(read_json).transpose()
    }
}

/// Turns parsed arguments into a job plus its output paths.
pub fn resolve(command: &Command) -> Result<Option<(Job, OutputArgs)>, CliError> {
    let (name, run, mut flags) = match command {
        Command::Helmholtz(a) => {
            let mut m = Map::new();
            put(&mut m, "domain", a.domain);
            put(&mut m, "refinement", a.refinement);
            put(&mut m, "k", a.k);
            put(&mut m, "target_error", a.target_error);
            ("helmholtz", &a.run, m)
        }
        Command::PoissonNn(a) => {
            let mut m = Map::new();
            put(&mut m, "set", a.set);
            put(&mut m, "hidden_layers", a.hidden_layers);
            put(&mut m, "width", a.width);
            put(&mut m, "seed", a.seed);
            put(&mut m, "grid_n", a.grid_n);
            put(&mut m, "source", a.source);
            put(&mut m, "source_scale", a.source_scale);
            put(&mut m, "obs_stride", a.obs_stride);
            ("poisson-nn", &a.run, m)
        }
        Command::Poisson1d(a) => {
            let mut m = Map::new();
            put(&mut m, "n", a.n);
            put(&mut m, "hidden_layers", a.hidden_layers);
            put(&mut m, "width", a.width);
            put(&mut m, "seed", a.seed);
            put(&mut m, "obs_stride", a.obs_stride);
            ("poisson-1d", &a.run, m)
        }
        _ => return Ok(None),
    };
    for (k, v) in run.flags() {
        flags.insert(k, v);
    }
    let job = Job::resolve(name, run.file()?, flags)?;
    Ok(Some((job, run.output.clone())))
}

fn check_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::io(path, "output directory does not exist"))
        }
        _ => Ok(()),
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), String>,
) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn output_paths(output: &OutputArgs, default_stem: &str) -> Result<(PathBuf, PathBuf), CliError> {
    let csv = output
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{default_stem}.csv")));
    let summary = output
        .summary
        .clone()
        .unwrap_or_else(|| csv.with_extension("json"));
    check_parent(&csv)?;
    check_parent(&summary)?;
    Ok((csv, summary))
}

/// Runs a job and writes its trace CSV and summary JSON.
pub fn execute(job: &Job, csv: &Path, summary: &Path) -> Result<Value, CliError> {
    let (trace, mut s) = job.run()?;
    s["benchmark"] = json!(job.name());
    s["trace"] = json!(csv.display().to_string());
    write_file(csv, |w| trace.write_csv(w).map_err(|e| e.to_string()))?;
    write_file(summary, |w| {
        serde_json::to_writer_pretty(&mut *w, &s).map_err(|e| e.to_string())
    })?;
    Ok(s)
}

fn conditioning(args: &ConditioningArgs) -> Result<Value, CliError> {
    if args.min_exp > args.max_exp || args.n == 0 || args.n > 64 {
        return Err(CliError::Config(
            "need 1 <= n <= 64 and min-exp <= max-exp".into(),
        ));
    }
    let (csv, summary) = output_paths(&args.output, "conditioning")?;
    let lambdas: Vec<f64> = (args.min_exp..=args.max_exp)
        .map(|e| 10f64.powi(e))
        .collect();
    let study = ConditioningStudy::diagonal(args.n, lambdas)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let rows = verify_theorem(&study).map_err(|e| CliError::Solver(e.to_string()))?;
    let a = DenseMatrix::diag(&(1..=args.n).map(|i| i as f64).collect::<Vec<_>>());
    let last = *rows.last().expect("at least one penalty weight");
    let sec = secular_check(&a, &vec![1.0; args.n], last.lambda)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    write_file(&csv, |w| {
        write_theorem_csv(&rows, w).map_err(|e| e.to_string())
    })?;
    let s = json!({
        "benchmark": "conditioning",
        "n": args.n,
        "lambdas": rows.iter().map(|r| r.lambda).collect::<Vec<_>>(),
        "kappa_A_squared": last.kappa_a_squared,
        "kappa_A_lambda_max": last.kappa_a_lambda,
        "bound_met_at_max_lambda": last.kappa_a_lambda >= last.kappa_a_squared,
        "secular_interlaced": sec.interlaced,
        "trace": csv.display().to_string(),
    });
    write_file(&summary, |w| {
        serde_json::to_writer_pretty(&mut *w, &s).map_err(|e| e.to_string())
    })?;
    Ok(s)
}

/// One line per oracle check; `Err` when any fails.
pub fn selftest(out: &mut dyn Write) -> Result<(), CliError> {
    let mut failures = 0;
    let mut line = |name: &str, ok: bool, detail: String| {
        if !ok {
            failures += 1;
        }
        let _ = writeln!(out, "{} {name}: {detail}", if ok { "ok  " } else { "FAIL" });
    };
    let newton = NewtonSettings::default();
    let solver = |e: pclbench_core::Error| CliError::Solver(e.to_string());

    let h = HelmholtzProblem::new(Domain::Square, 1, 0.5).map_err(solver)?;
    let checks = check_adjoint_gradient(
        &h.system,
        &h.loss(),
        &[4.0, 0.5, 1.5, -0.3, 0.2, 0.1],
        &h.initial_state(),
        &newton,
        &[0, 1, 2, 3, 4, 5],
    )
    .map_err(solver)?;
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    line(
        "helmholtz adjoint gradient",
        worst < 1e-5,
        format!("worst relative error {worst:.2e}"),
    );

    let mut cfg = Poisson1DConfig::new(Method::Pcl, 1);
    cfg.n = 15;
    let (p, theta) = Poisson1DProblem::benchmark(&cfg).map_err(solver)?;
    let u0 = vec![0.0; p.dim_u()];
    let coords: Vec<usize> = (0..theta.len()).step_by(7).collect();
    let checks = check_adjoint_gradient(
        &p,
        &p.loss().map_err(solver)?,
        &theta,
        &u0,
        &newton,
        &coords,
    )
    .map_err(solver)?;
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    line(
        "poisson-1d adjoint gradient",
        worst < 1e-5,
        format!("worst relative error {worst:.2e}"),
    );

    let mut cfg = PoissonNNConfig::new(Method::Pcl, 1, 1, 1);
    cfg.grid_n = 9;
    let inst = cfg.instance().map_err(solver)?;
    let u0 = vec![0.0; inst.problem.dim_u()];
    let coords: Vec<usize> = (0..inst.theta0.len()).step_by(9).collect();
    let checks = check_adjoint_gradient(
        &inst.problem,
        &inst.loss,
        &inst.theta0,
        &u0,
        &newton,
        &coords,
    )
    .map_err(solver)?;
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    line(
        "poisson-2d adjoint gradient",
        worst < 1e-5,
        format!("worst relative error {worst:.2e}"),
    );

    let (worst, outside) = diffusion_jacobian_check().map_err(solver)?;
    line(
        "sparse jacobian vs finite differences",
        worst < 1e-6 && outside == 0,
        format!("max entry difference {worst:.2e}, {outside} entries outside the stencil"),
    );

    if failures > 0 {
        return Err(CliError::Solver(format!(
            "{failures} self-test check(s) failed"
        )));
    }
    Ok(())
}

/// `∇·((1 + u²)∇u)` on a 6×6 grid: propagated Jacobian against central differences.
fn diffusion_jacobian_check() -> pclbench_core::Result<(f64, usize)> {
    let grid = InteriorGrid2d::new(6, 6);
    let ops = grid.operators();
    let eval = |c: &[f64]| -> pclbench_core::Result<jacprop::Field> {
        let u = jacprop::from_coefficients(&ops, c)?;
        let g = jacprop::grad(&ops, &u)?;
        let a = jacprop::add_scalar(&jacprop::unary(&u, |x| x * x, |x| 2.0 * x)?, 1.0);
        jacprop::div(&ops, &jacprop::mul_vector(&a, &g)?)
    };
    let n = grid.len();
    let c: Vec<f64> = (0..n)
        .map(|i| ((i * 37 % 11) as f64 / 11.0) - 0.5)
        .collect();
    let f = eval(&c)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..n {
        let (mut cp, mut cm) = (c.clone(), c.clone());
        cp[k] += h;
        cm[k] -= h;
        let (fp, fm) = (eval(&cp)?, eval(&cm)?);
        for r in 0..n {
            let fd = (fp.values()[r] - fm.values()[r]) / (2.0 * h);
            worst = worst.max((f.jacobian().get(r, k) - fd).abs());
        }
    }
    let outside = (0..n)
        .map(|r| {
            f.jacobian()
                .row(r)
                .filter(|(k, _)| !grid.in_five_point_stencil(r, *k))
                .count()
        })
        .sum();
    Ok((worst, outside))
}

/// Parses a sweep file into named jobs.
pub fn parse_sweep(value: Value) -> Result<Vec<(String, Job)>, CliError> {
    let Value::Array(items) = value else {
        return Err(CliError::Config("sweep file must hold a JSON array".into()));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Object(mut m) = item else {
                return Err(CliError::Config(format!(
                    "sweep entry {i} is not an object"
                )));
            };
            let command = match m.remove("command") {
                Some(Value::String(s)) => s,
                _ => {
                    return Err(CliError::Config(format!(
                        "sweep entry {i} needs a \"command\" string"
                    )))
                }
            };
            let name = match m.remove("name") {
                Some(Value::String(s)) => s,
                None => format!("{i:03}_{command}"),
                Some(_) => {
                    return Err(CliError::Config(format!(
                        "sweep entry {i}: \"name\" must be a string"
                    )))
                }
            };
            if name.contains(['/', '\\']) {
                return Err(CliError::Config(format!(
                    "sweep entry {i}: name may not contain path separators"
                )));
            }
            let job = Job::resolve(&command, Some(Value::Object(m)), Map::new())
                .map_err(|e| CliError::Config(format!("sweep entry {i}: {e}")))?;
            Ok((name, job))
        })
        .collect()
}

/// Runs jobs on `jobs` worker threads; returns `(name, result)` in input order.
pub fn run_sweep(
    runs: &[(String, Job)],
    out_dir: &Path,
    jobs: usize,
) -> Vec<(String, Result<Value, CliError>)> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Value, CliError>>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, runs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((name, job)) = runs.get(i) else {
                    break;
                };
                let csv = out_dir.join(format!("{name}.csv"));
                let r = execute(job, &csv, &csv.with_extension("json"));
                results
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("workers finished");
    runs.iter()
        .zip(results)
        .map(|((n, _), r)| (n.clone(), r.expect("every run executed")))
        .collect()
}

/// Executes a parsed command line, printing progress to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some((job, output)) = resolve(&cli.command)? {
        let (csv, summary) = output_paths(&output, job.name())?;
        let s = execute(&job, &csv, &summary)?;
        let _ = writeln!(
            out,
            "{}: {} iterations, stop {}, final error {}, trace {}",
            job.name(),
            s["iterations"],
            s["stop_reason"].as_str().unwrap_or("?"),
            s["final_error"],
            csv.display()
        );
        return Ok(());
    }
    match &cli.command {
        Command::Conditioning(a) => {
            let s = conditioning(a)?;
            let _ = writeln!(
                out,
                "conditioning: kappa(A)^2 = {}, kappa(A_lambda) at the largest lambda = {:.6e}, trace {}",
                s["kappa_A_squared"],
                s["kappa_A_lambda_max"].as_f64().unwrap_or(f64::NAN),
                s["trace"].as_str().unwrap_or("?")
            );
            Ok(())
        }
        Command::Selftest => selftest(out),
        Command::Sweep(a) => {
            if !a.out_dir.is_dir() {
                return Err(CliError::io(&a.out_dir, "output directory does not exist"));
            }
            let runs = parse_sweep(read_json(&a.file)?)?;
            let mut worst: Option<CliError> = None;
            for (name, r) in run_sweep(&runs, &a.out_dir, a.jobs) {
                match r {
                    Ok(s) => {
                        let _ = writeln!(out, "{name}: ok, final error {}", s["final_error"]);
                    }
                    Err(e) => {
                        let _ = writeln!(out, "{name}: {e}");
                        if worst
                            .as_ref()
                            .is_none_or(|w| e.exit_code() > w.exit_code())
                        {
                            worst = Some(e);
                        }
                    }
                }
            }
            worst.map_or(Ok(()), Err)
        }
        _ => unreachable!("benchmark commands resolved above"),
    }
}
