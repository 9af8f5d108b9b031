//! Config-driven experiment runs: problem and metric construction from a
//! TOML description, trace and summary files, suites and derivative checks.

mod config;
mod trace;

pub use config::{
    ExperimentConfig, FrameInitSpec, InitialSpec, MetricSpec, OutputSpec, ProblemSpec, SolverSpec, StepRule, StepSpec,
    SuiteManifest, SwitchSpec,
};
pub use trace::{fmt_sci, TraceFile, TraceRow, COLUMNS};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    solve, FixedMetric, FrameInit, FrozenMetric, InertialMetric, MetricPolicy, MetricSchedule, RebuiltMetric, RunTrace,
    SolverConfig, StageSwitch, Status,
};
use crate::eigen::{generalized_eigendecomposition, symmetric_eigen_sorted};
use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::metric::{SpdMetric, DENSE_LIMIT};
use crate::preconditioners::{
    block_jacobi_metric, epsilon_for_target_kappa, jacobi_metric, select_metric, shifted_ic_metric,
    shifted_operator_metric, spectral_metric, IcParams, InertialParams, Recommendation,
};
use crate::problems::{finite_difference_check, AllenCahn, BistableChain, Butterfly, FdReport, GridSpec, Problem, Quadratic};

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.max_iters {
            cfg.solver.max_iters = m;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = Some(o.clone());
        }
    }
}

pub fn build_problem(spec: &ProblemSpec) -> Result<Arc<dyn Problem>> {
    Ok(match spec {
        ProblemSpec::Quadratic { spectrum: Some(s), .. } => Arc::new(Quadratic::new(s.clone())?),
        ProblemSpec::Quadratic { ladder: Some([first, last]), .. } => {
            if !(*last >= 2.0 && last.fract() == 0.0) {
                return Err(Error::Config(format!("quadratic ladder end must be an integer >= 2, got {last}")));
            }
            Arc::new(Quadratic::integer_ladder(*first, *last as usize)?)
        }
        ProblemSpec::Quadratic { .. } => return Err(Error::Config("quadratic needs spectrum or ladder".into())),
        ProblemSpec::Butterfly { c } => Arc::new(Butterfly::new(*c)),
        ProblemSpec::Chain { sites, stiffness, coupling } => Arc::new(BistableChain::new(*sites, *stiffness, *coupling)?),
        ProblemSpec::AllenCahn { n, xi } => Arc::new(AllenCahn::new(GridSpec::new(*n, *xi)?)),
    })
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("{}: bad number '{t}'", path.display()))))
        .collect()
}

/// Starting point described by `cfg.initial`, including the seeded perturbation.
pub fn initial_state(cfg: &ExperimentConfig, problem: &dyn Problem, base_dir: &Path) -> Result<DVector<f64>> {
    let spec = &cfg.initial;
    let mut x = if let Some(name) = &spec.state {
        problem.named_state(name, &spec.params)?
    } else if let Some(label) = &spec.reference {
        problem.reference_point(label)?.x
    } else if let Some(p) = &spec.point {
        DVector::from_vec(p.clone())
    } else if let Some(f) = &spec.file {
        DVector::from_vec(read_vector(&base_dir.join(f))?)
    } else {
        return Err(Error::Config("initial: no starting point given".into()));
    };
    if x.len() != problem.dim() {
        return Err(Error::Config(format!("initial: expected {} values, got {}", problem.dim(), x.len())));
    }
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise * z;
        }
    }
    if let Some(target) = spec.gradient_norm {
        // gradients of quadratic problems are linear, so scaling is exact
        let g = problem.gradient(&x).norm();
        if g == 0.0 {
            return Err(Error::Config("initial.gradient_norm: gradient vanishes at the start".into()));
        }
        x *= target / g;
    }
    Ok(x)
}

fn dense_checked(h: &Hessian) -> Result<nalgebra::DMatrix<f64>> {
    if h.dim() > DENSE_LIMIT {
        return Err(Error::TooLarge { n: h.dim(), limit: DENSE_LIMIT });
    }
    Ok(h.to_dense())
}

/// `(min |λ|, max |λ|)` of a dense-materializable Hessian.
fn magnitude_bounds(h: &Hessian) -> Result<(f64, f64)> {
    let (vals, _) = symmetric_eigen_sorted(&dense_checked(h)?);
    let mags = vals.iter().map(|l| l.abs());
    Ok((mags.clone().fold(f64::INFINITY, f64::min), mags.fold(0.0, f64::max)))
}

fn rebuilt_or_frozen(
    name: &str,
    frozen: bool,
    build: impl FnMut(&DVector<f64>, &Hessian) -> Result<SpdMetric> + Send + 'static,
) -> Box<dyn MetricPolicy> {
    if frozen {
        Box::new(FrozenMetric::new(name, Box::new(build)))
    } else {
        Box::new(RebuiltMetric::new(name, Box::new(build)))
    }
}

/// Turns a metric description into a policy. `h0` is the Hessian at the
/// point where the stage starts; it resolves `target_kappa` and `auto`.
pub fn metric_policy(spec: &MetricSpec, problem: &dyn Problem, h0: &Hessian) -> Result<Box<dyn MetricPolicy>> {
    Ok(match spec {
        MetricSpec::Identity {} => Box::new(FixedMetric(SpdMetric::identity(problem.dim()))),
        MetricSpec::Spectral { epsilon, target_kappa, frozen } => {
            let eps = match (epsilon, target_kappa) {
                (Some(e), None) => *e,
                (None, Some(kappa)) => {
                    let (mu, big_l) = magnitude_bounds(h0)?;
                    epsilon_for_target_kappa(mu, big_l, *kappa)?
                }
                _ => return Err(Error::Config("spectral metric needs exactly one of epsilon, target_kappa".into())),
            };
            rebuilt_or_frozen(&format!("spectral (epsilon = {eps})"), *frozen, move |_, h| spectral_metric(h, eps))
        }
        MetricSpec::Inertial { alpha, weights, beta, epsilon } => {
            let params = InertialParams { alpha: *alpha, weights: weights.clone(), beta: *beta, epsilon: *epsilon };
            params.validate()?;
            Box::new(InertialMetric::new(params))
        }
        MetricSpec::Jacobi { epsilon, frozen } => {
            let eps = *epsilon;
            rebuilt_or_frozen("jacobi", *frozen, move |_, h| jacobi_metric(h, eps))
        }
        MetricSpec::BlockJacobi { epsilon, partition, frozen } => {
            let part = partition
                .clone()
                .or_else(|| problem.block_partition())
                .ok_or_else(|| Error::Config(format!("problem '{}' has no block partition", problem.name())))?;
            let eps = *epsilon;
            rebuilt_or_frozen("block-jacobi", *frozen, move |_, h| block_jacobi_metric(h, &part, eps))
        }
        MetricSpec::ShiftedCholesky { margin, drop_tol, complete, dense_threshold, frozen } => {
            let params =
                IcParams { margin: *margin, drop_tol: *drop_tol, complete: *complete, dense_threshold: *dense_threshold };
            let name = if *complete { "shifted-cholesky" } else { "shifted-incomplete-cholesky" };
            rebuilt_or_frozen(name, *frozen, move |_, h| shifted_ic_metric(h, &params))
        }
        MetricSpec::ShiftedOperator { shift } => {
            let a = problem
                .base_operator()
                .ok_or_else(|| Error::Config(format!("problem '{}' has no base operator", problem.name())))?;
            Box::new(FixedMetric(shifted_operator_metric(&a, *shift)?))
        }
        MetricSpec::Auto { epsilon, margin } => {
            let resolved = resolve_auto(problem, h0, *epsilon, *margin);
            metric_policy(&resolved, problem, h0)?
        }
    })
}

/// The concrete metric chosen by `kind = "auto"`.
pub fn resolve_auto(problem: &dyn Problem, h0: &Hessian, epsilon: f64, margin: f64) -> MetricSpec {
    match select_metric(problem.dim(), h0.density(), problem.block_partition().is_some()) {
        Recommendation::FrozenSpectral => MetricSpec::Spectral { epsilon: Some(epsilon), target_kappa: None, frozen: true },
        Recommendation::BlockJacobi => MetricSpec::BlockJacobi { epsilon, partition: None, frozen: false },
        Recommendation::ShiftedIncompleteCholesky => MetricSpec::ShiftedCholesky {
            margin,
            drop_tol: 0.0,
            complete: false,
            dense_threshold: 0,
            frozen: false,
        },
        Recommendation::Jacobi => MetricSpec::Jacobi { epsilon, frozen: false },
    }
}

/// `2 / (L_M + μ_M)` from the generalized spectrum magnitudes of `(H, M)`.
pub fn optimal_step(h: &Hessian, m: &SpdMetric) -> Result<f64> {
    let eig = generalized_eigendecomposition(&dense_checked(h)?, m)?;
    let mags = eig.values.iter().map(|l| l.abs());
    let mu = mags.clone().fold(f64::INFINITY, f64::min);
    let big_l = mags.fold(0.0, f64::max);
    Ok(2.0 / (big_l + mu))
}

/// Machine-readable digest of a run, written next to the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub problem: String,
    pub n: usize,
    pub metric: String,
    pub status: String,
    pub exit_code: i32,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub final_energy: f64,
    pub morse_index: Option<usize>,
    pub morse_degenerate: bool,
    pub rate: Option<f64>,
    pub rate_window: Option<(usize, usize)>,
    pub switch_iteration: Option<usize>,
    pub eta: f64,
    pub max_frame_error: f64,
    pub wall_time: f64,
    pub seed: u64,
    pub version: String,
}

/// Everything produced by [`run_experiment`].
pub struct Outcome {
    pub config: ExperimentConfig,
    pub initial: DVector<f64>,
    pub run: RunTrace,
    pub trace: TraceFile,
    pub summary: Summary,
}

impl Outcome {
    pub fn status(&self) -> Status {
        self.run.status
    }

    /// Writes `trace.csv` and `summary.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("trace.csv"), self.trace.write()).map_err(io)?;
        let json = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        std::fs::write(dir.join("summary.json"), json + "\n").map_err(io)?;
        Ok(())
    }
}

/// Builds everything `cfg` describes and runs the solver. Relative paths in
/// the config resolve against `base_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Outcome> {
    cfg.check()?;
    let problem = build_problem(&cfg.problem)?;
    let x0 = initial_state(cfg, problem.as_ref(), base_dir)?;
    let h0 = problem.hessian(&x0);
    let mut first = metric_policy(&cfg.metric, problem.as_ref(), &h0)?;
    let metric_name = first.describe();
    let eta = match cfg.solver.eta {
        StepSpec::Fixed(e) => e,
        StepSpec::Rule(StepRule::Optimal) => {
            let m0 = first.start(&x0, &h0)?;
            optimal_step(&h0, &m0)?
        }
    };
    let (switch, second) = match &cfg.switch {
        Some(sw) => {
            // the second metric is built at the switch point; h0 only resolves `auto`
            let policy = metric_policy(&sw.metric, problem.as_ref(), &h0)?;
            let stage = StageSwitch {
                window: sw.window,
                rel_decrease: sw.rel_decrease,
                eta: sw.eta,
                reinit_frame: sw.reinit_frame,
            };
            (Some(stage), Some(policy))
        }
        None => (None, None),
    };
    let solver = SolverConfig {
        k: cfg.solver.k,
        eta,
        tau: cfg.solver.tau,
        inner_iters: cfg.solver.inner_iters,
        grad_tol: cfg.solver.grad_tol,
        max_iters: cfg.solver.max_iters,
        divergence_cap: cfg.solver.divergence_cap,
        switch,
        frame_init: match cfg.solver.frame_init {
            FrameInitSpec::Eigen => FrameInit::Eigen,
            FrameInitSpec::Random => FrameInit::Random(cfg.seed),
        },
    };
    let metric_name = match &second {
        Some(p) => format!("{metric_name} -> {}", p.describe()),
        None => metric_name,
    };
    let run = solve(problem.as_ref(), &x0, MetricSchedule { first, second }, &solver)?;
    let trace = TraceFile::from_run(cfg, &run);
    let last = run.records.last().expect("a run records at least x_0");
    let summary = Summary {
        name: cfg.name.clone(),
        problem: problem.name().to_string(),
        n: problem.dim(),
        metric: metric_name,
        status: run.status.as_str().to_string(),
        exit_code: run.status.exit_code(),
        iterations: run.iterations(),
        final_grad_norm: last.grad_norm,
        final_energy: last.energy,
        morse_index: run.final_morse_index.as_ref().map(|m| m.index),
        morse_degenerate: run.final_morse_index.as_ref().is_some_and(|m| m.degenerate),
        rate: run.rate.as_ref().map(|r| r.q),
        rate_window: run.rate.as_ref().map(|r| r.window),
        switch_iteration: run.switch_iteration,
        eta,
        max_frame_error: run.max_frame_error,
        wall_time: run.wall_time,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok(Outcome { config: cfg.clone(), initial: x0, run, trace, summary })
}

/// Loads, overrides, runs and writes one experiment.
pub fn run_config_file(path: &Path, overrides: &Overrides) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg);
    let base = path.parent().unwrap_or(Path::new("."));
    let outcome = run_experiment(&cfg, base)?;
    outcome.write(&cfg.output_dir())?;
    Ok(outcome)
}

/// One row of a suite table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub config: String,
    pub problem: String,
    pub n: usize,
    pub metric: String,
    pub iterations: Option<usize>,
    pub status: String,
    pub rate: Option<f64>,
    pub wall_time: Option<f64>,
    pub exit_code: i32,
    pub error: Option<String>,
}

pub struct SuiteReport {
    pub name: String,
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    /// Largest member exit code.
    pub fn exit_code(&self) -> i32 {
        self.rows.iter().map(|r| r.exit_code).max().unwrap_or(0)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("config,problem,n,metric,iterations,status,rate,wall_time\n");
        for r in &self.rows {
            let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
            s.push_str(&format!(
                "{},{},{},\"{}\",{},{},{},{}\n",
                r.config,
                r.problem,
                r.n,
                r.metric,
                opt(r.iterations.map(|i| i.to_string())),
                r.status,
                opt(r.rate.map(fmt_sci)),
                opt(r.wall_time.map(|t| format!("{t:.3}"))),
            ));
        }
        s
    }
}

/// Runs every config in a manifest concurrently. A failing member yields a
/// row with status `Error` and exit code 1; the others are unaffected.
pub fn run_suite(manifest_path: &Path, overrides: &Overrides) -> Result<SuiteReport> {
    let manifest = SuiteManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let rows = manifest
        .configs
        .par_iter()
        .map(|rel| {
            let path = base.join(rel);
            let label = rel.file_stem().map_or_else(|| rel.display().to_string(), |s| s.to_string_lossy().into_owned());
            let mut member = overrides.clone();
            if let Some(out) = &overrides.out {
                member.out = Some(out.join(&label));
            }
            match run_config_file(&path, &member) {
                Ok(o) => SuiteRow {
                    config: label,
                    problem: o.summary.problem.clone(),
                    n: o.summary.n,
                    metric: o.summary.metric.clone(),
                    iterations: Some(o.summary.iterations),
                    status: o.summary.status.clone(),
                    rate: o.summary.rate,
                    wall_time: Some(o.summary.wall_time),
                    exit_code: o.summary.exit_code,
                    error: None,
                },
                Err(e) => SuiteRow {
                    config: label,
                    problem: String::new(),
                    n: 0,
                    metric: String::new(),
                    iterations: None,
                    status: "Error".into(),
                    rate: None,
                    wall_time: None,
                    exit_code: 1,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SuiteReport { name: manifest.name, rows })
}

/// Result of [`verify`].
#[derive(Clone, Debug)]
pub struct VerifyReport {
    /// Finite-difference reports at the start and at perturbed points.
    pub derivatives: Vec<FdReport>,
    /// `(stage, relative round-trip residual)` per metric built at the start.
    pub metrics: Vec<(usize, std::result::Result<f64, String>)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.derivatives.iter().all(FdReport::passed) && self.metrics.iter().all(|(_, r)| r.as_ref().is_ok_and(|v| *v < 1e-10))
    }
}

/// Derivative checks at `x_0` and `points − 1` seeded perturbations of it,
/// plus construction and round-trip probes of the configured metrics at `x_0`.
pub fn verify(cfg: &ExperimentConfig, base_dir: &Path, points: usize) -> Result<VerifyReport> {
    cfg.check()?;
    let problem = build_problem(&cfg.problem)?;
    let x0 = initial_state(cfg, problem.as_ref(), base_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let scale = 0.1 * x0.amax().max(1.0);
    let mut derivatives = Vec::with_capacity(points);
    for p in 0..points {
        let x = if p == 0 {
            x0.clone()
        } else {
            x0.map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + scale * z
            })
        };
        derivatives.push(finite_difference_check(problem.as_ref(), &x, None, 5, cfg.seed.wrapping_add(p as u64)));
    }
    let h0 = problem.hessian(&x0);
    let mut specs = vec![(1, &cfg.metric)];
    if let Some(sw) = &cfg.switch {
        specs.push((2, &sw.metric));
    }
    let mut metrics = Vec::new();
    for (stage, spec) in specs {
        let probe = metric_policy(spec, problem.as_ref(), &h0).and_then(|mut p| p.start(&x0, &h0)).map(|m| {
            let g = DVector::from_fn(m.dim(), |_, _| StandardNormal.sample(&mut rng));
            (m.apply(&m.solve(&g)) - &g).norm() / g.norm()
        });
        metrics.push((stage, probe.map_err(|e| e.to_string())));
    }
    Ok(VerifyReport { derivatives, metrics })
}

/// Problem kinds accepted in `[problem]`.
pub const PROBLEM_KINDS: &[(&str, &str)] = &[
    ("quadratic", "E = x^T diag(spectrum) x / 2; keys: spectrum | ladder = [first, last]"),
    ("butterfly", "two-dimensional butterfly landscape; keys: c (default 1)"),
    ("chain", "stiff bistable chain, n = 2 sites; keys: sites, stiffness (1e4), coupling (1)"),
    ("allen_cahn", "five-point Allen-Cahn on an n x n Neumann grid; keys: n, xi"),
];

/// Metric kinds accepted in `[metric]` and `[switch.metric]`.
pub const METRIC_KINDS: &[(&str, &str)] = &[
    ("identity", "M = I (standard HiSD)"),
    ("spectral", "Q(|L| + eps)Q^T; keys: epsilon | target_kappa, frozen"),
    ("inertial", "identity plus inertially mixed rank-k correction; keys: alpha, weights, beta, epsilon"),
    ("jacobi", "diag(|H_ii|) + eps; keys: epsilon, frozen"),
    ("block_jacobi", "blockwise |H_bb| + eps I; keys: epsilon, partition, frozen"),
    ("shifted_cholesky", "(incomplete) factor of H + delta I; keys: margin, drop_tol, complete, dense_threshold, frozen"),
    ("shifted_operator", "A + shift I for the problem's base operator; keys: shift"),
    ("auto", "choice by size, sparsity and block structure at x0; keys: epsilon, margin"),
];
