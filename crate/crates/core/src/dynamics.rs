//! The discrete preconditioned HiSD iteration.
//!
//! Each outer iteration evaluates `g = ∇E(x)` and `H = ∇²E(x)` once, runs `J`
//! sweeps of the deflated frame dynamics `v_i ← v_i − τ P_i^M M⁻¹ H v_i`
//! followed by M-orthonormalization, and moves the state along the reflected
//! direction `d = −M⁻¹g + 2V(Vᵀg)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::eigen::{lowest_generalized_eigenpairs, morse_index, MorseIndex};
use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::metric::{m_orthonormalize, Frame, SpdMetric};
use crate::preconditioners::{subspace_inertial_metric, InertialParams};
use crate::problems::Problem;

/// One-time switch of metric and step size on stagnation of `‖g‖`.
///
/// Fires at iteration `m >= window` when `‖g_m‖ >= (1 − rel_decrease) ‖g_{m−window}‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSwitch {
    pub window: usize,
    pub rel_decrease: f64,
    /// Step size after the switch.
    pub eta: f64,
    /// Recompute the frame from the lowest eigenpairs of the new pencil
    /// instead of re-orthonormalizing the current one.
    pub reinit_frame: bool,
}

impl StageSwitch {
    pub fn fires(&self, history: &[f64]) -> bool {
        let m = history.len() - 1;
        m >= self.window && history[m] >= (1.0 - self.rel_decrease) * history[m - self.window]
    }
}

/// How the initial frame is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameInit {
    /// The `k` lowest generalized eigenvectors of `(H(x_0), M_0)`, falling back
    /// to a seeded random frame if the eigensolve fails.
    Eigen,
    /// Seeded Gaussian columns, M-orthonormalized.
    Random(u64),
    /// Explicit columns, M-orthonormalized.
    Given(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Target Morse index.
    pub k: usize,
    pub eta: f64,
    pub tau: f64,
    pub inner_iters: usize,
    /// Tolerance on the Euclidean `‖∇E‖`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// `‖x‖∞` beyond which the run is declared divergent.
    pub divergence_cap: f64,
    pub switch: Option<StageSwitch>,
    pub frame_init: FrameInit,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            k: 1,
            eta: 0.1,
            tau: 0.1,
            inner_iters: 1,
            grad_tol: 1e-6,
            max_iters: 1000,
            divergence_cap: 1e6,
            switch: None,
            frame_init: FrameInit::Eigen,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("eta", self.eta)?;
        positive("tau", self.tau)?;
        positive("grad_tol", self.grad_tol)?;
        positive("divergence_cap", self.divergence_cap)?;
        if self.inner_iters == 0 {
            return Err(Error::InvalidParameter("inner_iters must be at least 1".into()));
        }
        if let Some(s) = &self.switch {
            positive("switch eta", s.eta)?;
            if !(s.rel_decrease > 0.0 && s.rel_decrease < 1.0) {
                return Err(Error::InvalidParameter("switch rel_decrease must lie in (0, 1)".into()));
            }
            if s.window == 0 {
                return Err(Error::InvalidParameter("switch window must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Supplies the metric for each outer iteration.
pub trait MetricPolicy: Send {
    /// Short description for traces.
    fn describe(&self) -> String;

    /// Metric used from the first iteration of a stage, built at `x`.
    fn start(&mut self, x: &DVector<f64>, h: &Hessian) -> Result<SpdMetric>;

    /// Called at every later iteration; `Some` replaces the current metric.
    fn refresh(&mut self, x: &DVector<f64>, h: &Hessian) -> Result<Option<SpdMetric>>;
}

pub type Builder = Box<dyn FnMut(&DVector<f64>, &Hessian) -> Result<SpdMetric> + Send>;

/// A metric fixed in advance, e.g. the identity.
pub struct FixedMetric(pub SpdMetric);

impl MetricPolicy for FixedMetric {
    fn describe(&self) -> String {
        format!("fixed {}", self.0.kind())
    }

    fn start(&mut self, _x: &DVector<f64>, _h: &Hessian) -> Result<SpdMetric> {
        Ok(self.0.clone())
    }

    fn refresh(&mut self, _x: &DVector<f64>, _h: &Hessian) -> Result<Option<SpdMetric>> {
        Ok(None)
    }
}

/// Built once at the start of its stage, then reused unchanged.
pub struct FrozenMetric {
    name: String,
    build: Builder,
}

impl FrozenMetric {
    pub fn new(name: impl Into<String>, build: Builder) -> Self {
        FrozenMetric { name: name.into(), build }
    }
}

impl MetricPolicy for FrozenMetric {
    fn describe(&self) -> String {
        format!("frozen {}", self.name)
    }

    fn start(&mut self, x: &DVector<f64>, h: &Hessian) -> Result<SpdMetric> {
        (self.build)(x, h)
    }

    fn refresh(&mut self, _x: &DVector<f64>, _h: &Hessian) -> Result<Option<SpdMetric>> {
        Ok(None)
    }
}

/// Rebuilt from the current Hessian at every outer iteration.
pub struct RebuiltMetric {
    name: String,
    build: Builder,
}

impl RebuiltMetric {
    pub fn new(name: impl Into<String>, build: Builder) -> Self {
        RebuiltMetric { name: name.into(), build }
    }
}

impl MetricPolicy for RebuiltMetric {
    fn describe(&self) -> String {
        format!("per-iteration {}", self.name)
    }

    fn start(&mut self, x: &DVector<f64>, h: &Hessian) -> Result<SpdMetric> {
        (self.build)(x, h)
    }

    fn refresh(&mut self, x: &DVector<f64>, h: &Hessian) -> Result<Option<SpdMetric>> {
        (self.build)(x, h).map(Some)
    }
}

/// Subspace-inertial metric; the stabilized frame of one iteration is the
/// previous frame of the next.
pub struct InertialMetric {
    params: InertialParams,
    previous: Option<DMatrix<f64>>,
}

impl InertialMetric {
    pub fn new(params: InertialParams) -> Self {
        InertialMetric { params, previous: None }
    }

    fn build(&mut self, h: &Hessian) -> Result<SpdMetric> {
        let (m, v) = subspace_inertial_metric(h, &self.params, self.previous.as_ref())?;
        self.previous = Some(v);
        Ok(m)
    }
}

impl MetricPolicy for InertialMetric {
    fn describe(&self) -> String {
        format!("subspace-inertial (alpha = {})", self.params.alpha)
    }

    fn start(&mut self, _x: &DVector<f64>, h: &Hessian) -> Result<SpdMetric> {
        self.previous = None;
        self.build(h)
    }

    fn refresh(&mut self, _x: &DVector<f64>, h: &Hessian) -> Result<Option<SpdMetric>> {
        self.build(h).map(Some)
    }
}

/// Metric policies for one or two stages.
pub struct MetricSchedule {
    pub first: Box<dyn MetricPolicy>,
    /// Policy started at the stage switch; required when the config has a switch.
    pub second: Option<Box<dyn MetricPolicy>>,
}

impl MetricSchedule {
    pub fn single(policy: Box<dyn MetricPolicy>) -> Self {
        MetricSchedule { first: policy, second: None }
    }

    pub fn fixed(metric: SpdMetric) -> Self {
        Self::single(Box::new(FixedMetric(metric)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    ConvergedIndexK,
    ConvergedWrongIndex,
    Diverged,
    BudgetExhausted,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::ConvergedIndexK => "ConvergedIndexK",
            Status::ConvergedWrongIndex => "ConvergedWrongIndex",
            Status::Diverged => "Diverged",
            Status::BudgetExhausted => "BudgetExhausted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Status::ConvergedIndexK, Status::ConvergedWrongIndex, Status::Diverged, Status::BudgetExhausted]
            .into_iter()
            .find(|st| st.as_str() == s)
    }

    /// Process exit code: 0, 2, 3, 4 respectively.
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::ConvergedIndexK => 0,
            Status::ConvergedWrongIndex => 2,
            Status::Diverged => 3,
            Status::BudgetExhausted => 4,
        }
    }

    pub fn converged(&self) -> bool {
        matches!(self, Status::ConvergedIndexK | Status::ConvergedWrongIndex)
    }
}

/// One row of the iteration history, describing the state `x_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub grad_norm: f64,
    pub energy: f64,
    /// Step size applied from `x_m`.
    pub eta: f64,
    pub stage: usize,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

/// Least-squares fit of `ln ‖g_m‖` against `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateEstimate {
    /// `exp(slope)`.
    pub q: f64,
    /// Records used, `(first, last)` iteration numbers.
    pub window: (usize, usize),
    /// Root-mean-square residual of the log-linear fit.
    pub residual: f64,
}

/// Complete result of [`solve`].
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub status: Status,
    pub final_x: DVector<f64>,
    pub final_frame: DMatrix<f64>,
    pub final_morse_index: Option<MorseIndex>,
    pub rate: Option<RateEstimate>,
    pub switch_iteration: Option<usize>,
    /// Largest `|VᵀMV − I|` seen after any outer iteration.
    pub max_frame_error: f64,
    pub wall_time: f64,
    /// The metric active at termination.
    pub final_metric: SpdMetric,
}

impl RunTrace {
    /// Number of state updates performed.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.grad_norm).collect()
    }
}

/// State carried between outer iterations.
#[derive(Clone, Debug)]
pub struct IterateState {
    pub x: DVector<f64>,
    pub frame: Frame,
    pub g: DVector<f64>,
    pub m: usize,
    pub stage: usize,
}

/// `d = −M⁻¹g + 2V(Vᵀg)`, the reflection of the preconditioned descent
/// direction across the M-orthogonal complement of `span(V)`.
pub fn reflected_direction(g: &DVector<f64>, frame: &Frame, m: &SpdMetric) -> DVector<f64> {
    let v = frame.vectors();
    let mut d = -m.solve(g);
    if v.ncols() > 0 {
        d += v * (v.tr_mul(g) * 2.0);
    }
    d
}

/// `P_i^M w = w − v_i (v_iᵀ M w) − 2 Σ_{j<i} v_j (v_jᵀ M w)` for 0-based column `i`.
pub fn deflated_residual(i: usize, v: &DMatrix<f64>, w: &DVector<f64>, m: &SpdMetric) -> DVector<f64> {
    let mw = m.apply(w);
    let mut out = w.clone();
    for j in 0..=i {
        let c = v.column(j).dot(&mw);
        let weight = if j == i { 1.0 } else { 2.0 };
        out.axpy(-weight * c, &v.column(j), 1.0);
    }
    out
}

/// `J` sweeps of `v_i ← v_i − τ P_i^M M⁻¹ H v_i` (`i = 1..k` in order, each
/// using the already updated earlier columns), each sweep followed by
/// M-orthonormalization.
pub fn frame_update(frame: &Frame, h: &Hessian, m: &SpdMetric, tau: f64, sweeps: usize) -> Result<Frame> {
    let mut v = frame.vectors().clone();
    let mut current = frame.clone();
    for _ in 0..sweeps {
        for i in 0..v.ncols() {
            let vi = v.column(i).into_owned();
            let w = m.solve(&h.mul_vec(&vi));
            let r = deflated_residual(i, &v, &w, m);
            v.set_column(i, &(vi - r * tau));
        }
        current = m_orthonormalize(&v, m)?;
        v = current.vectors().clone();
    }
    Ok(current)
}

/// One outer iteration from `state` with metric `m` and step `eta`: frame
/// update at `H(x_m)`, reflected step, and the gradient at the new point.
pub fn hisd_step(
    state: &IterateState,
    problem: &dyn Problem,
    h: &Hessian,
    m: &SpdMetric,
    eta: f64,
    config: &SolverConfig,
) -> Result<IterateState> {
    let frame = frame_update(&state.frame, h, m, config.tau, config.inner_iters)?;
    let d = reflected_direction(&state.g, &frame, m);
    let x = &state.x + d * eta;
    let g = problem.gradient(&x);
    Ok(IterateState { x, frame, g, m: state.m + 1, stage: state.stage })
}

fn random_frame(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng))
}

fn initial_frame(init: &FrameInit, h: &Hessian, m: &SpdMetric, k: usize) -> Result<Frame> {
    let n = h.dim();
    match init {
        FrameInit::Eigen => match lowest_generalized_eigenpairs(h, m, k) {
            Ok(e) => m_orthonormalize(&e.vectors, m),
            Err(_) => m_orthonormalize(&random_frame(n, k, 0), m),
        },
        FrameInit::Random(seed) => m_orthonormalize(&random_frame(n, k, *seed), m),
        FrameInit::Given(v) => m_orthonormalize(v, m),
    }
}

/// Re-expresses a frame under a new metric, re-initializing it when the
/// current columns have collapsed.
fn rebase_frame(frame: &Frame, h: &Hessian, m: &SpdMetric, k: usize, fresh: bool) -> Result<Frame> {
    if fresh {
        return initial_frame(&FrameInit::Eigen, h, m, k);
    }
    m_orthonormalize(frame.vectors(), m)
}

/// Fraction of the records used by [`estimate_linear_rate`] in [`solve`].
pub const RATE_TAIL_FRACTION: f64 = 0.6;
const RATE_MIN_POINTS: usize = 5;
const RATE_MAX_RESIDUAL: f64 = 1.0;

/// Fits `q` from the last `tail_fraction` of the records (at least five).
///
/// Returns a reason instead of an estimate when fewer than five positive
/// gradient norms are available, when the fit is not contracting (`q >= 1`),
/// or when the RMS residual of the log-linear fit exceeds 1.
pub fn estimate_linear_rate(records: &[TraceRecord], tail_fraction: f64) -> std::result::Result<RateEstimate, String> {
    let usable: Vec<&TraceRecord> = records.iter().filter(|r| r.grad_norm > 0.0 && r.grad_norm.is_finite()).collect();
    if usable.len() < RATE_MIN_POINTS {
        return Err(format!("only {} usable records, need {RATE_MIN_POINTS}", usable.len()));
    }
    let take = ((usable.len() as f64 * tail_fraction).ceil() as usize).clamp(RATE_MIN_POINTS, usable.len());
    let tail = &usable[usable.len() - take..];
    let xs: Vec<f64> = tail.iter().map(|r| r.iter as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.grad_norm.ln()).collect();
    let nf = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();
    let q = slope.exp();
    if !(q < 1.0) {
        return Err(format!("tail is not contracting (fitted q = {q})"));
    }
    if residual > RATE_MAX_RESIDUAL {
        return Err(format!("log-linear fit residual {residual} too large"));
    }
    Ok(RateEstimate { q, window: (tail[0].iter, tail[tail.len() - 1].iter), residual })
}

/// Runs the iteration from `x0` until `‖g‖ < grad_tol`, divergence, or the budget.
///
/// Convergence is tested on every state including `x_0`; a converged point
/// is classified by its Morse index. A non-finite state or `‖x‖∞` above the
/// cap is `Diverged`. With a stage switch configured, the second policy is
/// started at the iteration where the trigger fires and the frame is carried
/// over to the new metric.
pub fn solve(
    problem: &dyn Problem,
    x0: &DVector<f64>,
    mut schedule: MetricSchedule,
    config: &SolverConfig,
) -> Result<RunTrace> {
    config.validate()?;
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
    }
    if config.k > n {
        return Err(Error::InvalidParameter(format!("index k = {} exceeds n = {n}", config.k)));
    }
    if config.switch.is_some() && schedule.second.is_none() {
        return Err(Error::InvalidParameter("a stage switch needs a second metric".into()));
    }
    let start = Instant::now();

    let mut h = problem.hessian(x0);
    let mut metric = schedule.first.start(x0, &h)?;
    let frame = initial_frame(&config.frame_init, &h, &metric, config.k)?;
    let mut state = IterateState { x: x0.clone(), frame, g: problem.gradient(x0), m: 0, stage: 1 };
    let mut eta = config.eta;
    let mut records = Vec::new();
    let mut history = Vec::new();
    let mut max_frame_error = state.frame.orthonormality_error();
    let mut switch_iteration = None;
    let mut fresh_hessian = true;
    let mut converged_index = None;

    let status = loop {
        let energy = problem.energy(&state.x);
        let grad_norm = state.g.norm();
        let finite = energy.is_finite() && grad_norm.is_finite() && state.x.iter().all(|v| v.is_finite());
        if !finite || state.x.amax() > config.divergence_cap {
            records.push(TraceRecord {
                iter: state.m,
                grad_norm,
                energy,
                eta,
                stage: state.stage,
                wall_time: start.elapsed().as_secs_f64(),
            });
            break Status::Diverged;
        }
        history.push(grad_norm);

        // stage switch, evaluated on the history up to and including x_m
        let mut switched = false;
        if let (Some(sw), 1) = (&config.switch, state.stage) {
            if sw.fires(&history) {
                if !fresh_hessian {
                    h = problem.hessian(&state.x);
                    fresh_hessian = true;
                }
                let second = schedule.second.as_mut().expect("checked above");
                metric = second.start(&state.x, &h)?;
                state.frame = rebase_frame(&state.frame, &h, &metric, config.k, sw.reinit_frame)?;
                eta = sw.eta;
                state.stage = 2;
                switch_iteration = Some(state.m);
                switched = true;
            }
        }

        records.push(TraceRecord {
            iter: state.m,
            grad_norm,
            energy,
            eta,
            stage: state.stage,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if grad_norm < config.grad_tol {
            let hx = if fresh_hessian { h.clone() } else { problem.hessian(&state.x) };
            let mi = morse_index(&hx, &metric)?;
            let status = if mi.index == config.k { Status::ConvergedIndexK } else { Status::ConvergedWrongIndex };
            converged_index = Some(mi);
            break status;
        }
        if state.m >= config.max_iters {
            break Status::BudgetExhausted;
        }

        if !fresh_hessian {
            h = problem.hessian(&state.x);
        }
        if state.m > 0 && !switched {
            let policy = if state.stage == 1 { &mut schedule.first } else { schedule.second.as_mut().unwrap() };
            if let Some(new_metric) = policy.refresh(&state.x, &h)? {
                metric = new_metric;
                state.frame = rebase_frame(&state.frame, &h, &metric, config.k, false)?;
            }
        }
        state = hisd_step(&state, problem, &h, &metric, eta, config)?;
        fresh_hessian = false;
        max_frame_error = max_frame_error.max(state.frame.orthonormality_error());
    };

    let final_morse_index = match status {
        Status::Diverged => None,
        _ if converged_index.is_some() => converged_index,
        _ => {
            let hx = if fresh_hessian { h } else { problem.hessian(&state.x) };
            morse_index(&hx, &metric).ok()
        }
    };
    let rate = estimate_linear_rate(&records, RATE_TAIL_FRACTION).ok();
    Ok(RunTrace {
        records,
        status,
        final_x: state.x,
        final_frame: state.frame.into_vectors(),
        final_morse_index,
        rate,
        switch_iteration,
        max_frame_error,
        wall_time: start.elapsed().as_secs_f64(),
        final_metric: metric,
    })
}

/// Checks performed by [`verify_saddle`].
#[derive(Clone, Debug)]
pub struct SaddleReport {
    pub grad_norm: f64,
    pub morse_index: MorseIndex,
    /// The `k` lowest generalized eigenvalues at `x`, as Rayleigh quotients `v_iᵀHv_i`.
    pub eigenvalues: Vec<f64>,
    /// `‖Hv_i − λ_i M v_i‖` for the M-normalized eigenvectors.
    pub residuals: Vec<f64>,
    /// `λ_1 < … < λ_k < 0`.
    pub ordered_negative: bool,
}

impl SaddleReport {
    pub fn passed(&self, k: usize, grad_tol: f64, residual_tol: f64) -> bool {
        self.grad_norm < grad_tol
            && self.morse_index.index == k
            && self.ordered_negative
            && self.residuals.iter().all(|r| *r < residual_tol)
    }
}

/// Gradient, Morse index and eigenpair residuals of the `k` lowest
/// generalized eigenpairs of `(H(x), M)`.
pub fn verify_saddle(problem: &dyn Problem, x: &DVector<f64>, m: &SpdMetric, k: usize) -> Result<SaddleReport> {
    let h = problem.hessian(x);
    let grad_norm = problem.gradient(x).norm();
    let mi = morse_index(&h, m)?;
    let eig = lowest_generalized_eigenpairs(&h, m, k)?;
    let mut eigenvalues = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for i in 0..k {
        let v = eig.vectors.column(i).into_owned();
        let hv = h.mul_vec(&v);
        let lambda = v.dot(&hv);
        residuals.push((hv - m.apply(&v) * lambda).norm());
        eigenvalues.push(lambda);
    }
    let ordered_negative = eigenvalues.windows(2).all(|w| w[0] < w[1]) && eigenvalues.last().is_none_or(|l| *l < 0.0);
    Ok(SaddleReport { grad_norm, morse_index: mi, eigenvalues, residuals, ordered_negative })
}
