//! The adaptive drift-plus-penalty engine.
//!
//! One engine executes every variant; the variants differ only in how the
//! penalty parameter `V_t` and step-size parameter `alpha_t` are produced
//! ([`ParameterSchedule`]) and in which data stream feeds the per-step
//! function pair (single chain samples for the known-mixing-time path, MLMC
//! estimators for the unknown-mixing-time path).
//!
//! Each step: commit the current iterate, observe `(f_t, g_t)`, set
//! `(V_t, alpha_t)`, take the primal step
//!
//! ```text
//! x_{t+1} = argmin_{x in X} (V_t grad f_t(x_t) + sum_i Q_{t,i} grad g_{t,i}(x_t))' x
//!           + alpha_t D(x, x_t)
//! ```
//!
//! (a Euclidean projection with closed form here), then the dual update
//! `Q_{t+1,i} = [Q_{t,i} + g_{t,i}(x_t) + grad g_{t,i}(x_t)' (x_{t+1} - x_t)]_+`
//! per constraint.

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chain::ChainSampler;
use crate::metrics::{StepRecord, Trajectory};
use crate::mlmc::{mlmc_estimate, MlmcFunctionPair};
use crate::problem::{dot, norm, Domain, ProblemError, ProblemInstance, StateOracle};
use crate::seed::child_seed;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("beta must lie in (0, 1/2], got {0}")]
    InvalidBeta(f64),
    #[error("delta must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("horizon/budget must be at least 1")]
    InvalidBudget,
    #[error("non-finite gradient or function value at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("invariant violated at step {step}: {check}")]
    InvariantViolation { step: u64, check: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Parameter schedules for the drift-plus-penalty family.
///
/// The emitted sequences keep `V_t`, `alpha_t`, and `alpha_t / V_t`
/// non-decreasing, which is what the engine's analysis template requires.
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterSchedule {
    /// Known mixing time, horizon-oblivious: `V_t = (tau t)^beta`, `alpha_t = tau t`.
    Edpp { tau_mix: u64, beta: f64 },
    /// Known mixing time and horizon, constant: `V = (tau T)^beta`, `alpha = tau T`.
    EdppT { tau_mix: u64, horizon: u64, beta: f64 },
    /// The i.i.d.-era baseline: `V = sqrt(T)`, `alpha = T`.
    DppFixed { horizon: u64 },
    /// AdaGrad-style adaptive, reading the accumulator through step t-1:
    /// `V_t = S_{t-1}^beta / R`, `alpha_t = S_{t-1} / R^2`.
    Mdpp { beta: f64, delta: f64, r: f64 },
    /// Adversarial variant, reading the accumulator through step t:
    /// `V_t = S_t^beta / R`, `alpha_t = S_t / R^2`.
    Adversarial { beta: f64, r: f64 },
}

impl ParameterSchedule {
    pub fn validate(&self) -> Result<(), SolverError> {
        let beta = match self {
            Self::Edpp { beta, .. }
            | Self::EdppT { beta, .. }
            | Self::Mdpp { beta, .. }
            | Self::Adversarial { beta, .. } => *beta,
            Self::DppFixed { .. } => 0.5,
        };
        if !(beta > 0.0 && beta <= 0.5) {
            return Err(SolverError::InvalidBeta(beta));
        }
        if let Self::Mdpp { delta, .. } = self {
            if *delta <= 0.0 || delta.is_nan() {
                return Err(SolverError::NonPositiveDelta(*delta));
            }
        }
        Ok(())
    }

    /// True when the accumulator must fold in the current step's `a_t`
    /// before the parameters are read.
    fn accumulates_before_read(&self) -> bool {
        matches!(self, Self::Adversarial { .. })
    }

    fn is_adaptive(&self) -> bool {
        matches!(self, Self::Mdpp { .. } | Self::Adversarial { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Self::Edpp { tau_mix, beta } => format!("edpp(tau={tau_mix},beta={beta})"),
            Self::EdppT {
                tau_mix,
                horizon,
                beta,
            } => format!("edpp-T(tau={tau_mix},T={horizon},beta={beta})"),
            Self::DppFixed { horizon } => format!("dpp-fixed(T={horizon})"),
            Self::Mdpp { beta, delta, r } => format!("mdpp(beta={beta},delta={delta},R={r})"),
            Self::Adversarial { beta, r } => format!("adversarial(beta={beta},R={r})"),
        }
    }
}

/// Running AdaGrad-style accumulator `S_t`.
#[derive(Debug, Clone, Default)]
pub struct AdaptiveAccumulator {
    s: f64,
    history: Vec<f64>,
}

impl AdaptiveAccumulator {
    pub fn new(initial: f64) -> Self {
        Self {
            s: initial,
            history: Vec::new(),
        }
    }

    pub fn add(&mut self, a: f64) {
        self.history.push(a);
        self.s += a;
    }

    pub fn sum(&self) -> f64 {
        self.s
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}

/// Mutable per-run state: step index, iterate, virtual queues, accumulator,
/// and the probe RNG used only by debug invariant checks.
#[derive(Debug)]
pub struct SolverState {
    pub t: u64,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub accumulator: AdaptiveAccumulator,
    pub rng: ChaCha8Rng,
}

/// Read the step's `(V_t, alpha_t)`. Adaptive variants require the
/// accumulator to be folded through step t-1 (MDPP) or t (adversarial).
pub fn schedule_params(
    schedule: &ParameterSchedule,
    state: &SolverState,
) -> Result<(f64, f64), SolverError> {
    schedule.validate()?;
    let t = state.t as f64;
    Ok(match schedule {
        ParameterSchedule::Edpp { tau_mix, beta } => {
            let a = *tau_mix as f64 * t;
            (a.powf(*beta), a)
        }
        ParameterSchedule::EdppT {
            tau_mix,
            horizon,
            beta,
        } => {
            let a = *tau_mix as f64 * *horizon as f64;
            (a.powf(*beta), a)
        }
        ParameterSchedule::DppFixed { horizon } => {
            let t_total = *horizon as f64;
            (t_total.sqrt(), t_total)
        }
        ParameterSchedule::Mdpp { beta, r, .. }
        | ParameterSchedule::Adversarial { beta, r } => {
            let s = state.accumulator.sum();
            (s.powf(*beta) / r, s / (r * r))
        }
    })
}

/// The combined primal direction `c = V_t grad f + sum_i Q_i grad g_i`.
fn primal_direction(
    v: f64,
    grad_f: &[f64],
    queue_grads: &[(f64, &[f64])],
) -> Vec<f64> {
    let mut c: Vec<f64> = grad_f.iter().map(|gi| v * gi).collect();
    for (q, gg) in queue_grads {
        for (ci, gi) in c.iter_mut().zip(*gg) {
            *ci += q * *gi;
        }
    }
    c
}

/// Primal update: with the Euclidean Bregman divergence the argmin is the
/// projection of `x_t - c / (2 alpha_t)` onto the domain. A zero direction
/// leaves the iterate in place (covers the `alpha = 0` corner of the
/// adversarial schedule, where `c = 0` is forced).
pub fn primal_update(
    domain: &Domain,
    x: &[f64],
    v: f64,
    alpha: f64,
    grad_f: &[f64],
    queue_grads: &[(f64, &[f64])],
    step: u64,
) -> Result<Vec<f64>, SolverError> {
    let c = primal_direction(v, grad_f, queue_grads);
    if c.iter().any(|ci| !ci.is_finite()) {
        return Err(SolverError::NonFiniteGradient { step });
    }
    if c.iter().all(|&ci| ci == 0.0) {
        return Ok(x.to_vec());
    }
    debug_assert!(alpha > 0.0, "nonzero direction requires alpha > 0");
    let y: Vec<f64> = x
        .iter()
        .zip(&c)
        .map(|(xi, ci)| xi - ci / (2.0 * alpha))
        .collect();
    Ok(domain.project(&y)?)
}

/// Dual update for one virtual queue:
/// `[Q + g(x_t) + grad g(x_t)' (x_{t+1} - x_t)]_+`.
pub fn dual_update(q: f64, g_val: f64, grad_g: &[f64], dx: &[f64]) -> f64 {
    (q + g_val + dot(grad_g, dx)).max(0.0)
}

/// Run budget: a fixed iteration count, or iterate until the stream has
/// consumed at least this many data samples (the MLMC path consumes `N_t`
/// samples per iteration, so sample budgets align the x-axis across
/// algorithms).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Iterations(u64),
    DataSamples(u64),
}

/// Source of the per-step function pair.
pub trait FunctionStream {
    fn next_step(&mut self) -> MlmcFunctionPair;
}

/// One chain sample per step (the known-mixing-time data path).
pub struct SingleSampleStream {
    sampler: ChainSampler,
    oracles: Arc<Vec<StateOracle>>,
}

impl SingleSampleStream {
    pub fn new(sampler: ChainSampler, oracles: Arc<Vec<StateOracle>>) -> Self {
        Self { sampler, oracles }
    }

    pub fn for_instance(instance: &ProblemInstance, seed: u64) -> Self {
        Self::new(
            ChainSampler::new(instance.chain.clone(), 0, child_seed(seed, "chain")),
            instance.oracles.clone(),
        )
    }
}

impl FunctionStream for SingleSampleStream {
    fn next_step(&mut self) -> MlmcFunctionPair {
        MlmcFunctionPair::single_sample(self.sampler.step(), self.oracles.clone())
    }
}

/// MLMC estimators over consecutive chain samples (the unknown-mixing-time
/// data path).
pub struct MlmcStream {
    sampler: ChainSampler,
    oracles: Arc<Vec<StateOracle>>,
    level_rng: ChaCha8Rng,
    level_horizon: u64,
    cap: Option<usize>,
}

impl MlmcStream {
    pub fn new(
        sampler: ChainSampler,
        oracles: Arc<Vec<StateOracle>>,
        level_seed: u64,
        level_horizon: u64,
        cap: Option<usize>,
    ) -> Self {
        Self {
            sampler,
            oracles,
            level_rng: ChaCha8Rng::seed_from_u64(level_seed),
            level_horizon,
            cap,
        }
    }

    pub fn for_instance(
        instance: &ProblemInstance,
        seed: u64,
        level_horizon: u64,
        cap: Option<usize>,
    ) -> Self {
        Self::new(
            ChainSampler::new(instance.chain.clone(), 0, child_seed(seed, "chain")),
            instance.oracles.clone(),
            child_seed(seed, "mlmc-levels"),
            level_horizon,
            cap,
        )
    }
}

impl FunctionStream for MlmcStream {
    fn next_step(&mut self) -> MlmcFunctionPair {
        mlmc_estimate(
            self.oracles.clone(),
            &mut self.sampler,
            &mut self.level_rng,
            self.level_horizon,
            self.cap,
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Starting iterate; defaults to the domain center.
    pub x0: Option<Vec<f64>>,
    /// Per-step invariant checks (queue bounds, drift bound, step-size bound,
    /// primal optimality probes). They roughly double evaluation cost, so
    /// release runs default them off.
    pub check_invariants: bool,
    /// Probe points per step for the primal optimality check.
    pub probe_points: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            x0: None,
            check_invariants: cfg!(debug_assertions),
            probe_points: 20,
        }
    }
}

/// Execute observe -> schedule -> primal -> dual for each step and record
/// everything. Deterministic for a fixed (instance, schedule, budget, seed).
pub fn run(
    instance: &ProblemInstance,
    stream: &mut dyn FunctionStream,
    schedule: &ParameterSchedule,
    budget: Budget,
    seed: u64,
    opts: &RunOptions,
) -> Result<Trajectory, SolverError> {
    schedule.validate()?;
    match budget {
        Budget::Iterations(0) | Budget::DataSamples(0) => {
            return Err(SolverError::InvalidBudget)
        }
        _ => {}
    }
    let m = instance.n_constraints;
    let r = instance.domain.r;
    let x0 = match &opts.x0 {
        Some(x) => instance.domain.project(x)?,
        None => instance.domain.center(),
    };
    let initial_s = match schedule {
        ParameterSchedule::Mdpp { delta, .. } => *delta,
        _ => 0.0,
    };
    let mut state = SolverState {
        t: 1,
        x: x0,
        q: vec![0.0; m],
        accumulator: AdaptiveAccumulator::new(initial_s),
        rng: ChaCha8Rng::seed_from_u64(child_seed(seed, "probe")),
    };
    let mut records: Vec<StepRecord> = Vec::new();
    let mut consumed: u64 = 0;
    let mut prev_params: Option<(f64, f64)> = None;

    loop {
        match budget {
            Budget::Iterations(t_max) if state.t > t_max => break,
            Budget::DataSamples(b) if consumed >= b => break,
            _ => {}
        }
        let step = state.t;
        let pair = stream.next_step();
        consumed += pair.n_samples() as u64;

        // Observe at the committed iterate x_t.
        let f_val = pair.f(&state.x);
        let grad_f = pair.grad_f(&state.x);
        let g_vals: Vec<f64> = (0..m).map(|i| pair.g(i, &state.x)).collect();
        let grad_gs: Vec<Vec<f64>> = (0..m).map(|i| pair.grad_g(i, &state.x)).collect();
        let finite = f_val.is_finite()
            && grad_f.iter().all(|v| v.is_finite())
            && g_vals.iter().all(|v| v.is_finite())
            && grad_gs.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(SolverError::NonFiniteGradient { step });
        }

        // Per-step measured magnitudes F_t, G_{t,i}, H_{t,i}.
        let f_t = norm(&grad_f);
        let g_norms: Vec<f64> = grad_gs.iter().map(|g| norm(g)).collect();
        let h_abs: Vec<f64> = g_vals.iter().map(|v| v.abs()).collect();

        // a_t = F_t^2/4 + sum_i R^2 G_{t,i}^2 + sum_i H_{t,i}^2 (+ delta for
        // MDPP). The adversarial variant folds it in before the params read
        // (S_t convention), MDPP after (S_{t-1} convention).
        let a_t: f64 = f_t * f_t / 4.0
            + g_norms.iter().map(|g| r * r * g * g).sum::<f64>()
            + h_abs.iter().map(|h| h * h).sum::<f64>();
        if schedule.accumulates_before_read() {
            state.accumulator.add(a_t);
        }
        let (v, alpha) = schedule_params(schedule, &state)?;
        if let ParameterSchedule::Mdpp { delta, .. } = schedule {
            state.accumulator.add(a_t + delta);
        }

        let queue_grads: Vec<(f64, &[f64])> = state
            .q
            .iter()
            .copied()
            .zip(grad_gs.iter().map(|g| g.as_slice()))
            .collect();
        let x_next = primal_update(
            &instance.domain,
            &state.x,
            v,
            alpha,
            &grad_f,
            &queue_grads,
            step,
        )?;
        let dx: Vec<f64> = x_next.iter().zip(&state.x).map(|(a, b)| a - b).collect();
        let q_next: Vec<f64> = (0..m)
            .map(|i| dual_update(state.q[i], g_vals[i], &grad_gs[i], &dx))
            .collect();

        if opts.check_invariants {
            check_step_invariants(
                instance,
                &pair,
                &state,
                prev_params,
                (v, alpha),
                &g_vals,
                &grad_gs,
                f_t,
                &g_norms,
                &h_abs,
                &grad_f,
                &x_next,
                &q_next,
                opts.probe_points,
            )?;
        }
        prev_params = Some((v, alpha));

        records.push(StepRecord {
            v,
            alpha,
            x: state.x.clone(),
            q: state.q.clone(),
            f_value: f_val,
            g_values: g_vals,
            f_sample_sum: pair.f_sample_sum(&state.x),
            g_sample_sums: (0..m).map(|i| pair.g_sample_sum(i, &state.x)).collect(),
            draw: pair.draw.clone(),
        });
        state.x = x_next;
        state.q = q_next;
        state.t += 1;
    }

    if records.is_empty() {
        return Err(SolverError::InvalidBudget);
    }
    Ok(Trajectory {
        instance_label: instance.label.clone(),
        schedule_label: schedule.label(),
        seed,
        records,
        x_final: state.x,
        q_final: state.q,
        samples_consumed: consumed,
    })
}

/// Per-step invariant checks, evaluated with the observed per-step magnitudes.
#[allow(clippy::too_many_arguments)]
fn check_step_invariants(
    instance: &ProblemInstance,
    pair: &MlmcFunctionPair,
    state: &SolverState,
    prev_params: Option<(f64, f64)>,
    params: (f64, f64),
    g_vals: &[f64],
    grad_gs: &[Vec<f64>],
    f_t: f64,
    g_norms: &[f64],
    h_abs: &[f64],
    grad_f: &[f64],
    x_next: &[f64],
    q_next: &[f64],
    probe_points: usize,
) -> Result<(), SolverError> {
    let step = state.t;
    let fail = |check: String| -> Result<(), SolverError> {
        Err(SolverError::InvariantViolation { step, check })
    };
    let tol = |scale: f64| 1e-9 * scale.abs().max(1.0);
    let r = instance.domain.r;
    let (v, alpha) = params;

    // Schedule monotonicity: V_t, alpha_t, alpha_t / V_t all non-decreasing.
    if let Some((pv, pa)) = prev_params {
        if v < pv - tol(pv) || alpha < pa - tol(pa) {
            return fail(format!(
                "schedule monotonicity: (V, alpha) fell from ({pv}, {pa}) to ({v}, {alpha})"
            ));
        }
        if pv > 0.0 && v > 0.0 && alpha / v < pa / pv - tol(pa / pv) {
            return fail("schedule monotonicity: alpha/V decreased".into());
        }
    }

    let dx: Vec<f64> = x_next.iter().zip(&state.x).map(|(a, b)| a - b).collect();
    let dx_norm = norm(&dx);

    // Step-size bound: ||x_{t+1} - x_t|| <= (V F_t + sum_i Q_i G_{t,i}) / (2 alpha).
    if alpha > 0.0 {
        let bound = (v * f_t + dot(&state.q, g_norms)) / (2.0 * alpha);
        if dx_norm > bound + tol(bound) {
            return fail(format!("step-size bound: ||dx|| = {dx_norm} > {bound}"));
        }
    } else if dx_norm > 0.0 {
        return fail("zero alpha must not move the iterate".into());
    }

    for i in 0..g_vals.len() {
        let q = state.q[i];
        let qn = q_next[i];
        if qn < 0.0 {
            return fail(format!("queue {i} negative: {qn}"));
        }
        let inc = qn - q;
        let slack = h_abs[i] + g_norms[i] * r;
        if inc < -slack - tol(slack) {
            return fail(format!(
                "queue increment lower bound: dQ_{i} = {inc} < -(H+GR) = -{slack}"
            ));
        }
        let upper = if pair.is_single_sample() {
            // Convex oracle: the increment is at most g at the new point.
            h_abs[i].max(pair.g(i, x_next).abs())
        } else {
            slack
        };
        if inc > upper + tol(upper) {
            return fail(format!(
                "queue increment upper bound: dQ_{i} = {inc} > {upper}"
            ));
        }
        // Drift bound per constraint.
        let delta_incr = g_vals[i] + dot(&grad_gs[i], &dx);
        let drift = 0.5 * (qn * qn - q * q);
        let rhs = q * delta_incr + 0.5 * slack * slack;
        if drift > rhs + tol(rhs) {
            return fail(format!("drift bound: {drift} > {rhs} for constraint {i}"));
        }
    }

    // Primal optimality probe (Euclidean Bregman characterization):
    // c' x_{t+1} + a ||x_{t+1} - x_t||^2 <= c' z + a ||z - x_t||^2 - a ||z - x_{t+1}||^2.
    let queue_grads: Vec<(f64, &[f64])> = state
        .q
        .iter()
        .copied()
        .zip(grad_gs.iter().map(|g| g.as_slice()))
        .collect();
    let c = primal_direction(v, grad_f, &queue_grads);
    let lhs = dot(&c, x_next) + alpha * instance.domain.bregman(x_next, &state.x);
    let mut rng = state.rng.clone();
    for _ in 0..probe_points {
        let z = instance.domain.sample_uniform(&mut rng);
        let rhs = dot(&c, &z) + alpha * instance.domain.bregman(&z, &state.x)
            - alpha * instance.domain.bregman(&z, x_next);
        if lhs > rhs + tol(rhs.abs().max(lhs.abs())) {
            return fail(format!("primal optimality probe: {lhs} > {rhs}"));
        }
    }
    Ok(())
}

/// Build the natural stream for a schedule and run it: MLMC estimators for
/// the adaptive variants, single chain samples otherwise.
pub fn run_on_instance(
    instance: &ProblemInstance,
    schedule: &ParameterSchedule,
    budget: Budget,
    seed: u64,
    mlmc_cap: Option<usize>,
    opts: &RunOptions,
) -> Result<Trajectory, SolverError> {
    let level_horizon = match budget {
        Budget::Iterations(t) | Budget::DataSamples(t) => t.max(2),
    };
    if schedule.is_adaptive() {
        let mut stream = MlmcStream::for_instance(instance, seed, level_horizon, mlmc_cap);
        run(instance, &mut stream, schedule, budget, seed, opts)
    } else {
        let mut stream = SingleSampleStream::for_instance(instance, seed);
        run(instance, &mut stream, schedule, budget, seed, opts)
    }
}
