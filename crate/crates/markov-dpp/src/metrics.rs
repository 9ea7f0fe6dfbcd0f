//! Trajectory recording and performance measures: online regret, cumulative
//! constraint violation, optimality gap, feasibility gap, and the
//! reference-optimum oracle they are measured against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlmc::{MlmcDraw, MlmcFunctionPair};
use crate::problem::ProblemInstance;

/// Feasibility slack accepted for comparators and reference optima.
const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("comparator is infeasible: g_bar_{index} = {value} > 1e-8")]
    InfeasibleComparator { index: usize, value: f64 },
    #[error("constraint index {got} out of range ({available} constraints)")]
    BadConstraintIndex { got: usize, available: usize },
    #[error("grid search found no feasible point")]
    NoFeasiblePoint,
    #[error("grid method supports dim <= 3, got {0}")]
    GridDimTooLarge(usize),
    #[error("descent did not reach a feasible KKT point (residual {residual}, max g_bar {infeasibility})")]
    DescentFailed { residual: f64, infeasibility: f64 },
}

/// One solver step: the committed iterate, queues, parameters, observed
/// function values, and the sample draw behind the step's estimator (kept so
/// the per-step functions can be re-evaluated at comparator points).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub v: f64,
    pub alpha: f64,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub f_value: f64,
    pub g_values: Vec<f64>,
    /// Plain per-sample sums at x_t (the per-data-sample view of the step).
    pub f_sample_sum: f64,
    pub g_sample_sums: Vec<f64>,
    pub draw: MlmcDraw,
}

/// Full run record: per-step rows for t = 1..T plus the final iterate and
/// queue sizes, the seed, and a schedule echo. Immutable once returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub instance_label: String,
    pub schedule_label: String,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub x_final: Vec<f64>,
    pub q_final: Vec<f64>,
    pub samples_consumed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Simple average of the decision iterates x_1..x_T (x_{T+1} excluded).
    pub fn average_iterate(&self) -> Vec<f64> {
        let dim = self.records[0].x.len();
        let mut acc = vec![0.0; dim];
        for rec in &self.records {
            for (a, v) in acc.iter_mut().zip(&rec.x) {
                *a += v;
            }
        }
        let t = self.records.len() as f64;
        acc.iter_mut().for_each(|a| *a /= t);
        acc
    }
}

/// Online regret against a fixed comparator: `sum_t f_t(x_t) - sum_t f_t(x)`,
/// re-evaluating each step's observed function (state oracle or MLMC
/// estimator) at the comparator. With `require_feasible`, the comparator must
/// satisfy the stationary constraint `g_bar <= 0` (the benchmark of the
/// stochastic problem).
pub fn regret(
    instance: &ProblemInstance,
    traj: &Trajectory,
    comparator: &[f64],
    require_feasible: bool,
) -> Result<f64, MetricsError> {
    if require_feasible {
        let (_, g_bar) = instance.bar_eval(comparator);
        for (i, v) in g_bar.iter().enumerate() {
            if *v > FEASIBILITY_TOL {
                return Err(MetricsError::InfeasibleComparator {
                    index: i,
                    value: *v,
                });
            }
        }
    }
    let mut total = 0.0;
    for rec in &traj.records {
        let pair = MlmcFunctionPair::new(rec.draw.clone(), instance.oracles.clone());
        total += rec.f_value - pair.f(comparator);
    }
    Ok(total)
}

/// Cumulative signed violation of constraint `i`: `sum_t g_{t,i}(x_t)`.
pub fn violation(traj: &Trajectory, i: usize) -> Result<f64, MetricsError> {
    let available = traj.records.first().map_or(0, |r| r.g_values.len());
    if i >= available {
        return Err(MetricsError::BadConstraintIndex { got: i, available });
    }
    Ok(traj.records.iter().map(|r| r.g_values[i]).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceMethod {
    Grid,
    ProjectedDescent,
}

/// Solution of the exact stationary-averaged problem
/// `min f_bar(x) s.t. g_bar(x) <= 0`, used as the gap reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_bar_star: f64,
    pub method: ReferenceMethod,
    pub tolerance: f64,
}

/// Optimality gap `f_bar(x_bar) - f_bar(x*)`. May be slightly negative when
/// `x_bar` is infeasible.
pub fn gap(instance: &ProblemInstance, x_bar: &[f64], reference: &ReferenceSolution) -> f64 {
    instance.f_bar(x_bar) - reference.f_bar_star
}

/// Feasibility gap per constraint: the signed `g_bar_i(x_bar)`.
pub fn infeasibility(instance: &ProblemInstance, x_bar: &[f64]) -> Vec<f64> {
    instance.bar_eval(x_bar).1
}

/// Compute the reference optimum by the requested method.
pub fn reference_solution(
    instance: &ProblemInstance,
    method: ReferenceMethod,
) -> Result<ReferenceSolution, MetricsError> {
    match method {
        ReferenceMethod::Grid => grid_reference(instance),
        ReferenceMethod::ProjectedDescent => descent_reference(instance),
    }
}

/// Exhaustive mesh with refinement, dim <= 3 only. The problem is convex, so
/// the best feasible mesh point is globally near-optimal at mesh resolution.
fn grid_reference(instance: &ProblemInstance) -> Result<ReferenceSolution, MetricsError> {
    let dim = instance.domain.dim;
    if dim > 3 {
        return Err(MetricsError::GridDimTooLarge(dim));
    }
    let (lo0, hi0) = bounding_box(instance);
    let mesh = 13usize;
    let rounds = 9;
    let mut lo = lo0.clone();
    let mut hi = hi0.clone();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..rounds {
        let steps: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) / (mesh - 1) as f64)
            .collect();
        let mut idx = vec![0usize; dim];
        loop {
            let p: Vec<f64> = (0..dim).map(|d| lo[d] + steps[d] * idx[d] as f64).collect();
            if instance.domain.contains(&p, 1e-12) {
                let (f, g) = instance.bar_eval(&p);
                if g.iter().all(|&v| v <= 0.0)
                    && best.as_ref().is_none_or(|(bf, _)| f < *bf)
                {
                    best = Some((f, p));
                }
            }
            // odometer increment over the mesh
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < mesh {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == dim {
                    break;
                }
            }
            if d == dim {
                break;
            }
        }
        let Some((_, center)) = &best else {
            return Err(MetricsError::NoFeasiblePoint);
        };
        // Shrink the box around the incumbent, staying inside the original.
        for d in 0..dim {
            let half = (hi[d] - lo[d]) * 0.5 * 0.35;
            lo[d] = (center[d] - half).max(lo0[d]);
            hi[d] = (center[d] + half).min(hi0[d]);
        }
    }
    let (f_star, x_star) = best.ok_or(MetricsError::NoFeasiblePoint)?;
    let tolerance = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) / (mesh - 1) as f64)
        .fold(0.0f64, |acc, s| acc + s * s)
        .sqrt();
    Ok(ReferenceSolution {
        x_star,
        f_bar_star: f_star,
        method: ReferenceMethod::Grid,
        tolerance,
    })
}

fn bounding_box(instance: &ProblemInstance) -> (Vec<f64>, Vec<f64>) {
    use crate::problem::DomainKind;
    match &instance.domain.kind {
        DomainKind::Box { lo, hi } => (lo.clone(), hi.clone()),
        DomainKind::Ball { center, radius } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        ),
    }
}

/// Projected gradient on `f_bar + pen * sum_i [g_bar_i]_+^2` with penalty
/// continuation, terminating at KKT residual < 1e-6 and feasibility within
/// 1e-8.
fn descent_reference(instance: &ProblemInstance) -> Result<ReferenceSolution, MetricsError> {
    let domain = &instance.domain;
    let mut x = instance
        .slater
        .as_ref()
        .map(|s| s.x_hat.clone())
        .unwrap_or_else(|| domain.center());
    x = domain.project(&x).expect("center/slater point projects");

    let phi = |x: &[f64], pen: f64| -> f64 {
        let (f, g) = instance.bar_eval(x);
        f + pen * g.iter().map(|&v| v.max(0.0).powi(2)).sum::<f64>()
    };
    let grad_phi = |x: &[f64], pen: f64| -> Vec<f64> {
        let mut grad = instance.grad_f_bar(x);
        let (_, g) = instance.bar_eval(x);
        for (i, &gi) in g.iter().enumerate() {
            if gi > 0.0 {
                let gg = instance.grad_g_bar(i, x);
                for (a, v) in grad.iter_mut().zip(gg) {
                    *a += pen * 2.0 * gi * v;
                }
            }
        }
        grad
    };

    let mut residual = f64::INFINITY;
    let mut pen = 10.0;
    while pen <= 1e9 {
        let mut step = 1.0f64;
        for _ in 0..20_000 {
            let val = phi(&x, pen);
            let grad = grad_phi(&x, pen);
            // Armijo backtracking on the projected step.
            let mut improved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
                let cand = domain.project(&cand).expect("projection in-bounds");
                let decrease: f64 = val - phi(&cand, pen);
                let move_sq: f64 = cand
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if decrease >= 1e-4 / step * move_sq && move_sq > 0.0 {
                    x = cand;
                    improved = true;
                    step = (step * 2.0).min(1e6);
                    break;
                }
                step *= 0.5;
                if step < 1e-18 {
                    break;
                }
            }
            // KKT residual: norm of the unit-step projected gradient mapping.
            let probe: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - g).collect();
            let probe = domain.project(&probe).expect("projection in-bounds");
            residual = probe
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if residual < 1e-7 || !improved {
                break;
            }
        }
        let g_max = instance
            .bar_eval(&x)
            .1
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if g_max <= FEASIBILITY_TOL && residual < 1e-6 {
            break;
        }
        pen *= 10.0;
    }

    // Pull just inside the feasible region via the Slater point if the
    // penalty solution sits a hair outside.
    let mut g_max = instance
        .bar_eval(&x)
        .1
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if g_max > FEASIBILITY_TOL {
        if let Some(slater) = &instance.slater {
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let cand: Vec<f64> = x
                    .iter()
                    .zip(&slater.x_hat)
                    .map(|(a, b)| a + mid * (b - a))
                    .collect();
                let m = instance
                    .bar_eval(&cand)
                    .1
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                if m <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            x = x
                .iter()
                .zip(&slater.x_hat)
                .map(|(a, b)| a + hi * (b - a))
                .collect();
            g_max = instance
                .bar_eval(&x)
                .1
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    if g_max > FEASIBILITY_TOL {
        return Err(MetricsError::DescentFailed {
            residual,
            infeasibility: g_max,
        });
    }
    let f_star = instance.f_bar(&x);
    Ok(ReferenceSolution {
        x_star: x,
        f_bar_star: f_star,
        method: ReferenceMethod::ProjectedDescent,
        tolerance: residual.max(1e-12),
    })
}

/// JSON run summary, one per solver run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub final_gap: f64,
    pub final_infeasibility: Vec<f64>,
    pub regret: f64,
    pub violation: Vec<f64>,
    pub tau_mix: Option<u64>,
    pub seed: u64,
    pub wall_time_ms: u64,
    pub iterations: u64,
    pub samples_consumed: u64,
}

/// Assemble a [`RunSummary`] against a reference optimum. `wall_time_ms` is
/// the caller's to fill.
pub fn summarize(
    instance: &ProblemInstance,
    traj: &Trajectory,
    reference: &ReferenceSolution,
    tau_mix: Option<u64>,
) -> Result<RunSummary, MetricsError> {
    let x_bar = traj.average_iterate();
    let m = instance.n_constraints;
    Ok(RunSummary {
        final_gap: gap(instance, &x_bar, reference),
        final_infeasibility: infeasibility(instance, &x_bar),
        regret: regret(instance, traj, &reference.x_star, true)?,
        violation: (0..m)
            .map(|i| violation(traj, i))
            .collect::<Result<_, _>>()?,
        tau_mix,
        seed: traj.seed,
        wall_time_ms: 0,
        iterations: traj.len() as u64,
        samples_consumed: traj.samples_consumed,
    })
}

/// Render the trajectory as CSV, one row per step:
/// `t, N_t, V_t, alpha_t, x components, Q components, f and g at x_t,
/// per-sample sums, optional cumulative regret, cumulative violations`.
pub fn trajectory_csv(
    instance: &ProblemInstance,
    traj: &Trajectory,
    comparator: Option<&[f64]>,
) -> String {
    use std::fmt::Write as _;
    let dim = traj.records[0].x.len();
    let m = traj.records[0].g_values.len();
    let mut out = String::new();
    out.push('t');
    out.push_str(",N_t,V_t,alpha_t");
    for d in 0..dim {
        let _ = write!(out, ",x{d}");
    }
    for i in 0..m {
        let _ = write!(out, ",Q{i}");
    }
    out.push_str(",f_t_at_xt");
    for i in 0..m {
        let _ = write!(out, ",g{i}_at_xt");
    }
    out.push_str(",f_samples_at_xt");
    for i in 0..m {
        let _ = write!(out, ",g{i}_samples_at_xt");
    }
    if comparator.is_some() {
        out.push_str(",cum_regret");
    }
    for i in 0..m {
        let _ = write!(out, ",cum_violation{i}");
    }
    out.push('\n');

    let mut cum_regret = 0.0f64;
    let mut cum_violation = vec![0.0f64; m];
    for (idx, rec) in traj.records.iter().enumerate() {
        let _ = write!(out, "{}", idx + 1);
        let _ = write!(out, ",{}", rec.draw.n);
        let _ = write!(out, ",{},{}", rec.v, rec.alpha);
        for v in &rec.x {
            let _ = write!(out, ",{v}");
        }
        for q in &rec.q {
            let _ = write!(out, ",{q}");
        }
        let _ = write!(out, ",{}", rec.f_value);
        for g in &rec.g_values {
            let _ = write!(out, ",{g}");
        }
        let _ = write!(out, ",{}", rec.f_sample_sum);
        for g in &rec.g_sample_sums {
            let _ = write!(out, ",{g}");
        }
        if let Some(x_star) = comparator {
            let pair = MlmcFunctionPair::new(rec.draw.clone(), instance.oracles.clone());
            cum_regret += rec.f_value - pair.f(x_star);
            let _ = write!(out, ",{cum_regret}");
        }
        for (i, g) in rec.g_values.iter().enumerate() {
            cum_violation[i] += g;
            let _ = write!(out, ",{}", cum_violation[i]);
        }
        out.push('\n');
    }
    out
}
