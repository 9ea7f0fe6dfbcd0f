//! Problem instances: per-state objective/constraint oracles over a compact
//! convex domain, exact stationary-averaged evaluators, and Lipschitz-constant
//! bookkeeping.
//!
//! The mirror map is fixed to the squared Euclidean norm, so the Bregman
//! divergence is `||x - y||^2` and the solver's primal argmin reduces to a
//! projected gradient step with a closed form.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chain::{ChainError, TransitionMatrix};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domain has empty interior: coordinate {0} has lo >= hi")]
    EmptyBox(usize),
    #[error("ball radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("oracle count {oracles} does not match chain state count {states}")]
    OracleCountMismatch { oracles: usize, states: usize },
    #[error("state {state} declares {got} constraints, expected {expected}")]
    ConstraintCountMismatch {
        state: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Compact convex domain with closed-form Euclidean projection.
#[derive(Debug, Clone)]
pub enum DomainKind {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone)]
pub struct Domain {
    pub kind: DomainKind,
    pub dim: usize,
    /// Bregman diameter bound: D(x, y) <= R^2 for all x, y in the domain.
    /// With the Euclidean mirror map this is the Euclidean diameter.
    pub r: f64,
}

impl Domain {
    pub fn hyperbox(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProblemError> {
        if lo.len() != hi.len() {
            return Err(ProblemError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let mut diam_sq = 0.0;
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if a >= b {
                return Err(ProblemError::EmptyBox(i));
            }
            diam_sq += (b - a) * (b - a);
        }
        Ok(Self {
            dim: lo.len(),
            r: diam_sq.sqrt(),
            kind: DomainKind::Box { lo, hi },
        })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, ProblemError> {
        if radius <= 0.0 {
            return Err(ProblemError::NonPositiveRadius(radius));
        }
        Ok(Self {
            dim: center.len(),
            r: 2.0 * radius,
            kind: DomainKind::Ball { center, radius },
        })
    }

    /// Euclidean projection onto the domain.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>, ProblemError> {
        if y.len() != self.dim {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        Ok(match &self.kind {
            DomainKind::Box { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&a, &b))| v.clamp(a, b))
                .collect(),
            DomainKind::Ball { center, radius } => {
                let dist_sq: f64 = y
                    .iter()
                    .zip(center)
                    .map(|(v, c)| (v - c) * (v - c))
                    .sum();
                if dist_sq <= radius * radius {
                    y.to_vec()
                } else {
                    let scale = radius / dist_sq.sqrt();
                    y.iter()
                        .zip(center)
                        .map(|(v, c)| c + (v - c) * scale)
                        .collect()
                }
            }
        })
    }

    /// Bregman divergence for the squared-Euclidean mirror map: `||x - y||^2`.
    pub fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match &self.kind {
            DomainKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&a, &b))| v >= a - tol && v <= b + tol),
            DomainKind::Ball { center, radius } => {
                let dist_sq: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(v, c)| (v - c) * (v - c))
                    .sum();
                dist_sq.sqrt() <= radius + tol
            }
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match &self.kind {
            DomainKind::Box { lo, hi } => {
                lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()
            }
            DomainKind::Ball { center, .. } => center.clone(),
        }
    }

    /// Uniform sample from the domain (exact for boxes; for balls, direction
    /// times `u^(1/d)`-scaled radius).
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            DomainKind::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| rng.gen_range(*a..*b))
                .collect(),
            DomainKind::Ball { center, radius } => {
                // Gaussian direction, radius scaled so the point is uniform.
                let dir: Vec<f64> = (0..self.dim)
                    .map(|_| {
                        // Box-Muller from two uniforms.
                        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                        let u2: f64 = rng.gen::<f64>();
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let u: f64 = rng.gen::<f64>();
                let r = radius * u.powf(1.0 / self.dim as f64);
                center
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c + d / norm * r)
                    .collect()
            }
        }
    }
}

/// Objective and constraint oracles for a single chain state.
#[derive(Clone)]
pub struct StateOracle {
    pub f: ScalarFn,
    pub grad_f: GradFn,
    pub g: Vec<ScalarFn>,
    pub grad_g: Vec<GradFn>,
}

impl std::fmt::Debug for StateOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateOracle")
            .field("n_constraints", &self.g.len())
            .finish()
    }
}

impl StateOracle {
    pub fn n_constraints(&self) -> usize {
        self.g.len()
    }
}

/// Global bounds F, G, H: `||grad f|| <= F`, `||grad g_i|| <= G`, `|g_i| <= H`
/// over the domain and all states.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LipschitzConstants {
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

/// A Slater point: `g_bar_i(x_hat) <= -epsilon` for all constraints.
#[derive(Debug, Clone)]
pub struct SlaterPoint {
    pub x_hat: Vec<f64>,
    pub epsilon: f64,
}

/// A full problem instance: compact domain, per-state oracles, the data
/// chain, and constants. Immutable after construction; oracle evaluation is
/// pure, so instances are freely shareable across threads.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub label: String,
    pub domain: Domain,
    pub oracles: Arc<Vec<StateOracle>>,
    pub n_constraints: usize,
    pub chain: TransitionMatrix,
    /// Stationary distribution of `chain`, fixed at construction.
    pub stationary: Vec<f64>,
    pub lipschitz: LipschitzConstants,
    pub slater: Option<SlaterPoint>,
}

impl ProblemInstance {
    pub fn new(
        label: impl Into<String>,
        domain: Domain,
        oracles: Vec<StateOracle>,
        chain: TransitionMatrix,
        lipschitz: LipschitzConstants,
        slater: Option<SlaterPoint>,
    ) -> Result<Self, ProblemError> {
        if oracles.len() != chain.n() {
            return Err(ProblemError::OracleCountMismatch {
                oracles: oracles.len(),
                states: chain.n(),
            });
        }
        let n_constraints = oracles[0].n_constraints();
        for (state, o) in oracles.iter().enumerate() {
            if o.n_constraints() != n_constraints || o.grad_g.len() != n_constraints {
                return Err(ProblemError::ConstraintCountMismatch {
                    state,
                    expected: n_constraints,
                    got: o.n_constraints(),
                });
            }
        }
        let stationary = chain.stationary_distribution()?;
        Ok(Self {
            label: label.into(),
            domain,
            oracles: Arc::new(oracles),
            n_constraints,
            chain,
            stationary,
            lipschitz,
            slater,
        })
    }

    /// Exact stationary averages `(f_bar(x), g_bar(x))`. The state space is
    /// finite, so these are plain weighted sums, not sample estimates.
    pub fn bar_eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut f_bar = 0.0;
        let mut g_bar = vec![0.0; self.n_constraints];
        for (oracle, &w) in self.oracles.iter().zip(&self.stationary) {
            f_bar += w * (oracle.f)(x);
            for (i, g) in oracle.g.iter().enumerate() {
                g_bar[i] += w * g(x);
            }
        }
        (f_bar, g_bar)
    }

    /// `f_bar` alone (used in hot loops of the reference solvers).
    pub fn f_bar(&self, x: &[f64]) -> f64 {
        self.oracles
            .iter()
            .zip(&self.stationary)
            .map(|(o, &w)| w * (o.f)(x))
            .sum()
    }

    pub fn grad_f_bar(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.domain.dim];
        for (oracle, &w) in self.oracles.iter().zip(&self.stationary) {
            for (a, v) in acc.iter_mut().zip((oracle.grad_f)(x)) {
                *a += w * v;
            }
        }
        acc
    }

    pub fn g_bar(&self, x: &[f64]) -> Vec<f64> {
        self.bar_eval(x).1
    }

    pub fn grad_g_bar(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.domain.dim];
        for (oracle, &w) in self.oracles.iter().zip(&self.stationary) {
            for (a, v) in acc.iter_mut().zip((oracle.grad_g[i])(x)) {
                *a += w * v;
            }
        }
        acc
    }
}

/// Sampled upper bounds on `||grad f||`, `||grad g_i||`, `|g_i|` over random
/// `(x, state)` pairs, inflated by a 1.1 safety factor. Schedules and the
/// MDPP delta recipe only need upper bounds, so mild inflation protects
/// against under-sampling.
pub fn estimate_lipschitz(
    instance: &ProblemInstance,
    samples: usize,
    seed: u64,
) -> LipschitzConstants {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f_max = 0.0f64;
    let mut g_max = 0.0f64;
    let mut h_max = 0.0f64;
    let n_states = instance.oracles.len();
    for k in 0..samples.max(1) {
        let x = instance.domain.sample_uniform(&mut rng);
        let oracle = &instance.oracles[k % n_states];
        f_max = f_max.max(norm(&(oracle.grad_f)(&x)));
        for i in 0..oracle.n_constraints() {
            g_max = g_max.max(norm(&(oracle.grad_g[i])(&x)));
            h_max = h_max.max((oracle.g[i])(&x).abs());
        }
    }
    LipschitzConstants {
        f: 1.1 * f_max,
        g: 1.1 * g_max,
        h: 1.1 * h_max,
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central finite-difference gradient, for oracle consistency checks.
pub fn finite_difference_gradient(f: &ScalarFn, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}
