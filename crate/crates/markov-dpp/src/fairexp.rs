//! Synthetic fairness-constrained logistic regression over three data states.
//!
//! Each state holds two Gaussian clusters of 1,000 labelled points. A binary
//! sensitive feature is drawn so that it correlates with the label-separating
//! direction rotated by pi/2. Per state `j` the oracles are the logistic loss
//! over that state's points and the two-sided covariance fairness constraint
//!
//! ```text
//! g_j(w, b) =  mean_{i in D_j} (z_i - z_bar)(w'x_i + b) - c
//! h_j(w, b) = -mean_{i in D_j} (z_i - z_bar)(w'x_i + b) - c
//! ```
//!
//! so `g_j + h_j = -2c` identically. The harness compares the
//! drift-plus-penalty variants on one shared chain realization, aligning the
//! x-axis by data samples consumed (the MLMC variant consumes `N_t` samples
//! per iteration).

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::TransitionMatrix;
use crate::metrics::{
    self, reference_solution, MetricsError, ReferenceMethod, ReferenceSolution, Trajectory,
};
use crate::problem::{
    estimate_lipschitz, Domain, LipschitzConstants, ProblemError, ProblemInstance, SlaterPoint,
    StateOracle,
};
use crate::seed::child_seed;
use crate::solver::{
    run, Budget, MlmcStream, ParameterSchedule, RunOptions, SingleSampleStream, SolverError,
};

#[derive(Debug, Error)]
pub enum FairExpError {
    #[error("covariance matrix is not positive definite")]
    DegenerateCovariance,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("algorithm {algorithm} failed: {source}")]
    Algorithm {
        algorithm: String,
        source: SolverError,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Gaussian cluster layout: one positive and one negative cluster per state.
#[derive(Debug, Clone)]
pub struct ClusterSpec {
    pub mean_pos: [[f64; 2]; 3],
    pub mean_neg: [[f64; 2]; 3],
    /// Shared 2x2 covariance.
    pub cov: [[f64; 2]; 2],
    pub points_per_cluster: usize,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            mean_pos: [[2.0, 2.0], [4.0, 4.0], [6.0, 2.0]],
            mean_neg: [[-2.0, -2.0], [-4.0, -4.0], [-6.0, -2.0]],
            cov: [[1.5, 0.0], [0.0, 1.5]],
            points_per_cluster: 1000,
        }
    }
}

/// The generated dataset: points grouped contiguously by state.
#[derive(Debug, Clone)]
pub struct FairDataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<i8>,
    pub sensitive: Vec<u8>,
    pub state_ranges: [Range<usize>; 3],
    pub z_bar: f64,
}

impl FairDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sample the dataset: per state, 1,000 points per cluster from the given
/// normals, labels constant within a cluster, and sensitive features drawn as
/// `z_i ~ Bernoulli(sigma(rot(x_i, pi/2) . d))` with `d` the normalized
/// global direction from negative-cluster means to positive-cluster means.
pub fn generate_data(seed: u64, spec: &ClusterSpec) -> Result<FairDataset, FairExpError> {
    // Cholesky factor of the 2x2 covariance.
    let c = &spec.cov;
    if c[0][0] <= 0.0 || c[0][0] * c[1][1] - c[0][1] * c[1][0] <= 0.0 {
        return Err(FairExpError::DegenerateCovariance);
    }
    let l11 = c[0][0].sqrt();
    let l21 = c[0][1] / l11;
    let l22 = (c[1][1] - l21 * l21).sqrt();
    if !l22.is_finite() || l22 <= 0.0 {
        return Err(FairExpError::DegenerateCovariance);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "fair-data"));
    let gauss = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };

    let n_per = spec.points_per_cluster;
    let mut points = Vec::with_capacity(6 * n_per);
    let mut labels = Vec::with_capacity(6 * n_per);
    let mut ranges: [Range<usize>; 3] = [0..0, 0..0, 0..0];
    for (state, range) in ranges.iter_mut().enumerate() {
        let start = points.len();
        for (mean, label) in [(spec.mean_pos[state], 1i8), (spec.mean_neg[state], -1i8)] {
            for _ in 0..n_per {
                let z1 = gauss(&mut rng);
                let z2 = gauss(&mut rng);
                points.push([mean[0] + l11 * z1, mean[1] + l21 * z1 + l22 * z2]);
                labels.push(label);
            }
        }
        *range = start..points.len();
    }

    // Global separating direction between the label means.
    let mut d = [0.0f64; 2];
    for state in 0..3 {
        d[0] += spec.mean_pos[state][0] - spec.mean_neg[state][0];
        d[1] += spec.mean_pos[state][1] - spec.mean_neg[state][1];
    }
    let norm = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-12);
    d[0] /= norm;
    d[1] /= norm;

    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut sensitive = Vec::with_capacity(points.len());
    let mut rng_z = ChaCha8Rng::seed_from_u64(child_seed(seed, "fair-sensitive"));
    for p in &points {
        // Rotate by pi/2: (x, y) -> (-y, x).
        let score = -p[1] * d[0] + p[0] * d[1];
        let z = u8::from(rng_z.gen::<f64>() < sigmoid(score));
        sensitive.push(z);
    }
    let z_bar = sensitive.iter().map(|&z| f64::from(z)).sum::<f64>() / points.len() as f64;

    Ok(FairDataset {
        points,
        labels,
        sensitive,
        state_ranges: ranges,
        z_bar,
    })
}

/// Numerically stable `log(1 + exp(v))`.
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Build the three-state problem instance on the box `[-10, 10]^3` over
/// `(w1, w2, b)`: logistic loss per state, two affine fairness constraints
/// per state, closed-form gradients, and a Slater point at the origin.
pub fn fairness_oracles(
    data: &FairDataset,
    c: f64,
    chain: TransitionMatrix,
) -> Result<ProblemInstance, ProblemError> {
    assert!(c > 0.0, "fairness slack must be positive");
    let domain = Domain::hyperbox(vec![-10.0, -10.0, -10.0], vec![10.0, 10.0, 10.0])?;

    let mut oracles = Vec::with_capacity(3);
    for state in 0..3 {
        let range = data.state_ranges[state].clone();
        let pts: Arc<Vec<([f64; 2], f64)>> = Arc::new(
            range
                .clone()
                .map(|i| (data.points[i], f64::from(data.labels[i])))
                .collect(),
        );
        let inv_n = 1.0 / pts.len() as f64;

        // Affine constraint aggregates: g_j(w, b) = w . sx + b * s1 - c.
        let mut sx = [0.0f64; 2];
        let mut s1 = 0.0f64;
        for i in range {
            let zc = f64::from(data.sensitive[i]) - data.z_bar;
            sx[0] += zc * data.points[i][0];
            sx[1] += zc * data.points[i][1];
            s1 += zc;
        }
        sx[0] *= inv_n;
        sx[1] *= inv_n;
        s1 *= inv_n;

        let pts_f = pts.clone();
        let f = Arc::new(move |x: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (p, y) in pts_f.iter() {
                let margin = y * (x[0] * p[0] + x[1] * p[1] + x[2]);
                acc += softplus(-margin);
            }
            acc * inv_n
        });
        let pts_g = pts.clone();
        let grad_f = Arc::new(move |x: &[f64]| -> Vec<f64> {
            let mut acc = [0.0f64; 3];
            for (p, y) in pts_g.iter() {
                let margin = y * (x[0] * p[0] + x[1] * p[1] + x[2]);
                let w = -y * sigmoid(-margin);
                acc[0] += w * p[0];
                acc[1] += w * p[1];
                acc[2] += w;
            }
            vec![acc[0] * inv_n, acc[1] * inv_n, acc[2] * inv_n]
        });

        let g_pos = Arc::new(move |x: &[f64]| x[0] * sx[0] + x[1] * sx[1] + x[2] * s1 - c);
        let g_neg = Arc::new(move |x: &[f64]| -(x[0] * sx[0] + x[1] * sx[1] + x[2] * s1) - c);
        let grad_pos = Arc::new(move |_x: &[f64]| vec![sx[0], sx[1], s1]);
        let grad_neg = Arc::new(move |_x: &[f64]| vec![-sx[0], -sx[1], -s1]);

        oracles.push(StateOracle {
            f,
            grad_f,
            g: vec![g_pos, g_neg],
            grad_g: vec![grad_pos, grad_neg],
        });
    }

    // The origin classifies nothing: g_j(0) = h_j(0) = -c, so epsilon = c.
    let slater = SlaterPoint {
        x_hat: vec![0.0, 0.0, 0.0],
        epsilon: c,
    };
    // Provisional constants, replaced by the sampled estimate below.
    let mut instance = ProblemInstance::new(
        "fairness3",
        domain,
        oracles,
        chain,
        LipschitzConstants {
            f: 0.0,
            g: 0.0,
            h: 0.0,
        },
        Some(slater),
    )?;
    instance.lipschitz = estimate_lipschitz(&instance, 4096, child_seed(0xFA1E, "lipschitz"));
    Ok(instance)
}

/// The MDPP delta recipe `F^2/4 + n (R^2 G^2 + H^2)` from the global bounds
/// (with n constraints; the two-constraint case gives `F^2/4 + 2R^2G^2 + 2H^2`).
pub fn mdpp_delta_recipe(lipschitz: &LipschitzConstants, r: f64, n_constraints: usize) -> f64 {
    let n = n_constraints as f64;
    lipschitz.f * lipschitz.f / 4.0
        + n * (r * r * lipschitz.g * lipschitz.g + lipschitz.h * lipschitz.h)
}

/// Algorithms compared by the harness, named as in the comparison tables:
/// lowercase `-t` marks time-adaptive parameters, uppercase `-T` fixed
/// horizon-based parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FairAlgorithm {
    #[serde(rename = "EDPP-t")]
    EdppT,
    #[serde(rename = "EDPP-T")]
    EdppFixed,
    #[serde(rename = "DPP-t")]
    DppT,
    #[serde(rename = "DPP-T")]
    DppFixed,
    #[serde(rename = "MDPP")]
    Mdpp,
}

impl FairAlgorithm {
    pub const ALL: [FairAlgorithm; 5] = [
        FairAlgorithm::EdppT,
        FairAlgorithm::EdppFixed,
        FairAlgorithm::DppT,
        FairAlgorithm::DppFixed,
        FairAlgorithm::Mdpp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FairAlgorithm::EdppT => "EDPP-t",
            FairAlgorithm::EdppFixed => "EDPP-T",
            FairAlgorithm::DppT => "DPP-t",
            FairAlgorithm::DppFixed => "DPP-T",
            FairAlgorithm::Mdpp => "MDPP",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl std::fmt::Display for FairAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How MDPP's delta is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeltaChoice {
    /// `F^2/4 + n R^2 G^2 + n H^2` from the instance's sampled bounds.
    Recipe,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairExperimentConfig {
    /// Chain parameter; `p = 1/3` gives the i.i.d. (uniform) chain.
    pub p: f64,
    /// Fairness slack.
    pub c: f64,
    /// Data samples consumed per algorithm (iterations for the single-sample
    /// algorithms; MDPP stops once its draws have consumed this many).
    pub horizon: u64,
    pub seed: u64,
    pub algorithms: Vec<FairAlgorithm>,
    /// MLMC truncation cap (power of two).
    pub mlmc_cap: usize,
    pub beta: f64,
    pub delta: DeltaChoice,
    /// Mixing-time value fed to the EDPP schedules; defaults to the
    /// `1/(3p)` approximation rounded to an integer.
    pub tau_override: Option<u64>,
    pub check_invariants: bool,
}

impl Default for FairExperimentConfig {
    fn default() -> Self {
        Self {
            p: 0.001,
            c: 0.5,
            horizon: 25_000,
            seed: 20_240_601,
            algorithms: FairAlgorithm::ALL.to_vec(),
            mlmc_cap: 16,
            beta: 0.5,
            delta: DeltaChoice::Recipe,
            tau_override: None,
            check_invariants: false,
        }
    }
}

impl FairExperimentConfig {
    pub fn validate(&self) -> Result<(), FairExpError> {
        let bad = |msg: String| Err(FairExpError::InvalidConfig(msg));
        if !(self.p > 0.0 && self.p <= 1.0 / 3.0) {
            return bad(format!(
                "p must lie in (0, 1/3], got {} (rows must stay a proper distribution)",
                self.p
            ));
        }
        if self.c <= 0.0 {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithm list is empty".into());
        }
        if !self.mlmc_cap.is_power_of_two() {
            return bad(format!("mlmc_cap must be a power of two, got {}", self.mlmc_cap));
        }
        if !(self.beta > 0.0 && self.beta <= 0.5) {
            return bad(format!("beta must lie in (0, 1/2], got {}", self.beta));
        }
        if let DeltaChoice::Fixed(d) = self.delta {
            if d <= 0.0 {
                return bad(format!("delta must be positive, got {d}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmOutcome {
    pub algorithm: FairAlgorithm,
    pub iterations: u64,
    pub samples_consumed: u64,
    pub final_gap: f64,
    pub final_infeasibility: Vec<f64>,
    pub regret: f64,
    pub violation: Vec<f64>,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct FairExperimentResults {
    pub outcomes: Vec<AlgorithmOutcome>,
    pub reference: ReferenceSolution,
    pub tau_used: u64,
    pub delta_used: f64,
    pub instance: ProblemInstance,
}

/// Run the configured algorithms on one shared chain realization.
///
/// Every algorithm receives the same data-generation seed and the same chain
/// seed, so the single-sample algorithms see the identical state sequence;
/// MDPP walks the same chain but consumes `N_t` states per iteration. Each
/// algorithm stops once `horizon` data samples have been consumed.
pub fn run_experiment(config: &FairExperimentConfig) -> Result<FairExperimentResults, FairExpError> {
    config.validate()?;
    let data = generate_data(child_seed(config.seed, "data"), &ClusterSpec::default())?;
    let chain = TransitionMatrix::symmetric_three_state(config.p)
        .map_err(ProblemError::from)?;
    let instance = fairness_oracles(&data, config.c, chain)?;
    let r = instance.domain.r;
    let tau_used = config
        .tau_override
        .unwrap_or_else(|| (1.0 / (3.0 * config.p)).round().max(1.0) as u64);
    let delta_used = match config.delta {
        DeltaChoice::Recipe => {
            mdpp_delta_recipe(&instance.lipschitz, r, instance.n_constraints)
        }
        DeltaChoice::Fixed(d) => d,
    };
    let reference = reference_solution(&instance, ReferenceMethod::ProjectedDescent)?;

    let opts = RunOptions {
        x0: Some(vec![0.0, 0.0, 0.0]),
        check_invariants: config.check_invariants,
        ..Default::default()
    };
    let budget = Budget::DataSamples(config.horizon);

    let outcomes: Result<Vec<AlgorithmOutcome>, FairExpError> = config
        .algorithms
        .par_iter()
        .map(|&algorithm| {
            let schedule = match algorithm {
                FairAlgorithm::EdppT => ParameterSchedule::Edpp {
                    tau_mix: tau_used,
                    beta: config.beta,
                },
                FairAlgorithm::EdppFixed => ParameterSchedule::EdppT {
                    tau_mix: tau_used,
                    horizon: config.horizon,
                    beta: config.beta,
                },
                FairAlgorithm::DppT => ParameterSchedule::Edpp {
                    tau_mix: 1,
                    beta: config.beta,
                },
                FairAlgorithm::DppFixed => ParameterSchedule::DppFixed {
                    horizon: config.horizon,
                },
                FairAlgorithm::Mdpp => ParameterSchedule::Mdpp {
                    beta: config.beta,
                    delta: delta_used,
                    r,
                },
            };
            let wrap = |source: SolverError| FairExpError::Algorithm {
                algorithm: algorithm.name().into(),
                source,
            };
            let trajectory = if algorithm == FairAlgorithm::Mdpp {
                let mut stream = MlmcStream::for_instance(
                    &instance,
                    config.seed,
                    config.horizon.max(2),
                    Some(config.mlmc_cap),
                );
                run(&instance, &mut stream, &schedule, budget, config.seed, &opts)
                    .map_err(wrap)?
            } else {
                let mut stream = SingleSampleStream::for_instance(&instance, config.seed);
                run(&instance, &mut stream, &schedule, budget, config.seed, &opts)
                    .map_err(wrap)?
            };
            let x_bar = trajectory.average_iterate();
            let final_gap = metrics::gap(&instance, &x_bar, &reference);
            let final_infeasibility = metrics::infeasibility(&instance, &x_bar);
            let regret = metrics::regret(&instance, &trajectory, &reference.x_star, true)?;
            let violation = (0..instance.n_constraints)
                .map(|i| metrics::violation(&trajectory, i))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AlgorithmOutcome {
                algorithm,
                iterations: trajectory.len() as u64,
                samples_consumed: trajectory.samples_consumed,
                final_gap,
                final_infeasibility,
                regret,
                violation,
                trajectory,
            })
        })
        .collect();

    Ok(FairExperimentResults {
        outcomes: outcomes?,
        reference,
        tau_used,
        delta_used,
        instance,
    })
}
