//! Named built-in problem instances for the CLI and test harnesses.
//!
//! * `synth-iid` — a 2-d quadratic objective with one affine stationary
//!   constraint, driven by the uniform 3-state chain (mixing time 1, i.i.d.
//!   samples), with a known analytic optimum.
//! * `synth-markov` — the same oracles driven by the symmetric 3-state chain
//!   with parameter `p`.
//! * `fairness3` — the synthetic fairness-constrained logistic-regression
//!   instance over three data states.

use std::sync::Arc;

use crate::chain::TransitionMatrix;
use crate::fairexp::{self, ClusterSpec};
use crate::problem::{
    Domain, LipschitzConstants, ProblemError, ProblemInstance, SlaterPoint, StateOracle,
};

/// Per-state anchors of the synthetic quadratic objective; their mean is
/// (5, 5). The objective is anisotropic,
/// `f_j(x) = (x0 - a_j0)^2 + 0.03 (x1 - a_j1)^2`:
/// the stiff first coordinate is the constrained one, while the flat second
/// coordinate crawls from the start (0, 0) toward 5 over thousands of steps,
/// keeping averaged-iterate gaps visibly positive at moderate horizons.
const ANCHORS: [[f64; 2]; 3] = [[5.8, 4.3], [4.5, 5.9], [4.7, 4.8]];
/// Curvature of the flat coordinate.
const FLAT: f64 = 0.03;
/// Per-state offsets of the affine constraint `x0 - 4.5 + e_j`; they average
/// to zero, so the stationary constraint is `x0 <= 4.5`.
const OFFSETS: [f64; 3] = [0.6, 0.0, -0.6];

/// Analytic optimum of the synthetic instance: the constraint `x0 <= 4.5` is
/// active with multiplier 1, and the flat coordinate is free, so
/// `x* = (4.5, 5)`.
pub const SYNTH_X_STAR: [f64; 2] = [4.5, 5.0];

/// `f_bar` at the optimum: `0.25 + mean_j (a_j0 - 5)^2 + FLAT mean_j (a_j1 - 5)^2`.
pub const SYNTH_F_STAR: f64 = 0.25 + 0.98 / 3.0 + FLAT * 1.34 / 3.0;

fn synth_oracles() -> Vec<StateOracle> {
    (0..3)
        .map(|j| {
            let a = ANCHORS[j];
            let e = OFFSETS[j];
            StateOracle {
                f: Arc::new(move |x: &[f64]| {
                    (x[0] - a[0]).powi(2) + FLAT * (x[1] - a[1]).powi(2)
                }),
                grad_f: Arc::new(move |x: &[f64]| {
                    vec![2.0 * (x[0] - a[0]), 2.0 * FLAT * (x[1] - a[1])]
                }),
                g: vec![Arc::new(move |x: &[f64]| x[0] - 4.5 + e)],
                grad_g: vec![Arc::new(|_x: &[f64]| vec![1.0, 0.0])],
            }
        })
        .collect()
}

fn synth_with_chain(label: &str, chain: TransitionMatrix) -> Result<ProblemInstance, ProblemError> {
    let domain = Domain::hyperbox(vec![-6.0, -6.0], vec![6.0, 6.0])?;
    // Analytic bounds over the box: the stiff gradient component peaks at
    // 2 * 11.8 against the (5.8, 4.3) anchor from x0 = -6; the constraint
    // gradient is (1, 0) and |g| <= 11.1.
    let lipschitz = LipschitzConstants {
        f: 23.7,
        g: 1.0,
        h: 11.1,
    };
    let slater = SlaterPoint {
        x_hat: vec![0.0, 0.0],
        epsilon: 4.5,
    };
    ProblemInstance::new(label, domain, synth_oracles(), chain, lipschitz, Some(slater))
}

/// Synthetic instance with i.i.d. samples (uniform chain, mixing time 1).
pub fn synth_iid() -> Result<ProblemInstance, ProblemError> {
    let chain = TransitionMatrix::from_rows(vec![vec![1.0 / 3.0; 3]; 3])?;
    synth_with_chain("synth-iid", chain)
}

/// Synthetic instance driven by the symmetric 3-state chain with parameter `p`.
pub fn synth_markov(p: f64) -> Result<ProblemInstance, ProblemError> {
    let chain = TransitionMatrix::symmetric_three_state(p)?;
    synth_with_chain("synth-markov", chain)
}

/// The fairness-constrained logistic-regression instance with default data
/// generation, slack `c = 0.5`, and the symmetric 3-state chain with `p = 0.1`.
pub fn fairness3(seed: u64) -> Result<ProblemInstance, ProblemError> {
    fairness3_with_chain(seed, 0.1)
}

pub fn fairness3_with_chain(seed: u64, p: f64) -> Result<ProblemInstance, ProblemError> {
    let data = fairexp::generate_data(seed, &ClusterSpec::default())
        .expect("default cluster spec is non-degenerate");
    let chain = TransitionMatrix::symmetric_three_state(p)?;
    fairexp::fairness_oracles(&data, 0.5, chain)
}

/// Resolve a registry name. `chain_p` overrides the chain parameter where
/// one applies; `seed` feeds data generation for the fairness instance.
pub fn by_name(
    name: &str,
    seed: u64,
    chain_p: Option<f64>,
) -> Result<Option<ProblemInstance>, ProblemError> {
    Ok(match name {
        "synth-iid" => Some(synth_iid()?),
        "synth-markov" => Some(synth_markov(chain_p.unwrap_or(0.1))?),
        "fairness3" => Some(fairness3_with_chain(seed, chain_p.unwrap_or(0.1))?),
        _ => None,
    })
}

/// Names accepted by [`by_name`].
pub const REGISTRY: [&str; 3] = ["synth-iid", "synth-markov", "fairness3"];
