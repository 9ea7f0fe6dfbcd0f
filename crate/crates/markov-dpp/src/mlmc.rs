//! Multi-level Monte Carlo estimation over consecutive Markov-chain samples.
//!
//! Each step draws a random level `J ~ Geom(1/2)` with `P(J = j) = 2^-j` for
//! `j >= 1`, takes `N = 2^J` consecutive samples from the chain (falling back
//! to `N = 1` when `2^J > T^2`), and assembles the telescoped estimator
//!
//! ```text
//! f_t = f_t^1 + N (f_t^N - f_t^(N/2))
//! ```
//!
//! where `f_t^N` is the average of `f` over the first `N` samples. The chain
//! is never reset between draws: consecutive samples continue one global
//! chain across steps.

use std::sync::Arc;

use rand::Rng;

use crate::chain::ChainSampler;
use crate::problem::StateOracle;

/// One MLMC level draw: the level, the sample count, the consecutive chain
/// states, and the estimator weights over those samples.
///
/// For `N > 1` the weights are `w_1 = 0`, `w_i = -1` for `2 <= i <= N/2`, and
/// `w_i = +1` for `N/2 < i <= N`; for `N = 1` the single weight is `1`. A
/// level of `0` marks a plain single-sample draw that did not come from the
/// MLMC level distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcDraw {
    pub level: u32,
    pub n: usize,
    pub states: Vec<usize>,
    pub weights: Vec<f64>,
}

impl MlmcDraw {
    fn weights_for(n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let mut w = vec![0.0; n];
        for (i, wi) in w.iter_mut().enumerate().skip(1) {
            *wi = if i < n / 2 { -1.0 } else { 1.0 };
        }
        w
    }
}

/// Draw the MLMC level: returns `(J, N)` with `N = 2^J` if `2^J <= T^2`, else
/// `N = 1`. When `cap` is set (experiment mode), draws above the cap are
/// re-leveled to the cap, so `N <= cap` always; `cap` must be a power of two.
pub fn draw_level<R: Rng>(rng: &mut R, horizon: u64, cap: Option<usize>) -> (u32, usize) {
    if let Some(c) = cap {
        assert!(c.is_power_of_two(), "MLMC cap must be a power of two");
    }
    let mut j = 1u32;
    while rng.gen::<bool>() && j < 64 {
        j += 1;
    }
    let t_sq = (horizon as u128) * (horizon as u128);
    let tilde_n = 1u128 << j;
    let (mut level, mut n) = if tilde_n <= t_sq {
        (j, 1usize << j)
    } else {
        (0, 1) // fell outside the T^2 budget; single sample
    };
    if let Some(c) = cap {
        if n > c {
            n = c;
            level = c.trailing_zeros();
        }
    }
    (level, n)
}

/// The estimator pair `(f_t, g_t)` plus gradients, deferred over the drawn
/// states: evaluators can be applied at the current iterate and at comparator
/// points alike. Immutable after construction and shareable.
#[derive(Debug, Clone)]
pub struct MlmcFunctionPair {
    pub draw: MlmcDraw,
    oracles: Arc<Vec<StateOracle>>,
}

/// Canonical combination of per-sample values into the telescoped estimator.
///
/// The grouping is fixed: partial sums `S_lo` over the first half and `S_hi`
/// over the second half, combined as `v_1 + ((S_lo + S_hi) - 2 S_lo)`. Because
/// `N` is a power of two, this agrees bit-for-bit with the textbook
/// `v^1 + N (v^N - v^(N/2))` evaluated from partial averages.
pub fn combine_samples(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let half: f64 = values[..n / 2].iter().sum();
    let all: f64 = half + values[n / 2..].iter().sum::<f64>();
    values[0] + (all - 2.0 * half)
}

fn combine_sample_vecs(vecs: &[Vec<f64>], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            let column: Vec<f64> = vecs.iter().map(|v| v[d]).collect();
            combine_samples(&column)
        })
        .collect()
}

impl MlmcFunctionPair {
    pub(crate) fn new(draw: MlmcDraw, oracles: Arc<Vec<StateOracle>>) -> Self {
        Self { draw, oracles }
    }

    /// A plain single-sample step (the known-mixing-time data path).
    pub fn single_sample(state: usize, oracles: Arc<Vec<StateOracle>>) -> Self {
        Self::new(
            MlmcDraw {
                level: 0,
                n: 1,
                states: vec![state],
                weights: vec![1.0],
            },
            oracles,
        )
    }

    pub fn n_samples(&self) -> usize {
        self.draw.n
    }

    /// True when the step function is a single convex per-state oracle
    /// rather than a (possibly nonconvex) telescoped combination.
    pub fn is_single_sample(&self) -> bool {
        self.draw.n == 1
    }

    pub fn n_constraints(&self) -> usize {
        self.oracles[0].n_constraints()
    }

    /// Per-sample scalar values, evaluating each distinct state once.
    fn sample_values(&self, eval: impl Fn(&StateOracle) -> f64) -> Vec<f64> {
        let mut cache: Vec<Option<f64>> = vec![None; self.oracles.len()];
        self.draw
            .states
            .iter()
            .map(|&s| *cache[s].get_or_insert_with(|| eval(&self.oracles[s])))
            .collect()
    }

    fn sample_vecs(&self, eval: impl Fn(&StateOracle) -> Vec<f64>) -> Vec<Vec<f64>> {
        let mut cache: Vec<Option<Vec<f64>>> = vec![None; self.oracles.len()];
        self.draw
            .states
            .iter()
            .map(|&s| cache[s].get_or_insert_with(|| eval(&self.oracles[s])).clone())
            .collect()
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        combine_samples(&self.sample_values(|o| (o.f)(x)))
    }

    pub fn grad_f(&self, x: &[f64]) -> Vec<f64> {
        let vecs = self.sample_vecs(|o| (o.grad_f)(x));
        combine_sample_vecs(&vecs, x.len())
    }

    pub fn g(&self, i: usize, x: &[f64]) -> f64 {
        combine_samples(&self.sample_values(|o| (o.g[i])(x)))
    }

    pub fn grad_g(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let vecs = self.sample_vecs(|o| (o.grad_g[i])(x));
        combine_sample_vecs(&vecs, x.len())
    }

    /// Plain sum of `f` over the drawn samples (the per-data-sample view).
    pub fn f_sample_sum(&self, x: &[f64]) -> f64 {
        self.sample_values(|o| (o.f)(x)).iter().sum()
    }

    pub fn g_sample_sum(&self, i: usize, x: &[f64]) -> f64 {
        self.sample_values(|o| (o.g[i])(x)).iter().sum()
    }
}

/// Draw a level, advance the chain exactly `N` consecutive steps, and return
/// the estimator pair closed over the drawn states. The chain position after
/// the call is the last drawn state.
pub fn mlmc_estimate<R: Rng>(
    oracles: Arc<Vec<StateOracle>>,
    sampler: &mut ChainSampler,
    rng: &mut R,
    horizon: u64,
    cap: Option<usize>,
) -> MlmcFunctionPair {
    let (level, n) = draw_level(rng, horizon, cap);
    let states: Vec<usize> = (0..n).map(|_| sampler.step()).collect();
    let weights = MlmcDraw::weights_for(n);
    MlmcFunctionPair::new(
        MlmcDraw {
            level,
            n,
            states,
            weights,
        },
        oracles,
    )
}
