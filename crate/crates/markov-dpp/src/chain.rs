//! Finite-state ergodic Markov chains: validation, simulation, stationary
//! distributions, and mixing times.
//!
//! The mixing time comes in three flavours here, exposed side by side rather
//! than collapsed into one number:
//!
//! * exact: brute-force scan of the worst-case total-variation distance
//!   `d_mix(t)` over matrix powers,
//! * bracketed: spectral lower/upper bounds for reversible chains,
//! * approximate: the `1/(3p)` rule of thumb for the symmetric 3-state family.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-sum tolerance for stochasticity.
const ROW_SUM_TOL: f64 = 1e-12;
/// Detailed-balance tolerance for the reversibility check.
const REVERSIBILITY_TOL: f64 = 1e-10;
/// Power-iteration fixed-point tolerance.
const POWER_ITER_TOL: f64 = 1e-12;
/// Power-iteration budget; states are few, so exactness is cheap.
const POWER_ITER_CAP: usize = 1_000_000;
/// Search cap for `mixing_time`.
const MIXING_TIME_CAP: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("row {row} sums to {sum}, not 1 (|deviation| > 1e-12)")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} is outside [0, 1]")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("chain is not ergodic: no power P^k with k <= n^2 is strictly positive")]
    NotErgodic,
    #[error("power iteration did not reach a fixed point within {0} iterations")]
    NoConvergence(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("mixing-time search exceeded cap of {0} steps")]
    BudgetExceeded(u64),
    #[error("chain is not reversible with respect to its stationary distribution")]
    NotReversible,
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
}

/// Finite-state row-stochastic transition matrix.
///
/// Construction checks entry bounds and row sums; ergodicity is checked
/// separately by [`TransitionMatrix::validate`] since non-ergodic matrices
/// are still useful as negative test inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    p: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ChainError> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ChainError::DimensionMismatch {
                    left: n,
                    right: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(ChainError::InvalidEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ChainError::NonStochasticRow { row: i, sum });
            }
        }
        let p = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(Self { n, p })
    }

    /// The symmetric 3-state family with off-diagonal probability `p`:
    /// rows are permutations of `(1-2p, p, p)`. Requires `0 < p <= 1/2`.
    pub fn symmetric_three_state(p: f64) -> Result<Self, ChainError> {
        let d = 1.0 - 2.0 * p;
        Self::from_rows(vec![vec![d, p, p], vec![p, d, p], vec![p, p, d]])
    }

    /// Detects the symmetric 3-state family and returns its parameter.
    pub fn three_state_parameter(&self) -> Option<f64> {
        if self.n != 3 {
            return None;
        }
        let p = self.p[(0, 1)];
        let tol = 1e-12;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 - 2.0 * p } else { p };
                if (self.p[(i, j)] - expect).abs() > tol {
                    return None;
                }
            }
        }
        (p > 0.0).then_some(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Confirms row-stochasticity (already guaranteed by construction) and
    /// ergodicity: some boolean power of the support pattern must be strictly
    /// positive with exponent at most n^2.
    pub fn validate(&self) -> Result<(), ChainError> {
        let n = self.n;
        let support = |m: &DMatrix<f64>| -> Vec<bool> {
            m.iter().map(|&v| v > 0.0).collect()
        };
        // Boolean matrix powers avoid float underflow on long products.
        let base: Vec<bool> = support(&self.p);
        let mut power = base.clone();
        let idx = |i: usize, j: usize| i * n + j;
        for _ in 1..=n * n {
            if power.iter().all(|&b| b) {
                return Ok(());
            }
            let mut next = vec![false; n * n];
            for i in 0..n {
                for k in 0..n {
                    if power[idx(i, k)] {
                        for j in 0..n {
                            if base[idx(k, j)] {
                                next[idx(i, j)] = true;
                            }
                        }
                    }
                }
            }
            if next == power {
                break; // reached the transitive closure pattern
            }
            power = next;
        }
        if power.iter().all(|&b| b) {
            Ok(())
        } else {
            Err(ChainError::NotErgodic)
        }
    }

    /// Unique stationary distribution, by power iteration to a fixed point.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>, ChainError> {
        self.validate()?;
        let n = self.n;
        let mut mu = DVector::from_element(n, 1.0 / n as f64);
        for _ in 0..POWER_ITER_CAP {
            let next = self.p.tr_mul(&mu); // next = P^T mu, i.e. mu P as a row vector
            let diff = (&next - &mu).amax();
            mu = next;
            if diff <= POWER_ITER_TOL {
                let sum: f64 = mu.iter().sum();
                return Ok(mu.iter().map(|v| v / sum).collect());
            }
        }
        Err(ChainError::NoConvergence(POWER_ITER_CAP))
    }

    /// Worst-case total variation distance to stationarity after `t` steps,
    /// maximized over deterministic initial distributions. The sup over all
    /// initial distributions is attained at a vertex because the TV distance
    /// is convex in the initial distribution.
    pub fn d_mix(&self, t: u64) -> Result<f64, ChainError> {
        let mu = self.stationary_distribution()?;
        Ok(self.d_mix_with(&mu, &self.power(t)))
    }

    fn d_mix_with(&self, mu: &[f64], pt: &DMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let mut acc = 0.0;
            for j in 0..self.n {
                acc += (pt[(i, j)] - mu[j]).abs();
            }
            worst = worst.max(0.5 * acc);
        }
        worst
    }

    /// P^t by binary exponentiation.
    pub fn power(&self, t: u64) -> DMatrix<f64> {
        let mut result = DMatrix::identity(self.n, self.n);
        let mut base = self.p.clone();
        let mut k = t;
        while k > 0 {
            if k & 1 == 1 {
                result = &result * &base;
            }
            base = &base * &base;
            k >>= 1;
        }
        result
    }

    /// Smallest `t` with `d_mix(t) <= eps`, by exponential doubling followed
    /// by bisection (valid because `d_mix` is non-increasing in `t`).
    pub fn mixing_time(&self, eps: f64) -> Result<u64, ChainError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ChainError::InvalidEpsilon(eps));
        }
        let mu = self.stationary_distribution()?;
        let ok = |t: u64| self.d_mix_with(&mu, &self.power(t)) <= eps;
        let mut hi = 1u64;
        while !ok(hi) {
            if hi >= MIXING_TIME_CAP {
                return Err(ChainError::BudgetExceeded(MIXING_TIME_CAP));
            }
            hi = (hi * 2).min(MIXING_TIME_CAP);
        }
        let mut lo = hi / 2; // d_mix(lo) > eps (or lo = 0)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Spectral mixing-time bracket for reversible chains:
    /// `lower = |l2| / (1 - l*) * ln 2`, `upper = 1 / (1 - l*) * ln(4 / mu_min)`
    /// with `l* = max(|l2|, |ln|)` over the eigenvalues `1 = l1 > l2 >= ... >= ln`.
    pub fn spectral_mixing_bounds(&self) -> Result<(f64, f64), ChainError> {
        let mu = self.stationary_distribution()?;
        for i in 0..self.n {
            for j in 0..self.n {
                if (mu[i] * self.p[(i, j)] - mu[j] * self.p[(j, i)]).abs() > REVERSIBILITY_TOL {
                    return Err(ChainError::NotReversible);
                }
            }
        }
        // Reversible P is similar to the symmetric D^{1/2} P D^{-1/2}, so its
        // spectrum is real and a symmetric eigensolver applies.
        let sym = DMatrix::from_fn(self.n, self.n, |i, j| {
            (mu[i] / mu[j]).sqrt() * self.p[(i, j)]
        });
        // Symmetrize away floating-point asymmetry before decomposition.
        let sym = (&sym + &sym.transpose()) * 0.5;
        let mut eigen: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        eigen.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let lambda2 = eigen[1];
        let lambda_n = eigen[self.n - 1];
        let lambda_star = lambda2.abs().max(lambda_n.abs());
        let mu_min = mu.iter().cloned().fold(f64::INFINITY, f64::min);
        let gap = 1.0 - lambda_star;
        let lower = lambda2.abs() / gap * 2.0f64.ln();
        let upper = 1.0 / gap * (4.0 / mu_min).ln();
        Ok((lower, upper))
    }
}

/// Total variation distance between two finite distributions,
/// `(1/2) sum_i |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, ChainError> {
    if p.len() != q.len() {
        return Err(ChainError::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Seeded simulator of a chain. Single-owner mutable state; the emitted state
/// sequence is bit-identical across runs for a fixed seed and matrix.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    matrix: TransitionMatrix,
    current: usize,
    rng: ChaCha8Rng,
}

impl ChainSampler {
    pub fn new(matrix: TransitionMatrix, initial_state: usize, seed: u64) -> Self {
        assert!(initial_state < matrix.n(), "initial state out of range");
        Self {
            matrix,
            current: initial_state,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.matrix
    }

    /// Advance one transition and return the new state.
    pub fn step(&mut self) -> usize {
        let u: f64 = self.rng.gen::<f64>();
        let mut acc = 0.0;
        let n = self.matrix.n();
        let mut next = n - 1; // inverse CDF; final state absorbs rounding slack
        for j in 0..n {
            acc += self.matrix.entry(self.current, j);
            if u < acc {
                next = j;
                break;
            }
        }
        self.current = next;
        next
    }
}

/// Exact, bracketed, and approximate mixing times for one chain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixingReport {
    /// tau_mix(eps), eps = 1/4 by default.
    pub tau_mix: u64,
    /// tau_mix(1/T) for the requested horizon.
    #[serde(rename = "tau_of_T")]
    pub tau_of_t: u64,
    /// Spectral bracket (reversible chains only).
    pub spectral_lower: Option<f64>,
    pub spectral_upper: Option<f64>,
    /// 1/(3p) when the symmetric 3-state family is detected.
    pub approx: Option<f64>,
}

/// Build the full [`MixingReport`] for a chain and horizon.
pub fn mixing_report(
    matrix: &TransitionMatrix,
    eps: f64,
    horizon: u64,
) -> Result<MixingReport, ChainError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ChainError::InvalidEpsilon(eps));
    }
    if horizon < 2 {
        return Err(ChainError::InvalidEpsilon(1.0 / horizon.max(1) as f64));
    }
    let tau_mix = matrix.mixing_time(eps)?;
    let tau_of_t = matrix.mixing_time(1.0 / horizon as f64)?;
    let (spectral_lower, spectral_upper) = match matrix.spectral_mixing_bounds() {
        Ok((lo, hi)) => (Some(lo), Some(hi)),
        Err(ChainError::NotReversible) => (None, None),
        Err(e) => return Err(e),
    };
    let approx = matrix.three_state_parameter().map(|p| 1.0 / (3.0 * p));
    Ok(MixingReport {
        tau_mix,
        tau_of_t,
        spectral_lower,
        spectral_upper,
        approx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform3() -> TransitionMatrix {
        TransitionMatrix::from_rows(vec![vec![1.0 / 3.0; 3]; 3]).unwrap()
    }

    #[test]
    fn symmetric_family_validates() {
        let m = TransitionMatrix::symmetric_three_state(0.1).unwrap();
        m.validate().unwrap();
        assert_eq!(m.three_state_parameter(), Some(0.1));
    }

    #[test]
    fn identity_is_not_ergodic() {
        let m = TransitionMatrix::from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(m.validate(), Err(ChainError::NotErgodic));
        assert!(matches!(
            m.stationary_distribution(),
            Err(ChainError::NotErgodic)
        ));
    }

    #[test]
    fn bad_row_sum_is_rejected() {
        let err = TransitionMatrix::from_rows(vec![
            vec![0.5, 0.6, 0.0],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap_err();
        assert!(matches!(err, ChainError::NonStochasticRow { row: 0, .. }));
    }

    #[test]
    fn negative_entry_is_rejected() {
        let err = TransitionMatrix::from_rows(vec![
            vec![1.1, -0.1],
            vec![0.5, 0.5],
        ])
        .unwrap_err();
        assert!(matches!(err, ChainError::InvalidEntry { .. }));
    }

    #[test]
    fn stationary_of_three_state_family_is_uniform() {
        for p in [0.05, 0.1, 0.25, 0.4] {
            let m = TransitionMatrix::symmetric_three_state(p).unwrap();
            let mu = m.stationary_distribution().unwrap();
            for v in &mu {
                assert!((v - 1.0 / 3.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stationary_two_state_matches_hand_solve() {
        // mu P = mu solved by hand: mu = (b, a) / (a + b) for flip rates a, b.
        let m = TransitionMatrix::from_rows(vec![
            vec![0.9, 0.1],
            vec![0.2, 0.8],
        ])
        .unwrap();
        let mu = m.stationary_distribution().unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((mu[1] - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn stationary_is_fixed_point() {
        let m = TransitionMatrix::symmetric_three_state(0.07).unwrap();
        let mu = m.stationary_distribution().unwrap();
        for j in 0..3 {
            let v: f64 = (0..3).map(|i| mu[i] * m.entry(i, j)).sum();
            assert!((v - mu[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn tv_distance_basics() {
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.6, 0.4], &[0.5, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn d_mix_at_zero_is_positive_for_nondegenerate_mu() {
        let m = TransitionMatrix::symmetric_three_state(0.1).unwrap();
        assert!(m.d_mix(0).unwrap() > 0.0);
    }

    #[test]
    fn uniform_chain_mixes_in_one_step() {
        let m = uniform3();
        assert!(m.d_mix(1).unwrap() < 1e-15);
        assert_eq!(m.mixing_time(0.25).unwrap(), 1);
    }

    /// Closed form for the symmetric family: d_mix(t) = (2/3) (1-3p)^t.
    fn d_mix_closed_form(p: f64, t: u64) -> f64 {
        2.0 / 3.0 * (1.0 - 3.0 * p).powi(t as i32)
    }

    #[test]
    fn d_mix_matches_closed_form_oracle() {
        let m = TransitionMatrix::symmetric_three_state(0.1).unwrap();
        for t in [0, 1, 2, 5, 10, 20] {
            let got = m.d_mix(t).unwrap();
            let want = d_mix_closed_form(0.1, t);
            assert!((got - want).abs() < 1e-12, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn d_mix_is_non_increasing() {
        let m = TransitionMatrix::symmetric_three_state(0.05).unwrap();
        let mut prev = m.d_mix(0).unwrap();
        for t in 1..40 {
            let cur = m.d_mix(t).unwrap();
            assert!(cur <= prev + 1e-12);
            prev = cur;
        }
    }

    #[test]
    fn d_mix_submultiplicative_at_multiples_of_tau_mix() {
        let m = TransitionMatrix::symmetric_three_state(0.05).unwrap();
        let tau = m.mixing_time(0.25).unwrap();
        for l in 1..=3u32 {
            let d = m.d_mix(u64::from(l) * tau).unwrap();
            assert!(d <= 2.0f64.powi(-(l as i32)) + 1e-12);
        }
    }

    #[test]
    fn mixing_time_matches_brute_force_scan() {
        for p in [0.01, 0.05, 0.1] {
            let m = TransitionMatrix::symmetric_three_state(p).unwrap();
            let got = m.mixing_time(0.25).unwrap();
            let mut scan = 1;
            while m.d_mix(scan).unwrap() > 0.25 {
                scan += 1;
            }
            assert_eq!(got, scan);
        }
    }

    #[test]
    fn tau_of_inverse_horizon_bounded_by_log_factor() {
        let m = TransitionMatrix::symmetric_three_state(0.1).unwrap();
        let tau_mix = m.mixing_time(0.25).unwrap();
        for t_horizon in [10u64, 100, 1000] {
            let tau = m.mixing_time(1.0 / t_horizon as f64).unwrap();
            let log2t = (t_horizon as f64).log2().ceil() as u64;
            assert!(tau <= log2t * tau_mix);
            assert!(tau >= tau_mix);
        }
    }

    #[test]
    fn spectral_bounds_match_analytic_spectrum() {
        // Circulant 3x3 spectrum is {1, 1-3p, 1-3p}.
        let p = 0.001;
        let m = TransitionMatrix::symmetric_three_state(p).unwrap();
        let (lo, hi) = m.spectral_mixing_bounds().unwrap();
        let lambda = 1.0 - 3.0 * p;
        let want_lo = lambda / (3.0 * p) * 2.0f64.ln();
        let want_hi = 1.0 / (3.0 * p) * 12.0f64.ln();
        assert!((lo - want_lo).abs() < 1e-6 * want_lo);
        assert!((hi - want_hi).abs() < 1e-6 * want_hi);
        // Magnitudes quoted to one decimal place.
        assert!((lo - 230.4).abs() < 0.1);
        assert!((hi - 828.3).abs() < 0.1);
    }

    #[test]
    fn spectral_bracket_contains_exact_mixing_time() {
        for p in [0.01, 0.05, 0.1] {
            let m = TransitionMatrix::symmetric_three_state(p).unwrap();
            let tau = m.mixing_time(0.25).unwrap() as f64;
            let (lo, hi) = m.spectral_mixing_bounds().unwrap();
            assert!(lo <= tau && tau <= hi, "p={p}: {tau} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn non_reversible_cycle_is_rejected() {
        let m = TransitionMatrix::from_rows(vec![
            vec![0.1, 0.9, 0.0],
            vec![0.0, 0.1, 0.9],
            vec![0.9, 0.0, 0.1],
        ])
        .unwrap();
        assert_eq!(
            m.spectral_mixing_bounds().unwrap_err(),
            ChainError::NotReversible
        );
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let m = TransitionMatrix::symmetric_three_state(0.2).unwrap();
        let mut a = ChainSampler::new(m.clone(), 0, 77);
        let mut b = ChainSampler::new(m.clone(), 0, 77);
        let sa: Vec<usize> = (0..500).map(|_| a.step()).collect();
        let sb: Vec<usize> = (0..500).map(|_| b.step()).collect();
        assert_eq!(sa, sb);
        let mut c = ChainSampler::new(m, 0, 78);
        let sc: Vec<usize> = (0..500).map(|_| c.step()).collect();
        assert_ne!(sa, sc);
    }

    #[test]
    fn sampler_frequencies_converge_to_stationary() {
        // Uniform chain: post-step samples are i.i.d., so the plain
        // binomial standard error applies.
        let m = uniform3();
        let mu = m.stationary_distribution().unwrap();
        let n = 1_000_000usize;
        let mut sampler = ChainSampler::new(m, 0, 4242);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sampler.step()] += 1;
        }
        for i in 0..3 {
            let freq = counts[i] as f64 / n as f64;
            let se = (mu[i] * (1.0 - mu[i]) / n as f64).sqrt();
            assert!(
                (freq - mu[i]).abs() <= 3.0 * se,
                "state {i}: freq {freq} vs mu {}",
                mu[i]
            );
        }
    }

    #[test]
    fn mixing_report_for_three_state_family() {
        let m = TransitionMatrix::symmetric_three_state(0.1).unwrap();
        let report = mixing_report(&m, 0.25, 1000).unwrap();
        assert!(report.tau_mix >= 1);
        assert!(report.tau_of_t >= report.tau_mix);
        let log2t = 1000f64.log2().ceil() as u64;
        assert!(report.tau_of_t <= log2t * report.tau_mix);
        assert!((report.approx.unwrap() - 1.0 / 0.3).abs() < 1e-12);
        assert!(report.spectral_lower.unwrap() <= report.tau_mix as f64);
        assert!(report.tau_mix as f64 <= report.spectral_upper.unwrap());
    }

    #[test]
    fn mixing_report_rejects_bad_eps() {
        let m = uniform3();
        assert!(matches!(
            mixing_report(&m, 1.0, 100),
            Err(ChainError::InvalidEpsilon(_))
        ));
    }
}
