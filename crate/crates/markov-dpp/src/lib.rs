//! Drift-plus-penalty primal-dual stochastic-gradient solvers for
//! stochastic-constrained stochastic optimization when the data stream is an
//! ergodic Markov chain.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`chain`] — finite-state ergodic chains, stationary distributions, and
//!   mixing-time computation (exact brute force and spectral brackets).
//! * [`problem`] — problem instances: per-state objective/constraint oracles
//!   over a compact convex domain, with exact stationary-averaged evaluators.
//! * [`mlmc`] — the multi-level Monte Carlo estimator built from consecutive
//!   chain samples, used when the mixing time is unknown.
//! * [`solver`] — the adaptive drift-plus-penalty engine with pluggable
//!   parameter schedules (known mixing time, fixed-horizon baselines,
//!   AdaGrad-style adaptive, adversarial).
//! * [`metrics`] — trajectory recording, regret / violation / optimality gap /
//!   feasibility gap, and reference-optimum computation.
//! * [`fairexp`] — the synthetic fairness-constrained logistic-regression
//!   experiment harness.
//! * [`instances`] — named built-in problem instances for the CLI.

pub mod chain;
pub mod fairexp;
pub mod instances;
pub mod metrics;
pub mod mlmc;
pub mod problem;
pub mod seed;
pub mod solver;
