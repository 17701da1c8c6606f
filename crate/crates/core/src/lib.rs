//! Analysis toolkit for an energy-aware single-server queue that combines
//! two power-saving mechanisms: turning the server off (with an exponential
//! setup time to turn it back on) and scaling its speed between a slow rate
//! `mu` and a fast rate `c * mu`.
//!
//! The system is a continuous-time Markov chain on `(s, q)` controlled by
//! three knobs:
//!
//! * `k1` — number of waiting jobs that triggers setup from the off state,
//! * `k2` — queue length at or above which service runs at the fast rate,
//! * `alpha` — turnoff delay rate once the server idles empty (`0` = never
//!   off, `inf` = instantly off).
//!
//! The crate solves the stationary distribution exactly up to a controlled
//! truncation ([`solve_stationary`]), maps it to mean response time, mean
//! power, and the scalar cost `E[R] + beta * E[P]` ([`evaluate_policy`]),
//! searches policy grids for the cost minimum and classifies the optimum
//! into structural regimes ([`optimize`], [`find_thresholds`],
//! [`synergy_gap`]), and cross-validates everything against an independent
//! discrete-event simulator ([`simulate`], [`cross_validate`]).
//!
//! ```
//! use sleepscale::{evaluate_policy, Policy, SpeedThreshold, SystemParams, Tolerances};
//!
//! let params = SystemParams {
//!     lambda: 0.5, mu: 1.0, c: 2.0, gamma: 0.5,
//!     p_idle: 0.6, p_setup: 4.0, p_slow: 1.0, p_fast: 4.0, beta: 0.5,
//! };
//! // Never off, never fast: plain M/M/1, so E[R] = 1 / (mu - lambda) = 2.
//! let policy = Policy::always_on(SpeedThreshold::Infinite);
//! let metrics = evaluate_policy(&params, &policy, &Tolerances::default()).unwrap();
//! assert!((metrics.mean_response - 2.0).abs() < 1e-8);
//! ```

mod error;
mod linalg;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use metrics::{
    cost, evaluate_policy, mean_jobs, mean_power, mean_response, metrics_of, phase_probabilities,
    PhaseProbs, PolicyMetrics, SolveDiagnostics,
};
pub use model::{
    build_generator, phase_of, service_rate, validate_params, Generator, Policy, ServerPhase,
    SpeedThreshold, State, SystemParams, Transition, Validated,
};
pub use optimizer::{
    classify, find_thresholds, optimize, optimize_over, synergy_gap, Bracket, Regime, SearchSpace,
    Segment, SynergyReport, SynergyRow, ThresholdReport, ThresholdSearch,
};
pub use sim::{
    compare, cross_validate, simulate, CrossValidation, SimBudget, SimConfig, SimMetrics,
};
pub use solver::{
    adaptive_truncation, closed_form_oracle, solve_stationary, tail_ratio_off,
    StationaryDistribution, Tolerances,
};
