//! Performance and power metrics of a solved policy.
//!
//! Everything here is a linear functional of the stationary distribution:
//! `E[N]` sums `q` against the probabilities (tail included in closed form),
//! `E[R]` follows from Little's law, `E[P]` weights the phase occupancies by
//! the power levels, and the scalar cost is `E[R] + beta * E[P]`.

use crate::error::Result;
use crate::model::{phase_of, validate_params, Policy, ServerPhase, SpeedThreshold, SystemParams};
use crate::solver::{solve_stationary, StationaryDistribution, Tolerances};

/// Probability of each server phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseProbs {
    pub off: f64,
    pub switching: f64,
    pub idle: f64,
    pub slow: f64,
    pub fast: f64,
}

impl PhaseProbs {
    pub fn get(&self, phase: ServerPhase) -> f64 {
        match phase {
            ServerPhase::Off => self.off,
            ServerPhase::Switching => self.switching,
            ServerPhase::Idle => self.idle,
            ServerPhase::Slow => self.slow,
            ServerPhase::Fast => self.fast,
        }
    }

    pub fn get_mut(&mut self, phase: ServerPhase) -> &mut f64 {
        match phase {
            ServerPhase::Off => &mut self.off,
            ServerPhase::Switching => &mut self.switching,
            ServerPhase::Idle => &mut self.idle,
            ServerPhase::Slow => &mut self.slow,
            ServerPhase::Fast => &mut self.fast,
        }
    }

    pub fn sum(&self) -> f64 {
        self.off + self.switching + self.idle + self.slow + self.fast
    }
}

/// Solver diagnostics carried along with every metric row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub q_max: u32,
    pub residual: f64,
    pub tail_mass_bound: f64,
    pub clipped_negatives: usize,
}

impl SolveDiagnostics {
    /// Diagnostics for an exact closed form: nothing was truncated or solved.
    pub fn exact() -> SolveDiagnostics {
        SolveDiagnostics {
            q_max: 0,
            residual: 0.0,
            tail_mass_bound: 0.0,
            clipped_negatives: 0,
        }
    }

    pub fn of(dist: &StationaryDistribution) -> SolveDiagnostics {
        SolveDiagnostics {
            q_max: dist.q_max(),
            residual: dist.residual(),
            tail_mass_bound: dist.tail_mass_bound(),
            clipped_negatives: dist.clipped_negatives(),
        }
    }
}

/// Metrics of one `(params, policy)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMetrics {
    /// Mean number of jobs in the system, `E[N]`.
    pub mean_jobs: f64,
    /// Mean response time `E[R] = E[N] / lambda`.
    pub mean_response: f64,
    /// Mean power draw `E[P]`.
    pub mean_power: f64,
    /// `E[R] + beta * E[P]`.
    pub cost: f64,
    pub phase_probs: PhaseProbs,
    pub diagnostics: SolveDiagnostics,
}

/// Aggregates the stationary probabilities by server phase. The
/// extrapolated tail mass lands in `Switching` on the off line and in `Fast`
/// (or `Slow` when the fast speed is never used) on the on line.
pub fn phase_probabilities(dist: &StationaryDistribution, policy: &Policy) -> PhaseProbs {
    let policy = policy.canonical();
    let mut probs = PhaseProbs::default();
    for (state, p) in dist.iter() {
        *probs.get_mut(phase_of(state.on, state.q, &policy)) += p;
    }
    probs.switching += dist.tail_mass_off();
    match policy.k2 {
        SpeedThreshold::Finite(_) => probs.fast += dist.tail_mass_on(),
        SpeedThreshold::Infinite => probs.slow += dist.tail_mass_on(),
    }
    probs
}

/// Mean number of jobs, including the closed-form contribution of the
/// geometric tails: mass `m` decaying at ratio `r` above level `q_max`
/// contributes `m * (q_max + 1/(1-r))`.
pub fn mean_jobs(dist: &StationaryDistribution) -> f64 {
    let mut total: f64 = dist.iter().map(|(s, p)| s.q as f64 * p).sum();
    let q_max = dist.q_max() as f64;
    if dist.tail_mass_off() > 0.0 {
        total += dist.tail_mass_off() * (q_max + 1.0 / (1.0 - dist.tail_ratio_off()));
    }
    if dist.tail_mass_on() > 0.0 {
        total += dist.tail_mass_on() * (q_max + 1.0 / (1.0 - dist.tail_ratio_on()));
    }
    total
}

/// Mean response time by Little's law; every arriving job is eventually
/// served (infinite buffer, FCFS).
pub fn mean_response(dist: &StationaryDistribution, params: &SystemParams) -> f64 {
    mean_jobs(dist) / params.lambda
}

/// Mean power draw: the off phase consumes nothing, every other phase
/// consumes its configured level.
pub fn mean_power(dist: &StationaryDistribution, params: &SystemParams, policy: &Policy) -> f64 {
    let probs = phase_probabilities(dist, policy);
    params.p_idle * probs.idle
        + params.p_setup * probs.switching
        + params.p_slow * probs.slow
        + params.p_fast * probs.fast
}

/// Scalar cost `E[R] + beta * E[P]`.
pub fn cost(mean_response: f64, mean_power: f64, params: &SystemParams) -> f64 {
    mean_response + params.beta * mean_power
}

/// Full pipeline: solve the stationary distribution and map it to metrics.
/// Deterministic for fixed inputs.
pub fn evaluate_policy(
    params: &SystemParams,
    policy: &Policy,
    tol: &Tolerances,
) -> Result<PolicyMetrics> {
    let v = validate_params(params, policy)?;
    let dist = solve_stationary(&v.params, &v.policy, tol)?;
    Ok(metrics_of(&dist, &v.params, &v.policy))
}

/// Metrics of an already solved distribution.
pub fn metrics_of(
    dist: &StationaryDistribution,
    params: &SystemParams,
    policy: &Policy,
) -> PolicyMetrics {
    let mean_jobs = mean_jobs(dist);
    let mean_response = mean_jobs / params.lambda;
    let mean_power = mean_power(dist, params, policy);
    PolicyMetrics {
        mean_jobs,
        mean_response,
        mean_power,
        cost: cost(mean_response, mean_power, params),
        phase_probs: phase_probabilities(dist, policy),
        diagnostics: SolveDiagnostics::of(dist),
    }
}
