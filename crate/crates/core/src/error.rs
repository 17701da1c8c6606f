use thiserror::Error;

/// Errors shared across the model, solver, optimizer, and simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The speed scale factor must satisfy `c > 1`.
    #[error("speed scale factor must exceed 1, got c = {c}")]
    NonScaledSpeed { c: f64 },

    /// A rate or weight that must be positive (or non-negative) is not.
    #[error("{name} must be {requirement}, got {value}")]
    NegativeRate {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },

    /// A policy threshold is out of range (`k1 >= 1`, finite `k2 >= 1`).
    #[error("{name} must be at least 1, got {value}")]
    BadThreshold { name: &'static str, value: u32 },

    /// Power levels must satisfy `0 < p_slow <= p_fast`.
    #[error(
        "power levels must satisfy 0 < p_slow <= p_fast, got p_slow = {p_slow}, p_fast = {p_fast}"
    )]
    BadPowerLevels { p_slow: f64, p_fast: f64 },

    /// The effective service rate does not exceed the arrival rate.
    #[error("unstable: arrival rate {lambda} is not below the top service rate {service_rate}")]
    Unstable { lambda: f64, service_rate: f64 },

    /// Formally stable, but so close to saturation that the truncated state
    /// space would explode. Refused rather than solved badly.
    #[error("utilization {utilization} is within 1e-6 of saturation; refusing to solve")]
    UnstableInPractice { utilization: f64 },

    /// The requested truncation level is too small for the policy thresholds.
    #[error("truncation level {q_max} is below the required minimum {required}")]
    TruncationTooSmall { q_max: u32, required: u32 },

    /// The balance system was numerically singular. Indicates a disconnected
    /// or mis-built chain, i.e. a bug upstream of the solve.
    #[error("singular balance system: the chain appears disconnected or mis-built")]
    SingularSystem,

    /// The solve finished but a quality measure is out of tolerance.
    #[error("{what} = {value:e} exceeds tolerance {tolerance:e} after refinement")]
    ToleranceNotMet {
        what: &'static str,
        value: f64,
        tolerance: f64,
    },

    /// No policy in the search space is stable for the given parameters.
    #[error("no stable policy in the search space")]
    EmptyFeasibleSet,

    /// A search space failed basic sanity checks.
    #[error("bad search space: {0}")]
    BadSearchSpace(String),

    /// Threshold/synergy analysis requires the fast rate to cost more energy
    /// per job than the slow rate: `p_fast/(c*mu) > p_slow/mu`.
    #[error(
        "speed preference violated: p_fast/(c*mu) = {fast_energy_per_job} \
         does not exceed p_slow/mu = {slow_energy_per_job}"
    )]
    PreferenceViolated {
        fast_energy_per_job: f64,
        slow_energy_per_job: f64,
    },

    /// The simulated queue exceeded the safety bound; the configuration is
    /// effectively unstable or mis-specified.
    #[error("simulated queue length {queue} exceeded the safety bound {bound}")]
    UnstableDetected { queue: u64, bound: u64 },

    /// The batch-means setup cannot produce a confidence interval.
    #[error("degenerate batch setup: {0}")]
    DegenerateBatches(String),
}

pub type Result<T> = std::result::Result<T, Error>;
