//! Discrete-event simulation of the identical system.
//!
//! The simulator shares no code with the generator or the linear solve: it
//! drives an explicit event loop (arrivals, departures, setup completions,
//! turnoff timers) with exponential clocks, which makes it an independent
//! statistical oracle for the analytic pipeline. Output analysis uses batch
//! means over a fixed number of post-warmup completions.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_distr::{Distribution, Exp1};
use rand_pcg::Pcg64;

use crate::error::{Error, Result};
use crate::metrics::{evaluate_policy, PhaseProbs, PolicyMetrics};
use crate::model::{validate_params, Policy, ServerPhase, SpeedThreshold, SystemParams};
use crate::solver::Tolerances;

/// One simulation run: the system, the policy, and the output-analysis
/// budget. `horizon` and `warmup` count job completions; the first
/// `warmup` completions are discarded and the remainder is split into
/// `batches` equally sized batches (a trailing partial batch is dropped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub params: SystemParams,
    pub policy: Policy,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub batches: u32,
    /// Safety bound: the run aborts if the queue ever exceeds this.
    pub max_queue: u64,
}

impl SimConfig {
    /// Config with the customary defaults: 5% warmup, 20 batches, and a
    /// one-million-job queue safety bound.
    pub fn new(params: SystemParams, policy: Policy, horizon: u64, seed: u64) -> SimConfig {
        SimConfig {
            params,
            policy,
            horizon,
            warmup: horizon / 20,
            seed,
            batches: 20,
            max_queue: 1_000_000,
        }
    }
}

/// Batch-means estimates with 95% confidence half-widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimMetrics {
    pub mean_response: f64,
    pub response_ci95: f64,
    pub mean_power: f64,
    pub power_ci95: f64,
    pub phase_time_fractions: PhaseProbs,
    /// Completions that entered the batch statistics.
    pub completions: u64,
    pub batches: u32,
    pub response_se: f64,
    pub power_se: f64,
    /// Time-average number of jobs over the measurement window.
    pub mean_queue: f64,
    /// Length of the measurement window.
    pub measured_time: f64,
}

impl SimMetrics {
    /// Two-sided confidence interval for the mean response at the given
    /// level, e.g. `0.99`.
    pub fn response_interval(&self, confidence: f64) -> (f64, f64) {
        let h = student_t_quantile(0.5 + confidence / 2.0, self.batches - 1) * self.response_se;
        (self.mean_response - h, self.mean_response + h)
    }

    /// Two-sided confidence interval for the mean power draw.
    pub fn power_interval(&self, confidence: f64) -> (f64, f64) {
        let h = student_t_quantile(0.5 + confidence / 2.0, self.batches - 1) * self.power_se;
        (self.mean_power - h, self.mean_power + h)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Independent per-purpose random streams, so that a policy change does not
/// shift unrelated draws.
struct Streams {
    arrival: Pcg64,
    service: Pcg64,
    setup: Pcg64,
    turnoff: Pcg64,
}

impl Streams {
    fn new(seed: u64) -> Streams {
        let sub = |tag: u64| Pcg64::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
        Streams {
            arrival: sub(1),
            service: sub(2),
            setup: sub(3),
            turnoff: sub(4),
        }
    }
}

fn exp_after(clock: f64, rng: &mut Pcg64, rate: f64) -> f64 {
    let draw: f64 = Exp1.sample(rng);
    clock + draw / rate
}

/// Runs the event loop. Fully reproducible from the seed.
pub fn simulate(config: &SimConfig) -> Result<SimMetrics> {
    let v = validate_params(&config.params, &config.policy)?;
    let params = v.params;
    let policy = v.policy;

    if config.batches < 10 {
        return Err(Error::DegenerateBatches(format!(
            "need at least 10 batches, got {}",
            config.batches
        )));
    }
    if config.horizon <= config.warmup {
        return Err(Error::DegenerateBatches(format!(
            "horizon {} leaves no completions after warmup {}",
            config.horizon, config.warmup
        )));
    }
    let batch_size = (config.horizon - config.warmup) / config.batches as u64;
    if batch_size == 0 {
        return Err(Error::DegenerateBatches(format!(
            "{} post-warmup completions cannot fill {} batches",
            config.horizon - config.warmup,
            config.batches
        )));
    }
    let needed = batch_size * config.batches as u64;

    let k2 = policy.k2;
    let serving_phase = |q: u64| match k2 {
        SpeedThreshold::Finite(k) if q >= k as u64 => ServerPhase::Fast,
        _ => ServerPhase::Slow,
    };
    let rate_of = |phase: ServerPhase| match phase {
        ServerPhase::Fast => params.fast_rate(),
        _ => params.mu,
    };
    let power_of = |phase: ServerPhase| match phase {
        ServerPhase::Off => 0.0,
        ServerPhase::Switching => params.p_setup,
        ServerPhase::Idle => params.p_idle,
        ServerPhase::Slow => params.p_slow,
        ServerPhase::Fast => params.p_fast,
    };

    let mut streams = Streams::new(config.seed);
    let mut clock = 0.0f64;
    let mut q: u64 = 0;
    let mut phase = if policy.alpha == 0.0 {
        ServerPhase::Idle
    } else {
        ServerPhase::Off
    };
    let mut fifo: VecDeque<f64> = VecDeque::new();

    let mut next_arrival = exp_after(clock, &mut streams.arrival, params.lambda);
    let mut next_departure: Option<f64> = None;
    let mut next_setup: Option<f64> = None;
    let mut next_turnoff: Option<f64> = None;

    let mut completions: u64 = 0;
    let mut counted: u64 = 0;
    let mut measuring = config.warmup == 0;
    let mut window_start = 0.0f64;
    let mut batch_start = 0.0f64;

    let mut response_sums = vec![0.0f64; config.batches as usize];
    let mut power_batch_means = Vec::with_capacity(config.batches as usize);
    let mut power_integral = 0.0f64;
    let mut phase_time = [0.0f64; 5];
    let mut queue_integral = 0.0f64;

    let phase_slot = |phase: ServerPhase| match phase {
        ServerPhase::Off => 0,
        ServerPhase::Switching => 1,
        ServerPhase::Idle => 2,
        ServerPhase::Slow => 3,
        ServerPhase::Fast => 4,
    };

    #[derive(Clone, Copy, PartialEq)]
    enum Event {
        Arrival,
        Departure,
        SetupDone,
        Turnoff,
    }

    loop {
        debug_assert_eq!(
            next_departure.is_some(),
            matches!(phase, ServerPhase::Slow | ServerPhase::Fast),
            "exactly one service is in progress iff the server is serving"
        );
        debug_assert_eq!(next_setup.is_some(), phase == ServerPhase::Switching);
        debug_assert_eq!(fifo.len() as u64, q);

        // Next event; ties (measure zero) break in a fixed order.
        let mut t = next_arrival;
        let mut event = Event::Arrival;
        if let Some(td) = next_departure {
            if td < t {
                t = td;
                event = Event::Departure;
            }
        }
        if let Some(ts) = next_setup {
            if ts < t {
                t = ts;
                event = Event::SetupDone;
            }
        }
        if let Some(tt) = next_turnoff {
            if tt < t {
                t = tt;
                event = Event::Turnoff;
            }
        }

        if measuring {
            let dt = t - clock;
            phase_time[phase_slot(phase)] += dt;
            power_integral += power_of(phase) * dt;
            queue_integral += q as f64 * dt;
        }
        clock = t;

        match event {
            Event::Arrival => {
                q += 1;
                fifo.push_back(clock);
                if q > config.max_queue {
                    return Err(Error::UnstableDetected {
                        queue: q,
                        bound: config.max_queue,
                    });
                }
                next_arrival = exp_after(clock, &mut streams.arrival, params.lambda);
                match phase {
                    ServerPhase::Off => {
                        if q >= policy.k1 as u64 {
                            phase = ServerPhase::Switching;
                            next_setup = Some(exp_after(clock, &mut streams.setup, params.gamma));
                        }
                    }
                    ServerPhase::Switching => {}
                    ServerPhase::Idle => {
                        next_turnoff = None;
                        phase = serving_phase(q);
                        next_departure =
                            Some(exp_after(clock, &mut streams.service, rate_of(phase)));
                    }
                    ServerPhase::Slow => {
                        // Crossing the speed threshold re-draws the remaining
                        // service at the fast rate (memoryless, as the chain
                        // semantics require).
                        if serving_phase(q) == ServerPhase::Fast {
                            phase = ServerPhase::Fast;
                            next_departure =
                                Some(exp_after(clock, &mut streams.service, rate_of(phase)));
                        }
                    }
                    ServerPhase::Fast => {}
                }
            }
            Event::Departure => {
                debug_assert!(q >= 1);
                q -= 1;
                let arrived = fifo.pop_front().expect("a job must be in service");
                let response = clock - arrived;
                completions += 1;
                if measuring {
                    counted += 1;
                    response_sums[((counted - 1) / batch_size) as usize] += response;
                    if counted.is_multiple_of(batch_size) {
                        let duration = clock - batch_start;
                        power_batch_means.push(power_integral / duration);
                        power_integral = 0.0;
                        batch_start = clock;
                    }
                    if counted == needed {
                        break;
                    }
                } else if completions == config.warmup {
                    measuring = true;
                    window_start = clock;
                    batch_start = clock;
                    power_integral = 0.0;
                    phase_time = [0.0; 5];
                    queue_integral = 0.0;
                }
                if q == 0 {
                    next_departure = None;
                    if policy.alpha.is_infinite() {
                        phase = ServerPhase::Off;
                    } else {
                        phase = ServerPhase::Idle;
                        if policy.alpha > 0.0 {
                            next_turnoff =
                                Some(exp_after(clock, &mut streams.turnoff, policy.alpha));
                        }
                    }
                } else {
                    phase = serving_phase(q);
                    next_departure = Some(exp_after(clock, &mut streams.service, rate_of(phase)));
                }
            }
            Event::SetupDone => {
                debug_assert_eq!(phase, ServerPhase::Switching);
                debug_assert!(q >= policy.k1 as u64);
                next_setup = None;
                phase = serving_phase(q);
                next_departure = Some(exp_after(clock, &mut streams.service, rate_of(phase)));
            }
            Event::Turnoff => {
                debug_assert_eq!(phase, ServerPhase::Idle);
                debug_assert_eq!(q, 0);
                next_turnoff = None;
                phase = ServerPhase::Off;
            }
        }
    }

    let response_means: Vec<f64> = response_sums
        .iter()
        .map(|s| s / batch_size as f64)
        .collect();
    let (mean_response, response_se) = batch_stats(&response_means);
    let (mean_power, power_se) = batch_stats(&power_batch_means);
    debug_assert_eq!(power_batch_means.len(), config.batches as usize);

    let t95 = student_t_quantile(0.975, config.batches - 1);
    let measured_time = clock - window_start;
    let fractions = PhaseProbs {
        off: phase_time[0] / measured_time,
        switching: phase_time[1] / measured_time,
        idle: phase_time[2] / measured_time,
        slow: phase_time[3] / measured_time,
        fast: phase_time[4] / measured_time,
    };
    Ok(SimMetrics {
        mean_response,
        response_ci95: t95 * response_se,
        mean_power,
        power_ci95: t95 * power_se,
        phase_time_fractions: fractions,
        completions: needed,
        batches: config.batches,
        response_se,
        power_se,
        mean_queue: queue_integral / measured_time,
        measured_time,
    })
}

/// Mean and standard error of a set of batch means.
fn batch_stats(means: &[f64]) -> (f64, f64) {
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Inverse standard-normal CDF (Acklam's rational approximation, relative
/// error below 1.15e-9 over the open unit interval).
fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}

/// Student-t quantile via the Cornish-Fisher expansion around the normal
/// quantile; plenty accurate for the degrees of freedom batch means produce.
fn student_t_quantile(p: f64, df: u32) -> f64 {
    let z = inverse_normal_cdf(p);
    let v = df as f64;
    let z2 = z * z;
    z + (z * (z2 + 1.0)) / (4.0 * v)
        + (z * (5.0 * z2 * z2 + 16.0 * z2 + 3.0)) / (96.0 * v * v)
        + (z * (3.0 * z2 * z2 * z2 + 19.0 * z2 * z2 + 17.0 * z2 - 15.0)) / (384.0 * v * v * v)
        + (z * (79.0 * z2 * z2 * z2 * z2 + 776.0 * z2 * z2 * z2 + 1482.0 * z2 * z2
            - 1920.0 * z2
            - 945.0))
            / (92160.0 * v * v * v * v)
}

/// Simulation budget for a cross-validation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimBudget {
    pub horizon: u64,
    pub warmup: u64,
    pub batches: u32,
    pub seed: u64,
}

impl Default for SimBudget {
    fn default() -> Self {
        SimBudget {
            horizon: 2_000_000,
            warmup: 100_000,
            batches: 20,
            seed: 0x5EED,
        }
    }
}

/// Result of checking the analytic pipeline against the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub analytic: PolicyMetrics,
    pub simulated: SimMetrics,
    pub confidence: f64,
    pub response_interval: (f64, f64),
    pub power_interval: (f64, f64),
    pub response_ok: bool,
    pub power_ok: bool,
    pub pass: bool,
}

/// Checks whether analytic metrics fall inside the simulator's confidence
/// intervals at the given level.
pub fn compare(
    analytic: &PolicyMetrics,
    simulated: &SimMetrics,
    confidence: f64,
) -> CrossValidation {
    let response_interval = simulated.response_interval(confidence);
    let power_interval = simulated.power_interval(confidence);
    let response_ok = response_interval.0 <= analytic.mean_response
        && analytic.mean_response <= response_interval.1;
    let power_ok =
        power_interval.0 <= analytic.mean_power && analytic.mean_power <= power_interval.1;
    CrossValidation {
        analytic: *analytic,
        simulated: *simulated,
        confidence,
        response_interval,
        power_interval,
        response_ok,
        power_ok,
        pass: response_ok && power_ok,
    }
}

/// Runs both pipelines and requires the analytic `E[R]` and `E[P]` to fall
/// inside the simulator's 99% confidence intervals.
pub fn cross_validate(
    params: &SystemParams,
    policy: &Policy,
    tol: &Tolerances,
    budget: &SimBudget,
) -> Result<CrossValidation> {
    let analytic = evaluate_policy(params, policy, tol)?;
    let simulated = simulate(&SimConfig {
        params: *params,
        policy: *policy,
        horizon: budget.horizon,
        warmup: budget.warmup,
        seed: budget.seed,
        batches: budget.batches,
        max_queue: 1_000_000,
    })?;
    Ok(compare(&analytic, &simulated, 0.99))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64) -> SystemParams {
        SystemParams {
            lambda,
            mu: 1.0,
            c: 2.0,
            gamma: 0.5,
            p_idle: 0.6,
            p_setup: 4.0,
            p_slow: 1.0,
            p_fast: 4.0,
            beta: 0.5,
        }
    }

    #[test]
    fn quantiles_match_table_values() {
        assert!((inverse_normal_cdf(0.975) - 1.959964).abs() < 1e-6);
        assert!((inverse_normal_cdf(0.995) - 2.575829).abs() < 1e-6);
        assert!((student_t_quantile(0.975, 19) - 2.093024).abs() < 5e-4);
        assert!((student_t_quantile(0.995, 19) - 2.860935).abs() < 5e-4);
        assert!((student_t_quantile(0.995, 9) - 3.249836).abs() < 1e-3);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let config = SimConfig::new(
            params(0.6),
            Policy::new(2, SpeedThreshold::Finite(3), 0.5),
            60_000,
            42,
        );
        let a = simulate(&config).unwrap();
        let b = simulate(&config).unwrap();
        assert_eq!(a, b);
        let other = simulate(&SimConfig { seed: 43, ..config }).unwrap();
        assert_ne!(a.mean_response, other.mean_response);
    }

    #[test]
    fn phase_fractions_sum_to_one() {
        let config = SimConfig::new(
            params(0.4),
            Policy::new(2, SpeedThreshold::Finite(2), 1.0),
            80_000,
            7,
        );
        let m = simulate(&config).unwrap();
        assert!((m.phase_time_fractions.sum() - 1.0).abs() <= 1e-9);
        assert!(m.response_ci95 > 0.0 && m.power_ci95 > 0.0);
        assert_eq!(m.completions, 80_000 - 80_000 / 20);
    }

    #[test]
    fn mm1_interval_covers_the_closed_form() {
        let config = SimConfig::new(
            params(0.5),
            Policy::always_on(SpeedThreshold::Infinite),
            400_000,
            2024,
        );
        let m = simulate(&config).unwrap();
        let (lo, hi) = m.response_interval(0.99);
        assert!(lo <= 2.0 && 2.0 <= hi, "99% CI [{lo}, {hi}] must cover 2.0");
    }

    #[test]
    fn setup_interval_covers_the_decomposition_value() {
        // Instant off, wake on the first arrival, slow only: the mean
        // response decomposes as 1/(mu - lambda) + 1/gamma = 10/3.
        let config = SimConfig::new(
            params(0.25),
            Policy::new(1, SpeedThreshold::Infinite, f64::INFINITY),
            400_000,
            515,
        );
        let m = simulate(&config).unwrap();
        let expect = 1.0 / 0.75 + 2.0;
        let (lo, hi) = m.response_interval(0.99);
        assert!(lo <= expect && expect <= hi, "99% CI [{lo}, {hi}] vs {expect}");
    }

    #[test]
    fn littles_law_holds_empirically() {
        let config = SimConfig::new(
            params(0.7),
            Policy::new(2, SpeedThreshold::Finite(4), 1.0),
            300_000,
            99,
        );
        let m = simulate(&config).unwrap();
        let throughput = m.completions as f64 / m.measured_time;
        let implied = throughput * m.mean_response;
        assert!(
            (implied - m.mean_queue).abs() / m.mean_queue < 0.02,
            "lambda * E[R] = {implied} vs time-average q = {}",
            m.mean_queue
        );
    }

    #[test]
    fn degenerate_batch_setups_are_rejected() {
        let base = SimConfig::new(
            params(0.5),
            Policy::always_on(SpeedThreshold::Infinite),
            1_000,
            1,
        );
        let few = SimConfig { batches: 5, ..base };
        assert!(matches!(simulate(&few), Err(Error::DegenerateBatches(_))));
        let empty = SimConfig {
            warmup: 1_000,
            ..base
        };
        assert!(matches!(simulate(&empty), Err(Error::DegenerateBatches(_))));
        let thin = SimConfig {
            horizon: 1_005,
            warmup: 1_000,
            ..base
        };
        assert!(matches!(simulate(&thin), Err(Error::DegenerateBatches(_))));
    }

    #[test]
    fn queue_safety_bound_detects_misconfiguration() {
        let config = SimConfig {
            max_queue: 20,
            ..SimConfig::new(
                params(1.95),
                Policy::always_on(SpeedThreshold::Finite(1)),
                200_000,
                3,
            )
        };
        assert!(matches!(
            simulate(&config),
            Err(Error::UnstableDetected { bound: 20, .. })
        ));
    }

    #[test]
    fn unstable_configs_are_rejected_before_running() {
        let config = SimConfig::new(
            params(2.5),
            Policy::always_on(SpeedThreshold::Finite(1)),
            1_000,
            1,
        );
        assert!(matches!(simulate(&config), Err(Error::Unstable { .. })));
    }
}
