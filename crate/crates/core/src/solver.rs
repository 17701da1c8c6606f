//! Stationary analysis of the truncated chain.
//!
//! The chain is truncated at a level `q_max` chosen from a geometric tail
//! bound, solved exactly by a sparse direct method (one balance equation
//! replaced by the normalization constraint), and the mass above `q_max` is
//! restored by geometric extrapolation: the off line decays exactly at
//! `lambda / (lambda + gamma)`, the on line at the dominant ratio fitted
//! from the last solved levels.

use crate::error::{Error, Result};
use crate::linalg::BorderedBandLu;
use crate::metrics::{PhaseProbs, PolicyMetrics, SolveDiagnostics};
use crate::model::{
    build_generator, validate_params, Generator, Policy, SpeedThreshold, State, SystemParams,
};

/// Utilization margin below which the solve is refused: `q_max` grows like
/// `log(tol) / log(rho)` and explodes as `rho -> 1`.
const SATURATION_MARGIN: f64 = 1e-6;
/// Round-off negatives up to this magnitude are clipped to zero; anything
/// larger is treated as a solve failure.
const NEGATIVE_CLIP: f64 = 1e-12;
const MAX_REFINEMENT_ROUNDS: usize = 3;
const MAX_DOUBLINGS: usize = 6;

/// Solver tolerance bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max-norm bound on the global-balance residual `pi Q`.
    pub residual: f64,
    /// Bound on the extrapolated probability mass above the truncation level.
    pub tail_mass: f64,
    /// Relative tolerance used when comparing against closed-form oracles.
    pub oracle_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual: 1e-10,
            tail_mass: 1e-12,
            oracle_rel: 1e-8,
        }
    }
}

/// Stationary distribution of the truncated chain plus exact tail
/// descriptors and solver diagnostics.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    states: Vec<State>,
    probs: Vec<f64>,
    q_max: u32,
    tail_ratio_off: f64,
    tail_ratio_on: f64,
    tail_mass_off: f64,
    tail_mass_on: f64,
    residual: f64,
    clipped_negatives: usize,
}

impl StationaryDistribution {
    /// Probability of state `(s, q)`; zero for states outside the layout or
    /// above the truncation level (the tail is carried separately).
    pub fn prob(&self, on: bool, q: u32) -> f64 {
        self.states
            .iter()
            .position(|s| s.on == on && s.q == q)
            .map_or(0.0, |i| self.probs[i])
    }

    /// Iterates over `(state, probability)` pairs up to the truncation level.
    pub fn iter(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.states.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn q_max(&self) -> u32 {
        self.q_max
    }

    /// Exact off-line tail ratio `lambda / (lambda + gamma)`.
    pub fn tail_ratio_off(&self) -> f64 {
        self.tail_ratio_off
    }

    /// Fitted dominant on-line tail ratio.
    pub fn tail_ratio_on(&self) -> f64 {
        self.tail_ratio_on
    }

    /// Extrapolated mass above `q_max` on the off line.
    pub fn tail_mass_off(&self) -> f64 {
        self.tail_mass_off
    }

    /// Extrapolated mass above `q_max` on the on line.
    pub fn tail_mass_on(&self) -> f64 {
        self.tail_mass_on
    }

    /// Upper bound on the probability mass beyond the truncation level.
    pub fn tail_mass_bound(&self) -> f64 {
        self.tail_mass_off + self.tail_mass_on
    }

    /// Max-norm of `pi Q` over the truncated system.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Count of tiny round-off negatives clipped to zero.
    pub fn clipped_negatives(&self) -> usize {
        self.clipped_negatives
    }

    /// Total mass including the extrapolated tail; one up to round-off.
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail_mass_off + self.tail_mass_on
    }
}

/// Exact geometric ratio of the off-line tail: for `q >= k1` the only
/// outflow from `(0, q)` is `lambda + gamma` and the only inflow is `lambda`
/// from `(0, q-1)`, so consecutive probabilities decay at
/// `lambda / (lambda + gamma)`.
pub fn tail_ratio_off(params: &SystemParams) -> f64 {
    params.lambda / (params.lambda + params.gamma)
}

/// Smallest truncation level at which the a-priori geometric tail bound
/// drops below `tol`, never below `max(k1, finite k2, 8)`.
pub fn adaptive_truncation(params: &SystemParams, policy: &Policy, tol: f64) -> Result<u32> {
    let v = validate_params(params, policy)?;
    let policy = v.policy;
    let top = params.top_rate(&policy);
    let service_ratio = params.lambda / top;
    if 1.0 - service_ratio < SATURATION_MARGIN {
        return Err(Error::UnstableInPractice {
            utilization: service_ratio,
        });
    }
    // The off line only exists (and only contributes tail mass) when the
    // server can actually turn off.
    let rho_eff = if policy.alpha > 0.0 {
        service_ratio.max(tail_ratio_off(params))
    } else {
        service_ratio
    };
    if 1.0 - rho_eff < SATURATION_MARGIN {
        return Err(Error::UnstableInPractice {
            utilization: rho_eff,
        });
    }

    let k2_finite = policy.k2.finite();
    let knee = policy.k1.max(k2_finite.unwrap_or(1));
    let floor = policy.k1.max(k2_finite.unwrap_or(0)).max(8);

    let mut q_max = floor;
    let mut bound = rho_eff.powi((floor - knee) as i32) / (1.0 - rho_eff);
    while bound >= tol {
        q_max += 1;
        bound *= rho_eff;
    }
    Ok(q_max)
}

/// `y = pi Q` as a dense vector over the truncated states.
fn balance_image(gen: &Generator, pi: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; gen.dimension()];
    for (j, d) in gen.diagonal().iter().enumerate() {
        y[j] += d * pi[j];
    }
    for t in gen.transitions() {
        y[t.to] += t.rate * pi[t.from];
    }
    y
}

/// Solves the truncated global-balance system exactly. Returns the
/// probability vector (summing to one over the truncated states) and the
/// max-norm residual of `pi Q`.
///
/// The system is `A x = e_{n-1}` with `A = Q^T` and one balance equation
/// replaced by the normalization row of ones. States enter the elimination
/// in descending level order, so the replaced equation belongs to a level-0
/// state: anchoring the normalization at a state with non-negligible
/// probability keeps the bordered elimination from blowing up on long
/// near-critical chains (the boundary state's probability can be 1e-13,
/// and pivoting on it amplifies round-off catastrophically).
fn solve_truncated(gen: &Generator) -> Result<(Vec<f64>, f64)> {
    let n = gen.dimension();
    let bw = gen.bandwidth();
    let perm = |i: usize| n - 1 - i;

    // Row perm(to) = column perm(from) entries of the permuted A; the
    // balance equation of the old state 0 lands in the dense border row.
    let mut entries = Vec::with_capacity(gen.transitions().len() + n);
    for t in gen.transitions() {
        if t.to != 0 {
            entries.push((perm(t.to), perm(t.from), t.rate));
        }
    }
    for (j, d) in gen.diagonal().iter().enumerate() {
        if j != 0 {
            entries.push((perm(j), perm(j), *d));
        }
    }
    let ones = vec![1.0; n];
    let lu = BorderedBandLu::factor(n, bw, bw, &entries, &ones)?;

    let solve = |rhs: &mut Vec<f64>| {
        rhs.reverse();
        lu.solve_into(rhs);
        rhs.reverse();
    };

    // rhs in original ordering: the normalization equation sits at state 0.
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    solve(&mut x);

    for _ in 0..MAX_REFINEMENT_ROUNDS {
        let y = balance_image(gen, &x);
        let mass: f64 = x.iter().sum();
        let mut r: Vec<f64> = y.iter().map(|v| -v).collect();
        r[0] = 1.0 - mass;
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst <= 1e-15 {
            break;
        }
        solve(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
    }

    let residual = balance_image(gen, &x)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((x, residual))
}

/// Dominant on-line tail ratio, fitted as the least-squares geometric slope
/// of the last five solved on-line levels. Falls back to the theoretical
/// dominant ratio when the fit degenerates (underflow, non-geometric data).
fn fit_tail_ratio_on(
    gen: &Generator,
    probs: &[f64],
    params: &SystemParams,
    policy: &Policy,
) -> f64 {
    let q_max = gen.q_max();
    let fallback = {
        let service = params.lambda / params.top_rate(policy);
        if policy.alpha > 0.0 {
            service.max(tail_ratio_off(params))
        } else {
            service
        }
    };

    let mut logs = [0.0f64; 5];
    for (t, slot) in logs.iter_mut().enumerate() {
        let q = q_max - 4 + t as u32;
        match gen.index_of(true, q) {
            Some(i) if probs[i] > 0.0 && probs[i].is_finite() => *slot = probs[i].ln(),
            _ => return fallback,
        }
    }
    // Least squares slope over t = 0..5; sum((t - 2)^2) = 10.
    let slope = logs
        .iter()
        .enumerate()
        .map(|(t, y)| (t as f64 - 2.0) * y)
        .sum::<f64>()
        / 10.0;
    let ratio = slope.exp();
    if ratio.is_finite() && ratio > 0.0 && ratio < 1.0 - 1e-9 {
        ratio
    } else {
        fallback
    }
}

/// Computes the stationary distribution of the chain for `(params, policy)`.
///
/// The truncation level starts at [`adaptive_truncation`] and doubles until
/// the post-hoc extrapolated tail mass is below `tol.tail_mass`. The solve
/// itself is exact up to round-off; the residual is checked against
/// `tol.residual` after iterative refinement.
pub fn solve_stationary(
    params: &SystemParams,
    policy: &Policy,
    tol: &Tolerances,
) -> Result<StationaryDistribution> {
    let v = validate_params(params, policy)?;
    let params = v.params;
    let policy = v.policy;

    let build_floor = policy.k1.max(policy.k2.finite().unwrap_or(0)) + 2;
    let mut q_max = adaptive_truncation(&params, &policy, tol.tail_mass)?.max(build_floor);

    for round in 0.. {
        let gen = build_generator(&params, &policy, q_max)?;
        let (mut x, residual) = solve_truncated(&gen)?;

        let mut clipped = 0usize;
        for xi in x.iter_mut() {
            if *xi < 0.0 {
                if *xi < -NEGATIVE_CLIP {
                    return Err(Error::ToleranceNotMet {
                        what: "negative probability",
                        value: *xi,
                        tolerance: NEGATIVE_CLIP,
                    });
                }
                *xi = 0.0;
                clipped += 1;
            }
        }

        let r_off = tail_ratio_off(&params);
        let r_on = fit_tail_ratio_on(&gen, &x, &params, &policy);
        let boundary_off = gen.index_of(false, q_max).map_or(0.0, |i| x[i]);
        let boundary_on = gen.index_of(true, q_max).map_or(0.0, |i| x[i]);
        let tail_off = boundary_off * r_off / (1.0 - r_off);
        let tail_on = boundary_on * r_on / (1.0 - r_on);

        let total = x.iter().sum::<f64>() + tail_off + tail_on;
        let tail_mass = (tail_off + tail_on) / total;

        if tail_mass <= tol.tail_mass || round == MAX_DOUBLINGS {
            if tail_mass > tol.tail_mass {
                return Err(Error::ToleranceNotMet {
                    what: "extrapolated tail mass",
                    value: tail_mass,
                    tolerance: tol.tail_mass,
                });
            }
            if residual > tol.residual {
                return Err(Error::ToleranceNotMet {
                    what: "balance residual",
                    value: residual,
                    tolerance: tol.residual,
                });
            }
            for xi in x.iter_mut() {
                *xi /= total;
            }
            return Ok(StationaryDistribution {
                states: gen.states().to_vec(),
                probs: x,
                q_max,
                tail_ratio_off: r_off,
                tail_ratio_on: r_on,
                tail_mass_off: tail_off / total,
                tail_mass_on: tail_on / total,
                residual,
                clipped_negatives: clipped,
            });
        }
        q_max *= 2;
    }
    unreachable!("the doubling loop always returns");
}

/// Exact metrics for the analytically known policy reductions; `None` for
/// everything else.
///
/// * `alpha = 0, k2 = inf`: M/M/1 at `(lambda, mu)`.
/// * `alpha = 0, k2 = 1`: M/M/1 at `(lambda, c*mu)`.
/// * `alpha = inf, k1 = 1, k2 = inf`: M/M/1 with exponential setup, where
///   the response time decomposes as `1/(mu - lambda) + 1/gamma`.
pub fn closed_form_oracle(params: &SystemParams, policy: &Policy) -> Option<PolicyMetrics> {
    let v = validate_params(params, policy).ok()?;
    let params = v.params;
    let policy = v.policy;
    let lambda = params.lambda;

    let mm1 = |rate: f64, busy_phase_power: f64, busy_is_fast: bool| {
        let rho = lambda / rate;
        let mean_response = 1.0 / (rate - lambda);
        let mean_power = params.p_idle * (1.0 - rho) + busy_phase_power * rho;
        let phase_probs = PhaseProbs {
            off: 0.0,
            switching: 0.0,
            idle: 1.0 - rho,
            slow: if busy_is_fast { 0.0 } else { rho },
            fast: if busy_is_fast { rho } else { 0.0 },
        };
        PolicyMetrics {
            mean_jobs: lambda * mean_response,
            mean_response,
            mean_power,
            cost: mean_response + params.beta * mean_power,
            phase_probs,
            diagnostics: SolveDiagnostics::exact(),
        }
    };

    if policy.alpha == 0.0 {
        return match policy.k2 {
            SpeedThreshold::Infinite => Some(mm1(params.mu, params.p_slow, false)),
            SpeedThreshold::Finite(1) => Some(mm1(params.fast_rate(), params.p_fast, true)),
            _ => None,
        };
    }

    if policy.alpha.is_infinite() && policy.k1 == 1 && policy.k2 == SpeedThreshold::Infinite {
        let rho = lambda / params.mu;
        let r = tail_ratio_off(&params);
        let mean_response = 1.0 / (params.mu - lambda) + 1.0 / params.gamma;
        let phase_probs = PhaseProbs {
            off: (1.0 - rho) * (1.0 - r),
            switching: (1.0 - rho) * r,
            idle: 0.0,
            slow: rho,
            fast: 0.0,
        };
        let mean_power = params.p_setup * phase_probs.switching + params.p_slow * rho;
        return Some(PolicyMetrics {
            mean_jobs: lambda * mean_response,
            mean_response,
            mean_power,
            cost: mean_response + params.beta * mean_power,
            phase_probs,
            diagnostics: SolveDiagnostics::exact(),
        });
    }
    None
}
