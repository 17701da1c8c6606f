//! Domain types and generator construction for the controlled single-server
//! queue.
//!
//! The system is a continuous-time Markov chain on states `(s, q)` where
//! `s = 0` means the server is off or being set up, `s = 1` means it is on,
//! and `q` counts jobs in the system. Control is exerted through a
//! [`Policy`]: the turn-on threshold `k1`, the speed threshold `k2`, and the
//! turnoff delay rate `alpha`.

use crate::error::{Error, Result};

/// Physical and environment parameters of the system.
///
/// Rates are per unit time, powers are abstract power units, and `beta`
/// (time units per power unit) weights mean power against mean response time
/// in the scalar cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Poisson arrival rate.
    pub lambda: f64,
    /// Slow service rate.
    pub mu: f64,
    /// Speed scale factor; the fast rate is `c * mu`, with `c > 1`.
    pub c: f64,
    /// Setup completion rate.
    pub gamma: f64,
    /// Power draw while idle (on, empty).
    pub p_idle: f64,
    /// Power draw during setup.
    pub p_setup: f64,
    /// Power draw while serving at the slow rate.
    pub p_slow: f64,
    /// Power draw while serving at the fast rate.
    pub p_fast: f64,
    /// Cost weight between response time and power.
    pub beta: f64,
}

impl SystemParams {
    /// Fast service rate `c * mu`.
    pub fn fast_rate(&self) -> f64 {
        self.c * self.mu
    }

    /// Same parameters with a different arrival rate. Sweep helper.
    pub fn with_lambda(&self, lambda: f64) -> SystemParams {
        SystemParams { lambda, ..*self }
    }

    /// True when the fast rate draws more energy per job than the slow rate,
    /// i.e. `p_fast/(c*mu) > p_slow/mu`. The threshold structure of optimal
    /// policies is only meaningful under this condition; otherwise fast
    /// service is always preferred.
    pub fn preference_flag(&self) -> bool {
        self.p_fast / self.fast_rate() > self.p_slow / self.mu
    }

    /// Top service rate reachable under the policy: `c*mu` when the fast
    /// speed is ever used, `mu` otherwise.
    pub fn top_rate(&self, policy: &Policy) -> f64 {
        match policy.k2 {
            SpeedThreshold::Finite(_) => self.fast_rate(),
            SpeedThreshold::Infinite => self.mu,
        }
    }
}

/// Queue-length threshold at which service switches to the fast rate.
///
/// `Infinite` means the fast rate is never used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpeedThreshold {
    Finite(u32),
    Infinite,
}

impl SpeedThreshold {
    pub fn is_finite(&self) -> bool {
        matches!(self, SpeedThreshold::Finite(_))
    }

    /// The threshold value when finite.
    pub fn finite(&self) -> Option<u32> {
        match self {
            SpeedThreshold::Finite(k) => Some(*k),
            SpeedThreshold::Infinite => None,
        }
    }
}

impl std::fmt::Display for SpeedThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpeedThreshold::Finite(k) => write!(f, "{k}"),
            SpeedThreshold::Infinite => write!(f, "inf"),
        }
    }
}

/// The control triple `(k1, k2, alpha)`.
///
/// `alpha` is the turnoff delay rate: `0` means the server never turns off,
/// `f64::INFINITY` means it turns off the instant it idles empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    /// Turn-on threshold: setup starts once `k1` jobs have accumulated.
    pub k1: u32,
    /// Speed threshold: service runs at `c*mu` while `q >= k2`.
    pub k2: SpeedThreshold,
    /// Turnoff delay rate, in `[0, inf]`.
    pub alpha: f64,
}

impl Policy {
    pub fn new(k1: u32, k2: SpeedThreshold, alpha: f64) -> Policy {
        Policy { k1, k2, alpha }
    }

    /// Policy that never turns the server off (`alpha = 0`, canonical `k1 = 1`).
    pub fn always_on(k2: SpeedThreshold) -> Policy {
        Policy::new(1, k2, 0.0)
    }

    /// Canonical form: when `alpha = 0` the turn-on threshold is irrelevant
    /// and is normalized to 1 so that policy equality is well-defined.
    pub fn canonical(&self) -> Policy {
        if self.alpha == 0.0 {
            Policy { k1: 1, ..*self }
        } else {
            *self
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.alpha != 0.0 || self.k1 == 1
    }

    /// True when the server can turn off (`alpha > 0`).
    pub fn uses_on_off(&self) -> bool {
        self.alpha > 0.0
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.alpha.is_infinite() {
            write!(f, "(k1={}, k2={}, alpha=inf)", self.k1, self.k2)
        } else {
            write!(f, "(k1={}, k2={}, alpha={})", self.k1, self.k2, self.alpha)
        }
    }
}

/// The five server phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServerPhase {
    Off,
    Switching,
    Idle,
    Slow,
    Fast,
}

impl ServerPhase {
    pub const ALL: [ServerPhase; 5] = [
        ServerPhase::Off,
        ServerPhase::Switching,
        ServerPhase::Idle,
        ServerPhase::Slow,
        ServerPhase::Fast,
    ];
}

impl std::fmt::Display for ServerPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ServerPhase::Off => "off",
            ServerPhase::Switching => "switching",
            ServerPhase::Idle => "idle",
            ServerPhase::Slow => "slow",
            ServerPhase::Fast => "fast",
        };
        f.write_str(name)
    }
}

/// A CTMC state `(s, q)`: `on` is the server flag `s`, `q` the job count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub on: bool,
    pub q: u32,
}

impl State {
    pub fn new(on: bool, q: u32) -> State {
        State { on, q }
    }
}

/// Server phase of state `(s, q)` under `policy`.
///
/// Total and deterministic: off-line states are `Off` below `k1` and
/// `Switching` at or above it; on-line states are `Idle` when empty, `Slow`
/// below `k2`, `Fast` at or above it.
pub fn phase_of(on: bool, q: u32, policy: &Policy) -> ServerPhase {
    if !on {
        if q < policy.k1 {
            ServerPhase::Off
        } else {
            ServerPhase::Switching
        }
    } else if q == 0 {
        ServerPhase::Idle
    } else {
        match policy.k2 {
            SpeedThreshold::Finite(k2) if q >= k2 => ServerPhase::Fast,
            _ => ServerPhase::Slow,
        }
    }
}

/// Service rate out of on-line state `(1, q)`, `q >= 1`.
pub fn service_rate(params: &SystemParams, policy: &Policy, q: u32) -> f64 {
    match policy.k2 {
        SpeedThreshold::Finite(k2) if q >= k2 => params.fast_rate(),
        _ => params.mu,
    }
}

/// Validated `(params, policy)` pair in canonical form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validated {
    pub params: SystemParams,
    pub policy: Policy,
    /// `p_fast/(c*mu) > p_slow/mu`; reported, never an error.
    pub preference_flag: bool,
}

/// Checks parameter and policy invariants, canonicalizes the policy, and
/// verifies stability (`lambda` below the top service rate the policy can
/// reach).
pub fn validate_params(params: &SystemParams, policy: &Policy) -> Result<Validated> {
    fn positive(name: &'static str, value: f64) -> Result<()> {
        if value.is_finite() && value > 0.0 {
            Ok(())
        } else {
            Err(Error::NegativeRate {
                name,
                requirement: "a positive finite number",
                value,
            })
        }
    }
    fn non_negative(name: &'static str, value: f64) -> Result<()> {
        if value.is_finite() && value >= 0.0 {
            Ok(())
        } else {
            Err(Error::NegativeRate {
                name,
                requirement: "a non-negative finite number",
                value,
            })
        }
    }

    positive("lambda", params.lambda)?;
    positive("mu", params.mu)?;
    positive("gamma", params.gamma)?;
    non_negative("beta", params.beta)?;
    non_negative("p_idle", params.p_idle)?;
    non_negative("p_setup", params.p_setup)?;
    if !(params.p_slow > 0.0 && params.p_slow <= params.p_fast && params.p_fast.is_finite()) {
        return Err(Error::BadPowerLevels {
            p_slow: params.p_slow,
            p_fast: params.p_fast,
        });
    }
    if !(params.c.is_finite() && params.c > 1.0) {
        return Err(Error::NonScaledSpeed { c: params.c });
    }

    if policy.k1 < 1 {
        return Err(Error::BadThreshold {
            name: "k1",
            value: policy.k1,
        });
    }
    if let SpeedThreshold::Finite(k2) = policy.k2 {
        if k2 < 1 {
            return Err(Error::BadThreshold {
                name: "k2",
                value: k2,
            });
        }
    }
    if policy.alpha.is_nan() || policy.alpha < 0.0 {
        return Err(Error::NegativeRate {
            name: "alpha",
            requirement: "in [0, inf]",
            value: policy.alpha,
        });
    }

    let top = params.top_rate(policy);
    if params.lambda >= top {
        return Err(Error::Unstable {
            lambda: params.lambda,
            service_rate: top,
        });
    }

    Ok(Validated {
        params: *params,
        policy: policy.canonical(),
        preference_flag: params.preference_flag(),
    })
}

/// A single off-diagonal transition of the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// State-space layout. Which off-line states exist depends on `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    /// `alpha = 0`: the off line is transient and removed; only `(1, q)`.
    OnOnly,
    /// `0 < alpha < inf`: both lines, interleaved `(0,q), (1,q)` per level.
    TwoLane,
    /// `alpha = inf`: Idle `(1,0)` removed; the last departure jumps to `(0,0)`.
    TwoLaneNoIdle,
}

/// The truncated CTMC generator for one `(params, policy)` pair.
///
/// States are ordered level by level so that every transition moves the
/// index by at most [`Generator::bandwidth`]. Arrivals out of level `q_max`
/// are dropped (reflecting truncation), so every row still sums to zero.
#[derive(Debug, Clone)]
pub struct Generator {
    states: Vec<State>,
    transitions: Vec<Transition>,
    diagonal: Vec<f64>,
    q_max: u32,
    layout: Layout,
}

impl Generator {
    /// Number of states after truncation.
    pub fn dimension(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    /// Off-diagonal transitions; all rates are positive.
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Diagonal entries, each the negated row sum of the off-diagonals.
    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn q_max(&self) -> u32 {
        self.q_max
    }

    pub fn state(&self, index: usize) -> State {
        self.states[index]
    }

    /// Index of state `(s, q)`, if it exists in this layout.
    pub fn index_of(&self, on: bool, q: u32) -> Option<usize> {
        if q > self.q_max {
            return None;
        }
        let idx = match self.layout {
            Layout::OnOnly => {
                if !on {
                    return None;
                }
                q as usize
            }
            Layout::TwoLane => 2 * q as usize + on as usize,
            Layout::TwoLaneNoIdle => {
                if q == 0 {
                    if on {
                        return None;
                    }
                    0
                } else {
                    2 * q as usize - 1 + on as usize
                }
            }
        };
        Some(idx)
    }

    /// Maximum index distance any transition spans.
    pub fn bandwidth(&self) -> usize {
        self.transitions
            .iter()
            .map(|t| t.from.abs_diff(t.to))
            .max()
            .unwrap_or(1)
    }
}

/// Builds the truncated generator.
///
/// Requires `q_max >= max(k1, finite k2) + 2` so that the boundary levels
/// sit above every threshold.
pub fn build_generator(params: &SystemParams, policy: &Policy, q_max: u32) -> Result<Generator> {
    let v = validate_params(params, policy)?;
    let params = v.params;
    let policy = v.policy;

    let required = policy.k1.max(policy.k2.finite().unwrap_or(0)) + 2;
    if q_max < required {
        return Err(Error::TruncationTooSmall { q_max, required });
    }

    let layout = if policy.alpha == 0.0 {
        Layout::OnOnly
    } else if policy.alpha.is_infinite() {
        Layout::TwoLaneNoIdle
    } else {
        Layout::TwoLane
    };

    let mut states = Vec::new();
    for q in 0..=q_max {
        match layout {
            Layout::OnOnly => states.push(State::new(true, q)),
            Layout::TwoLane => {
                states.push(State::new(false, q));
                states.push(State::new(true, q));
            }
            Layout::TwoLaneNoIdle => {
                states.push(State::new(false, q));
                if q > 0 {
                    states.push(State::new(true, q));
                }
            }
        }
    }

    let mut gen = Generator {
        diagonal: vec![0.0; states.len()],
        transitions: Vec::with_capacity(3 * states.len()),
        states,
        q_max,
        layout,
    };

    let idx = |on: bool, q: u32| gen.index_of(on, q).expect("state must exist in layout");
    let mut transitions = Vec::with_capacity(3 * gen.states.len());
    let mut push = |from: usize, to: usize, rate: f64| {
        transitions.push(Transition { from, to, rate });
    };

    for q in 0..=q_max {
        // Off line (exists only when the server can turn off).
        if layout != Layout::OnOnly {
            let here = idx(false, q);
            if q < q_max {
                push(here, idx(false, q + 1), params.lambda);
            }
            if q >= policy.k1 {
                push(here, idx(true, q), params.gamma);
            }
        }
        // On line.
        if gen.index_of(true, q).is_some() {
            let here = idx(true, q);
            if q < q_max {
                push(here, idx(true, q + 1), params.lambda);
            }
            if q >= 1 {
                let rate = service_rate(&params, &policy, q);
                let target = if q == 1 && layout == Layout::TwoLaneNoIdle {
                    idx(false, 0)
                } else {
                    idx(true, q - 1)
                };
                push(here, target, rate);
            } else if layout == Layout::TwoLane {
                push(here, idx(false, 0), policy.alpha);
            }
        }
    }

    for t in &transitions {
        gen.diagonal[t.from] -= t.rate;
    }
    gen.transitions = transitions;
    Ok(gen)
}
