//! Policy search: cost minimization over a finite policy grid, regime
//! classification of the optimum, bisection of the arrival-rate thresholds
//! where the optimal regime changes, and quantification of how much the two
//! control mechanisms gain when combined.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{evaluate_policy, PolicyMetrics};
use crate::model::{Policy, SpeedThreshold, SystemParams};
use crate::solver::Tolerances;

/// Relative cost window within which policies count as tied; ties break
/// toward the structurally simpler policy.
const TIE_REL: f64 = 1e-9;

/// Finite grid of candidate policies.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    k1_max: u32,
    k2_max: u32,
    alpha_grid: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            k1_max: 10,
            k2_max: 20,
            alpha_grid: vec![
                0.0,
                1e-2,
                1e-1,
                0.5,
                1.0,
                2.0,
                5.0,
                10.0,
                100.0,
                f64::INFINITY,
            ],
        }
    }
}

impl SearchSpace {
    /// Builds a space over `k1 in 1..=k1_max`, `k2 in 1..=k2_max` plus
    /// `Infinite`, and the given turnoff-rate grid. The grid is sorted and
    /// deduplicated; it must contain both endpoints `0` and `inf`.
    pub fn new(k1_max: u32, k2_max: u32, alpha_grid: &[f64]) -> Result<SearchSpace> {
        if k1_max < 1 || k2_max < 1 {
            return Err(Error::BadSearchSpace(
                "k1_max and k2_max must be at least 1".into(),
            ));
        }
        let mut grid = alpha_grid.to_vec();
        if grid.iter().any(|a| a.is_nan() || *a < 0.0) {
            return Err(Error::BadSearchSpace(
                "alpha grid values must be in [0, inf]".into(),
            ));
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        if grid.first() != Some(&0.0) || grid.last() != Some(&f64::INFINITY) {
            return Err(Error::BadSearchSpace(
                "alpha grid must include both 0 and inf".into(),
            ));
        }
        Ok(SearchSpace {
            k1_max,
            k2_max,
            alpha_grid: grid,
        })
    }

    pub fn k1_max(&self) -> u32 {
        self.k1_max
    }

    pub fn k2_max(&self) -> u32 {
        self.k2_max
    }

    pub fn alpha_grid(&self) -> &[f64] {
        &self.alpha_grid
    }

    fn k2_values(&self) -> impl Iterator<Item = SpeedThreshold> + '_ {
        (1..=self.k2_max)
            .map(SpeedThreshold::Finite)
            .chain(std::iter::once(SpeedThreshold::Infinite))
    }

    /// All canonical policies in deterministic order. `k1` only matters when
    /// the server can turn off, so the `alpha = 0` slice is enumerated once
    /// with `k1 = 1`.
    pub fn policies(&self) -> Vec<Policy> {
        let mut out = Vec::new();
        for &alpha in &self.alpha_grid {
            let k1_range = if alpha == 0.0 { 1..=1 } else { 1..=self.k1_max };
            for k1 in k1_range {
                for k2 in self.k2_values() {
                    out.push(Policy::new(k1, k2, alpha));
                }
            }
        }
        out
    }
}

/// Structural class of a policy: which speeds it uses and whether the
/// server ever turns off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    /// `k2 = 1, alpha = 0`: only the fast rate, never off.
    FastOnlyAlwaysOn,
    /// `1 < k2 < inf, alpha = 0`: both rates, never off.
    BothSpeedsAlwaysOn,
    /// `k2 = inf, alpha = 0`: only the slow rate, never off.
    SlowOnlyAlwaysOn,
    /// `k2 = inf, alpha > 0`: only the slow rate, turned on and off.
    SlowOnlyOnOff,
    /// Anything else (e.g. both mechanisms combined).
    Other,
}

impl Regime {
    /// The four named regimes in increasing-arrival-rate order.
    pub const EXPECTED_ORDER: [Regime; 4] = [
        Regime::SlowOnlyOnOff,
        Regime::SlowOnlyAlwaysOn,
        Regime::BothSpeedsAlwaysOn,
        Regime::FastOnlyAlwaysOn,
    ];
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Regime::FastOnlyAlwaysOn => "fast_only_always_on",
            Regime::BothSpeedsAlwaysOn => "both_speeds_always_on",
            Regime::SlowOnlyAlwaysOn => "slow_only_always_on",
            Regime::SlowOnlyOnOff => "slow_only_on_off",
            Regime::Other => "other",
        };
        f.write_str(name)
    }
}

/// Classifies a policy (canonicalized first, so the map is total and stable).
pub fn classify(policy: &Policy) -> Regime {
    let policy = policy.canonical();
    match (policy.k2, policy.alpha) {
        (SpeedThreshold::Finite(1), 0.0) => Regime::FastOnlyAlwaysOn,
        (SpeedThreshold::Finite(_), 0.0) => Regime::BothSpeedsAlwaysOn,
        (SpeedThreshold::Infinite, 0.0) => Regime::SlowOnlyAlwaysOn,
        (SpeedThreshold::Infinite, _) => Regime::SlowOnlyOnOff,
        _ => Regime::Other,
    }
}

/// Structural simplicity order used to break cost ties: never-off before
/// on/off, boundary `k2` before interior, then smaller `k1`, `k2`, `alpha`.
fn simpler(a: &Policy, b: &Policy) -> std::cmp::Ordering {
    let rank = |p: &Policy| {
        (
            p.uses_on_off() as u8,
            matches!(p.k2, SpeedThreshold::Finite(k) if k > 1) as u8,
        )
    };
    rank(a)
        .cmp(&rank(b))
        .then(a.k1.cmp(&b.k1))
        .then(a.k2.cmp(&b.k2))
        .then(a.alpha.total_cmp(&b.alpha))
}

/// Evaluates every policy, skipping the ones that are unstable for these
/// parameters. Propagates structural solver failures.
fn evaluate_space(
    params: &SystemParams,
    policies: &[Policy],
    tol: &Tolerances,
) -> Result<Vec<(Policy, PolicyMetrics)>> {
    let results: Vec<Result<Option<(Policy, PolicyMetrics)>>> = policies
        .par_iter()
        .map(|policy| match evaluate_policy(params, policy, tol) {
            Ok(metrics) => Ok(Some((policy.canonical(), metrics))),
            Err(Error::Unstable { .. }) | Err(Error::UnstableInPractice { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut feasible = Vec::with_capacity(results.len());
    for r in results {
        if let Some(pair) = r? {
            feasible.push(pair);
        }
    }
    Ok(feasible)
}

fn pick_best(evaluated: &[(Policy, PolicyMetrics)]) -> Result<(Policy, PolicyMetrics)> {
    let best_cost = evaluated
        .iter()
        .map(|(_, m)| m.cost)
        .min_by(f64::total_cmp)
        .ok_or(Error::EmptyFeasibleSet)?;
    let window = best_cost + best_cost.abs() * TIE_REL;
    evaluated
        .iter()
        .filter(|(_, m)| m.cost <= window)
        .min_by(|(a, _), (b, _)| simpler(a, b))
        .copied()
        .ok_or(Error::EmptyFeasibleSet)
}

/// Minimum-cost policy over an explicit candidate list.
pub fn optimize_over(
    params: &SystemParams,
    policies: &[Policy],
    tol: &Tolerances,
) -> Result<(Policy, PolicyMetrics)> {
    pick_best(&evaluate_space(params, policies, tol)?)
}

/// Minimum-cost policy over the search space. Exhaustive and deterministic;
/// ties go to the structurally simpler policy.
pub fn optimize(
    params: &SystemParams,
    space: &SearchSpace,
    tol: &Tolerances,
) -> Result<(Policy, PolicyMetrics)> {
    optimize_over(params, &space.policies(), tol)
}

/// Threshold sweep configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSearch {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Maximum width of each reported threshold bracket.
    pub resolution: f64,
    /// Number of coarse sweep points before bisection.
    pub coarse_points: usize,
}

impl ThresholdSearch {
    pub fn new(lambda_lo: f64, lambda_hi: f64, resolution: f64) -> ThresholdSearch {
        ThresholdSearch {
            lambda_lo,
            lambda_hi,
            resolution,
            coarse_points: 64,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda_lo > 0.0
            && self.lambda_hi > self.lambda_lo
            && self.resolution > 0.0
            && self.coarse_points >= 2)
        {
            return Err(Error::BadSearchSpace(format!(
                "bad lambda sweep: range ({}, {}), resolution {}, {} coarse points",
                self.lambda_lo, self.lambda_hi, self.resolution, self.coarse_points
            )));
        }
        Ok(())
    }
}

/// A maximal arrival-rate interval over which the optimal regime was
/// constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub regime: Regime,
}

/// A bisected regime-change interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub from: Regime,
    pub to: Regime,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Classified optimal-policy structure over an arrival-rate sweep.
///
/// `lambda1 > lambda2 > lambda3` bracket the regime changes
/// fast-only/both-speeds, both-speeds/slow-only, and slow-only
/// always-on/on-off respectively. Any change that does not fit that
/// progression is reported in `offending` and raises `structure_violation`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub lambda1: Option<(f64, f64)>,
    pub lambda2: Option<(f64, f64)>,
    pub lambda3: Option<(f64, f64)>,
    pub regime_sequence: Vec<Segment>,
    pub brackets: Vec<Bracket>,
    pub preference_flag: bool,
    pub structure_violation: bool,
    pub offending: Vec<Bracket>,
}

fn optimal_regime(
    params: &SystemParams,
    lambda: f64,
    space: &SearchSpace,
    tol: &Tolerances,
) -> Result<Regime> {
    let (policy, _) = optimize(&params.with_lambda(lambda), space, tol)?;
    Ok(classify(&policy))
}

/// Sweeps the arrival rate, classifies the optimal policy at each point, and
/// bisects every regime change down to `search.resolution`.
///
/// Requires the speed-preference condition `p_fast/(c*mu) > p_slow/mu`;
/// without it the fast rate dominates outright and there is no threshold
/// structure to locate.
pub fn find_thresholds(
    params: &SystemParams,
    search: &ThresholdSearch,
    space: &SearchSpace,
    tol: &Tolerances,
) -> Result<ThresholdReport> {
    search.validate()?;
    if !params.preference_flag() {
        return Err(Error::PreferenceViolated {
            fast_energy_per_job: params.p_fast / params.fast_rate(),
            slow_energy_per_job: params.p_slow / params.mu,
        });
    }

    let n = search.coarse_points;
    let grid: Vec<f64> = (0..n)
        .map(|i| {
            search.lambda_lo + (search.lambda_hi - search.lambda_lo) * i as f64 / (n - 1) as f64
        })
        .collect();
    let coarse: Vec<Regime> = grid
        .par_iter()
        .map(|&l| optimal_regime(params, l, space, tol))
        .collect::<Result<Vec<_>>>()?;

    // Bisect every adjacent pair that disagrees. A third regime surfacing at
    // the midpoint splits the interval in two.
    let mut work: Vec<(f64, Regime, f64, Regime)> = grid
        .windows(2)
        .zip(coarse.windows(2))
        .filter(|(_, r)| r[0] != r[1])
        .map(|(l, r)| (l[0], r[0], l[1], r[1]))
        .collect();
    let mut brackets = Vec::new();
    while let Some((mut lo, r_lo, mut hi, mut r_hi)) = work.pop() {
        while hi - lo > search.resolution {
            let mid = 0.5 * (lo + hi);
            let r_mid = optimal_regime(params, mid, space, tol)?;
            if r_mid == r_lo {
                lo = mid;
            } else if r_mid == r_hi {
                hi = mid;
            } else {
                work.push((mid, r_mid, hi, r_hi));
                hi = mid;
                r_hi = r_mid;
            }
        }
        brackets.push(Bracket {
            lo,
            hi,
            from: r_lo,
            to: r_hi,
        });
    }
    brackets.sort_by(|a, b| a.lo.total_cmp(&b.lo));

    // Segments of constant observed regime between consecutive brackets.
    let mut regime_sequence = Vec::new();
    let mut seg_start = search.lambda_lo;
    let mut seg_regime = coarse[0];
    for b in &brackets {
        regime_sequence.push(Segment {
            lambda_lo: seg_start,
            lambda_hi: b.lo,
            regime: seg_regime,
        });
        seg_start = b.hi;
        seg_regime = b.to;
    }
    regime_sequence.push(Segment {
        lambda_lo: seg_start,
        lambda_hi: search.lambda_hi,
        regime: seg_regime,
    });

    // Match change brackets against the expected progression.
    let expected: [(Regime, Regime); 3] = [
        (Regime::SlowOnlyOnOff, Regime::SlowOnlyAlwaysOn),
        (Regime::SlowOnlyAlwaysOn, Regime::BothSpeedsAlwaysOn),
        (Regime::BothSpeedsAlwaysOn, Regime::FastOnlyAlwaysOn),
    ];
    let mut thresholds: [Option<(f64, f64)>; 3] = [None, None, None];
    let mut offending = Vec::new();
    for b in &brackets {
        match expected.iter().position(|&(f, t)| f == b.from && t == b.to) {
            Some(i) if thresholds[i].is_none() => thresholds[i] = Some((b.lo, b.hi)),
            _ => offending.push(*b),
        }
    }
    // The observed regimes must be a contiguous run of the expected order.
    let observed: Vec<Regime> = regime_sequence.iter().map(|s| s.regime).collect();
    let contiguous = Regime::EXPECTED_ORDER
        .windows(observed.len())
        .any(|w| w == observed.as_slice());
    let structure_violation = !offending.is_empty() || !contiguous;

    Ok(ThresholdReport {
        lambda1: thresholds[2],
        lambda2: thresholds[1],
        lambda3: thresholds[0],
        regime_sequence,
        brackets,
        preference_flag: true,
        structure_violation,
        offending,
    })
}

/// One arrival rate of a synergy comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynergyRow {
    pub lambda: f64,
    pub best_policy: Policy,
    pub best_overall_cost: f64,
    /// Best cost with the server never turned off (`alpha = 0`).
    pub best_never_off_cost: f64,
    /// Best cost using a single speed (`k2 = 1` or `k2 = inf`), on/off free.
    pub best_single_speed_onoff_cost: f64,
    /// `(min of the restricted bests - best overall) / restricted best`.
    pub relative_gain: f64,
}

/// Relative cost reduction of combining both mechanisms versus the better
/// single mechanism, over an arrival-rate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SynergyReport {
    pub rows: Vec<SynergyRow>,
    pub max_relative_gain: f64,
    pub smallness_threshold: f64,
}

impl SynergyReport {
    /// True when the largest combined-mechanism gain stays below the
    /// configured smallness threshold.
    pub fn synergy_is_small(&self) -> bool {
        self.max_relative_gain < self.smallness_threshold
    }
}

/// Compares the best combined policy against the best never-off policy and
/// the best single-speed on/off policy at every grid point. All three minima
/// come from one exhaustive evaluation, so `relative_gain` is non-negative
/// by construction.
pub fn synergy_gap(
    params: &SystemParams,
    lambdas: &[f64],
    space: &SearchSpace,
    smallness_threshold: f64,
    tol: &Tolerances,
) -> Result<SynergyReport> {
    if !params.preference_flag() {
        return Err(Error::PreferenceViolated {
            fast_energy_per_job: params.p_fast / params.fast_rate(),
            slow_energy_per_job: params.p_slow / params.mu,
        });
    }
    let policies = space.policies();
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);

    let mut rows = Vec::with_capacity(lambdas.len());
    for lambda in lambdas {
        let evaluated = evaluate_space(&params.with_lambda(lambda), &policies, tol)?;
        let overall = pick_best(&evaluated)?;
        let never_off: Vec<_> = evaluated
            .iter()
            .filter(|(p, _)| p.alpha == 0.0)
            .copied()
            .collect();
        let single_speed: Vec<_> = evaluated
            .iter()
            .filter(|(p, _)| matches!(p.k2, SpeedThreshold::Finite(1) | SpeedThreshold::Infinite))
            .copied()
            .collect();
        let never_off_cost = pick_best(&never_off)?.1.cost;
        let single_speed_cost = pick_best(&single_speed)?.1.cost;
        let restricted = never_off_cost.min(single_speed_cost);
        rows.push(SynergyRow {
            lambda,
            best_policy: overall.0,
            best_overall_cost: overall.1.cost,
            best_never_off_cost: never_off_cost,
            best_single_speed_onoff_cost: single_speed_cost,
            relative_gain: (restricted - overall.1.cost) / restricted,
        });
    }
    let max_relative_gain = rows
        .iter()
        .map(|r| r.relative_gain)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SynergyReport {
        rows,
        max_relative_gain,
        smallness_threshold,
    })
}
