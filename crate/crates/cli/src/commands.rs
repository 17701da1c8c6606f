//! The seven subcommand pipelines. Each returns a human summary plus a
//! deterministic artifact (CSV or JSON).

use serde::Serialize;
use sleepscale::{
    classify, closed_form_oracle, cross_validate, evaluate_policy, optimize, simulate,
    solve_stationary, synergy_gap, tail_ratio_off, Policy, PolicyMetrics, Regime, SimBudget,
    SimConfig, SpeedThreshold, SystemParams, ThresholdReport, ThresholdSearch, Tolerances,
};

use crate::config::{rate_or_inf, speed_threshold, ExperimentConfig};
use crate::output::{csv, fmt_exp, fmt_num, json_pretty};
use crate::{AppError, Execution, Format};

const METRIC_HEADER: [&str; 12] = [
    "lambda",
    "k1",
    "k2",
    "alpha",
    "regime",
    "E_N",
    "E_R",
    "E_P",
    "cost",
    "residual",
    "q_max",
    "tail_mass",
];

fn metric_cells(lambda: f64, policy: &Policy, regime: Regime, m: &PolicyMetrics) -> Vec<String> {
    vec![
        fmt_num(lambda),
        policy.k1.to_string(),
        policy.k2.to_string(),
        fmt_num(policy.alpha),
        regime.to_string(),
        fmt_num(m.mean_jobs),
        fmt_num(m.mean_response),
        fmt_num(m.mean_power),
        fmt_num(m.cost),
        fmt_exp(m.diagnostics.residual),
        m.diagnostics.q_max.to_string(),
        fmt_exp(m.diagnostics.tail_mass_bound),
    ]
}

#[derive(Serialize)]
struct MetricRowJson {
    lambda: f64,
    k1: u32,
    #[serde(with = "speed_threshold")]
    k2: SpeedThreshold,
    #[serde(with = "rate_or_inf")]
    alpha: f64,
    regime: String,
    e_n: f64,
    e_r: f64,
    e_p: f64,
    cost: f64,
    residual: f64,
    q_max: u32,
    tail_mass: f64,
}

impl MetricRowJson {
    fn new(lambda: f64, policy: &Policy, regime: Regime, m: &PolicyMetrics) -> MetricRowJson {
        MetricRowJson {
            lambda,
            k1: policy.k1,
            k2: policy.k2,
            alpha: policy.alpha,
            regime: regime.to_string(),
            e_n: m.mean_jobs,
            e_r: m.mean_response,
            e_p: m.mean_power,
            cost: m.cost,
            residual: m.diagnostics.residual,
            q_max: m.diagnostics.q_max,
            tail_mass: m.diagnostics.tail_mass_bound,
        }
    }
}

fn metric_artifact(format: Format, rows: &[(f64, Policy, Regime, PolicyMetrics)]) -> String {
    match format {
        Format::Csv => {
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|(l, p, r, m)| metric_cells(*l, p, *r, m))
                .collect();
            csv(&METRIC_HEADER, &cells)
        }
        Format::Json => {
            let rows: Vec<MetricRowJson> = rows
                .iter()
                .map(|(l, p, r, m)| MetricRowJson::new(*l, p, *r, m))
                .collect();
            json_pretty(&rows)
        }
    }
}

fn summarize_metrics(lambda: f64, policy: &Policy, m: &PolicyMetrics) -> String {
    format!(
        "lambda={} policy={} regime={}: E[R]={:.6} E[P]={:.6} cost={:.6} \
         (q_max={}, residual={:.1e}, tail_mass={:.1e})",
        fmt_num(lambda),
        policy,
        classify(policy),
        m.mean_response,
        m.mean_power,
        m.cost,
        m.diagnostics.q_max,
        m.diagnostics.residual,
        m.diagnostics.tail_mass_bound,
    )
}

pub(crate) fn eval(
    config: &ExperimentConfig,
    lambda: f64,
    policy: Policy,
    format: Format,
) -> Result<Execution, AppError> {
    let params = config.params.resolve(lambda);
    let tol = config.tolerances.resolve();
    let metrics = evaluate_policy(&params, &policy, &tol)?;
    let rows = [(lambda, policy.canonical(), classify(&policy), metrics)];
    Ok(Execution {
        summary: summarize_metrics(lambda, &policy, &metrics),
        artifact: metric_artifact(format, &rows),
        exit_code: 0,
    })
}

pub(crate) fn run_optimize(
    config: &ExperimentConfig,
    lambda: f64,
    format: Format,
) -> Result<Execution, AppError> {
    let params = config.params.resolve(lambda);
    let space = config.search.resolve()?;
    let tol = config.tolerances.resolve();
    let (best, metrics) = optimize(&params, &space, &tol)?;
    let rows = [(lambda, best, classify(&best), metrics)];
    Ok(Execution {
        summary: format!("optimum {}", summarize_metrics(lambda, &best, &metrics)),
        artifact: metric_artifact(format, &rows),
        exit_code: 0,
    })
}

pub(crate) fn lambda_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, AppError> {
    if !(lo > 0.0 && hi > lo && step > 0.0) {
        return Err(AppError::Usage(format!(
            "--lambda-range/--resolution: bad sweep {lo}:{hi} at step {step}"
        )));
    }
    let mut grid = Vec::new();
    let mut i = 0u64;
    loop {
        let l = lo + i as f64 * step;
        if l > hi * (1.0 + 1e-12) {
            break;
        }
        grid.push(l);
        i += 1;
    }
    Ok(grid)
}

pub(crate) fn sweep(
    config: &ExperimentConfig,
    range: (f64, f64),
    step: f64,
    format: Format,
) -> Result<Execution, AppError> {
    let space = config.search.resolve()?;
    let tol = config.tolerances.resolve();
    let grid = lambda_grid(range.0, range.1, step)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let params = config.params.resolve(lambda);
        let (best, metrics) = optimize(&params, &space, &tol)?;
        rows.push((lambda, best, classify(&best), metrics));
    }
    Ok(Execution {
        summary: format!(
            "sweep: {} optima over lambda in [{}, {}] (step {})",
            rows.len(),
            fmt_num(range.0),
            fmt_num(range.1),
            fmt_num(step)
        ),
        artifact: metric_artifact(format, &rows),
        exit_code: 0,
    })
}

#[derive(Serialize)]
struct SegmentJson {
    lambda_lo: f64,
    lambda_hi: f64,
    regime: String,
}

#[derive(Serialize)]
struct BracketJson {
    lo: f64,
    hi: f64,
    from: String,
    to: String,
}

#[derive(Serialize)]
struct ThresholdReportJson {
    preference_flag: bool,
    structure_violation: bool,
    lambda1: Option<(f64, f64)>,
    lambda2: Option<(f64, f64)>,
    lambda3: Option<(f64, f64)>,
    regime_sequence: Vec<SegmentJson>,
    offending: Vec<BracketJson>,
}

fn threshold_artifact(format: Format, report: &ThresholdReport) -> String {
    match format {
        Format::Csv => {
            let header = [
                "kind",
                "name",
                "lambda_lo",
                "lambda_hi",
                "regime_from",
                "regime_to",
            ];
            let mut rows = Vec::new();
            for s in &report.regime_sequence {
                rows.push(vec![
                    "segment".to_string(),
                    String::new(),
                    fmt_num(s.lambda_lo),
                    fmt_num(s.lambda_hi),
                    s.regime.to_string(),
                    s.regime.to_string(),
                ]);
            }
            let named = [
                (
                    "lambda3",
                    report.lambda3,
                    Regime::SlowOnlyOnOff,
                    Regime::SlowOnlyAlwaysOn,
                ),
                (
                    "lambda2",
                    report.lambda2,
                    Regime::SlowOnlyAlwaysOn,
                    Regime::BothSpeedsAlwaysOn,
                ),
                (
                    "lambda1",
                    report.lambda1,
                    Regime::BothSpeedsAlwaysOn,
                    Regime::FastOnlyAlwaysOn,
                ),
            ];
            for (name, bracket, from, to) in named {
                if let Some((lo, hi)) = bracket {
                    rows.push(vec![
                        "threshold".to_string(),
                        name.to_string(),
                        fmt_num(lo),
                        fmt_num(hi),
                        from.to_string(),
                        to.to_string(),
                    ]);
                }
            }
            for b in &report.offending {
                rows.push(vec![
                    "violation".to_string(),
                    String::new(),
                    fmt_num(b.lo),
                    fmt_num(b.hi),
                    b.from.to_string(),
                    b.to.to_string(),
                ]);
            }
            csv(&header, &rows)
        }
        Format::Json => json_pretty(&ThresholdReportJson {
            preference_flag: report.preference_flag,
            structure_violation: report.structure_violation,
            lambda1: report.lambda1,
            lambda2: report.lambda2,
            lambda3: report.lambda3,
            regime_sequence: report
                .regime_sequence
                .iter()
                .map(|s| SegmentJson {
                    lambda_lo: s.lambda_lo,
                    lambda_hi: s.lambda_hi,
                    regime: s.regime.to_string(),
                })
                .collect(),
            offending: report
                .offending
                .iter()
                .map(|b| BracketJson {
                    lo: b.lo,
                    hi: b.hi,
                    from: b.from.to_string(),
                    to: b.to.to_string(),
                })
                .collect(),
        }),
    }
}

pub(crate) fn thresholds(
    config: &ExperimentConfig,
    range: (f64, f64),
    resolution: f64,
    format: Format,
) -> Result<Execution, AppError> {
    let params = config.params.resolve(range.0);
    let space = config.search.resolve()?;
    let tol = config.tolerances.resolve();
    let search = ThresholdSearch::new(range.0, range.1, resolution);
    let report = sleepscale::find_thresholds(&params, &search, &space, &tol)?;

    let sequence: Vec<String> = report
        .regime_sequence
        .iter()
        .map(|s| s.regime.to_string())
        .collect();
    let fmt_bracket = |b: Option<(f64, f64)>| match b {
        Some((lo, hi)) => format!("[{}, {}]", fmt_num(lo), fmt_num(hi)),
        None => "absent".to_string(),
    };
    let summary = format!(
        "thresholds over [{}, {}] at resolution {}: sequence {}; lambda3 {}, lambda2 {}, lambda1 {}; structure_violation={}",
        fmt_num(range.0),
        fmt_num(range.1),
        fmt_num(resolution),
        sequence.join(" -> "),
        fmt_bracket(report.lambda3),
        fmt_bracket(report.lambda2),
        fmt_bracket(report.lambda1),
        report.structure_violation,
    );
    Ok(Execution {
        summary,
        artifact: threshold_artifact(format, &report),
        exit_code: 0,
    })
}

#[derive(Serialize)]
struct SynergyRowJson {
    lambda: f64,
    best_k1: u32,
    #[serde(with = "speed_threshold")]
    best_k2: SpeedThreshold,
    #[serde(with = "rate_or_inf")]
    best_alpha: f64,
    best_cost: f64,
    never_off_cost: f64,
    single_speed_onoff_cost: f64,
    relative_gain: f64,
}

#[derive(Serialize)]
struct SynergyReportJson {
    max_relative_gain: f64,
    smallness_threshold: f64,
    synergy_is_small: bool,
    rows: Vec<SynergyRowJson>,
}

pub(crate) fn synergy(
    config: &ExperimentConfig,
    range: (f64, f64),
    step: f64,
    smallness: f64,
    format: Format,
) -> Result<Execution, AppError> {
    let params = config.params.resolve(range.0);
    let space = config.search.resolve()?;
    let tol = config.tolerances.resolve();
    let grid = lambda_grid(range.0, range.1, step)?;
    let report = synergy_gap(&params, &grid, &space, smallness, &tol)?;

    let artifact = match format {
        Format::Csv => {
            let header = [
                "lambda",
                "best_k1",
                "best_k2",
                "best_alpha",
                "best_cost",
                "never_off_cost",
                "single_speed_onoff_cost",
                "relative_gain",
            ];
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        fmt_num(r.lambda),
                        r.best_policy.k1.to_string(),
                        r.best_policy.k2.to_string(),
                        fmt_num(r.best_policy.alpha),
                        fmt_num(r.best_overall_cost),
                        fmt_num(r.best_never_off_cost),
                        fmt_num(r.best_single_speed_onoff_cost),
                        fmt_num(r.relative_gain),
                    ]
                })
                .collect();
            csv(&header, &rows)
        }
        Format::Json => json_pretty(&SynergyReportJson {
            max_relative_gain: report.max_relative_gain,
            smallness_threshold: report.smallness_threshold,
            synergy_is_small: report.synergy_is_small(),
            rows: report
                .rows
                .iter()
                .map(|r| SynergyRowJson {
                    lambda: r.lambda,
                    best_k1: r.best_policy.k1,
                    best_k2: r.best_policy.k2,
                    best_alpha: r.best_policy.alpha,
                    best_cost: r.best_overall_cost,
                    never_off_cost: r.best_never_off_cost,
                    single_speed_onoff_cost: r.best_single_speed_onoff_cost,
                    relative_gain: r.relative_gain,
                })
                .collect(),
        }),
    };
    Ok(Execution {
        summary: format!(
            "synergy over {} rates: max relative gain {:.6} vs threshold {}: combining mechanisms {}",
            report.rows.len(),
            report.max_relative_gain,
            fmt_num(smallness),
            if report.synergy_is_small() {
                "does not pay"
            } else {
                "pays more than the threshold"
            }
        ),
        artifact,
        exit_code: 0,
    })
}

#[derive(Serialize)]
struct SimRowJson {
    lambda: f64,
    k1: u32,
    #[serde(with = "speed_threshold")]
    k2: SpeedThreshold,
    #[serde(with = "rate_or_inf")]
    alpha: f64,
    completions: u64,
    batches: u32,
    e_r_est: f64,
    e_r_ci95: f64,
    e_p_est: f64,
    e_p_ci95: f64,
    frac_off: f64,
    frac_switching: f64,
    frac_idle: f64,
    frac_slow: f64,
    frac_fast: f64,
}

pub(crate) fn run_simulate(
    config: &ExperimentConfig,
    lambda: f64,
    policy: Policy,
    seed: u64,
    format: Format,
) -> Result<Execution, AppError> {
    let params = config.params.resolve(lambda);
    let sim_config = SimConfig {
        params,
        policy,
        horizon: config.sim.horizon,
        warmup: config.sim.warmup(),
        seed,
        batches: config.sim.batches,
        max_queue: 1_000_000,
    };
    let m = simulate(&sim_config)?;
    let artifact = match format {
        Format::Csv => {
            let header = [
                "lambda",
                "k1",
                "k2",
                "alpha",
                "completions",
                "batches",
                "E_R_est",
                "E_R_ci95",
                "E_P_est",
                "E_P_ci95",
                "frac_off",
                "frac_switching",
                "frac_idle",
                "frac_slow",
                "frac_fast",
            ];
            let f = m.phase_time_fractions;
            let row = vec![
                fmt_num(lambda),
                policy.k1.to_string(),
                policy.k2.to_string(),
                fmt_num(policy.alpha),
                m.completions.to_string(),
                m.batches.to_string(),
                fmt_num(m.mean_response),
                fmt_num(m.response_ci95),
                fmt_num(m.mean_power),
                fmt_num(m.power_ci95),
                fmt_num(f.off),
                fmt_num(f.switching),
                fmt_num(f.idle),
                fmt_num(f.slow),
                fmt_num(f.fast),
            ];
            csv(&header, &[row])
        }
        Format::Json => json_pretty(&SimRowJson {
            lambda,
            k1: policy.k1,
            k2: policy.k2,
            alpha: policy.alpha,
            completions: m.completions,
            batches: m.batches,
            e_r_est: m.mean_response,
            e_r_ci95: m.response_ci95,
            e_p_est: m.mean_power,
            e_p_ci95: m.power_ci95,
            frac_off: m.phase_time_fractions.off,
            frac_switching: m.phase_time_fractions.switching,
            frac_idle: m.phase_time_fractions.idle,
            frac_slow: m.phase_time_fractions.slow,
            frac_fast: m.phase_time_fractions.fast,
        }),
    };
    Ok(Execution {
        summary: format!(
            "simulated {} completions (seed {}): E[R]={:.6}±{:.6}, E[P]={:.6}±{:.6} (95% CIs)",
            m.completions, seed, m.mean_response, m.response_ci95, m.mean_power, m.power_ci95
        ),
        artifact,
        exit_code: 0,
    })
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
}

fn oracle_check(
    name: &'static str,
    params: &SystemParams,
    policy: &Policy,
    tol: &Tolerances,
) -> Check {
    let exact = closed_form_oracle(params, policy).expect("canned case has a closed form");
    match evaluate_policy(params, policy, tol) {
        Ok(m) => {
            let err = rel_err(m.mean_response, exact.mean_response)
                .max(rel_err(m.mean_power, exact.mean_power));
            Check {
                name,
                passed: err <= tol.oracle_rel,
                detail: format!(
                    "E[R]={:.9} vs exact {:.9}, worst relative error {:.2e}",
                    m.mean_response, exact.mean_response, err
                ),
            }
        }
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("solve failed: {e}"),
        },
    }
}

fn balance_check(params: &SystemParams, policy: &Policy, tol: &Tolerances) -> Check {
    let name = "balance_invariants";
    let dist = match solve_stationary(params, policy, tol) {
        Ok(d) => d,
        Err(e) => {
            return Check {
                name,
                passed: false,
                detail: format!("solve failed: {e}"),
            }
        }
    };
    let mut worst: Vec<(String, f64)> = Vec::new();
    worst.push(("residual".into(), dist.residual() / tol.residual));
    worst.push(("total_mass".into(), (dist.total_mass() - 1.0).abs() / 1e-10));

    let policy = policy.canonical();
    let top = params.top_rate(&policy);
    let mut throughput = dist.tail_mass_on() * top;
    let mut switching_mass = dist.tail_mass_off();
    for (s, p) in dist.iter() {
        if s.on && s.q >= 1 {
            throughput += sleepscale::service_rate(params, &policy, s.q) * p;
        }
        if !s.on && s.q >= policy.k1 {
            switching_mass += p;
        }
    }
    worst.push((
        "throughput_balance".into(),
        rel_err(throughput, params.lambda) / 1e-8,
    ));
    if policy.alpha > 0.0 && policy.alpha.is_finite() {
        let turn_on = params.gamma * switching_mass;
        let turn_off = policy.alpha * dist.prob(true, 0);
        worst.push(("cut_balance".into(), rel_err(turn_on, turn_off) / 1e-8));
    }
    if policy.alpha > 0.0 {
        let expect = tail_ratio_off(params);
        let mut worst_ratio = 0.0f64;
        for q in policy.k1..dist.q_max() - 1 {
            let ratio = dist.prob(false, q + 1) / dist.prob(false, q);
            worst_ratio = worst_ratio.max(rel_err(ratio, expect));
        }
        worst.push(("off_tail_ratio".into(), worst_ratio / 1e-8));
    }
    let (what, ratio) = worst
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty")
        .clone();
    Check {
        name,
        passed: ratio <= 1.0,
        detail: format!("worst margin: {what} at {:.3} of its tolerance", ratio),
    }
}

fn cross_validate_check(
    name: &'static str,
    params: &SystemParams,
    policy: &Policy,
    tol: &Tolerances,
    budget: &SimBudget,
) -> Check {
    match cross_validate(params, policy, tol, budget) {
        Ok(cv) => Check {
            name,
            passed: cv.pass,
            detail: format!(
                "analytic E[R]={:.6} in [{:.6}, {:.6}]? {}; E[P]={:.6} in [{:.6}, {:.6}]? {}",
                cv.analytic.mean_response,
                cv.response_interval.0,
                cv.response_interval.1,
                cv.response_ok,
                cv.analytic.mean_power,
                cv.power_interval.0,
                cv.power_interval.1,
                cv.power_ok
            ),
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("failed to run: {e}"),
        },
    }
}

/// The built-in validation suite: closed-form oracle agreement, balance
/// invariants of a solved instance, and simulator cross-validation on three
/// canned cases.
pub(crate) fn validate(config: &ExperimentConfig, format: Format) -> Result<Execution, AppError> {
    let tol = config.tolerances.resolve();
    let p = &config.params;
    let mu = p.mu;
    let budget = SimBudget {
        horizon: config.sim.horizon,
        warmup: config.sim.warmup(),
        batches: config.sim.batches,
        seed: config.sim.seed,
    };

    let mm1_slow = Policy::always_on(SpeedThreshold::Infinite);
    let mm1_fast = Policy::always_on(SpeedThreshold::Finite(1));
    let setup = Policy::new(1, SpeedThreshold::Infinite, f64::INFINITY);
    let combined = config
        .policy
        .map(|pc| pc.to_policy())
        .unwrap_or_else(|| Policy::new(2, SpeedThreshold::Finite(3), 1.0));
    let combined_lambda = config.lambda.unwrap_or(0.6 * mu);

    let checks = vec![
        oracle_check("oracle_mm1_slow", &p.resolve(0.5 * mu), &mm1_slow, &tol),
        oracle_check(
            "oracle_mm1_fast",
            &p.resolve(0.75 * p.c * mu),
            &mm1_fast,
            &tol,
        ),
        oracle_check("oracle_setup", &p.resolve(0.4 * mu), &setup, &tol),
        balance_check(&p.resolve(combined_lambda), &combined, &tol),
        cross_validate_check(
            "cross_validate_mm1",
            &p.resolve(0.5 * mu),
            &mm1_slow,
            &tol,
            &budget,
        ),
        cross_validate_check(
            "cross_validate_setup",
            &p.resolve(0.4 * mu),
            &setup,
            &tol,
            &budget,
        ),
        cross_validate_check(
            "cross_validate_combined",
            &p.resolve(combined_lambda),
            &combined,
            &tol,
            &budget,
        ),
    ];

    let failed = checks.iter().filter(|c| !c.passed).count();
    let artifact = match format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = checks
                .iter()
                .map(|c| {
                    vec![
                        c.name.to_string(),
                        if c.passed { "ok" } else { "fail" }.to_string(),
                        c.detail.replace(',', ";"),
                    ]
                })
                .collect();
            csv(&["check", "status", "detail"], &rows)
        }
        Format::Json => {
            #[derive(Serialize)]
            struct CheckJson {
                check: String,
                status: String,
                detail: String,
            }
            json_pretty(
                &checks
                    .iter()
                    .map(|c| CheckJson {
                        check: c.name.to_string(),
                        status: if c.passed { "ok" } else { "fail" }.to_string(),
                        detail: c.detail.clone(),
                    })
                    .collect::<Vec<_>>(),
            )
        }
    };
    let mut summary = String::new();
    for c in &checks {
        summary.push_str(&format!(
            "{} {}: {}\n",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    summary.push_str(&format!(
        "validation: {}/{} checks passed",
        checks.len() - failed,
        checks.len()
    ));
    Ok(Execution {
        summary,
        artifact,
        exit_code: if failed == 0 { 0 } else { 1 },
    })
}
