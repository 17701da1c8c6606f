//! Experiment configuration: strict JSON in, lossless JSON out.
//!
//! Unknown keys are rejected everywhere. Unbounded values (`k2`, `alpha`,
//! entries of the `alpha_grid`) serialize as the string `"inf"`.

use serde::{Deserialize, Serialize};
use sleepscale::{Policy, SearchSpace, SpeedThreshold, SystemParams, Tolerances};

use crate::AppError;

/// `f64` that reads and writes `"inf"` for infinity.
pub(crate) mod rate_or_inf {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize, serde::Serialize)]
    #[serde(untagged)]
    pub(super) enum NumOrWord {
        Num(f64),
        Word(String),
    }

    pub(super) fn to_f64<E: Error>(v: NumOrWord) -> Result<f64, E> {
        match v {
            NumOrWord::Num(x) => Ok(x),
            NumOrWord::Word(w) if w == "inf" => Ok(f64::INFINITY),
            NumOrWord::Word(w) => Err(E::custom(format!(
                "expected a number or \"inf\", got {w:?}"
            ))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        to_f64(NumOrWord::deserialize(d)?)
    }
}

/// `Vec<f64>` with `"inf"` entries allowed.
pub(crate) mod rates_or_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::rate_or_inf::{to_f64, NumOrWord};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<NumOrWord> = v
            .iter()
            .map(|x| {
                if x.is_infinite() {
                    NumOrWord::Word("inf".into())
                } else {
                    NumOrWord::Num(*x)
                }
            })
            .collect();
        items.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<NumOrWord>::deserialize(d)?
            .into_iter()
            .map(to_f64)
            .collect()
    }
}

/// Speed threshold as a positive integer or `"inf"`.
pub(crate) mod speed_threshold {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};
    use sleepscale::SpeedThreshold;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum IntOrWord {
        Num(u32),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &SpeedThreshold, s: S) -> Result<S::Ok, S::Error> {
        match v {
            SpeedThreshold::Finite(k) => s.serialize_u32(*k),
            SpeedThreshold::Infinite => s.serialize_str("inf"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SpeedThreshold, D::Error> {
        match IntOrWord::deserialize(d)? {
            IntOrWord::Num(k) => Ok(SpeedThreshold::Finite(k)),
            IntOrWord::Word(w) if w == "inf" => Ok(SpeedThreshold::Infinite),
            IntOrWord::Word(w) => Err(D::Error::custom(format!(
                "expected a job count or \"inf\", got {w:?}"
            ))),
        }
    }
}

/// Environment parameters without the arrival rate (that one is a sweep
/// knob). Defaults: `mu = 1`, `c = 2`, `gamma = 0.5`, `p_slow = 1`,
/// `p_fast = c^2 * p_slow`, `p_idle = 0.6`, `p_setup = p_fast`,
/// `beta = 0.5`. The power defaults follow the usual convention that power
/// grows like the square of the processing rate and that setup draws full
/// power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub mu: f64,
    pub c: f64,
    pub gamma: f64,
    pub p_idle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_setup: Option<f64>,
    pub p_slow: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_fast: Option<f64>,
    pub beta: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            mu: 1.0,
            c: 2.0,
            gamma: 0.5,
            p_idle: 0.6,
            p_setup: None,
            p_slow: 1.0,
            p_fast: None,
            beta: 0.5,
        }
    }
}

impl ParamsConfig {
    pub fn resolve(&self, lambda: f64) -> SystemParams {
        let p_fast = self.p_fast.unwrap_or(self.c * self.c * self.p_slow);
        SystemParams {
            lambda,
            mu: self.mu,
            c: self.c,
            gamma: self.gamma,
            p_idle: self.p_idle,
            p_setup: self.p_setup.unwrap_or(p_fast),
            p_slow: self.p_slow,
            p_fast,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub k1: u32,
    #[serde(with = "speed_threshold")]
    pub k2: SpeedThreshold,
    #[serde(with = "rate_or_inf")]
    pub alpha: f64,
}

impl PolicyConfig {
    pub fn to_policy(self) -> Policy {
        Policy::new(self.k1, self.k2, self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub k1_max: u32,
    pub k2_max: u32,
    #[serde(with = "rates_or_inf")]
    pub alpha_grid: Vec<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let d = SearchSpace::default();
        SearchConfig {
            k1_max: d.k1_max(),
            k2_max: d.k2_max(),
            alpha_grid: d.alpha_grid().to_vec(),
        }
    }
}

impl SearchConfig {
    pub fn resolve(&self) -> Result<SearchSpace, AppError> {
        SearchSpace::new(self.k1_max, self.k2_max, &self.alpha_grid).map_err(AppError::Domain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    pub residual: f64,
    pub tail_mass: f64,
    pub oracle_rel: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let t = Tolerances::default();
        ToleranceConfig {
            residual: t.residual,
            tail_mass: t.tail_mass,
            oracle_rel: t.oracle_rel,
        }
    }
}

impl ToleranceConfig {
    pub fn resolve(&self) -> Tolerances {
        Tolerances {
            residual: self.residual,
            tail_mass: self.tail_mass,
            oracle_rel: self.oracle_rel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Completions to simulate.
    pub horizon: u64,
    /// Completions discarded before statistics start; defaults to 5% of the
    /// horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    pub batches: u32,
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon: 2_000_000,
            warmup: None,
            batches: 20,
            seed: 1,
        }
    }
}

impl SimSection {
    pub fn warmup(&self) -> u64 {
        self.warmup.unwrap_or(self.horizon / 20)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaRange {
    pub lo: f64,
    pub hi: f64,
}

fn default_smallness() -> f64 {
    0.05
}

/// One experiment: environment, control (single policy or search space),
/// arrival rate or sweep range, tolerances, and the simulation budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub params: ParamsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_range: Option<LambdaRange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyConfig>,
    pub search: SearchConfig,
    pub tolerances: ToleranceConfig,
    pub sim: SimSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smallness_threshold: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, AppError> {
        serde_json::from_str(text)
            .map_err(|e| AppError::Usage(format!("--config: invalid experiment config: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn smallness_threshold(&self) -> f64 {
        self.smallness_threshold.unwrap_or_else(default_smallness)
    }
}
