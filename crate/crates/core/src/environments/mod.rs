//! Prompt and score sources: synthetic environments with closed-form
//! conditional means, replay of logged scores, and scheduled drift.
//!
//! Rounds are 1-based. A drift event scheduled for round `r` is visible from
//! round `r` onward; [`Environment::begin_round`] reports which arms became
//! available so the caller can register them with its policy.

mod replay;
mod synthetic;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use replay::{
    validate_replay, ReplayEnv, ReplayLog, ReplayReport, ReplayRow, ReplaySpec, Violation,
};
pub use synthetic::{CategorySpec, SyntheticEnv, SyntheticEnvSpec, SyntheticMode};

/// One revealed prompt together with its oracle information.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDraw {
    pub id: String,
    pub vector: Vec<f64>,
    /// Conditional mean of every available arm.
    pub means: Option<Vec<f64>>,
    /// Argmax of `means`, lowest index on ties.
    pub best_arm: Option<usize>,
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DriftEvent {
    AddArm { name: String },
    AddCategory(CategorySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub round: usize,
    #[serde(flatten)]
    pub event: DriftEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DriftChange {
    ArmAdded { index: usize, name: String },
    CategoryAdded { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Synthetic(SyntheticEnvSpec),
    Replay(ReplaySpec),
}

impl EnvironmentSpec {
    pub fn drift(&self) -> &[DriftEntry] {
        match self {
            EnvironmentSpec::Synthetic(s) => &s.drift,
            EnvironmentSpec::Replay(s) => &s.drift,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Environment {
    Synthetic(SyntheticEnv),
    Replay(ReplayEnv),
}

impl Environment {
    /// Builds an environment; replay specs need the already loaded log.
    pub fn build(spec: &EnvironmentSpec, log: Option<Arc<ReplayLog>>) -> Result<Self> {
        match spec {
            EnvironmentSpec::Synthetic(s) => {
                Ok(Environment::Synthetic(SyntheticEnv::new(s.clone())?))
            }
            EnvironmentSpec::Replay(s) => {
                let log = match log {
                    Some(l) => l,
                    None => Arc::new(ReplayLog::load(&s.path)?),
                };
                Ok(Environment::Replay(ReplayEnv::new(s.clone(), log)?))
            }
        }
    }

    pub fn spec(&self) -> EnvironmentSpec {
        match self {
            Environment::Synthetic(e) => EnvironmentSpec::Synthetic(e.spec().clone()),
            Environment::Replay(e) => EnvironmentSpec::Replay(e.spec().clone()),
        }
    }

    /// Arms available in the current round.
    pub fn num_arms(&self) -> usize {
        match self {
            Environment::Synthetic(e) => e.num_arms(),
            Environment::Replay(e) => e.num_arms(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Environment::Synthetic(e) => e.dim(),
            Environment::Replay(e) => e.dim(),
        }
    }

    pub fn arm_names(&self) -> Vec<String> {
        match self {
            Environment::Synthetic(e) => e.arm_names().to_vec(),
            Environment::Replay(e) => e.arm_names(),
        }
    }

    pub fn category_count(&self) -> usize {
        match self {
            Environment::Synthetic(e) => e.category_count(),
            Environment::Replay(e) => e.category_count(),
        }
    }

    /// Population mean score of each initial arm: closed form or a fixed-seed
    /// Monte Carlo estimate (synthetic), or the full-log average (replay).
    pub fn reference_means(&self) -> Vec<f64> {
        match self {
            Environment::Synthetic(e) => e.reference_means().to_vec(),
            Environment::Replay(e) => e.reference_means().to_vec(),
        }
    }

    /// Initial arm with the highest reference mean.
    pub fn best_single_arm(&self) -> usize {
        argmax_lowest(&self.reference_means())
    }

    /// Applies drift events due by `round`.
    pub fn begin_round(&mut self, round: usize) -> Vec<DriftChange> {
        match self {
            Environment::Synthetic(e) => e.begin_round(round),
            Environment::Replay(e) => e.begin_round(round),
        }
    }

    pub fn next_prompt<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PromptDraw> {
        match self {
            Environment::Synthetic(e) => e.next_prompt(rng),
            Environment::Replay(e) => e.next_prompt(rng),
        }
    }

    pub fn sample_score<R: Rng + ?Sized>(
        &self,
        prompt_id: &str,
        arm: usize,
        rng: &mut R,
    ) -> Result<f64> {
        match self {
            Environment::Synthetic(e) => e.sample_score(prompt_id, arm, rng),
            Environment::Replay(e) => e.sample_score(prompt_id, arm, rng),
        }
    }
}

/// Fresh environment equal to `env`'s construction with `schedule` appended
/// to its drift events.
pub fn apply_drift(env: &Environment, schedule: &[DriftEntry]) -> Result<Environment> {
    match env {
        Environment::Synthetic(e) => {
            let mut spec = e.spec().clone();
            spec.drift.extend_from_slice(schedule);
            Ok(Environment::Synthetic(SyntheticEnv::new(spec)?))
        }
        Environment::Replay(e) => {
            let mut spec = e.spec().clone();
            spec.drift.extend_from_slice(schedule);
            Ok(Environment::Replay(ReplayEnv::new(spec, e.log().clone())?))
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
