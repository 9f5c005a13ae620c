//! Configuration-driven experiment driver.
//!
//! An experiment runs every configured policy for `trials` independent
//! trials of `horizon` rounds and writes three files to the output
//! directory:
//!
//! - `records.csv`: one row per (policy, trial, round); byte-identical across
//!   reruns of the same configuration.
//! - `aggregates.json`: mean and standard-error curves of regret, OtB and OPR
//!   per policy.
//! - `manifest.json`: resolved hyperparameters, seeds, failures and measured
//!   per-round wall time.
//!
//! Every (policy, trial) pair owns a fresh environment and policy. Prompt and
//! score streams are seeded from `(base_seed, trial)`, so all policies of a
//! trial face the same prompts; policy randomness is seeded from
//! `(base_seed, label, trial)`. Adding, removing or reordering policies
//! therefore leaves every other policy's output unchanged.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::environments::{DriftChange, Environment, EnvironmentSpec, PromptDraw, ReplayLog};
use crate::error::{Error, Result};
use crate::linalg::{mix_seed, stable_hash};
use crate::metrics::{aggregate, aggregate_trials, AggregateCurves, RoundRecord, TrialSummary};
use crate::policies::{build_policy, Policy, PolicyConfig, Selection};

fn default_trials() -> usize {
    20
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// A policy configuration with a unique label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEntry {
    pub label: String,
    #[serde(flatten)]
    pub config: PolicyConfig,
}

// `flatten` would swallow unknown keys, so split off the label by hand and
// let `PolicyConfig` reject the rest.
impl<'de> Deserialize<'de> for PolicyEntry {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::<String, serde_json::Value>::deserialize(de)?;
        let label = match map.remove("label") {
            Some(serde_json::Value::String(s)) => s,
            Some(other) => {
                return Err(D::Error::custom(format!(
                    "label must be a string, got {other}"
                )))
            }
            None => return Err(D::Error::missing_field("label")),
        };
        let config = PolicyConfig::deserialize(serde_json::Value::Object(map))
            .map_err(|e| D::Error::custom(format!("policy {label:?}: {e}")))?;
        Ok(Self { label, config })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Run every policy's bookkeeping audit after each round.
    #[serde(default)]
    pub audit: bool,
    pub environment: EnvironmentSpec,
    pub policies: Vec<PolicyEntry>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML file. Relative replay and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let EnvironmentSpec::Replay(r) = &mut config.environment {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        let mut labels = HashSet::new();
        for p in &self.policies {
            if !labels.insert(p.label.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate policy label {:?}",
                    p.label
                )));
            }
        }
        Ok(())
    }
}

/// Seeds of one (policy, trial) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialSeeds {
    pub prompts: u64,
    pub scores: u64,
    pub policy: u64,
}

impl TrialSeeds {
    pub fn derive(base_seed: u64, label: &str, trial: usize, policy_seed: u64) -> Self {
        let t = trial as u64;
        Self {
            prompts: mix_seed(mix_seed(base_seed, stable_hash(b"prompts")), t),
            scores: mix_seed(mix_seed(base_seed, stable_hash(b"scores")), t),
            policy: mix_seed(
                mix_seed(base_seed ^ stable_hash(label.as_bytes()), t),
                policy_seed,
            ),
        }
    }
}

/// Records and timing of one trial.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub records: Vec<RoundRecord>,
    /// Select + ingest seconds per round.
    pub wall_time: Vec<f64>,
}

/// Runs one trial of `horizon` rounds.
///
/// `observe` sees every round after the score is drawn and before it is
/// ingested.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    env: &mut Environment,
    policy: &mut dyn Policy,
    trial: usize,
    horizon: usize,
    seeds: TrialSeeds,
    audit: bool,
    mut observe: impl FnMut(&PromptDraw, &Selection, &RoundRecord),
) -> Result<TrialRun> {
    let mut prompt_rng = ChaCha8Rng::seed_from_u64(seeds.prompts);
    let mut score_rng = ChaCha8Rng::seed_from_u64(seeds.scores);
    let mut records = Vec::with_capacity(horizon);
    let mut wall_time = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        for change in env.begin_round(t) {
            if let DriftChange::ArmAdded { index, .. } = change {
                policy.add_arm()?;
                if policy.num_arms() != index + 1 {
                    return Err(Error::Internal(format!(
                        "policy has {} arms after drift added arm {index}",
                        policy.num_arms()
                    )));
                }
            }
        }
        let draw = env.next_prompt(&mut prompt_rng)?;
        let start = Instant::now();
        let sel = policy.select(&draw.vector)?;
        let mut elapsed = start.elapsed().as_secs_f64();
        let score = env.sample_score(&draw.id, sel.arm, &mut score_rng)?;
        let chosen_mean = draw.means.as_ref().map(|m| m[sel.arm]);
        let oracle_best_mean = draw.means.as_ref().zip(draw.best_arm).map(|(m, b)| m[b]);
        let record = RoundRecord {
            trial,
            t,
            prompt_id: draw.id.clone(),
            arm: sel.arm,
            score,
            oracle_best_mean,
            chosen_mean,
            best_arm: draw.best_arm,
            category: draw.category.clone(),
        };
        observe(&draw, &sel, &record);
        let start = Instant::now();
        policy.ingest(&draw.vector, sel.arm, score, sel.stage)?;
        elapsed += start.elapsed().as_secs_f64();
        if audit {
            policy.audit()?;
        }
        records.push(record);
        wall_time.push(elapsed);
    }
    Ok(TrialRun { records, wall_time })
}

/// Everything produced for one policy.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub records: Vec<RoundRecord>,
    pub summaries: Vec<TrialSummary>,
    pub aggregate: AggregateCurves,
    pub eta: f64,
    pub seeds: Vec<TrialSeeds>,
    /// Per-round wall time averaged over trials.
    pub mean_round_seconds: Vec<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyOutcome {
    pub label: String,
    pub config: PolicyConfig,
    pub result: std::result::Result<PolicyRun, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub reference_means: Vec<f64>,
    pub best_single_arm: usize,
    pub policies: Vec<PolicyOutcome>,
}

impl ExperimentReport {
    pub fn policy(&self, label: &str) -> Option<&PolicyOutcome> {
        self.policies.iter().find(|p| p.label == label)
    }
}

fn run_policy(
    config: &ExperimentConfig,
    entry: &PolicyEntry,
    log: Option<&Arc<ReplayLog>>,
    reference_means: &[f64],
    oracle_arm: usize,
) -> Result<PolicyRun> {
    let mut policy_config = entry.config.clone();
    if policy_config.horizon.is_none() {
        policy_config.horizon = Some(config.horizon);
    }
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut seeds = Vec::new();
    let mut timings: Vec<Vec<f64>> = Vec::new();
    let mut eta = 0.0;
    let started = Instant::now();
    for trial in 0..config.trials {
        let s = TrialSeeds::derive(config.base_seed, &entry.label, trial, entry.config.seed);
        let mut env = Environment::build(&config.environment, log.cloned())?;
        let mut cfg = policy_config.clone();
        cfg.seed = s.policy;
        eta = cfg.resolved_eta(env.num_arms());
        let mut policy = build_policy(&cfg, env.num_arms(), env.dim(), Some(oracle_arm))?;
        let run = run_trial(
            &mut env,
            policy.as_mut(),
            trial,
            config.horizon,
            s,
            config.audit,
            |_, _, _| {},
        )?;
        summaries.push(TrialSummary::from_records(
            &run.records,
            reference_means,
            run.wall_time.clone(),
        ));
        records.extend(run.records);
        timings.push(run.wall_time);
        seeds.push(s);
    }
    let total_seconds = started.elapsed().as_secs_f64();
    let slices: Vec<&[f64]> = timings.iter().map(Vec::as_slice).collect();
    let mean_round_seconds = aggregate(&slices)?.mean;
    Ok(PolicyRun {
        aggregate: aggregate_trials(&summaries)?,
        records,
        summaries,
        eta,
        seeds,
        mean_round_seconds,
        total_seconds,
    })
}

/// Runs the experiment and writes its result files.
///
/// A failing policy is reported in the manifest and the returned report;
/// the remaining policies still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let log = match &config.environment {
        EnvironmentSpec::Replay(r) => Some(Arc::new(ReplayLog::load(&r.path)?)),
        EnvironmentSpec::Synthetic(_) => None,
    };
    let probe = Environment::build(&config.environment, log.clone())?;
    let reference_means = probe.reference_means();
    let best_single_arm = probe.best_single_arm();

    let policies = config
        .policies
        .iter()
        .map(|entry| PolicyOutcome {
            label: entry.label.clone(),
            config: entry.config.clone(),
            result: run_policy(
                config,
                entry,
                log.as_ref(),
                &reference_means,
                best_single_arm,
            )
            .map_err(|e| e.to_string()),
        })
        .collect();
    let report = ExperimentReport {
        output_dir: config.output_dir.clone(),
        reference_means,
        best_single_arm,
        policies,
    };
    write_outputs(config, &probe, &report)?;
    Ok(report)
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_records(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record([
        "policy",
        "trial",
        "t",
        "prompt_id",
        "arm",
        "score",
        "oracle_best_mean",
        "chosen_mean",
        "best_arm",
        "category",
    ])
    .map_err(csv_err)?;
    for p in &report.policies {
        let Ok(run) = &p.result else { continue };
        for r in &run.records {
            w.write_record([
                p.label.clone(),
                r.trial.to_string(),
                r.t.to_string(),
                r.prompt_id.clone(),
                r.arm.to_string(),
                r.score.to_string(),
                opt(r.oracle_best_mean),
                opt(r.chosen_mean),
                opt(r.best_arm),
                r.category.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_error(path))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_error(path))
}

fn write_outputs(
    config: &ExperimentConfig,
    probe: &Environment,
    report: &ExperimentReport,
) -> Result<()> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    write_records(&dir.join("records.csv"), report)?;

    let aggregates: Vec<_> = report
        .policies
        .iter()
        .map(|p| match &p.result {
            Ok(run) => json!({
                "label": p.label,
                "kind": p.config.kind,
                "final": {
                    "regret": run.aggregate.regret.as_ref().and_then(|c| c.last_mean()),
                    "otb": run.aggregate.otb.as_ref().and_then(|c| c.last_mean()),
                    "opr": run.aggregate.opr.last_mean(),
                },
                "curves": run.aggregate,
            }),
            Err(e) => json!({ "label": p.label, "kind": p.config.kind, "error": e }),
        })
        .collect();
    write_json(
        &dir.join("aggregates.json"),
        &json!({
            "horizon": config.horizon,
            "trials": config.trials,
            "reference_means": report.reference_means,
            "policies": aggregates,
        }),
    )?;

    let policies: Vec<_> = report
        .policies
        .iter()
        .map(|p| {
            let mut resolved = p.config.clone();
            resolved.horizon = resolved.horizon.or(Some(config.horizon));
            match &p.result {
                Ok(run) => json!({
                    "label": p.label,
                    "status": "ok",
                    "config": resolved,
                    "resolved_eta": run.eta,
                    "seeds": run.seeds,
                    "timing": {
                        "total_seconds": run.total_seconds,
                        "mean_round_seconds": run.mean_round_seconds,
                    },
                }),
                Err(e) => json!({
                    "label": p.label,
                    "status": "failed",
                    "error": e,
                    "config": resolved,
                }),
            }
        })
        .collect();
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "horizon": config.horizon,
            "trials": config.trials,
            "base_seed": config.base_seed,
            "environment": {
                "spec": config.environment,
                "arm_names": probe.arm_names(),
                "dim": probe.dim(),
                "reference_means": report.reference_means,
                "best_single_arm": report.best_single_arm,
            },
            "policies": policies,
        }),
    )
}
