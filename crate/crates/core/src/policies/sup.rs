use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::budget::suprff_bonus_terms;
use super::per_arm::{ArmModel, ArmModelFactory};
use super::{check_arm, Policy, PolicyConfig, PolicyKind, Selection};
use crate::error::{check_dim, Error, Result};
use crate::estimator::UcbEstimate;
use crate::linalg::mix_seed;

/// Number of stages `M = ⌈log₂ T⌉`, at least one.
pub(crate) fn stage_count(horizon: usize) -> usize {
    let mut m = 0;
    while (1usize << m) < horizon {
        m += 1;
    }
    m.max(1)
}

struct Candidate {
    arm: usize,
    estimate: UcbEstimate,
    optimistic: f64,
    width: f64,
    elimination_score: f64,
}

/// Staged elimination variants (Sup-PAK-UCB and Sup-RFF-UCB).
///
/// Each arm keeps one regression model per stage. A model at stage `m` only
/// receives rounds that were resolved by the exploration branch at stage
/// `m`, so the scores it regresses on are independent of its own past
/// predictions. Rounds resolved by exploitation enter no index set.
#[derive(Debug)]
pub struct SupPolicy {
    kind: PolicyKind,
    eta: f64,
    alpha: f64,
    horizon: usize,
    num_stages: usize,
    dim: usize,
    factory: ArmModelFactory,
    models: Vec<Vec<ArmModel>>,
    index_sets: Vec<Vec<Vec<usize>>>,
    rff_errors: Option<(f64, f64)>,
    rng: ChaCha8Rng,
    rounds: usize,
    pending: Option<(usize, Option<usize>)>,
}

impl SupPolicy {
    pub fn new(config: &PolicyConfig, num_arms: usize, dim: usize) -> Result<Self> {
        config.validate()?;
        let horizon = config.horizon.unwrap_or(0);
        let mut policy = Self {
            kind: config.kind,
            eta: config.resolved_eta(num_arms),
            alpha: config.alpha,
            horizon,
            num_stages: stage_count(horizon),
            dim,
            factory: ArmModelFactory::new(config, dim),
            models: Vec::new(),
            index_sets: Vec::new(),
            rff_errors: (config.kind == PolicyKind::SupRffUcb)
                .then_some((config.sup_rff_epsilon, config.sup_rff_delta)),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0)),
            rounds: 0,
            pending: None,
        };
        for _ in 0..num_arms {
            policy.add_arm()?;
        }
        Ok(policy)
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Round indices (0-based) recorded for `arm` at `stage` (1-based).
    pub fn index_set(&self, arm: usize, stage: usize) -> &[usize] {
        &self.index_sets[arm][stage - 1]
    }

    fn candidates(
        &mut self,
        prompt: &[f64],
        alive: &[usize],
        stage: usize,
    ) -> Result<Vec<Candidate>> {
        let t = self.rounds + 1;
        let scale = 2.0 * self.eta + self.alpha.sqrt();
        let mut out = Vec::with_capacity(alive.len());
        for &g in alive {
            let estimate = self.models[g][stage - 1].estimate(prompt, &mut self.rng)?;
            let (b1, b2) = match self.rff_errors {
                Some((eps, kerr)) => {
                    let psi = self.index_sets[g][stage - 1].len();
                    suprff_bonus_terms(psi, eps, kerr, self.alpha, t)
                }
                None => (0.0, 0.0),
            };
            let width = if estimate.is_infinite {
                f64::INFINITY
            } else {
                b1 + scale * (estimate.uncertainty + b2)
            };
            out.push(Candidate {
                arm: g,
                estimate,
                optimistic: estimate.index(self.eta),
                width,
                elimination_score: estimate.mean + width,
            });
        }
        Ok(out)
    }

    fn exploit(candidates: &[Candidate]) -> usize {
        let mut best = &candidates[0];
        for c in &candidates[1..] {
            if c.optimistic > best.optimistic {
                best = c;
            }
        }
        best.arm
    }

    fn diagnostics(&self, candidates: &[Candidate]) -> Vec<Option<UcbEstimate>> {
        let mut out = vec![None; self.models.len()];
        for c in candidates {
            out[c.arm] = Some(c.estimate);
        }
        out
    }
}

impl Policy for SupPolicy {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn num_arms(&self) -> usize {
        self.models.len()
    }

    fn rounds(&self) -> usize {
        self.rounds
    }

    fn select(&mut self, prompt: &[f64]) -> Result<Selection> {
        check_dim(self.dim, prompt.len())?;
        let exploit_threshold = 1.0 / (self.horizon as f64).sqrt();
        let confidence_scale = self.eta + self.alpha.sqrt();
        let mut alive: Vec<usize> = (0..self.models.len()).collect();
        let mut stage = 1;
        loop {
            let cands = self.candidates(prompt, &alive, stage)?;
            let resolved = cands.iter().all(|c| {
                !c.estimate.is_infinite
                    && confidence_scale * c.estimate.uncertainty <= exploit_threshold
            });
            let level = 2f64.powi(1 - stage as i32);

            if resolved {
                let arm = Self::exploit(&cands);
                self.pending = Some((arm, None));
                return Ok(Selection {
                    arm,
                    stage: None,
                    estimates: self.diagnostics(&cands),
                });
            }

            if cands.iter().all(|c| c.width <= level) {
                let top = cands
                    .iter()
                    .map(|c| c.elimination_score)
                    .fold(f64::NEG_INFINITY, f64::max);
                let survivors: Vec<&Candidate> = cands
                    .iter()
                    .filter(|c| c.elimination_score >= top - 2.0 * level)
                    .collect();
                alive = survivors.iter().map(|c| c.arm).collect();
                if stage == self.num_stages {
                    // Out of stages: exploit among the survivors.
                    let kept: Vec<Candidate> = cands
                        .into_iter()
                        .filter(|c| alive.contains(&c.arm))
                        .collect();
                    let arm = Self::exploit(&kept);
                    self.pending = Some((arm, None));
                    return Ok(Selection {
                        arm,
                        stage: None,
                        estimates: self.diagnostics(&kept),
                    });
                }
                stage += 1;
                continue;
            }

            // Explore the most uncertain arm above the stage threshold.
            let mut pick: Option<&Candidate> = None;
            for c in cands.iter().filter(|c| c.width > level) {
                if pick.is_none_or(|p| c.width > p.width) {
                    pick = Some(c);
                }
            }
            let arm = pick.expect("some arm exceeds the stage threshold").arm;
            self.pending = Some((arm, Some(stage)));
            return Ok(Selection {
                arm,
                stage: Some(stage),
                estimates: self.diagnostics(&cands),
            });
        }
    }

    fn ingest(
        &mut self,
        prompt: &[f64],
        arm: usize,
        score: f64,
        stage: Option<usize>,
    ) -> Result<()> {
        check_arm(arm, self.models.len())?;
        check_dim(self.dim, prompt.len())?;
        if let Some(expected) = self.pending.take() {
            if expected != (arm, stage) {
                return Err(Error::Internal(format!(
                    "ingest of (arm {arm}, stage {stage:?}) does not match selection {expected:?}"
                )));
            }
        }
        if let Some(m) = stage {
            if m == 0 || m > self.num_stages {
                return Err(Error::Internal(format!(
                    "stage {m} outside 1..={}",
                    self.num_stages
                )));
            }
            self.models[arm][m - 1].push(prompt, score)?;
            self.index_sets[arm][m - 1].push(self.rounds);
        }
        self.rounds += 1;
        Ok(())
    }

    fn add_arm(&mut self) -> Result<()> {
        let g = self.models.len();
        let weights = self.factory.weights_for_arm(g)?;
        let stages = (0..self.num_stages)
            .map(|_| self.factory.model(weights.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        self.models.push(stages);
        self.index_sets.push(vec![Vec::new(); self.num_stages]);
        Ok(())
    }

    fn audit(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (g, sets) in self.index_sets.iter().enumerate() {
            if sets.len() != self.num_stages {
                return Err(Error::Internal(format!(
                    "arm {g} has {} stages, expected {}",
                    sets.len(),
                    self.num_stages
                )));
            }
            for (m, set) in sets.iter().enumerate() {
                if set.len() != self.models[g][m].len() {
                    return Err(Error::Internal(format!(
                        "arm {g} stage {} index set and model disagree",
                        m + 1
                    )));
                }
                for &t in set {
                    if t >= self.rounds || !seen.insert(t) {
                        return Err(Error::Internal(format!(
                            "round {t} recorded in more than one index set"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
