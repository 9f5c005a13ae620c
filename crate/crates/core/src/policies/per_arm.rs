use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_arm, ucb_argmax, Policy, PolicyConfig, PolicyKind, Selection};
use crate::error::{check_dim, Result};
use crate::estimator::{
    compute_ucb_rff, ArmDataset, ExactArmModel, RffArmModel, RffSufficientStats, UcbEstimate,
};
use crate::kernels::{KernelSpec, RffWeights};
use crate::linalg::mix_seed;

/// Regression state for one arm (or one arm at one stage).
#[derive(Debug, Clone)]
pub(crate) enum ArmModel {
    Exact(ExactArmModel),
    Rff(RffArmModel),
    /// Keeps raw data and draws fresh frequencies on every estimate.
    RffRedraw {
        data: ArmDataset,
        sigma: f64,
        pairs: usize,
        alpha: f64,
    },
}

impl ArmModel {
    pub(crate) fn len(&self) -> usize {
        match self {
            ArmModel::Exact(m) => m.len(),
            ArmModel::Rff(m) => m.len(),
            ArmModel::RffRedraw { data, .. } => data.len(),
        }
    }

    pub(crate) fn push(&mut self, y: &[f64], score: f64) -> Result<()> {
        match self {
            ArmModel::Exact(m) => m.push(y, score),
            ArmModel::Rff(m) => m.push(y, score),
            ArmModel::RffRedraw { data, .. } => data.push(y.to_vec(), score),
        }
    }

    pub(crate) fn estimate(&self, y: &[f64], rng: &mut ChaCha8Rng) -> Result<UcbEstimate> {
        match self {
            ArmModel::Exact(m) => m.estimate(y),
            ArmModel::Rff(m) => m.estimate(y),
            ArmModel::RffRedraw {
                data,
                sigma,
                pairs,
                alpha,
            } => {
                if data.is_empty() {
                    return Ok(UcbEstimate::cold());
                }
                let weights = RffWeights::sample_with_rng(*sigma, y.len(), *pairs, rng)?;
                let mut stats = RffSufficientStats::new(weights.feature_dim());
                for (p, s) in data.prompts().iter().zip(data.scores()) {
                    stats.update(&weights, p, *s)?;
                }
                compute_ucb_rff(&stats, &weights, *alpha, y)
            }
        }
    }
}

/// Builds arm models of one flavor; RFF frequencies are fixed per arm.
#[derive(Debug, Clone)]
pub(crate) struct ArmModelFactory {
    kernel: KernelSpec,
    alpha: f64,
    dim: usize,
    rff: Option<(usize, bool)>,
    seed: u64,
}

impl ArmModelFactory {
    pub(crate) fn new(config: &PolicyConfig, dim: usize) -> Self {
        Self {
            kernel: config.kernel,
            alpha: config.alpha,
            dim,
            rff: config
                .kind
                .uses_rff()
                .then_some((config.rff_features, config.rff_redraw)),
            seed: config.seed,
        }
    }

    pub(crate) fn weights_for_arm(&self, arm: usize) -> Result<Option<Arc<RffWeights>>> {
        match self.rff {
            Some((pairs, false)) => Ok(Some(Arc::new(RffWeights::sample(
                self.kernel.sigma,
                self.dim,
                pairs,
                mix_seed(self.seed, arm as u64 + 1),
            )?))),
            _ => Ok(None),
        }
    }

    pub(crate) fn model(&self, weights: Option<&Arc<RffWeights>>) -> Result<ArmModel> {
        Ok(match (self.rff, weights) {
            (Some((pairs, true)), _) => ArmModel::RffRedraw {
                data: ArmDataset::new(),
                sigma: self.kernel.sigma,
                pairs,
                alpha: self.alpha,
            },
            (Some(_), Some(w)) => ArmModel::Rff(RffArmModel::new(w.clone(), self.alpha)?),
            _ => ArmModel::Exact(ExactArmModel::new(self.kernel, self.alpha)?),
        })
    }
}

/// PAK-UCB, RFF-UCB and the exploration-free KRR baseline.
///
/// Each arm regresses only on the rounds in which it was chosen; selection
/// is the argmax of `mean + eta·uncertainty` over arms.
#[derive(Debug)]
pub struct PerArmPolicy {
    kind: PolicyKind,
    eta: f64,
    dim: usize,
    factory: ArmModelFactory,
    arms: Vec<ArmModel>,
    rng: ChaCha8Rng,
    rounds: usize,
}

impl PerArmPolicy {
    pub fn new(config: &PolicyConfig, num_arms: usize, dim: usize) -> Result<Self> {
        config.validate()?;
        let factory = ArmModelFactory::new(config, dim);
        let arms = (0..num_arms)
            .map(|g| factory.model(factory.weights_for_arm(g)?.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: config.kind,
            eta: config.resolved_eta(num_arms),
            dim,
            factory,
            arms,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0)),
            rounds: 0,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Observations held by each arm.
    pub fn arm_counts(&self) -> Vec<usize> {
        self.arms.iter().map(ArmModel::len).collect()
    }

    pub fn estimates(&mut self, prompt: &[f64]) -> Result<Vec<UcbEstimate>> {
        check_dim(self.dim, prompt.len())?;
        let rng = &mut self.rng;
        self.arms.iter().map(|m| m.estimate(prompt, rng)).collect()
    }
}

impl Policy for PerArmPolicy {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn num_arms(&self) -> usize {
        self.arms.len()
    }

    fn rounds(&self) -> usize {
        self.rounds
    }

    fn select(&mut self, prompt: &[f64]) -> Result<Selection> {
        let estimates = self.estimates(prompt)?;
        let arm = ucb_argmax(&estimates, self.eta).expect("policy has at least one arm");
        Ok(Selection {
            arm,
            stage: None,
            estimates: estimates.into_iter().map(Some).collect(),
        })
    }

    fn ingest(
        &mut self,
        prompt: &[f64],
        arm: usize,
        score: f64,
        stage: Option<usize>,
    ) -> Result<()> {
        check_arm(arm, self.arms.len())?;
        check_dim(self.dim, prompt.len())?;
        if stage.is_some() {
            return Err(crate::Error::Internal(format!(
                "{} has no stages, got stage {stage:?}",
                self.kind
            )));
        }
        self.arms[arm].push(prompt, score)?;
        self.rounds += 1;
        Ok(())
    }

    fn add_arm(&mut self) -> Result<()> {
        let g = self.arms.len();
        let model = self
            .factory
            .model(self.factory.weights_for_arm(g)?.as_ref())?;
        self.arms.push(model);
        Ok(())
    }

    fn audit(&self) -> Result<()> {
        let total: usize = self.arm_counts().iter().sum();
        if total != self.rounds {
            return Err(crate::Error::Internal(format!(
                "arm datasets hold {total} observations after {} rounds",
                self.rounds
            )));
        }
        Ok(())
    }
}
