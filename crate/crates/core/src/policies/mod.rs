//! Arm-selection policies behind one interface.
//!
//! Every policy alternates strictly between [`Policy::select`] and
//! [`Policy::ingest`]. Per-arm UCB policies keep an independent regression
//! model for each arm; the shared baselines pool all rounds into one model
//! over `[prompt, one_hot(arm)]`.

mod budget;
mod per_arm;
mod shared;
mod simple;
mod sup;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimator::UcbEstimate;
use crate::kernels::KernelSpec;

pub use budget::{
    beta_d, rbf_zeta, suprff_bonus_terms, suprff_error_thresholds, suprff_feature_budget,
    FeatureBudget,
};
pub use per_arm::PerArmPolicy;
pub use shared::SharedPolicy;
pub use simple::{FixedArmPolicy, RandomPolicy};
pub use sup::SupPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    PakUcb,
    RffUcb,
    SupPakUcb,
    SupRffUcb,
    LinUcbShared,
    KernelUcbShared,
    NaiveKrr,
    Random,
    OneArmOracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 9] = [
        PolicyKind::PakUcb,
        PolicyKind::RffUcb,
        PolicyKind::SupPakUcb,
        PolicyKind::SupRffUcb,
        PolicyKind::LinUcbShared,
        PolicyKind::KernelUcbShared,
        PolicyKind::NaiveKrr,
        PolicyKind::Random,
        PolicyKind::OneArmOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::PakUcb => "pak_ucb",
            PolicyKind::RffUcb => "rff_ucb",
            PolicyKind::SupPakUcb => "sup_pak_ucb",
            PolicyKind::SupRffUcb => "sup_rff_ucb",
            PolicyKind::LinUcbShared => "lin_ucb_shared",
            PolicyKind::KernelUcbShared => "kernel_ucb_shared",
            PolicyKind::NaiveKrr => "naive_krr",
            PolicyKind::Random => "random",
            PolicyKind::OneArmOracle => "one_arm_oracle",
        }
    }

    pub fn is_sup(self) -> bool {
        matches!(self, PolicyKind::SupPakUcb | PolicyKind::SupRffUcb)
    }

    pub fn uses_rff(self) -> bool {
        matches!(self, PolicyKind::RffUcb | PolicyKind::SupRffUcb)
    }

    /// Policies that give every cold arm an infinite index.
    pub fn has_cold_start(self) -> bool {
        matches!(
            self,
            PolicyKind::PakUcb
                | PolicyKind::RffUcb
                | PolicyKind::SupPakUcb
                | PolicyKind::SupRffUcb
                | PolicyKind::NaiveKrr
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exploration weight: either a fixed value or `"auto"`, which resolves to
/// `sqrt(2·ln(2G/δ))` for `G` arms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Eta {
    #[default]
    Auto,
    Fixed(f64),
}

impl Eta {
    pub fn resolve(self, num_arms: usize, delta: f64) -> f64 {
        match self {
            Eta::Auto => auto_eta(num_arms, delta),
            Eta::Fixed(v) => v,
        }
    }
}

pub fn auto_eta(num_arms: usize, delta: f64) -> f64 {
    (2.0 * (2.0 * num_arms as f64 / delta).ln()).sqrt()
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EtaRepr {
    Value(f64),
    Name(String),
}

impl Serialize for Eta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Eta::Auto => EtaRepr::Name("auto".into()).serialize(s),
            Eta::Fixed(v) => EtaRepr::Value(*v).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match EtaRepr::deserialize(d)? {
            EtaRepr::Value(v) => Ok(Eta::Fixed(v)),
            EtaRepr::Name(n) if n == "auto" => Ok(Eta::Auto),
            EtaRepr::Name(n) => Err(serde::de::Error::custom(format!(
                "eta must be a number or \"auto\", got {n:?}"
            ))),
        }
    }
}

fn default_kernel() -> KernelSpec {
    KernelSpec::rbf(1.0)
}
fn default_alpha() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.05
}
fn default_rff_features() -> usize {
    200
}
fn default_sup_rff_error() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub eta: Eta,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Number of frequency pairs `D`; the feature vector has length `2D`.
    #[serde(default = "default_rff_features", alias = "rff_D")]
    pub rff_features: usize,
    /// Total rounds `T`; required by the staged variants.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Redraw RFF frequencies on every estimate instead of once per arm.
    #[serde(default)]
    pub rff_redraw: bool,
    /// Pointwise kernel-approximation threshold `ε` used by `sup_rff_ucb` bonuses.
    #[serde(default = "default_sup_rff_error")]
    pub sup_rff_epsilon: f64,
    /// Spectral approximation threshold `Δ` used by `sup_rff_ucb` bonuses.
    #[serde(default = "default_sup_rff_error")]
    pub sup_rff_delta: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            kernel: default_kernel(),
            alpha: default_alpha(),
            eta: Eta::Auto,
            delta: default_delta(),
            rff_features: default_rff_features(),
            horizon: None,
            seed: 0,
            rff_redraw: false,
            sup_rff_epsilon: default_sup_rff_error(),
            sup_rff_delta: default_sup_rff_error(),
        }
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_eta(mut self, eta: Eta) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rff_features(mut self, d: usize) -> Self {
        self.rff_features = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        crate::estimator::check_alpha(self.alpha)?;
        self.kernel.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if let Eta::Fixed(v) = self.eta {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("eta must be >= 0, got {v}")));
            }
        }
        if self.kind.uses_rff() {
            if !self.kernel.is_shift_invariant() {
                return Err(Error::Config(format!(
                    "{} needs a shift-invariant (rbf) kernel",
                    self.kind
                )));
            }
            if self.rff_features == 0 {
                return Err(Error::Config("rff_features must be >= 1".into()));
            }
        }
        if self.kind.is_sup() && self.horizon.unwrap_or(0) == 0 {
            return Err(Error::Config(format!(
                "{} requires horizon >= 1",
                self.kind
            )));
        }
        if self.kind == PolicyKind::SupRffUcb {
            for (name, v) in [
                ("sup_rff_epsilon", self.sup_rff_epsilon),
                ("sup_rff_delta", self.sup_rff_delta),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Exploration weight actually used for `num_arms` arms.
    pub fn resolved_eta(&self, num_arms: usize) -> f64 {
        match self.kind {
            PolicyKind::NaiveKrr | PolicyKind::Random | PolicyKind::OneArmOracle => 0.0,
            _ => self.eta.resolve(num_arms, self.delta),
        }
    }
}

/// Outcome of [`Policy::select`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub arm: usize,
    /// Stage whose index set receives this round (staged variants, exploration branch only).
    pub stage: Option<usize>,
    /// Per-arm estimates that drove the decision; `None` for arms not evaluated.
    pub estimates: Vec<Option<UcbEstimate>>,
}

impl Selection {
    pub fn plain(arm: usize, num_arms: usize) -> Self {
        Self {
            arm,
            stage: None,
            estimates: vec![None; num_arms],
        }
    }
}

pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    fn num_arms(&self) -> usize;

    /// Rounds ingested so far.
    fn rounds(&self) -> usize;

    fn select(&mut self, prompt: &[f64]) -> Result<Selection>;

    /// Records the realized score of `arm` on `prompt`.
    ///
    /// `stage` must be the stage returned by the matching `select` call.
    fn ingest(
        &mut self,
        prompt: &[f64],
        arm: usize,
        score: f64,
        stage: Option<usize>,
    ) -> Result<()>;

    /// Registers a new, cold arm with index `num_arms()`.
    fn add_arm(&mut self) -> Result<()>;

    /// Checks internal bookkeeping invariants.
    fn audit(&self) -> Result<()> {
        Ok(())
    }
}

/// Index maximizing `mean + eta·uncertainty`; cold arms outrank every finite
/// score and ties go to the lowest index.
pub fn ucb_argmax(estimates: &[UcbEstimate], eta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, est) in estimates.iter().enumerate() {
        let v = est.index(eta);
        match best {
            Some((_, b)) if v.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((g, v)),
        }
    }
    best.map(|(g, _)| g)
}

pub(crate) fn check_arm(arm: usize, num_arms: usize) -> Result<()> {
    if arm >= num_arms {
        return Err(Error::InvalidInput(format!(
            "arm {arm} out of range for {num_arms} arms"
        )));
    }
    Ok(())
}

/// Builds a policy for `num_arms` arms over `dim`-dimensional prompts.
///
/// `oracle_arm` is the environment's best single arm and is required by
/// `one_arm_oracle` only.
pub fn build_policy(
    config: &PolicyConfig,
    num_arms: usize,
    dim: usize,
    oracle_arm: Option<usize>,
) -> Result<Box<dyn Policy>> {
    config.validate()?;
    if num_arms == 0 || dim == 0 {
        return Err(Error::InvalidInput(format!(
            "policy needs at least one arm and dimension, got G={num_arms}, d={dim}"
        )));
    }
    Ok(match config.kind {
        PolicyKind::PakUcb | PolicyKind::RffUcb | PolicyKind::NaiveKrr => {
            Box::new(PerArmPolicy::new(config, num_arms, dim)?)
        }
        PolicyKind::SupPakUcb | PolicyKind::SupRffUcb => {
            Box::new(SupPolicy::new(config, num_arms, dim)?)
        }
        PolicyKind::LinUcbShared | PolicyKind::KernelUcbShared => {
            Box::new(SharedPolicy::new(config, num_arms, dim)?)
        }
        PolicyKind::Random => Box::new(RandomPolicy::new(num_arms, config.seed)),
        PolicyKind::OneArmOracle => {
            let arm = oracle_arm.ok_or_else(|| {
                Error::Config("one_arm_oracle needs the environment's best single arm".into())
            })?;
            check_arm(arm, num_arms)?;
            Box::new(FixedArmPolicy::new(arm, num_arms))
        }
    })
}
