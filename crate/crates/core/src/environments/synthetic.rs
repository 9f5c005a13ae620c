use std::collections::HashMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, DriftChange, DriftEntry, DriftEvent, PromptDraw};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{mix_seed, normalize, random_unit_vector, stable_hash};

/// Prompts drawn when estimating population means in realizable mode.
const REFERENCE_DRAWS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    /// `s_g(y) = Σ_c w_gc·k(center_c, y)`, with `w_g` interpolating the mean
    /// table at the category centers.
    Realizable,
    /// `s_g(y)` is the table entry of the prompt's category.
    CategoryExpert,
}

fn default_weight() -> f64 {
    1.0
}

/// One prompt cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    /// Cluster center; normalized on load. Drawn from the environment seed
    /// and the category name when omitted.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// Relative sampling mass.
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Mean score of every arm on this category, in order of introduction
    /// (initial arms first, then arms added by drift). Unused by replay logs.
    #[serde(default)]
    pub means: Vec<f64>,
}

fn default_spread() -> f64 {
    0.1
}

fn default_noise() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn default_kernel() -> KernelSpec {
    KernelSpec::rbf(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEnvSpec {
    pub mode: SyntheticMode,
    pub dim: usize,
    /// Initial arm names.
    pub arms: Vec<String>,
    pub categories: Vec<CategorySpec>,
    /// Kernel of the mean functions (realizable mode).
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    /// Per-coordinate standard deviation of the perturbation around a center.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_true")]
    pub score_clip: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub drift: Vec<DriftEntry>,
}

impl SyntheticEnvSpec {
    /// Category-expert environment with arms `arm0, arm1, …` and the given
    /// `(name, per-arm means)` categories.
    pub fn category_expert(dim: usize, num_arms: usize, categories: &[(&str, Vec<f64>)]) -> Self {
        Self {
            mode: SyntheticMode::CategoryExpert,
            dim,
            arms: (0..num_arms).map(|g| format!("arm{g}")).collect(),
            categories: categories
                .iter()
                .map(|(name, means)| CategorySpec {
                    name: name.to_string(),
                    center: None,
                    weight: 1.0,
                    means: means.clone(),
                })
                .collect(),
            kernel: default_kernel(),
            spread: default_spread(),
            noise_std: default_noise(),
            score_clip: true,
            seed: 0,
            drift: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
struct Category {
    name: String,
    center: Vec<f64>,
    weight: f64,
    means: Vec<f64>,
    active: bool,
}

/// Synthetic prompt/score source with closed-form conditional means.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    spec: SyntheticEnvSpec,
    categories: Vec<Category>,
    arm_names: Vec<String>,
    num_active_arms: usize,
    /// Realizable mode: `coefficients[g][c]` multiplies `k(center_c, ·)`.
    coefficients: Vec<Vec<f64>>,
    schedule: Vec<DriftEntry>,
    applied: usize,
    issued: HashMap<String, Vec<f64>>,
    counter: u64,
    reference: Vec<f64>,
}

impl SyntheticEnv {
    pub fn new(spec: SyntheticEnvSpec) -> Result<Self> {
        let schedule = spec.drift.clone();
        let mut env = Self {
            categories: Vec::new(),
            arm_names: Vec::new(),
            num_active_arms: 0,
            coefficients: Vec::new(),
            schedule: Vec::new(),
            applied: 0,
            issued: HashMap::new(),
            counter: 0,
            reference: Vec::new(),
            spec,
        };
        env.validate_spec()?;
        env.arm_names = env.spec.arms.clone();
        env.num_active_arms = env.arm_names.len();
        for c in env.spec.categories.clone() {
            let cat = env.make_category(c, true)?;
            env.categories.push(cat);
        }
        env.install_schedule(schedule)?;
        Ok(env)
    }

    fn validate_spec(&self) -> Result<()> {
        let s = &self.spec;
        if s.dim == 0 {
            return Err(Error::Config("synthetic environment needs dim >= 1".into()));
        }
        if s.arms.is_empty() || s.categories.is_empty() {
            return Err(Error::Config(
                "synthetic environment needs at least one arm and one category".into(),
            ));
        }
        for (i, name) in s.arms.iter().enumerate() {
            if s.arms[..i].contains(name) {
                return Err(Error::InvalidInput(format!("duplicate arm name {name:?}")));
            }
        }
        if !(s.noise_std.is_finite() && s.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "noise_std must be >= 0, got {}",
                s.noise_std
            )));
        }
        if !(s.spread.is_finite() && s.spread >= 0.0) {
            return Err(Error::Config(format!(
                "spread must be >= 0, got {}",
                s.spread
            )));
        }
        s.kernel.validate()
    }

    fn make_category(&self, spec: CategorySpec, active: bool) -> Result<Category> {
        let center = match spec.center {
            Some(mut c) => {
                if c.len() != self.spec.dim || !normalize(&mut c) {
                    return Err(Error::Config(format!(
                        "category {}: center must be a nonzero vector of length {}",
                        spec.name, self.spec.dim
                    )));
                }
                c
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    self.spec.seed,
                    stable_hash(spec.name.as_bytes()),
                ));
                random_unit_vector(self.spec.dim, &mut rng)
            }
        };
        if !(spec.weight.is_finite() && spec.weight > 0.0) {
            return Err(Error::Config(format!(
                "category {}: weight must be > 0",
                spec.name
            )));
        }
        if let Some(m) = spec.means.iter().find(|m| !(-1.0..=1.0).contains(*m)) {
            return Err(Error::Config(format!(
                "category {}: mean {m} lies outside [-1, 1]",
                spec.name
            )));
        }
        if self.categories.iter().any(|c| c.name == spec.name) {
            return Err(Error::InvalidInput(format!(
                "duplicate category name {:?}",
                spec.name
            )));
        }
        Ok(Category {
            name: spec.name,
            center,
            weight: spec.weight,
            means: spec.means,
            active,
        })
    }

    /// Validates the drift schedule and fixes the full arm/category table.
    fn install_schedule(&mut self, mut schedule: Vec<DriftEntry>) -> Result<()> {
        schedule.sort_by_key(|e| e.round);
        let mut names = self.arm_names.clone();
        for entry in &schedule {
            if entry.round == 0 {
                return Err(Error::Config("drift rounds are 1-based".into()));
            }
            match &entry.event {
                DriftEvent::AddArm { name } => {
                    if names.contains(name) {
                        return Err(Error::InvalidInput(format!("duplicate arm name {name:?}")));
                    }
                    names.push(name.clone());
                }
                DriftEvent::AddCategory(spec) => {
                    let cat = self.make_category(spec.clone(), false)?;
                    self.categories.push(cat);
                }
            }
        }
        for c in &self.categories {
            if c.means.len() != names.len() {
                return Err(Error::Config(format!(
                    "category {} lists {} means for {} arms",
                    c.name,
                    c.means.len(),
                    names.len()
                )));
            }
        }
        self.arm_names = names;
        self.schedule = schedule;
        self.applied = 0;
        if self.spec.mode == SyntheticMode::Realizable {
            self.fit_coefficients()?;
        }
        self.reference = self.compute_reference();
        Ok(())
    }

    /// Solves `K·w_g = table[:, g]` over the category centers and checks the
    /// norm bound `‖w_g‖_H·sup√k(y,y) ≤ 1`, which keeps every mean in [-1, 1].
    fn fit_coefficients(&mut self) -> Result<()> {
        let centers: Vec<Vec<f64>> = self.categories.iter().map(|c| c.center.clone()).collect();
        let gram = self.spec.kernel.gram_matrix(&centers)?;
        let chol = gram.clone().cholesky().ok_or_else(|| {
            Error::Config(
                "category centers give a singular kernel matrix; use distinct centers".into(),
            )
        })?;
        let bound = self.spec.kernel.unit_diagonal().sqrt();
        self.coefficients.clear();
        for g in 0..self.arm_names.len() {
            let targets =
                DVector::from_iterator(centers.len(), self.categories.iter().map(|c| c.means[g]));
            let w = chol.solve(&targets);
            let norm = w.dot(&(&gram * &w)).max(0.0).sqrt();
            if norm * bound > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "arm {}: mean function has RKHS norm {norm:.4} (times {bound:.4}) above 1; \
                     shrink the mean table or spread the centers",
                    self.arm_names[g]
                )));
            }
            self.coefficients.push(w.iter().copied().collect());
        }
        Ok(())
    }

    fn compute_reference(&self) -> Vec<f64> {
        let n = self.num_active_arms;
        match self.spec.mode {
            SyntheticMode::CategoryExpert => {
                let active: Vec<&Category> = self.categories.iter().filter(|c| c.active).collect();
                let total: f64 = active.iter().map(|c| c.weight).sum();
                (0..n)
                    .map(|g| active.iter().map(|c| c.weight * c.means[g]).sum::<f64>() / total)
                    .collect()
            }
            SyntheticMode::Realizable => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(self.spec.seed, stable_hash(b"reference")));
                let mut sums = vec![0.0; n];
                for _ in 0..REFERENCE_DRAWS {
                    let (_, y) = self.draw_vector(&mut rng);
                    for (g, s) in sums.iter_mut().enumerate() {
                        *s += self.mean_at(g, &y, 0);
                    }
                }
                sums.into_iter()
                    .map(|s| s / REFERENCE_DRAWS as f64)
                    .collect()
            }
        }
    }

    pub fn spec(&self) -> &SyntheticEnvSpec {
        &self.spec
    }

    pub fn num_arms(&self) -> usize {
        self.num_active_arms
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn arm_names(&self) -> &[String] {
        &self.arm_names[..self.num_active_arms]
    }

    pub fn category_count(&self) -> usize {
        self.categories.iter().filter(|c| c.active).count()
    }

    pub fn category_center(&self, name: &str) -> Option<&[f64]> {
        self.categories
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.center.as_slice())
    }

    /// Realizable mode: coefficient of arm `g` on each category center.
    pub fn coefficients(&self, arm: usize) -> Option<&[f64]> {
        self.coefficients.get(arm).map(Vec::as_slice)
    }

    pub fn reference_means(&self) -> &[f64] {
        &self.reference
    }

    /// Conditional mean `s_g(y)` of arm `g` at `y`, which belongs to category `cat`.
    pub fn mean_at(&self, arm: usize, y: &[f64], cat: usize) -> f64 {
        match self.spec.mode {
            SyntheticMode::CategoryExpert => self.categories[cat].means[arm],
            SyntheticMode::Realizable => self
                .categories
                .iter()
                .zip(&self.coefficients[arm])
                .map(|(c, w)| w * self.spec.kernel.eval_unchecked(&c.center, y))
                .sum(),
        }
    }

    fn draw_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let total: f64 = self
            .categories
            .iter()
            .filter(|c| c.active)
            .map(|c| c.weight)
            .sum();
        let mut u = rng.random::<f64>() * total;
        let mut cat = 0;
        for (i, c) in self.categories.iter().enumerate().filter(|(_, c)| c.active) {
            cat = i;
            if u < c.weight {
                break;
            }
            u -= c.weight;
        }
        let center = &self.categories[cat].center;
        loop {
            let mut y: Vec<f64> = center
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(rng);
                    x + self.spec.spread * z
                })
                .collect();
            if normalize(&mut y) {
                return (cat, y);
            }
        }
    }

    pub fn begin_round(&mut self, round: usize) -> Vec<DriftChange> {
        let mut changes = Vec::new();
        while self.applied < self.schedule.len() && self.schedule[self.applied].round <= round {
            match &self.schedule[self.applied].event {
                DriftEvent::AddArm { name } => {
                    self.num_active_arms += 1;
                    changes.push(DriftChange::ArmAdded {
                        index: self.num_active_arms - 1,
                        name: name.clone(),
                    });
                }
                DriftEvent::AddCategory(spec) => {
                    if let Some(c) = self.categories.iter_mut().find(|c| c.name == spec.name) {
                        c.active = true;
                    }
                    changes.push(DriftChange::CategoryAdded {
                        name: spec.name.clone(),
                    });
                }
            }
            self.applied += 1;
        }
        changes
    }

    pub fn next_prompt<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PromptDraw> {
        let (cat, vector) = self.draw_vector(rng);
        let means: Vec<f64> = (0..self.num_active_arms)
            .map(|g| self.mean_at(g, &vector, cat))
            .collect();
        let best_arm = argmax_lowest(&means);
        let id = format!("y{}", self.counter);
        self.counter += 1;
        self.issued.insert(id.clone(), means.clone());
        Ok(PromptDraw {
            id,
            vector,
            means: Some(means),
            best_arm: Some(best_arm),
            category: Some(self.categories[cat].name.clone()),
        })
    }

    pub fn sample_score<R: Rng + ?Sized>(
        &self,
        prompt_id: &str,
        arm: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let means = self
            .issued
            .get(prompt_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown prompt id {prompt_id:?}")))?;
        let mean = *means.get(arm).ok_or_else(|| {
            Error::InvalidInput(format!(
                "arm {arm} was not available for prompt {prompt_id}"
            ))
        })?;
        if self.spec.noise_std == 0.0 {
            return Ok(mean);
        }
        let noise = Normal::new(0.0, self.spec.noise_std)
            .map_err(|e| Error::Internal(e.to_string()))?
            .sample(rng);
        let score = mean + noise;
        Ok(if self.spec.score_clip {
            score.clamp(-1.0, 1.0)
        } else {
            score
        })
    }
}
