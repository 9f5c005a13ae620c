use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{check_arm, ucb_argmax, Policy, PolicyConfig, PolicyKind, Selection};
use crate::error::{check_dim, Error, Result};
use crate::estimator::{ExactArmModel, UcbEstimate};

/// Ridge regression in the primal, `A = XᵀX + αI`.
#[derive(Debug, Clone)]
struct PrimalRidge {
    alpha: f64,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    theta: DVector<f64>,
}

impl PrimalRidge {
    fn new(dim: usize, alpha: f64) -> Result<Self> {
        let gram = DMatrix::zeros(dim, dim);
        let cross = DVector::zeros(dim);
        let factor = Self::factor(&gram, alpha)?;
        Ok(Self {
            alpha,
            theta: DVector::zeros(dim),
            gram,
            cross,
            factor,
        })
    }

    fn factor(gram: &DMatrix<f64>, alpha: f64) -> Result<Cholesky<f64, Dyn>> {
        let n = gram.nrows();
        Cholesky::new(gram + DMatrix::identity(n, n) * alpha)
            .ok_or_else(|| Error::Internal("shared ridge system is not positive definite".into()))
    }

    fn push(&mut self, x: &DVector<f64>, score: f64) {
        self.gram.ger(1.0, x, x, 1.0);
        self.cross.axpy(score, x, 1.0);
        self.factor.rank_one_update(x, 1.0);
        self.theta = self.factor.solve(&self.cross);
    }

    fn estimate(&self, x: &DVector<f64>) -> Result<UcbEstimate> {
        let q = self
            .factor
            .l_dirty()
            .solve_lower_triangular(x)
            .ok_or_else(|| Error::Internal("singular shared factor".into()))?;
        Ok(UcbEstimate::finite(x.dot(&self.theta), q.norm()))
    }

    fn grow(&mut self, extra: usize) -> Result<()> {
        let n = self.gram.nrows() + extra;
        self.gram = self.gram.clone().resize(n, n, 0.0);
        self.cross = self.cross.clone().resize_vertically(n, 0.0);
        self.factor = Self::factor(&self.gram, self.alpha)?;
        self.theta = self.factor.solve(&self.cross);
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum SharedModel {
    Linear(PrimalRidge),
    Kernel(ExactArmModel),
}

/// Conventional LinUCB / KernelUCB baselines with one shared weight vector.
///
/// The context for arm `g` is the prompt concatenated with the one-hot
/// encoding of `g`, and a single regression pools every round.
#[derive(Debug)]
pub struct SharedPolicy {
    kind: PolicyKind,
    eta: f64,
    dim: usize,
    num_arms: usize,
    model: SharedModel,
    rounds: usize,
}

impl SharedPolicy {
    pub fn new(config: &PolicyConfig, num_arms: usize, dim: usize) -> Result<Self> {
        config.validate()?;
        let model = match config.kind {
            PolicyKind::LinUcbShared => {
                SharedModel::Linear(PrimalRidge::new(dim + num_arms, config.alpha)?)
            }
            PolicyKind::KernelUcbShared => {
                SharedModel::Kernel(ExactArmModel::new(config.kernel, config.alpha)?)
            }
            other => {
                return Err(Error::Config(format!(
                    "{other} is not a shared-weight policy"
                )));
            }
        };
        Ok(Self {
            kind: config.kind,
            eta: config.resolved_eta(num_arms),
            dim,
            num_arms,
            model,
            rounds: 0,
        })
    }

    /// `[prompt, one_hot(arm)]`.
    pub fn context(&self, prompt: &[f64], arm: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim + self.num_arms);
        x.extend_from_slice(prompt);
        x.extend((0..self.num_arms).map(|g| if g == arm { 1.0 } else { 0.0 }));
        x
    }

    fn estimate(&self, x: Vec<f64>) -> Result<UcbEstimate> {
        match &self.model {
            SharedModel::Linear(r) => r.estimate(&DVector::from_vec(x)),
            SharedModel::Kernel(m) if m.is_empty() => {
                // Empty pool: zero mean and prior uncertainty sqrt(k(x,x)/α).
                let k = m.kernel().eval_unchecked(&x, &x);
                Ok(UcbEstimate::finite(0.0, (k / m.alpha()).sqrt()))
            }
            SharedModel::Kernel(m) => m.estimate(&x),
        }
    }
}

impl Policy for SharedPolicy {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn rounds(&self) -> usize {
        self.rounds
    }

    fn select(&mut self, prompt: &[f64]) -> Result<Selection> {
        check_dim(self.dim, prompt.len())?;
        let estimates = (0..self.num_arms)
            .map(|g| self.estimate(self.context(prompt, g)))
            .collect::<Result<Vec<_>>>()?;
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
        check_arm(arm, self.num_arms)?;
        check_dim(self.dim, prompt.len())?;
        if stage.is_some() {
            return Err(Error::Internal(format!("{} has no stages", self.kind)));
        }
        let x = self.context(prompt, arm);
        match &mut self.model {
            SharedModel::Linear(r) => r.push(&DVector::from_vec(x), score),
            SharedModel::Kernel(m) => m.push(&x, score)?,
        }
        self.rounds += 1;
        Ok(())
    }

    fn add_arm(&mut self) -> Result<()> {
        match &mut self.model {
            SharedModel::Linear(r) => r.grow(1)?,
            SharedModel::Kernel(m) => m.pad_points(1),
        }
        self.num_arms += 1;
        Ok(())
    }
}
