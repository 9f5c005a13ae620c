//! Per-arm mean and uncertainty estimates.
//!
//! Two estimators are provided, each in a pure "from scratch" form and an
//! incremental form used by the policies:
//!
//! - exact kernel ridge regression: [`compute_ucb`] and [`ExactArmModel`];
//! - ridge regression on random Fourier features: [`compute_ucb_rff`] and
//!   [`RffArmModel`].
//!
//! For an arm with observations `(y_i, s_i)` and regularization `α > 0`, the
//! exact estimate at a query `y` is
//!
//! ```text
//! mean        = k_yᵀ (K + αI)⁻¹ v
//! uncertainty = α^{-1/2} · sqrt(k(y,y) − k_yᵀ (K + αI)⁻¹ k_y)
//! ```
//!
//! An arm with no observations reports an infinite estimate so that every
//! arm is tried once before any exploitation happens.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{dot, KernelSpec, RffWeights};
use crate::linalg::PackedCholesky;

/// Mean and uncertainty of one arm at one prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbEstimate {
    pub mean: f64,
    pub uncertainty: f64,
    pub is_infinite: bool,
}

impl UcbEstimate {
    /// Estimate for an arm without data.
    pub fn cold() -> Self {
        Self {
            mean: f64::INFINITY,
            uncertainty: f64::INFINITY,
            is_infinite: true,
        }
    }

    pub fn finite(mean: f64, uncertainty: f64) -> Self {
        Self {
            mean,
            uncertainty,
            is_infinite: false,
        }
    }

    /// `mean + eta·uncertainty`, or `+∞` for a cold arm (also when `eta == 0`).
    pub fn index(&self, eta: f64) -> f64 {
        if self.is_infinite {
            f64::INFINITY
        } else {
            self.mean + eta * self.uncertainty
        }
    }

    /// `scale·uncertainty`, or `+∞` for a cold arm.
    pub fn width(&self, scale: f64) -> f64 {
        if self.is_infinite {
            f64::INFINITY
        } else {
            scale * self.uncertainty
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "regularization alpha must be > 0, got {alpha}"
        )))
    }
}

/// Append-only history of prompts and scores observed for one arm.
#[derive(Debug, Clone, Default)]
pub struct ArmDataset {
    prompts: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl ArmDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, prompt: Vec<f64>, score: f64) -> Result<()> {
        if let Some(first) = self.prompts.first() {
            check_dim(first.len(), prompt.len())?;
        }
        self.prompts.push(prompt);
        self.scores.push(score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn prompts(&self) -> &[Vec<f64>] {
        &self.prompts
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn dim(&self) -> Option<usize> {
        self.prompts.first().map(Vec::len)
    }
}

fn factorize(matrix: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(matrix)
        .ok_or_else(|| Error::Internal("regularized gram matrix is not positive definite".into()))
}

/// Exact kernel ridge estimate, refactorizing `K + αI` on every call.
pub fn compute_ucb(
    data: &ArmDataset,
    kernel: &KernelSpec,
    alpha: f64,
    y: &[f64],
) -> Result<UcbEstimate> {
    check_alpha(alpha)?;
    kernel.validate()?;
    if data.is_empty() {
        return Ok(UcbEstimate::cold());
    }
    let n = data.len();
    check_dim(data.prompts[0].len(), y.len())?;

    let mut gram = kernel.gram_matrix(&data.prompts)?;
    for i in 0..n {
        gram[(i, i)] += alpha;
    }
    let chol = factorize(gram)?;
    let k_y = DVector::from_iterator(n, data.prompts.iter().map(|p| kernel.eval_unchecked(p, y)));
    let v = DVector::from_column_slice(&data.scores);

    let mean = k_y.dot(&chol.solve(&v));
    let radicand = kernel.eval_unchecked(y, y) - k_y.dot(&chol.solve(&k_y));
    Ok(UcbEstimate::finite(
        mean,
        (radicand.max(0.0) / alpha).sqrt(),
    ))
}

/// Accumulated `Φ̃ᵀΦ̃`, `Φ̃ᵀv` and observation count for the RFF estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RffSufficientStats {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub count: usize,
}

impl RffSufficientStats {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(feature_dim, feature_dim),
            cross: DVector::zeros(feature_dim),
            count: 0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.cross.len()
    }

    pub fn update(&mut self, weights: &RffWeights, y: &[f64], score: f64) -> Result<()> {
        check_dim(self.feature_dim(), weights.feature_dim())?;
        let phi = DVector::from_vec(weights.features(y)?);
        self.add_features(&phi, score);
        Ok(())
    }

    pub(crate) fn add_features(&mut self, phi: &DVector<f64>, score: f64) {
        self.gram.ger(1.0, phi, phi, 1.0);
        self.cross.axpy(score, phi, 1.0);
        self.count += 1;
    }
}

/// Functional form of [`RffSufficientStats::update`].
pub fn update_stats(
    mut stats: RffSufficientStats,
    weights: &RffWeights,
    y: &[f64],
    score: f64,
) -> Result<RffSufficientStats> {
    stats.update(weights, y, score)?;
    Ok(stats)
}

/// RFF ridge estimate from sufficient statistics, refactorizing on every call.
///
/// ```text
/// mean        = φ(y)ᵀ (Φ̃ᵀΦ̃ + αI)⁻¹ Φ̃ᵀv
/// uncertainty = α^{-1/2} · sqrt(1 − φ(y)ᵀ (Φ̃ᵀΦ̃ + αI)⁻¹ Φ̃ᵀΦ̃ φ(y))
/// ```
pub fn compute_ucb_rff(
    stats: &RffSufficientStats,
    weights: &RffWeights,
    alpha: f64,
    y: &[f64],
) -> Result<UcbEstimate> {
    check_alpha(alpha)?;
    check_dim(stats.feature_dim(), weights.feature_dim())?;
    if stats.count == 0 {
        return Ok(UcbEstimate::cold());
    }
    let phi = DVector::from_vec(weights.features(y)?);
    let regularized =
        &stats.gram + DMatrix::identity(stats.feature_dim(), stats.feature_dim()) * alpha;
    let chol = factorize(regularized)?;

    let mean = phi.dot(&chol.solve(&stats.cross));
    let explained = phi.dot(&chol.solve(&(&stats.gram * &phi)));
    let radicand = (1.0 - explained).clamp(0.0, 1.0);
    Ok(UcbEstimate::finite(mean, (radicand / alpha).sqrt()))
}

/// Incremental exact estimator for one arm.
///
/// Keeps the Cholesky factor `L` of `K + αI` and `z = L⁻¹v`. A new
/// observation borders the factor in `O(n²)`; a query costs one forward
/// substitution `q = L⁻¹k_y`, after which `mean = qᵀz` and the variance
/// radicand is `k(y,y) − qᵀq`.
#[derive(Debug, Clone)]
pub struct ExactArmModel {
    kernel: KernelSpec,
    alpha: f64,
    points: Vec<Vec<f64>>,
    scores: Vec<f64>,
    factor: PackedCholesky,
    whitened: Vec<f64>,
}

impl ExactArmModel {
    pub fn new(kernel: KernelSpec, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        kernel.validate()?;
        Ok(Self {
            kernel,
            alpha,
            points: Vec::new(),
            scores: Vec::new(),
            factor: PackedCholesky::new(),
            whitened: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn kernel_column(&self, y: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| self.kernel.eval_unchecked(p, y))
            .collect()
    }

    pub fn push(&mut self, y: &[f64], score: f64) -> Result<()> {
        if let Some(first) = self.points.first() {
            check_dim(first.len(), y.len())?;
        }
        let column = self.kernel_column(y);
        let diag = self.kernel.eval_unchecked(y, y) + self.alpha;
        let row = self.factor.push(&column, diag)?;
        let n = self.whitened.len();
        let z = (score - dot(&row[..n], &self.whitened)) / row[n];
        self.whitened.push(z);
        self.points.push(y.to_vec());
        self.scores.push(score);
        Ok(())
    }

    pub fn estimate(&self, y: &[f64]) -> Result<UcbEstimate> {
        let Some(first) = self.points.first() else {
            return Ok(UcbEstimate::cold());
        };
        check_dim(first.len(), y.len())?;
        let q = self.factor.forward_solve(&self.kernel_column(y));
        let mean = dot(&q, &self.whitened);
        let radicand = self.kernel.eval_unchecked(y, y) - dot(&q, &q);
        Ok(UcbEstimate::finite(
            mean,
            (radicand.max(0.0) / self.alpha).sqrt(),
        ))
    }

    /// Appends `extra` zero coordinates to every stored point.
    ///
    /// Dot products and distances between stored points are unchanged, so the
    /// factor stays valid for all supported kernels.
    pub(crate) fn pad_points(&mut self, extra: usize) {
        for p in &mut self.points {
            p.extend(std::iter::repeat_n(0.0, extra));
        }
    }
}

/// Incremental RFF estimator for one arm with fixed frequencies.
///
/// Maintains the sufficient statistics plus a Cholesky factor of
/// `Φ̃ᵀΦ̃ + αI` updated by rank-one modifications, and the ridge solution
/// `θ = (Φ̃ᵀΦ̃ + αI)⁻¹Φ̃ᵀv`. Per-observation and per-query cost is
/// `O(D²)`, independent of the history length.
#[derive(Debug, Clone)]
pub struct RffArmModel {
    weights: Arc<RffWeights>,
    alpha: f64,
    stats: RffSufficientStats,
    factor: Cholesky<f64, Dyn>,
    theta: DVector<f64>,
}

impl RffArmModel {
    pub fn new(weights: Arc<RffWeights>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let dim = weights.feature_dim();
        // Factor of αI is √α·I; skip the O(D³) factorization.
        let factor = Cholesky::pack_dirty(DMatrix::identity(dim, dim) * alpha.sqrt());
        Ok(Self {
            weights,
            alpha,
            stats: RffSufficientStats::new(dim),
            factor,
            theta: DVector::zeros(dim),
        })
    }

    pub fn weights(&self) -> &RffWeights {
        &self.weights
    }

    pub fn stats(&self) -> &RffSufficientStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.stats.count
    }

    pub fn is_empty(&self) -> bool {
        self.stats.count == 0
    }

    pub fn push(&mut self, y: &[f64], score: f64) -> Result<()> {
        let phi = DVector::from_vec(self.weights.features(y)?);
        self.stats.add_features(&phi, score);
        self.factor.rank_one_update(&phi, 1.0);
        self.theta = self.factor.solve(&self.stats.cross);
        Ok(())
    }

    /// Uses `φᵀ(A + αI)⁻¹Aφ = ‖φ‖² − α‖L⁻¹φ‖²` with `A = Φ̃ᵀΦ̃ = LLᵀ − αI`.
    pub fn estimate(&self, y: &[f64]) -> Result<UcbEstimate> {
        if self.stats.count == 0 {
            check_dim(self.weights.dim(), y.len())?;
            return Ok(UcbEstimate::cold());
        }
        let phi = DVector::from_vec(self.weights.features(y)?);
        let mean = phi.dot(&self.theta);
        let q = self
            .factor
            .l_dirty()
            .solve_lower_triangular(&phi)
            .ok_or_else(|| Error::Internal("singular rff factor".into()))?;
        let explained = phi.norm_squared() - self.alpha * q.norm_squared();
        let radicand = (1.0 - explained).clamp(0.0, 1.0);
        Ok(UcbEstimate::finite(mean, (radicand / self.alpha).sqrt()))
    }
}
