//! Kernel functions, Gram matrices and random Fourier features.
//!
//! Three kernels are supported:
//!
//! - `linear`: `k(a, b) = aᵀb`
//! - `poly3`:  `k(a, b) = (1 + γ·aᵀb)³`
//! - `rbf`:    `k(a, b) = exp(-‖a - b‖² / (2σ²))`
//!
//! Only the RBF kernel is shift invariant, so it is the only one with a
//! random Fourier feature map. Its spectral density is the isotropic Gaussian
//! `N(0, σ⁻²·I_d)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Poly3,
    Rbf,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    1.0
}

/// A kernel together with its hyperparameters.
///
/// `gamma` is only read by `poly3` and `sigma` only by `rbf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: default_gamma(),
            sigma: default_sigma(),
        }
    }

    pub fn poly3(gamma: f64) -> Self {
        Self {
            kind: KernelKind::Poly3,
            gamma,
            sigma: default_sigma(),
        }
    }

    pub fn rbf(sigma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            gamma: default_gamma(),
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Poly3 if !(self.gamma.is_finite() && self.gamma > 0.0) => Err(
                Error::Config(format!("poly3 kernel needs gamma > 0, got {}", self.gamma)),
            ),
            KernelKind::Rbf if !(self.sigma.is_finite() && self.sigma > 0.0) => Err(Error::Config(
                format!("rbf kernel needs sigma > 0, got {}", self.sigma),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_shift_invariant(&self) -> bool {
        self.kind == KernelKind::Rbf
    }

    /// Kernel value without the dimension check. Callers guarantee equal lengths.
    #[inline]
    pub fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(a, b),
            KernelKind::Poly3 => {
                let base = 1.0 + self.gamma * dot(a, b);
                base * base * base
            }
            KernelKind::Rbf => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * self.sigma * self.sigma)).exp()
            }
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(a.len(), b.len())?;
        Ok(self.eval_unchecked(a, b))
    }

    /// Value of `k(y, y)` for a unit-norm `y`.
    pub fn unit_diagonal(&self) -> f64 {
        match self.kind {
            KernelKind::Linear | KernelKind::Rbf => 1.0,
            KernelKind::Poly3 => (1.0 + self.gamma).powi(3),
        }
    }

    pub fn gram_matrix(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        gram_matrix(self, points)
    }
}

/// Evaluates `k(a, b)`; errors when the inputs differ in dimension.
pub fn eval_kernel(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    spec.eval(a, b)
}

/// Builds the `n × n` matrix `K[i][j] = k(points[i], points[j])`.
pub fn gram_matrix(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidInput(
            "gram matrix of an empty point set".into(),
        ));
    };
    let dim = first.len();
    for p in points {
        check_dim(dim, p.len())?;
    }
    let n = points.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval_unchecked(&points[i], &points[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random frequencies for the RBF feature map, stored row-major (`D × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct RffWeights {
    weights: Vec<f64>,
    dim: usize,
    num_pairs: usize,
    sigma: f64,
    seed: u64,
}

impl RffWeights {
    /// Draws `num_pairs` frequencies from `N(0, σ⁻²·I_dim)`, deterministically in `seed`.
    pub fn sample(sigma: f64, dim: usize, num_pairs: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::sample_with_rng(sigma, dim, num_pairs, &mut rng)?;
        w.seed = seed;
        Ok(w)
    }

    /// Same distribution as [`RffWeights::sample`], drawing from a caller-owned RNG.
    pub fn sample_with_rng<R: Rng + ?Sized>(
        sigma: f64,
        dim: usize,
        num_pairs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Config(format!("rff sigma must be > 0, got {sigma}")));
        }
        if dim == 0 || num_pairs == 0 {
            return Err(Error::Config(format!(
                "rff needs d >= 1 and D >= 1, got d={dim}, D={num_pairs}"
            )));
        }
        let scale = 1.0 / sigma;
        let weights = (0..dim * num_pairs)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(Self {
            weights,
            dim,
            num_pairs,
            sigma,
            seed: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    /// Length of the feature vector, `2D`.
    pub fn feature_dim(&self) -> usize {
        2 * self.num_pairs
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequency(&self, j: usize) -> &[f64] {
        &self.weights[j * self.dim..(j + 1) * self.dim]
    }

    /// `φ(y) = D^{-1/2}·[cos(w₁ᵀy), sin(w₁ᵀy), …, cos(w_Dᵀy), sin(w_Dᵀy)]`.
    pub fn features(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.feature_dim()];
        self.features_into(y, &mut out)?;
        Ok(out)
    }

    pub fn features_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, y.len())?;
        check_dim(self.feature_dim(), out.len())?;
        let norm = 1.0 / (self.num_pairs as f64).sqrt();
        for (j, pair) in out.chunks_exact_mut(2).enumerate() {
            let (s, c) = dot(self.frequency(j), y).sin_cos();
            pair[0] = c * norm;
            pair[1] = s * norm;
        }
        Ok(())
    }
}

/// Convenience wrapper over [`RffWeights::sample`].
pub fn sample_rff_weights(
    sigma: f64,
    dim: usize,
    num_pairs: usize,
    seed: u64,
) -> Result<RffWeights> {
    RffWeights::sample(sigma, dim, num_pairs, seed)
}

/// Convenience wrapper over [`RffWeights::features`].
pub fn rff_features(weights: &RffWeights, y: &[f64]) -> Result<Vec<f64>> {
    weights.features(y)
}
