//! Reference calculators for the staged RFF variant: feature-count lower
//! bounds, confidence bonuses and the per-round error thresholds that make
//! the bonuses vanish.
//!
//! The feature budgets are far too large to run with; policies use a fixed
//! `D` and only the bonus terms.

use serde::Serialize;

use crate::error::{Error, Result};

/// Both lower bounds on the number of frequency pairs and their maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureBudget {
    /// Pointwise kernel-approximation requirement (depends on `ε`).
    pub rff_term: f64,
    /// Spectral approximation requirement for the ridge system (depends on `Δ`).
    pub krr_term: f64,
    /// `⌈max(rff_term, krr_term)⌉`.
    pub features: u64,
}

/// `ζ_ε` for the RBF kernel on the unit sphere.
///
/// `sup ½ + ½k(2y,2y′) − k(y,y′)²` with `k(2y,2y′) = k(y,y′)⁴` equals
/// `(1 − x²)²/2` at the smallest kernel value `x = exp(−2/σ²)` (antipodal
/// points), capped at one.
pub fn rbf_zeta(epsilon: f64, sigma: f64) -> f64 {
    let x = (-2.0 / (sigma * sigma)).exp();
    let gap = 1.0 - x * x;
    (0.5 * gap * gap + epsilon / 3.0).min(1.0)
}

/// `β_d = ((d/2)^{−d/(d+2)} + (d/2)^{2/(d+2)})·2^{(6d+2)/(d+2)}`.
pub fn beta_d(dim: usize) -> f64 {
    let d = dim as f64;
    let h = d / 2.0;
    (h.powf(-d / (d + 2.0)) + h.powf(2.0 / (d + 2.0))) * 2f64.powf((6.0 * d + 2.0) / (d + 2.0))
}

/// Lower bound on `D` for the staged RFF variant with thresholds `ε` and `Δ`.
///
/// The effective dimension `Tr[(K + αI)⁻¹K]` is bounded by `n`.
pub fn suprff_feature_budget(
    epsilon: f64,
    kernel_error: f64,
    n: usize,
    alpha: f64,
    delta: f64,
    dim: usize,
    sigma: f64,
) -> Result<FeatureBudget> {
    for (name, v) in [("epsilon", epsilon), ("Delta", kernel_error)] {
        if !(v > 0.0 && v <= 0.5) {
            return Err(Error::InvalidInput(format!(
                "{name} must lie in (0, 1/2], got {v}"
            )));
        }
    }
    if n == 0 || dim == 0 {
        return Err(Error::InvalidInput(format!(
            "need n >= 1 and d >= 1, got n={n}, d={dim}"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }

    let d = dim as f64;
    let sigma_p = d.sqrt() / sigma;
    let log_term = (2.0 / (1.0 + 2.0 / d)) * (sigma_p / epsilon).ln() + (beta_d(dim) / delta).ln();
    let rff_term =
        4.0 * (d + 2.0) * rbf_zeta(epsilon, sigma) / (epsilon * epsilon) * log_term.ceil();

    let n = n as f64;
    let krr_term =
        8.0 * n / (3.0 * alpha) / (kernel_error * kernel_error) * (32.0 * n / delta).ln();

    let features = rff_term.max(krr_term).max(0.0).ceil() as u64;
    Ok(FeatureBudget {
        rff_term,
        krr_term,
        features,
    })
}

/// Bonus terms `(B1, B2)` added to the RFF estimate of one arm at one stage.
///
/// ```text
/// B1 = |Ψ|·ε + α⁻¹·|Ψ|·Δ·(|Ψ| + α)
/// B2 = (αt)^{−1/2} + t^{3/2}·α^{−1/2}·(α⁻¹·Δ·(|Ψ| + α) + 2ε)
/// ```
pub fn suprff_bonus_terms(
    psi_count: usize,
    epsilon: f64,
    kernel_error: f64,
    alpha: f64,
    t: usize,
) -> (f64, f64) {
    let psi = psi_count as f64;
    let t = t as f64;
    let b1 = psi * epsilon + psi * kernel_error * (psi + alpha) / alpha;
    let b2 = 1.0 / (alpha * t).sqrt()
        + t.powf(1.5) / alpha.sqrt() * (kernel_error * (psi + alpha) / alpha + 2.0 * epsilon);
    (b1, b2)
}

/// Largest thresholds `(ε, Δ)` allowed at round `t`: `ε ≤ t⁻²`,
/// `Δ ≤ α·t⁻²·(|Ψ| + α)⁻¹`.
pub fn suprff_error_thresholds(t: usize, psi_count: usize, alpha: f64) -> (f64, f64) {
    let t2 = (t as f64).powi(2);
    (1.0 / t2, alpha / t2 / (psi_count as f64 + alpha))
}
