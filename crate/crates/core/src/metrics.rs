//! Regret, outscore-the-best (OtB) and optimal-pick ratio (OPR), per trial
//! and aggregated over trials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One executed round of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub trial: usize,
    /// 1-based round index.
    pub t: usize,
    pub prompt_id: String,
    pub arm: usize,
    pub score: f64,
    pub oracle_best_mean: Option<f64>,
    pub chosen_mean: Option<f64>,
    pub best_arm: Option<usize>,
    pub category: Option<String>,
}

impl RoundRecord {
    fn gap(&self) -> Result<f64> {
        match (self.oracle_best_mean, self.chosen_mean) {
            (Some(best), Some(chosen)) => Ok(best - chosen),
            _ => Err(Error::Unavailable(format!(
                "round {} of trial {} has no oracle means",
                self.t, self.trial
            ))),
        }
    }
}

/// Cumulative regret `Σ (oracle_best_mean − chosen_mean)` over `records`.
pub fn regret(records: &[RoundRecord]) -> Result<f64> {
    records.iter().map(RoundRecord::gap).sum()
}

/// Cumulative regret after every round.
pub fn regret_curve(records: &[RoundRecord]) -> Result<Vec<f64>> {
    let mut total = 0.0;
    records
        .iter()
        .map(|r| {
            total += r.gap()?;
            Ok(total)
        })
        .collect()
}

fn best_reference(reference_means: &[f64]) -> Result<f64> {
    let best = reference_means
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Unavailable("no per-arm reference means".into()))
    }
}

/// Running average score minus the best single arm's mean score.
pub fn otb(records: &[RoundRecord], reference_means: &[f64]) -> Result<f64> {
    let best = best_reference(reference_means)?;
    if records.is_empty() {
        return Err(Error::InvalidInput("otb needs at least one round".into()));
    }
    let mean = records.iter().map(|r| r.score).sum::<f64>() / records.len() as f64;
    Ok(mean - best)
}

pub fn otb_curve(records: &[RoundRecord], reference_means: &[f64]) -> Result<Vec<f64>> {
    let best = best_reference(reference_means)?;
    let mut total = 0.0;
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            total += r.score;
            total / (i + 1) as f64 - best
        })
        .collect())
}

/// Fraction of rounds whose arm equals the per-prompt best arm. Rounds
/// without a best-arm label count as misses; an empty slice gives 0.
pub fn opr(records: &[RoundRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records.iter().filter(|r| r.best_arm == Some(r.arm)).count();
    hits as f64 / records.len() as f64
}

pub fn opr_curve(records: &[RoundRecord]) -> Vec<f64> {
    let mut hits = 0usize;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            hits += usize::from(r.best_arm == Some(r.arm));
            hits as f64 / (i + 1) as f64
        })
        .collect()
}

/// Curves of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    /// `None` when oracle means are unavailable.
    pub cumulative_regret: Option<Vec<f64>>,
    pub otb_curve: Option<Vec<f64>>,
    pub opr_curve: Vec<f64>,
    /// Select + ingest seconds per round.
    pub wall_time: Vec<f64>,
}

impl TrialSummary {
    pub fn from_records(
        records: &[RoundRecord],
        reference_means: &[f64],
        wall_time: Vec<f64>,
    ) -> Self {
        Self {
            cumulative_regret: regret_curve(records).ok(),
            otb_curve: otb_curve(records, reference_means).ok(),
            opr_curve: opr_curve(records),
            wall_time,
        }
    }

    pub fn horizon(&self) -> usize {
        self.opr_curve.len()
    }
}

/// Pointwise mean and standard error (sample std with `n − 1`, over `√n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl CurveStats {
    pub fn last_mean(&self) -> Option<f64> {
        self.mean.last().copied()
    }
}

/// Mean and standard error across curves of equal length.
pub fn aggregate(curves: &[&[f64]]) -> Result<CurveStats> {
    let Some(first) = curves.first() else {
        return Err(Error::InvalidInput(
            "aggregate needs at least one trial".into(),
        ));
    };
    let len = first.len();
    if let Some(c) = curves.iter().find(|c| c.len() != len) {
        return Err(Error::InvalidInput(format!(
            "trials have different horizons: {len} and {}",
            c.len()
        )));
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut stderr = vec![0.0; len];
    for i in 0..len {
        let m = curves.iter().map(|c| c[i]).sum::<f64>() / n;
        mean[i] = m;
        if curves.len() > 1 {
            let var = curves.iter().map(|c| (c[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
            stderr[i] = (var / n).sqrt();
        }
    }
    Ok(CurveStats { mean, stderr })
}

/// Aggregated curves of one policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCurves {
    pub trials: usize,
    pub horizon: usize,
    pub regret: Option<CurveStats>,
    pub otb: Option<CurveStats>,
    pub opr: CurveStats,
}

pub fn aggregate_trials(trials: &[TrialSummary]) -> Result<AggregateCurves> {
    fn optional(curves: Vec<Option<&Vec<f64>>>) -> Result<Option<CurveStats>> {
        match curves.into_iter().collect::<Option<Vec<_>>>() {
            Some(cs) => {
                let slices: Vec<&[f64]> = cs.iter().map(|c| c.as_slice()).collect();
                aggregate(&slices).map(Some)
            }
            None => Ok(None),
        }
    }
    let opr: Vec<&[f64]> = trials.iter().map(|t| t.opr_curve.as_slice()).collect();
    let opr = aggregate(&opr)?;
    Ok(AggregateCurves {
        trials: trials.len(),
        horizon: opr.mean.len(),
        regret: optional(
            trials
                .iter()
                .map(|t| t.cumulative_regret.as_ref())
                .collect(),
        )?,
        otb: optional(trials.iter().map(|t| t.otb_curve.as_ref()).collect())?,
        opr,
    })
}
