//! Discrete calibration and prediction pipeline.
//!
//! Deployment always runs this discrete path, which is what carries the
//! split-conformal coverage guarantee; the differentiable relaxation in
//! [`crate::soft`] exists only to train the scorer. Risk scores are turned
//! into a per-problem threshold grid, candidate subgraphs are generated per
//! grid value, and the nonconformity score of a problem is the largest grid
//! threshold below which every filtered subgraph stays coherently factual.

use alloc::vec::Vec;
use thiserror::Error;

use crate::adg::{Adg, ClaimId, ClaimSet};
use crate::math;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HardError {
    #[error("scorer has {weights} weights but claims carry {features} features")]
    SchemaMismatch { weights: usize, features: usize },
    #[error("scorer parameters must be finite")]
    NonFiniteParams,
    #[error("cannot build a threshold grid from zero risks")]
    EmptyRisks,
    #[error("grid margin must be positive, got {margin}")]
    NonPositiveMargin { margin: f64 },
    #[error("cannot take a quantile of zero scores")]
    EmptyScores,
    #[error("alpha must lie in (0, 1), got {alpha}")]
    InvalidAlpha { alpha: f64 },
    #[error("claim {claim} has no frequency value")]
    MissingFrequency { claim: ClaimId },
}

/// Whether subgraph generation enforces ancestor closure (the graph-aware
/// method) or filters claims independently (the independent baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FilterMode {
    #[default]
    Coherent,
    Independent,
}

/// Which order statistic the split-conformal quantile takes.
///
/// With the sup-style nonconformity score used here, larger scores are safer,
/// so coverage requires the k-th *largest* calibration score (`Lower`, the
/// default, so named because it is a low ascending quantile). `Upper` is the
/// textbook k-th smallest for score conventions where larger means riskier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Orientation {
    #[default]
    Lower,
    Upper,
}

/// Calibrated threshold, with explicit sentinel states instead of float
/// infinities so downstream arithmetic never sees non-finite values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Reject everything.
    NegInf,
    Finite(f64),
    /// Keep everything that passes coherence.
    PosInf,
}

impl Threshold {
    pub fn finite(self) -> Option<f64> {
        match self {
            Threshold::Finite(t) => Some(t),
            _ => None,
        }
    }
}

/// Threshold produced by split-conformal calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedThreshold {
    pub value: Threshold,
    pub alpha: f64,
    pub n_cal: usize,
}

/// Linear claim scorer plus the constant risk offset: risk = offset - score.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScorerParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub risk_offset: f64,
}

impl ScorerParams {
    pub fn new(weights: Vec<f64>, bias: f64, risk_offset: f64) -> Result<Self, HardError> {
        let finite = weights.iter().all(|w| w.is_finite()) && bias.is_finite() && risk_offset.is_finite();
        if !finite {
            return Err(HardError::NonFiniteParams);
        }
        Ok(Self {
            weights,
            bias,
            risk_offset,
        })
    }

    pub fn zeros(n_features: usize) -> Self {
        Self {
            weights: alloc::vec![0.0; n_features],
            bias: 0.0,
            risk_offset: 0.0,
        }
    }
}

/// Per-claim risks: offset - (weights . features + bias).
pub fn risk_scores(scorer: &ScorerParams, adg: &Adg) -> Result<Vec<f64>, HardError> {
    if adg.n_features() != scorer.weights.len() {
        return Err(HardError::SchemaMismatch {
            weights: scorer.weights.len(),
            features: adg.n_features(),
        });
    }
    Ok(adg
        .claims()
        .iter()
        .map(|claim| {
            let score: f64 = scorer
                .weights
                .iter()
                .zip(&claim.features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + scorer.bias;
            scorer.risk_offset - score
        })
        .collect())
}

/// Sorted, deduplicated candidate thresholds: every risk value plus
/// `min - m` and `max + m` end caps.
#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid {
    values: Vec<f64>,
    margin: f64,
}

impl TauGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

pub fn build_tau_grid(risks: &[f64], margin: f64) -> Result<TauGrid, HardError> {
    if risks.is_empty() {
        return Err(HardError::EmptyRisks);
    }
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(HardError::NonPositiveMargin { margin });
    }
    let mut values = risks.to_vec();
    values.sort_unstable_by(f64::total_cmp);
    values.dedup();
    let lo = values[0] - margin;
    let hi = *values.last().unwrap() + margin;
    values.insert(0, lo);
    values.push(hi);
    Ok(TauGrid { values, margin })
}

/// Claims passing the threshold, optionally restricted to the maximal
/// ancestor-closed subset (a claim survives coherent filtering iff it and
/// every ancestor pass; this equals the iterative-removal fixpoint because
/// ancestry is transitive).
pub fn generate_subgraph(adg: &Adg, risks: &[f64], tau: f64, mode: FilterMode) -> ClaimSet {
    let passes = |v: ClaimId| risks[v as usize] <= tau;
    (0..adg.n_claims() as ClaimId)
        .filter(|&v| {
            passes(v)
                && (mode == FilterMode::Independent
                    || adg.ancestors(v).unwrap().iter().all(|&a| passes(a)))
        })
        .collect()
}

/// Largest grid threshold such that every filtered subgraph at or below it is
/// coherently factual. The lowest grid value retains nothing and is always
/// coherent, so the scan never comes up empty.
pub fn hard_nonconformity(adg: &Adg, risks: &[f64], grid: &TauGrid, mode: FilterMode) -> f64 {
    let mut best = grid.min();
    for &tau in grid.values() {
        let retained = generate_subgraph(adg, risks, tau, mode);
        if adg.is_coherently_factual(&retained).unwrap() {
            best = tau;
        } else {
            break;
        }
    }
    best
}

pub(crate) fn quantile_rank(n: usize, alpha: f64) -> usize {
    math::ceil((1.0 - alpha) * (n + 1) as f64) as usize
}

/// Split-conformal quantile of calibration scores.
pub fn split_quantile(
    scores: &[f64],
    alpha: f64,
    orientation: Orientation,
) -> Result<CalibratedThreshold, HardError> {
    if scores.is_empty() {
        return Err(HardError::EmptyScores);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HardError::InvalidAlpha { alpha });
    }
    let n = scores.len();
    let k = quantile_rank(n, alpha);
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let value = match orientation {
        Orientation::Lower => {
            // k-th largest = (n + 1 - k)-th smallest.
            if k > n {
                Threshold::NegInf
            } else {
                Threshold::Finite(sorted[n - k])
            }
        }
        Orientation::Upper => {
            if k > n {
                Threshold::PosInf
            } else {
                Threshold::Finite(sorted[k - 1])
            }
        }
    };
    Ok(CalibratedThreshold {
        value,
        alpha,
        n_cal: n,
    })
}

/// Deploys a calibrated threshold: picks the largest grid value strictly
/// below it and returns that value with the filtered subgraph.
pub fn hard_predict(
    adg: &Adg,
    risks: &[f64],
    grid: &TauGrid,
    threshold: &CalibratedThreshold,
    mode: FilterMode,
) -> (Threshold, ClaimSet) {
    let tau_star = match threshold.value {
        Threshold::NegInf => None,
        Threshold::PosInf => Some(grid.max()),
        Threshold::Finite(t) => grid.values().iter().copied().filter(|&tau| tau < t).last(),
    };
    match tau_star {
        Some(tau) => (Threshold::Finite(tau), generate_subgraph(adg, risks, tau, mode)),
        None => (Threshold::NegInf, ClaimSet::new()),
    }
}

/// Risks for the hand-crafted frequency baseline: a claim's support is its
/// own frequency mixed with the median frequency of its descendants, and the
/// risk is `c_freq - support` so low-support claims carry high risk. Sinks
/// fall back to their own frequency for the median term.
pub fn frequency_baseline_risk(adg: &Adg, beta_mix: f64, c_freq: f64) -> Result<Vec<f64>, HardError> {
    let freq = |v: ClaimId| -> Result<f64, HardError> {
        adg.claim(v)
            .unwrap()
            .freq
            .ok_or(HardError::MissingFrequency { claim: v })
    };
    (0..adg.n_claims() as ClaimId)
        .map(|v| {
            let own = freq(v)?;
            let descendants = adg.descendants(v).unwrap();
            let med = if descendants.is_empty() {
                own
            } else {
                let mut values = descendants.iter().map(|&d| freq(d)).collect::<Result<Vec<_>, _>>()?;
                values.sort_unstable_by(f64::total_cmp);
                let mid = values.len() / 2;
                if values.len() % 2 == 1 {
                    values[mid]
                } else {
                    0.5 * (values[mid - 1] + values[mid])
                }
            };
            let support = (1.0 - beta_mix) * own + beta_mix * med;
            Ok(c_freq - support)
        })
        .collect()
}

/// Largest frequency in a problem set, the default `c_freq` offset. The
/// offset must be shared across problems so that risks stay comparable under
/// a single calibrated threshold.
pub fn dataset_max_frequency<'a>(problems: impl IntoIterator<Item = &'a Adg>) -> f64 {
    problems
        .into_iter()
        .flat_map(|adg| adg.claims().iter().filter_map(|c| c.freq))
        .fold(0.0, f64::max)
}
