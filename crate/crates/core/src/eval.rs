//! Evaluation harness: Monte-Carlo cross-validation, coverage/retention
//! metrics, soft-hard fidelity diagnostics, and interpretability reports.
//!
//! Cross-validation resplits are independent seeded 70/15/15 draws (twenty
//! 15% test shares cannot partition a dataset, so resampling is the only
//! consistent protocol). Every method deploys through the discrete pipeline;
//! learned methods train per fold and per alpha.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adg::{Adg, FeatureSchema};
use crate::autodiff::{AutodiffError, Tape};
use crate::hard::{
    build_tau_grid, dataset_max_frequency, frequency_baseline_risk, hard_nonconformity,
    hard_predict, risk_scores, split_quantile, CalibratedThreshold, FilterMode, HardError,
    Orientation, ScorerParams,
};
use crate::math;
use crate::soft::{
    ancestor_coherence, gated_soft_argmax, risk_vars, soft_keep, soft_nonconformity, soft_quantile,
    soft_retention, soft_tau_grid, ScorerVars, SoftConfig, SoftError, SoftThreshold,
};
use crate::train::{train_scorer, TrainConfig, TrainError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least {needed} problems, got {got}")]
    TooFewProblems { needed: usize, got: usize },
    #[error("method `{tag}` produced an empty {split} split")]
    EmptySplit { tag: String, split: &'static str },
    #[error("a label class is empty")]
    EmptyClass,
    #[error("scores have no variance")]
    InsufficientVariance,
    #[error(transparent)]
    Hard(#[from] HardError),
    #[error(transparent)]
    Soft(#[from] SoftError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// A claim-filtering method under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Scorer trained through the differentiable pipeline, deployed with
    /// coherent filtering.
    Dcf { train: TrainConfig },
    /// Scorer trained with coherence disabled, deployed with independent
    /// filtering.
    BoostedIndependent { train: TrainConfig },
    /// Frequency baseline with coherent filtering.
    FrequencyCf { beta_mix: f64 },
    /// Frequency baseline filtering claims independently.
    FrequencyIndependent { beta_mix: f64 },
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Dcf { .. } => "dcf",
            Method::BoostedIndependent { .. } => "boosted-independent",
            Method::FrequencyCf { .. } => "cf",
            Method::FrequencyIndependent { .. } => "independent",
        }
    }

    pub fn filter_mode(&self) -> FilterMode {
        match self {
            Method::Dcf { .. } | Method::FrequencyCf { .. } => FilterMode::Coherent,
            _ => FilterMode::Independent,
        }
    }
}

/// Cross-validation protocol parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: u32,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Grid margin for discrete deployment.
    pub margin: f64,
    pub orientation: Orientation,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 20,
            train_fraction: 0.70,
            val_fraction: 0.15,
            margin: 20.0,
            orientation: Orientation::Lower,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    /// Fraction of test problems whose retained set is coherently factual.
    pub coverage: f64,
    /// Mean retained claims per problem.
    pub retention_mean: f64,
    /// Retained claims over total claims.
    pub retention_fraction: f64,
}

/// One result row; `fold` is `None` for aggregate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub alpha: f64,
    pub method: String,
    pub fold: Option<u32>,
    pub coverage: f64,
    pub retention_mean: f64,
    pub retention_fraction: f64,
    pub meets_target: bool,
    /// Missed the target by at most half a point.
    pub near_miss: bool,
}

/// Claim-level soft-vs-hard prediction contingency counts at one alpha.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgreementCounts {
    pub alpha: f64,
    pub both_incl: u64,
    pub soft_only: u64,
    pub hard_only: u64,
    pub both_excl: u64,
}

impl AgreementCounts {
    pub fn total(&self) -> u64 {
        self.both_incl + self.soft_only + self.hard_only + self.both_excl
    }

    pub fn agree_pct(&self) -> f64 {
        if self.total() == 0 {
            return 100.0;
        }
        100.0 * (self.both_incl + self.both_excl) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationStats {
    pub pearson_r: f64,
    pub mae: f64,
}

/// Soft-vs-hard calibration fidelity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateFidelity {
    /// Per-problem nonconformity scores.
    pub score: CorrelationStats,
    /// Score MAE with each residual divided by that problem's grid range.
    pub score_mae_normalized: f64,
    /// Calibrated thresholds across the alpha sweep.
    pub threshold: CorrelationStats,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub per_fold: Vec<EvalRow>,
    pub aggregate: Vec<EvalRow>,
    pub agreement: Vec<AgreementCounts>,
    pub fidelity: Option<SurrogateFidelity>,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn shuffled_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    indices
}

/// Deploys a calibrated threshold on a test set and measures coverage and
/// retention.
pub fn evaluate_fold(
    test: &[&Adg],
    risks: &[Vec<f64>],
    threshold: &CalibratedThreshold,
    mode: FilterMode,
    margin: f64,
) -> Result<FoldMetrics, EvalError> {
    if test.is_empty() {
        return Err(EvalError::TooFewProblems { needed: 1, got: 0 });
    }
    let mut covered = 0usize;
    let mut retained_total = 0usize;
    let mut claims_total = 0usize;
    for (adg, risk) in test.iter().zip(risks) {
        let grid = build_tau_grid(risk, margin)?;
        let (_, retained) = hard_predict(adg, risk, &grid, threshold, mode);
        if adg.is_coherently_factual(&retained).unwrap() {
            covered += 1;
        }
        retained_total += retained.len();
        claims_total += adg.n_claims();
    }
    Ok(FoldMetrics {
        coverage: covered as f64 / test.len() as f64,
        retention_mean: retained_total as f64 / test.len() as f64,
        retention_fraction: retained_total as f64 / claims_total.max(1) as f64,
    })
}

fn method_risks(
    method: &Method,
    problems: &[Adg],
    train_idx: &[usize],
    val_idx: &[usize],
    alpha: f64,
    c_freq: f64,
    fold_seed: u64,
) -> Result<Vec<Vec<f64>>, EvalError> {
    match method {
        Method::FrequencyCf { beta_mix } | Method::FrequencyIndependent { beta_mix } => problems
            .iter()
            .map(|adg| frequency_baseline_risk(adg, *beta_mix, c_freq).map_err(EvalError::from))
            .collect(),
        Method::Dcf { train } | Method::BoostedIndependent { train } => {
            let mut cfg = train.clone();
            cfg.alpha = alpha;
            cfg.seed = mix_seed(train.seed, fold_seed, (alpha * 1e6) as u64);
            if matches!(method, Method::BoostedIndependent { .. }) {
                cfg.mode = FilterMode::Independent;
            }
            let train_set: Vec<Adg> = train_idx.iter().map(|&i| problems[i].clone()).collect();
            let val_set: Vec<Adg> = val_idx.iter().map(|&i| problems[i].clone()).collect();
            let n_features = problems[0].n_features();
            let (params, _) = train_scorer(&train_set, &val_set, n_features, &cfg)?;
            problems
                .iter()
                .map(|adg| risk_scores(&params, adg).map_err(EvalError::from))
                .collect()
        }
    }
}

/// Runs one Monte-Carlo fold for one method across all alphas. Public so
/// callers can fan folds out across threads; outputs depend only on the
/// (seed, fold) pair.
pub fn run_fold(
    problems: &[Adg],
    method: &Method,
    alphas: &[f64],
    cv: &CvConfig,
    fold: u32,
    c_freq: f64,
) -> Result<Vec<EvalRow>, EvalError> {
    let n = problems.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cv.seed, fold as u64, 0));
    let indices = shuffled_indices(n, &mut rng);
    let n_train = (n as f64 * cv.train_fraction) as usize;
    let n_val = (n as f64 * cv.val_fraction) as usize;
    let train_idx = &indices[..n_train];
    let val_idx = &indices[n_train..n_train + n_val];
    let test_idx = &indices[n_train + n_val..];
    if train_idx.len() < 2 || val_idx.is_empty() || test_idx.is_empty() {
        return Err(EvalError::TooFewProblems { needed: 10, got: n });
    }

    let mode = method.filter_mode();
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let risks = method_risks(method, problems, train_idx, val_idx, alpha, c_freq, fold as u64)?;
        let cal_scores: Vec<f64> = train_idx
            .iter()
            .map(|&i| {
                let grid = build_tau_grid(&risks[i], cv.margin)?;
                Ok(hard_nonconformity(&problems[i], &risks[i], &grid, mode))
            })
            .collect::<Result<_, EvalError>>()?;
        let threshold = split_quantile(&cal_scores, alpha, cv.orientation)?;
        let test: Vec<&Adg> = test_idx.iter().map(|&i| &problems[i]).collect();
        let test_risks: Vec<Vec<f64>> = test_idx.iter().map(|&i| risks[i].clone()).collect();
        let metrics = evaluate_fold(&test, &test_risks, &threshold, mode, cv.margin)?;
        rows.push(make_row(alpha, method.tag(), Some(fold), metrics));
    }
    Ok(rows)
}

fn make_row(alpha: f64, tag: &str, fold: Option<u32>, m: FoldMetrics) -> EvalRow {
    let target = 1.0 - alpha;
    EvalRow {
        alpha,
        method: String::from(tag),
        fold,
        coverage: m.coverage,
        retention_mean: m.retention_mean,
        retention_fraction: m.retention_fraction,
        meets_target: m.coverage >= target,
        near_miss: m.coverage < target && m.coverage >= target - 0.005,
    }
}

/// Mean rows per (method, alpha), in the given method-major order.
pub fn aggregate_rows(methods: &[Method], alphas: &[f64], per_fold: &[EvalRow]) -> Vec<EvalRow> {
    let mut out = Vec::new();
    for method in methods {
        for &alpha in alphas {
            let rows: Vec<&EvalRow> = per_fold
                .iter()
                .filter(|r| r.method == method.tag() && r.alpha == alpha)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let k = rows.len() as f64;
            let metrics = FoldMetrics {
                coverage: rows.iter().map(|r| r.coverage).sum::<f64>() / k,
                retention_mean: rows.iter().map(|r| r.retention_mean).sum::<f64>() / k,
                retention_fraction: rows.iter().map(|r| r.retention_fraction).sum::<f64>() / k,
            };
            out.push(make_row(alpha, method.tag(), None, metrics));
        }
    }
    out
}

/// Monte-Carlo cross-validation of several methods across an alpha sweep.
pub fn cross_validate(
    problems: &[Adg],
    methods: &[Method],
    alphas: &[f64],
    cv: &CvConfig,
) -> Result<EvalReport, EvalError> {
    if problems.len() < 10 {
        return Err(EvalError::TooFewProblems {
            needed: 10,
            got: problems.len(),
        });
    }
    let c_freq = dataset_max_frequency(problems.iter());
    let mut per_fold = Vec::new();
    for method in methods {
        for fold in 0..cv.folds {
            per_fold.extend(run_fold(problems, method, alphas, cv, fold, c_freq)?);
        }
    }
    let aggregate = aggregate_rows(methods, alphas, &per_fold);
    Ok(EvalReport {
        per_fold,
        aggregate,
        agreement: Vec::new(),
        fidelity: None,
    })
}

/// Per-alpha claim-level contingency between the discrete prediction and the
/// rounded soft prediction. Each fold calibrates both pipelines on a seeded
/// half of the problems and predicts every problem, so the cells sum to
/// (total claims) x folds.
pub fn soft_hard_agreement(
    problems: &[Adg],
    scorer: &ScorerParams,
    cfg: &SoftConfig,
    alphas: &[f64],
    folds: u32,
    seed: u64,
    mode: FilterMode,
    orientation: Orientation,
) -> Result<Vec<AgreementCounts>, EvalError> {
    if problems.len() < 2 {
        return Err(EvalError::TooFewProblems {
            needed: 2,
            got: problems.len(),
        });
    }
    cfg.validate()?;
    let risks: Vec<Vec<f64>> = problems
        .iter()
        .map(|adg| risk_scores(scorer, adg))
        .collect::<Result<_, _>>()?;
    let mut counts: Vec<AgreementCounts> = alphas
        .iter()
        .map(|&alpha| AgreementCounts {
            alpha,
            ..AgreementCounts::default()
        })
        .collect();

    for fold in 0..folds {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, fold as u64, 1));
        let indices = shuffled_indices(problems.len(), &mut rng);
        let cal_idx = &indices[..(problems.len() / 2).max(1)];

        let cal_hard: Vec<f64> = cal_idx
            .iter()
            .map(|&i| {
                let grid = build_tau_grid(&risks[i], cfg.margin_m)?;
                Ok(hard_nonconformity(&problems[i], &risks[i], &grid, mode))
            })
            .collect::<Result<_, EvalError>>()?;

        let tape = Tape::new();
        let vars = ScorerVars::inject(&tape, scorer);
        let cal_soft = cal_idx
            .iter()
            .map(|&i| soft_nonconformity(&tape, &vars, &problems[i], cfg, mode))
            .collect::<Result<Vec<_>, _>>()?;

        // Per-problem membership matrices are shared across the alpha sweep.
        let memberships = problems
            .iter()
            .map(|adg| {
                let r = risk_vars(&tape, &vars, adg)?;
                let grid = soft_tau_grid(&r, cfg.margin_m)?;
                let p = soft_keep(&r, &grid, cfg.t_p);
                let q = match mode {
                    FilterMode::Coherent => ancestor_coherence(adg, &p, cfg.gamma, cfg.epsilon),
                    FilterMode::Independent => p,
                };
                Ok((grid, q))
            })
            .collect::<Result<Vec<_>, SoftError>>()?;

        for (ai, &alpha) in alphas.iter().enumerate() {
            let hard_threshold = split_quantile(&cal_hard, alpha, orientation)?;
            let soft_threshold = soft_quantile(&cal_soft, alpha, cfg.rho, orientation)?;

            for (i, adg) in problems.iter().enumerate() {
                let grid = build_tau_grid(&risks[i], cfg.margin_m)?;
                let (_, hard_set) = hard_predict(adg, &risks[i], &grid, &hard_threshold, mode);

                let (soft_grid, q) = &memberships[i];
                let soft_q: Vec<f64> = match &soft_threshold {
                    SoftThreshold::Reject => vec![cfg.epsilon; adg.n_claims()],
                    SoftThreshold::KeepAll => {
                        vec![1.0; adg.n_claims()]
                    }
                    SoftThreshold::Value(t) => {
                        match gated_soft_argmax(&tape, soft_grid, *t, cfg.beta, cfg.tau_z) {
                            Ok(w) => soft_retention(q, &w).iter().map(|v| v.value()).collect(),
                            Err(SoftError::DegenerateWeights) => vec![cfg.epsilon; adg.n_claims()],
                            Err(e) => return Err(e.into()),
                        }
                    }
                };
                if let Some(op) = tape.poisoned() {
                    return Err(AutodiffError::NonFiniteValue { op }.into());
                }
                for v in 0..adg.n_claims() {
                    let hard_in = hard_set.contains(&(v as u32));
                    let soft_in = soft_q[v] >= 0.5;
                    match (soft_in, hard_in) {
                        (true, true) => counts[ai].both_incl += 1,
                        (true, false) => counts[ai].soft_only += 1,
                        (false, true) => counts[ai].hard_only += 1,
                        (false, false) => counts[ai].both_excl += 1,
                    }
                }
            }
        }
    }
    Ok(counts)
}

/// Pearson correlation; errors when either vector is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::InsufficientVariance);
    }
    Ok(sxy / math::sqrt(sxx * syy))
}

/// Correlation and MAE between soft and hard nonconformity scores, and
/// between soft and hard calibrated thresholds across the alpha sweep.
/// Restricted to problems with at least one false claim; error-free problems
/// score a constant grid-top and carry no signal.
pub fn calibration_correlation(
    problems: &[Adg],
    scorer: &ScorerParams,
    cfg: &SoftConfig,
    alphas: &[f64],
    mode: FilterMode,
    orientation: Orientation,
) -> Result<SurrogateFidelity, EvalError> {
    cfg.validate()?;
    let eligible: Vec<&Adg> = problems.iter().filter(|p| p.false_claims().next().is_some()).collect();
    if eligible.len() < 3 {
        return Err(EvalError::TooFewProblems {
            needed: 3,
            got: eligible.len(),
        });
    }

    let mut hard_scores = Vec::with_capacity(eligible.len());
    let mut ranges = Vec::with_capacity(eligible.len());
    for adg in &eligible {
        let risks = risk_scores(scorer, adg)?;
        let grid = build_tau_grid(&risks, cfg.margin_m)?;
        hard_scores.push(hard_nonconformity(adg, &risks, &grid, mode));
        ranges.push(grid.max() - grid.min());
    }

    let tape = Tape::new();
    let vars = ScorerVars::inject(&tape, scorer);
    let soft_scores: Vec<f64> = eligible
        .iter()
        .map(|adg| soft_nonconformity(&tape, &vars, adg, cfg, mode).map(|v| v.value()))
        .collect::<Result<_, _>>()?;
    if let Some(op) = tape.poisoned() {
        return Err(AutodiffError::NonFiniteValue { op }.into());
    }

    let score = CorrelationStats {
        pearson_r: pearson(&soft_scores, &hard_scores)?,
        mae: mean_abs_err(&soft_scores, &hard_scores, None),
    };
    let score_mae_normalized = mean_abs_err(&soft_scores, &hard_scores, Some(&ranges));

    let soft_vars: Vec<_> = soft_scores.iter().map(|&s| tape.constant(s)).collect();
    let mut hard_thresholds = Vec::new();
    let mut soft_thresholds = Vec::new();
    for &alpha in alphas {
        let hard_t = split_quantile(&hard_scores, alpha, orientation)?;
        let soft_t = soft_quantile(&soft_vars, alpha, cfg.rho, orientation)?;
        if let (Some(h), SoftThreshold::Value(s)) = (hard_t.value.finite(), soft_t) {
            hard_thresholds.push(h);
            soft_thresholds.push(s.value());
        }
    }
    if hard_thresholds.len() < 2 {
        return Err(EvalError::TooFewProblems {
            needed: 2,
            got: hard_thresholds.len(),
        });
    }
    let threshold = CorrelationStats {
        pearson_r: pearson(&soft_thresholds, &hard_thresholds)?,
        mae: mean_abs_err(&soft_thresholds, &hard_thresholds, None),
    };

    Ok(SurrogateFidelity {
        score,
        score_mae_normalized,
        threshold,
    })
}

fn mean_abs_err(xs: &[f64], ys: &[f64], scale: Option<&[f64]>) -> f64 {
    let n = xs.len() as f64;
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (x, y))| {
            let d = (x - y).abs();
            match scale {
                Some(s) => d / s[i],
                None => d,
            }
        })
        .sum::<f64>()
        / n
}

/// One feature's share of a linear score.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureContribution {
    pub name: String,
    pub value: f64,
    pub weight: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionReport {
    /// Sorted by absolute contribution, descending.
    pub entries: Vec<FeatureContribution>,
    /// Sum of contributions plus the bias.
    pub total: f64,
}

/// Exact weight-times-value decomposition of a linear score.
pub fn feature_contributions(
    scorer: &ScorerParams,
    schema: &FeatureSchema,
    features: &[f64],
) -> Result<ContributionReport, EvalError> {
    if scorer.weights.len() != schema.len() || features.len() != schema.len() {
        return Err(HardError::SchemaMismatch {
            weights: scorer.weights.len(),
            features: features.len(),
        }
        .into());
    }
    let mut entries: Vec<FeatureContribution> = schema
        .names()
        .iter()
        .zip(&scorer.weights)
        .zip(features)
        .map(|((name, &weight), &value)| FeatureContribution {
            name: name.clone(),
            value,
            weight,
            contribution: weight * value,
        })
        .collect();
    let total = entries.iter().map(|e| e.contribution).sum::<f64>() + scorer.bias;
    entries.sort_by(|a, b| b.contribution.abs().total_cmp(&a.contribution.abs()));
    Ok(ContributionReport { entries, total })
}

/// Scores of one method, labeled by claim truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGroup {
    pub tag: String,
    /// (score, label) pairs.
    pub scores: Vec<(f64, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationMetrics {
    pub tag: String,
    /// Mean z-score of true claims minus mean z-score of false claims.
    pub separation: f64,
    pub cohens_d: f64,
    /// Overlapping coefficient of the class histograms (64 bins over the
    /// pooled z range).
    pub overlap: f64,
}

const OVERLAP_BINS: usize = 64;

/// Class-separation diagnostics under z-normalization pooled across methods.
pub fn separation_metrics(groups: &[ScoreGroup]) -> Result<Vec<SeparationMetrics>, EvalError> {
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.scores.iter().map(|s| s.0)).collect();
    if pooled.is_empty() {
        return Err(EvalError::EmptyClass);
    }
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let var = pooled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(EvalError::InsufficientVariance);
    }
    let std = math::sqrt(var);
    let z = |x: f64| (x - mean) / std;
    let z_min = pooled.iter().map(|&x| z(x)).fold(f64::INFINITY, f64::min);
    let z_max = pooled.iter().map(|&x| z(x)).fold(f64::NEG_INFINITY, f64::max);

    groups
        .iter()
        .map(|group| {
            let true_scores: Vec<f64> =
                group.scores.iter().filter(|s| s.1).map(|s| z(s.0)).collect();
            let false_scores: Vec<f64> =
                group.scores.iter().filter(|s| !s.1).map(|s| z(s.0)).collect();
            if true_scores.is_empty() || false_scores.is_empty() {
                return Err(EvalError::EmptyClass);
            }
            let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let separation = mean_of(&true_scores) - mean_of(&false_scores);

            let all: Vec<f64> = true_scores.iter().chain(&false_scores).copied().collect();
            let gm = mean_of(&all);
            let gvar = all.iter().map(|x| (x - gm) * (x - gm)).sum::<f64>() / all.len() as f64;
            let cohens_d = if gvar > 0.0 { separation / math::sqrt(gvar) } else { 0.0 };

            let overlap = if z_max > z_min {
                let hist = |values: &[f64]| {
                    let mut bins = vec![0.0; OVERLAP_BINS];
                    for &x in values {
                        let t = (x - z_min) / (z_max - z_min);
                        let b = ((t * OVERLAP_BINS as f64) as usize).min(OVERLAP_BINS - 1);
                        bins[b] += 1.0 / values.len() as f64;
                    }
                    bins
                };
                let ht = hist(&true_scores);
                let hf = hist(&false_scores);
                ht.iter().zip(&hf).map(|(a, b)| a.min(*b)).sum()
            } else {
                1.0
            };
            Ok(SeparationMetrics {
                tag: group.tag.clone(),
                separation,
                cohens_d,
                overlap,
            })
        })
        .collect()
}

/// Convenience tag for error messages.
pub fn describe_method(method: &Method) -> String {
    match method {
        Method::Dcf { train } => format!("dcf(alpha={})", train.alpha),
        Method::BoostedIndependent { train } => format!("boosted-independent(alpha={})", train.alpha),
        Method::FrequencyCf { beta_mix } => format!("cf(beta_mix={beta_mix})"),
        Method::FrequencyIndependent { beta_mix } => format!("independent(beta_mix={beta_mix})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adg::{AdgProblem, Claim};
    use crate::hard::Threshold;
    use crate::testutil::graph;
    use alloc::string::ToString;

    fn freq_problem(id: &str, labels: &[u8], edges: &[(u32, u32)], freqs: &[f64]) -> Adg {
        let claims = labels
            .iter()
            .zip(freqs)
            .map(|(&l, &f)| Claim::new(vec![f], l == 1, Some(f)))
            .collect();
        AdgProblem::new(id.to_string(), claims, edges.to_vec()).validate(1).unwrap()
    }

    #[test]
    fn fold_metrics_sentinels() {
        let a = graph(&[1, 1], &[(0, 1)]);
        let b = graph(&[1, 0], &[]);
        let test = [&a, &b];
        let risks = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let reject = CalibratedThreshold {
            value: Threshold::NegInf,
            alpha: 0.1,
            n_cal: 5,
        };
        let m = evaluate_fold(&test, &risks, &reject, FilterMode::Coherent, 1.0).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert_eq!(m.retention_mean, 0.0);

        let keep_all = CalibratedThreshold {
            value: Threshold::PosInf,
            alpha: 0.1,
            n_cal: 5,
        };
        let all_true = [&a];
        let m = evaluate_fold(&all_true, &risks[..1].to_vec(), &keep_all, FilterMode::Coherent, 1.0)
            .unwrap();
        assert_eq!(m.coverage, 1.0);
        assert_eq!(m.retention_mean, 2.0);
        assert_eq!(m.retention_fraction, 1.0);
    }

    #[test]
    fn pearson_identities() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(EvalError::InsufficientVariance)
        );
    }

    #[test]
    fn contribution_table_anchor() {
        // Weights/values from the worked single-claim decomposition; the
        // reconstructed bias closes the 0.015 gap between the printed total
        // and the printed contributions.
        let names = [
            "nx_reachability",
            "claim_index",
            "nx_in_degree",
            "quadratic_equations",
            "nx_out_degree",
            "problem_relevance",
            "coherent_to_ancestors",
            "nx_betweenness",
            "uses_problem_data",
            "frequency-score",
        ];
        let schema = FeatureSchema::new(names.iter().map(|s| s.to_string()).collect()).unwrap();
        let weights = vec![0.272, 0.098, 0.135, 0.229, 0.176, 0.144, 0.110, 0.292, 0.104, 0.021];
        let values = vec![3.0, 8.0, 2.0, 1.0, 1.0, 1.0, 1.0, 0.22, 0.5, 0.0];
        let scorer = ScorerParams::new(weights, 0.015, 0.0).unwrap();
        let report = feature_contributions(&scorer, &schema, &values).unwrap();

        assert_eq!(report.entries[0].name, "nx_reachability");
        assert!((report.entries[0].contribution - 0.815).abs() <= 0.01);
        assert!((report.total - 2.66).abs() <= 0.01);

        // Zero feature value contributes nothing regardless of weight.
        let zero = report.entries.iter().find(|e| e.name == "frequency-score").unwrap();
        assert_eq!(zero.contribution, 0.0);
    }

    #[test]
    fn contribution_schema_mismatch() {
        let schema = FeatureSchema::new(vec!["a".to_string()]).unwrap();
        let scorer = ScorerParams::zeros(2);
        assert!(matches!(
            feature_contributions(&scorer, &schema, &[1.0]),
            Err(EvalError::Hard(HardError::SchemaMismatch { .. }))
        ));
    }

    #[test]
    fn separation_closed_forms() {
        // Identical class distributions: zero separation, full overlap.
        let group = ScoreGroup {
            tag: "same".to_string(),
            scores: vec![(0.0, true), (1.0, true), (0.0, false), (1.0, false)],
        };
        let m = &separation_metrics(&[group]).unwrap()[0];
        assert!(m.separation.abs() < 1e-12);
        assert!((m.overlap - 1.0).abs() < 1e-12);

        // Point masses at +1 / -1: unit pooled variance, d = 2, no overlap.
        let group = ScoreGroup {
            tag: "split".to_string(),
            scores: vec![(1.0, true), (1.0, true), (-1.0, false), (-1.0, false)],
        };
        let m = &separation_metrics(&[group]).unwrap()[0];
        assert!((m.separation - 2.0).abs() < 1e-12);
        assert!((m.cohens_d - 2.0).abs() < 1e-12);
        assert!(m.overlap.abs() < 1e-12);

        let bad = ScoreGroup {
            tag: "one-class".to_string(),
            scores: vec![(1.0, true)],
        };
        assert_eq!(separation_metrics(&[bad]), Err(EvalError::EmptyClass));
    }

    #[test]
    fn negative_separation_is_legal() {
        let group = ScoreGroup {
            tag: "inverted".to_string(),
            scores: vec![(-1.0, true), (-1.0, true), (1.0, false), (1.0, false)],
        };
        let m = &separation_metrics(&[group]).unwrap()[0];
        assert!((m.separation + 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_methods_produce_identical_rows() {
        let problems: Vec<Adg> = (0..14)
            .map(|i| {
                let f = [3.0, 2.0, 5.0, 1.0][(i % 4) as usize];
                freq_problem(
                    &i.to_string(),
                    &[1, 1, (i % 3 != 0) as u8],
                    &[(0, 1), (1, 2)],
                    &[f + 1.0, f, f - 1.0],
                )
            })
            .collect();
        let methods = [
            Method::FrequencyCf { beta_mix: 0.0 },
            Method::FrequencyCf { beta_mix: 0.0 },
        ];
        let cv = CvConfig {
            folds: 2,
            margin: 5.0,
            ..CvConfig::default()
        };
        let report = cross_validate(&problems, &methods, &[0.2], &cv).unwrap();
        assert_eq!(report.aggregate.len(), 2);
        assert_eq!(report.aggregate[0].coverage, report.aggregate[1].coverage);
        assert_eq!(report.aggregate[0].retention_mean, report.aggregate[1].retention_mean);
    }

    #[test]
    fn single_fold_report_equals_fold_metrics() {
        let problems: Vec<Adg> = (0..12)
            .map(|i| {
                freq_problem(
                    &i.to_string(),
                    &[1, (i % 4 != 0) as u8],
                    &[(0, 1)],
                    &[4.0 + (i % 3) as f64, 2.0 + (i % 5) as f64],
                )
            })
            .collect();
        let methods = [Method::FrequencyCf { beta_mix: 0.5 }];
        let cv = CvConfig {
            folds: 1,
            margin: 5.0,
            ..CvConfig::default()
        };
        let report = cross_validate(&problems, &methods, &[0.25], &cv).unwrap();
        assert_eq!(report.per_fold.len(), 1);
        assert_eq!(report.aggregate.len(), 1);
        assert_eq!(report.per_fold[0].coverage, report.aggregate[0].coverage);
    }

    #[test]
    fn agreement_is_well_defined_with_tied_risks() {
        // All-equal risks collapse the grid to three values.
        let problems: Vec<Adg> = (0..4)
            .map(|i| {
                let claims = (0..3).map(|_| Claim::new(vec![1.0], true, None)).collect();
                AdgProblem::new(i.to_string(), claims, vec![(0, 1)]).validate(1).unwrap()
            })
            .collect();
        let scorer = ScorerParams::zeros(1);
        let cfg = SoftConfig::sharp();
        let counts = soft_hard_agreement(
            &problems,
            &scorer,
            &cfg,
            &[0.45],
            2,
            9,
            FilterMode::Coherent,
            Orientation::Lower,
        )
        .unwrap();
        assert_eq!(counts[0].total(), 3 * 4 * 2);
    }
}
