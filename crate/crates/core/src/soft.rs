//! Differentiable relaxation of the discrete pipeline.
//!
//! Every discrete operation of [`crate::hard`] is replaced by a smooth
//! surrogate that recovers it in a temperature limit: sigmoids for threshold
//! indicators, a weighted geometric mean for the ancestor conjunction, a
//! softmax over a normalized utility for the supremum, a soft rank kernel for
//! the calibration order statistic, and a sigmoid-gated softmax for the
//! constrained argmax at prediction time. All of it runs on the
//! [`crate::autodiff`] tape so the retention loss differentiates end to end
//! through calibration and prediction back to the scorer parameters.
//!
//! Gate and supremum weights are computed in log space with max-shifted
//! softmaxes, so sharp temperatures (used by the convergence tests) do not
//! overflow.

use alloc::vec::Vec;
use thiserror::Error;

use crate::adg::{Adg, ClaimId};
use crate::autodiff::{Tape, Var};
use crate::hard::{quantile_rank, FilterMode, HardError, Orientation, ScorerParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoftError {
    #[error("soft config field `{field}` must be positive and finite")]
    InvalidConfig { field: &'static str },
    #[error("every gate weight underflowed; threshold sits far below the grid")]
    DegenerateWeights,
    #[error("cannot take a soft quantile of zero values")]
    EmptyValues,
    #[error(transparent)]
    Hard(#[from] HardError),
}

/// Relaxation temperatures and structural hyperparameters.
///
/// `t_p` sharpens the keep sigmoid, `gamma` weights ancestors in the
/// geometric mean, `tau_s` sharpens violation detection, `lambda` trades
/// threshold size against violations, `beta` is the softmax inverse
/// temperature, `tau_z` sharpens the prediction gate, `rho` sharpens the soft
/// quantile, `epsilon` guards logarithms and `margin_m` pads the threshold
/// grid.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SoftConfig {
    pub t_p: f64,
    pub gamma: f64,
    pub tau_s: f64,
    pub lambda: f64,
    pub beta: f64,
    pub tau_z: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub margin_m: f64,
}

impl SoftConfig {
    /// Finite-temperature settings used for surrogate-fidelity validation.
    pub fn paper_validation() -> Self {
        Self {
            t_p: 0.01,
            gamma: 1.0,
            tau_s: 0.001,
            lambda: 1.0,
            beta: 1.0,
            tau_z: 0.001,
            rho: 50.0,
            epsilon: 1e-12,
            margin_m: 20.0,
        }
    }

    /// Near-discrete settings under which the relaxation reproduces the hard
    /// pipeline almost exactly.
    pub fn sharp() -> Self {
        Self {
            t_p: 1e-3,
            gamma: 1.0,
            tau_s: 1e-3,
            lambda: 1.0,
            beta: 1e3,
            tau_z: 1e-3,
            rho: 1e3,
            epsilon: 1e-12,
            margin_m: 20.0,
        }
    }

    pub fn validate(&self) -> Result<(), SoftError> {
        let fields = [
            ("t_p", self.t_p),
            ("gamma", self.gamma),
            ("tau_s", self.tau_s),
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("tau_z", self.tau_z),
            ("rho", self.rho),
            ("epsilon", self.epsilon),
            ("margin_m", self.margin_m),
        ];
        for (field, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SoftError::InvalidConfig { field });
            }
        }
        Ok(())
    }
}

/// Calibrated threshold on the tape, with the same sentinel states as the
/// discrete [`crate::hard::Threshold`].
#[derive(Clone, Copy)]
pub enum SoftThreshold<'t> {
    /// Reject everything (the quantile rank fell outside the sample).
    Reject,
    /// Keep everything (upper-orientation sentinel).
    KeepAll,
    Value(Var<'t>),
}

/// Scorer parameters injected onto a tape as gradient leaves.
pub struct ScorerVars<'t> {
    pub weights: Vec<Var<'t>>,
    pub bias: Var<'t>,
    pub risk_offset: f64,
}

impl<'t> ScorerVars<'t> {
    pub fn inject(tape: &'t Tape, params: &ScorerParams) -> Self {
        Self {
            weights: params.weights.iter().map(|&w| tape.leaf(w)).collect(),
            bias: tape.leaf(params.bias),
            risk_offset: params.risk_offset,
        }
    }
}

/// Per-claim risks on the tape: offset - (weights . features + bias).
pub fn risk_vars<'t>(
    tape: &'t Tape,
    scorer: &ScorerVars<'t>,
    adg: &Adg,
) -> Result<Vec<Var<'t>>, SoftError> {
    if adg.n_features() != scorer.weights.len() {
        return Err(HardError::SchemaMismatch {
            weights: scorer.weights.len(),
            features: adg.n_features(),
        }
        .into());
    }
    Ok(adg
        .claims()
        .iter()
        .map(|claim| {
            let mut score = scorer.bias;
            for (&w, &x) in scorer.weights.iter().zip(&claim.features) {
                score = score + w * x;
            }
            tape.constant(scorer.risk_offset) - score
        })
        .collect())
}

/// Sorted deduplicated threshold grid on the tape: risk values plus margin
/// end caps. Gradients flow through the grid since its entries are risks.
pub fn soft_tau_grid<'t>(risks: &[Var<'t>], margin: f64) -> Result<Vec<Var<'t>>, SoftError> {
    if risks.is_empty() {
        return Err(HardError::EmptyRisks.into());
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(|a, b| a.value().total_cmp(&b.value()));
    sorted.dedup_by(|a, b| a.value() == b.value());
    let mut grid = Vec::with_capacity(sorted.len() + 2);
    grid.push(sorted[0] - margin);
    grid.extend_from_slice(&sorted);
    grid.push(*sorted.last().unwrap() + margin);
    Ok(grid)
}

/// Keep probabilities: p[v][g] = sigmoid((tau_g - r_v) / t_p).
pub fn soft_keep<'t>(risks: &[Var<'t>], grid: &[Var<'t>], t_p: f64) -> Vec<Vec<Var<'t>>> {
    risks
        .iter()
        .map(|&r| grid.iter().map(|&tau| ((tau - r) / t_p).sigmoid()).collect())
        .collect()
}

/// Coherence-adjusted probabilities: the gamma-weighted geometric mean of a
/// claim's own keep probability and its ancestors'. Log arguments carry the
/// epsilon guard, so a claim without ancestors comes back as p + epsilon.
pub fn ancestor_coherence<'t>(
    adg: &Adg,
    p: &[Vec<Var<'t>>],
    gamma: f64,
    epsilon: f64,
) -> Vec<Vec<Var<'t>>> {
    let log_p: Vec<Vec<Var<'t>>> = p
        .iter()
        .map(|row| row.iter().map(|&x| (x + epsilon).ln()).collect())
        .collect();
    (0..adg.n_claims() as ClaimId)
        .map(|v| {
            let ancestors = adg.ancestors(v).unwrap();
            let weight_sum = 1.0 + gamma * ancestors.len() as f64;
            (0..p[v as usize].len())
                .map(|g| {
                    let mut acc = log_p[v as usize][g];
                    for &u in ancestors {
                        acc = acc + log_p[u as usize][g] * gamma;
                    }
                    (acc / weight_sum).exp()
                })
                .collect()
        })
        .collect()
}

/// Per-threshold violation scores: V_g = 1 - exp(mean_f log(1 - q[f][g]) / tau_s)
/// over false claims f. All zero when the problem has no false claims.
pub fn violation_scores<'t>(
    tape: &'t Tape,
    adg: &Adg,
    q: &[Vec<Var<'t>>],
    tau_s: f64,
    epsilon: f64,
) -> Vec<Var<'t>> {
    let false_claims: Vec<ClaimId> = adg.false_claims().collect();
    let n_grid = q.first().map_or(0, Vec::len);
    if false_claims.is_empty() {
        return (0..n_grid).map(|_| tape.constant(0.0)).collect();
    }
    let lo = tape.constant(epsilon);
    let hi = tape.constant(1.0 - epsilon);
    (0..n_grid)
        .map(|g| {
            let mut acc = tape.constant(0.0);
            for &f in &false_claims {
                let clamped = q[f as usize][g].min(hi).max(lo);
                acc = acc + ((1.0 - clamped) + epsilon).ln();
            }
            let log_validity = acc / false_claims.len() as f64;
            1.0 - (log_validity / tau_s).exp()
        })
        .collect()
}

/// Min-max normalization to [0, 1]. A degenerate (all-equal) vector maps to
/// constant 0.5 with zero gradient, avoiding the 0/0.
fn min_max_normalize<'t>(tape: &'t Tape, values: &[Var<'t>]) -> Vec<Var<'t>> {
    let mut lo = values[0];
    let mut hi = values[0];
    for &v in &values[1..] {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range.value() == 0.0 {
        return values.iter().map(|_| tape.constant(0.5)).collect();
    }
    values.iter().map(|&v| (v - lo) / range).collect()
}

/// Max-shifted softmax; the shift cancels exactly in both value and gradient.
fn softmax<'t>(logits: &[Var<'t>]) -> Vec<Var<'t>> {
    let mut peak = logits[0];
    for &l in &logits[1..] {
        peak = peak.max(l);
    }
    let exps: Vec<Var<'t>> = logits.iter().map(|&l| (l - peak).exp()).collect();
    let mut total = exps[0];
    for &e in &exps[1..] {
        total = total + e;
    }
    exps.into_iter().map(|e| e / total).collect()
}

/// log(sigmoid(v)) = -logsumexp(0, -v), stable for any magnitude of `v`.
fn log_sigmoid<'t>(tape: &'t Tape, v: Var<'t>) -> Var<'t> {
    let x = -v;
    let m = x.max(tape.constant(0.0));
    -(((x - m).exp() + (-m).exp()).ln() + m)
}

/// Soft supremum of the grid under the normalized utility
/// s = tau_norm - lambda * v_norm: a beta-softmax over s, collapsed against
/// the raw grid values.
pub fn soft_supremum<'t>(
    tape: &'t Tape,
    grid: &[Var<'t>],
    violations: &[Var<'t>],
    lambda: f64,
    beta: f64,
) -> Var<'t> {
    let tau_norm = min_max_normalize(tape, grid);
    let v_norm = min_max_normalize(tape, violations);
    let logits: Vec<Var<'t>> = tau_norm
        .iter()
        .zip(&v_norm)
        .map(|(&t, &v)| (t - v * lambda) * beta)
        .collect();
    let weights = softmax(&logits);
    let mut out = weights[0] * grid[0];
    for (w, &tau) in weights.iter().zip(grid.iter()).skip(1) {
        out = out + *w * tau;
    }
    out
}

/// Soft nonconformity score of one problem: the full calibration-side
/// composition (risks, grid, keep, coherence, violations, supremum).
pub fn soft_nonconformity<'t>(
    tape: &'t Tape,
    scorer: &ScorerVars<'t>,
    adg: &Adg,
    cfg: &SoftConfig,
    mode: FilterMode,
) -> Result<Var<'t>, SoftError> {
    let risks = risk_vars(tape, scorer, adg)?;
    let grid = soft_tau_grid(&risks, cfg.margin_m)?;
    let p = soft_keep(&risks, &grid, cfg.t_p);
    let q = match mode {
        FilterMode::Coherent => ancestor_coherence(adg, &p, cfg.gamma, cfg.epsilon),
        FilterMode::Independent => p,
    };
    let violations = violation_scores(tape, adg, &q, cfg.tau_s, cfg.epsilon);
    Ok(soft_supremum(tape, &grid, &violations, cfg.lambda, cfg.beta))
}

/// Smooth k-th smallest value (1-based k) via soft ranks
/// rank_i = 1 + sum_j sigmoid(rho (x_i - x_j)) and a softmax kernel around k.
pub fn soft_order_statistic<'t>(values: &[Var<'t>], k: usize, rho: f64) -> Var<'t> {
    let n = values.len();
    let logits: Vec<Var<'t>> = (0..n)
        .map(|i| {
            let mut rank = values[i] * 0.0 + 1.0;
            for j in 0..n {
                if i != j {
                    rank = rank + ((values[i] - values[j]) * rho).sigmoid();
                }
            }
            let miss = rank - k as f64;
            miss * miss * (-rho)
        })
        .collect();
    let weights = softmax(&logits);
    let mut out = weights[0] * values[0];
    for (w, &x) in weights.iter().zip(values.iter()).skip(1) {
        out = out + *w * x;
    }
    out
}

/// Differentiable split-conformal quantile. The target order statistic is the
/// one [`crate::hard::split_quantile`] would take; out-of-sample ranks map to
/// the same sentinel outcomes.
pub fn soft_quantile<'t>(
    values: &[Var<'t>],
    alpha: f64,
    rho: f64,
    orientation: Orientation,
) -> Result<SoftThreshold<'t>, SoftError> {
    if values.is_empty() {
        return Err(SoftError::EmptyValues);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HardError::InvalidAlpha { alpha }.into());
    }
    let n = values.len();
    let rank = quantile_rank(n, alpha);
    let k = match orientation {
        Orientation::Lower => {
            if rank > n {
                return Ok(SoftThreshold::Reject);
            }
            n + 1 - rank
        }
        Orientation::Upper => {
            if rank > n {
                return Ok(SoftThreshold::KeepAll);
            }
            rank
        }
    };
    Ok(SoftThreshold::Value(soft_order_statistic(values, k, rho)))
}

/// Gated soft argmax weights over the grid:
/// w_g proportional to exp(beta * tau_g) * sigmoid((tau_hat - tau_g) / tau_z),
/// evaluated in log space. Errors with [`SoftError::DegenerateWeights`] when
/// every gate underflows (the threshold sits far below the whole grid); the
/// caller substitutes the reject-all outcome.
pub fn gated_soft_argmax<'t>(
    tape: &'t Tape,
    grid: &[Var<'t>],
    tau_hat: Var<'t>,
    beta: f64,
    tau_z: f64,
) -> Result<Vec<Var<'t>>, SoftError> {
    let open = grid
        .iter()
        .any(|&tau| (tau_hat.value() - tau.value()) / tau_z > -708.0);
    if !open {
        return Err(SoftError::DegenerateWeights);
    }
    let logits: Vec<Var<'t>> = grid
        .iter()
        .map(|&tau| tau * beta + log_sigmoid(tape, (tau_hat - tau) / tau_z))
        .collect();
    Ok(softmax(&logits))
}

/// Final retention probabilities: q_v = sum_g w_g * q[v][g].
pub fn soft_retention<'t>(q: &[Vec<Var<'t>>], weights: &[Var<'t>]) -> Vec<Var<'t>> {
    q.iter()
        .map(|row| {
            let mut acc = row[0] * weights[0];
            for (&x, &w) in row.iter().zip(weights.iter()).skip(1) {
                acc = acc + x * w;
            }
            acc
        })
        .collect()
}

/// Prediction-side composition for one problem.
pub fn soft_predict_problem<'t>(
    tape: &'t Tape,
    scorer: &ScorerVars<'t>,
    adg: &Adg,
    tau_hat: &SoftThreshold<'t>,
    cfg: &SoftConfig,
    mode: FilterMode,
) -> Result<Vec<Var<'t>>, SoftError> {
    let reject_all = || (0..adg.n_claims()).map(|_| tape.constant(cfg.epsilon)).collect();
    if matches!(tau_hat, SoftThreshold::Reject) {
        return Ok(reject_all());
    }
    let risks = risk_vars(tape, scorer, adg)?;
    let grid = soft_tau_grid(&risks, cfg.margin_m)?;
    let p = soft_keep(&risks, &grid, cfg.t_p);
    let q = match mode {
        FilterMode::Coherent => ancestor_coherence(adg, &p, cfg.gamma, cfg.epsilon),
        FilterMode::Independent => p,
    };
    let weights = match tau_hat {
        SoftThreshold::Reject => unreachable!(),
        SoftThreshold::KeepAll => {
            let logits: Vec<Var<'t>> = grid.iter().map(|&tau| tau * cfg.beta).collect();
            softmax(&logits)
        }
        SoftThreshold::Value(t) => match gated_soft_argmax(tape, &grid, *t, cfg.beta, cfg.tau_z) {
            Ok(w) => w,
            Err(SoftError::DegenerateWeights) => return Ok(reject_all()),
            Err(e) => return Err(e),
        },
    };
    Ok(soft_retention(&q, &weights))
}

/// Differentiable calibration over a problem set: per-problem soft
/// nonconformity scores, then the soft quantile across problems.
pub fn soft_calibrate<'t>(
    tape: &'t Tape,
    scorer: &ScorerVars<'t>,
    problems: &[&Adg],
    alpha: f64,
    cfg: &SoftConfig,
    mode: FilterMode,
    orientation: Orientation,
) -> Result<SoftThreshold<'t>, SoftError> {
    let scores = problems
        .iter()
        .map(|adg| soft_nonconformity(tape, scorer, adg, cfg, mode))
        .collect::<Result<Vec<_>, _>>()?;
    soft_quantile(&scores, alpha, cfg.rho, orientation)
}

/// Differentiable prediction over a problem set.
pub fn soft_predict<'t>(
    tape: &'t Tape,
    scorer: &ScorerVars<'t>,
    problems: &[&Adg],
    tau_hat: &SoftThreshold<'t>,
    cfg: &SoftConfig,
    mode: FilterMode,
) -> Result<Vec<Vec<Var<'t>>>, SoftError> {
    problems
        .iter()
        .map(|adg| soft_predict_problem(tape, scorer, adg, tau_hat, cfg, mode))
        .collect()
}

/// Retention loss: minus the mean over problems of the summed retention
/// probability of true claims.
pub fn retention_loss<'t>(
    tape: &'t Tape,
    problems: &[&Adg],
    retention: &[Vec<Var<'t>>],
) -> Var<'t> {
    debug_assert_eq!(problems.len(), retention.len());
    let mut acc = tape.constant(0.0);
    for (adg, q) in problems.iter().zip(retention) {
        for v in adg.true_claims() {
            acc = acc + q[v as usize];
        }
    }
    -(acc / problems.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adg::{AdgProblem, Claim};
    use crate::hard;
    use crate::testutil::graph;
    use alloc::vec;

    /// Problem whose single feature is the desired risk under the identity
    /// scorer (weights [-1], bias 0, offset 0).
    fn risk_graph(labels: &[u8], edges: &[(ClaimId, ClaimId)], risks: &[f64]) -> (Adg, ScorerParams) {
        let claims = labels
            .iter()
            .zip(risks)
            .map(|(&l, &r)| Claim::new(vec![r], l == 1, None))
            .collect();
        let adg = AdgProblem::new("t", claims, edges.to_vec()).validate(1).unwrap();
        let scorer = ScorerParams::new(vec![-1.0], 0.0, 0.0).unwrap();
        (adg, scorer)
    }

    #[test]
    fn keep_probability_closed_forms() {
        let tape = Tape::new();
        let r = tape.constant(1.0);
        let grid = [tape.constant(1.0), tape.constant(1.5)];
        let p = soft_keep(&[r], &grid, 0.1);
        assert!((p[0][0].value() - 0.5).abs() < 1e-15);
        assert!((p[0][1].value() - 0.9933071490757153).abs() < 1e-9);

        let sharp = soft_keep(&[r], &[tape.constant(1.1)], 1e-6);
        assert!(sharp[0][0].value() >= 1.0 - 1e-9);
    }

    #[test]
    fn coherence_geometric_mean() {
        let tape = Tape::new();
        let adg = graph(&[1, 1], &[(0, 1)]);
        let p = vec![vec![tape.constant(0.4)], vec![tape.constant(0.9)]];
        let q = ancestor_coherence(&adg, &p, 1.0, 1e-12);
        // Root has no ancestors: q = p + epsilon.
        assert!((q[0][0].value() - 0.4).abs() < 1e-9);
        // Two-term geometric mean sqrt(0.9 * 0.4) = 0.6.
        assert!((q[1][0].value() - 0.6).abs() < 1e-9);

        // A vanishing ancestor forces q toward the epsilon floor.
        let p = vec![vec![tape.constant(0.0)], vec![tape.constant(0.9)]];
        let q = ancestor_coherence(&adg, &p, 1.0, 1e-12);
        assert!(q[1][0].value() < 1e-5);
    }

    #[test]
    fn violation_closed_forms() {
        let tape = Tape::new();
        let adg = graph(&[1, 0], &[]);
        // False claim kept with probability ~0: no violation.
        let q = vec![vec![tape.constant(0.9)], vec![tape.constant(1e-12)]];
        let v = violation_scores(&tape, &adg, &q, 1.0, 1e-12);
        assert!(v[0].value() < 1e-9);

        // Q = 0.5 with tau_s = 1 gives V = 0.5.
        let q = vec![vec![tape.constant(0.9)], vec![tape.constant(0.5)]];
        let v = violation_scores(&tape, &adg, &q, 1.0, 1e-12);
        assert!((v[0].value() - 0.5).abs() < 1e-9);

        // No false claims: identically zero.
        let adg = graph(&[1, 1], &[]);
        let v = violation_scores(&tape, &adg, &q, 1.0, 1e-12);
        assert!(v.iter().all(|x| x.value() == 0.0));
    }

    #[test]
    fn supremum_limits() {
        let tape = Tape::new();
        // Equal normalized utility everywhere: the softmax is uniform and the
        // soft supremum is the grid mean.
        let grid: Vec<Var> = [1.0, 2.0, 3.0].iter().map(|&x| tape.constant(x)).collect();
        let viol: Vec<Var> = [1.0, 2.0, 3.0].iter().map(|&x| tape.constant(x)).collect();
        let out = soft_supremum(&tape, &grid, &viol, 1.0, 7.0);
        assert!((out.value() - 2.0).abs() < 1e-12);

        // One strictly dominant utility attracts all the mass.
        let viol: Vec<Var> = [0.0, 0.0, 1.0].iter().map(|&x| tape.constant(x)).collect();
        let out = soft_supremum(&tape, &grid, &viol, 1.0, 1e4);
        assert!((out.value() - 2.0).abs() < 1e-6 * 2.0);
    }

    #[test]
    fn supremum_matches_hard_nonconformity_at_sharp_temps() {
        let (adg, scorer) = risk_graph(&[1, 0], &[(0, 1)], &[0.3, 0.7]);
        let risks = hard::risk_scores(&scorer, &adg).unwrap();
        let grid = hard::build_tau_grid(&risks, 1.0).unwrap();
        let hard_score = hard::hard_nonconformity(&adg, &risks, &grid, FilterMode::Coherent);
        assert_eq!(hard_score, 0.3);

        let mut cfg = SoftConfig::sharp();
        cfg.margin_m = 1.0;
        let tape = Tape::new();
        let vars = ScorerVars::inject(&tape, &scorer);
        let soft_score = soft_nonconformity(&tape, &vars, &adg, &cfg, FilterMode::Coherent).unwrap();
        assert!(
            (soft_score.value() - hard_score).abs() <= 1e-2,
            "soft {} vs hard {}",
            soft_score.value(),
            hard_score
        );
    }

    #[test]
    fn order_statistic_closed_forms() {
        let tape = Tape::new();
        let same: Vec<Var> = (0..4).map(|_| tape.constant(2.5)).collect();
        assert!((soft_order_statistic(&same, 2, 17.0).value() - 2.5).abs() < 1e-12);

        let vals: Vec<Var> = [1.0, 2.0, 3.0].iter().map(|&x| tape.constant(x)).collect();
        assert!((soft_order_statistic(&vals, 2, 100.0).value() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn quantile_matches_split_quantile() {
        let tape = Tape::new();
        let raw: Vec<f64> = (1..=9).map(f64::from).collect();
        let vals: Vec<Var> = raw.iter().map(|&x| tape.constant(x)).collect();
        match soft_quantile(&vals, 0.1, 200.0, Orientation::Lower).unwrap() {
            SoftThreshold::Value(v) => assert!((v.value() - 1.0).abs() < 1e-3),
            _ => panic!("expected a finite soft quantile"),
        }
        // Rank outside the sample: sentinel.
        let single = [tape.constant(4.0)];
        assert!(matches!(
            soft_quantile(&single, 0.01, 50.0, Orientation::Lower).unwrap(),
            SoftThreshold::Reject
        ));
        match soft_quantile(&single, 0.5, 50.0, Orientation::Lower).unwrap() {
            SoftThreshold::Value(v) => assert!((v.value() - 4.0).abs() < 1e-9),
            _ => panic!("singleton quantile should be the value itself"),
        }
    }

    #[test]
    fn gate_closes_far_above_threshold() {
        let tape = Tape::new();
        let grid: Vec<Var> = [0.0, 1.0, 2.0].iter().map(|&x| tape.constant(x)).collect();
        let tau_hat = tape.constant(-100.0);
        assert!(matches!(
            gated_soft_argmax(&tape, &grid, tau_hat, 1.0, 1e-3),
            Err(SoftError::DegenerateWeights)
        ));
    }

    #[test]
    fn gate_concentrates_on_largest_open_threshold() {
        let tape = Tape::new();
        let grid: Vec<Var> = [0.0, 1.0, 2.0, 3.0].iter().map(|&x| tape.constant(x)).collect();
        let tau_hat = tape.constant(2.5);
        let w = gated_soft_argmax(&tape, &grid, tau_hat, 1e3, 1e-6).unwrap();
        assert!(w[2].value() >= 1.0 - 1e-4, "weights {:?}", w.iter().map(|x| x.value()).collect::<Vec<_>>());

        // Appendix-style grid: mass lands on 0.2, the largest value below 0.5.
        let grid: Vec<Var> = [-19.9, 0.1, 0.2, 0.9, 20.9].iter().map(|&x| tape.constant(x)).collect();
        let w = gated_soft_argmax(&tape, &grid, tape.constant(0.5), 1e3, 1e-3).unwrap();
        let argmax = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.value().total_cmp(&b.1.value()))
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
        assert!(w[2].value() > 0.999);
    }

    #[test]
    fn retention_mixes_rows() {
        let tape = Tape::new();
        let q = vec![
            vec![tape.constant(0.1), tape.constant(0.9)],
            vec![tape.constant(0.7), tape.constant(0.7)],
        ];
        let one_hot = [tape.constant(0.0), tape.constant(1.0)];
        let out = soft_retention(&q, &one_hot);
        assert!((out[0].value() - 0.9).abs() < 1e-12);
        // Constant rows are invariant to the mixing weights.
        assert!((out[1].value() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let tape = Tape::new();
        let adg = graph(&[1, 1], &[]);
        let q = vec![vec![tape.constant(1.0), tape.constant(1.0)]];
        let loss = retention_loss(&tape, &[&adg], &q);
        assert!((loss.value() + 2.0).abs() < 1e-12);

        let hallucinated = graph(&[0, 0], &[]);
        let loss = retention_loss(&tape, &[&hallucinated], &q);
        assert_eq!(loss.value(), 0.0);

        let a = graph(&[1, 1], &[]);
        let b = graph(&[1], &[]);
        let qs = vec![
            vec![tape.constant(0.75), tape.constant(0.75)],
            vec![tape.constant(0.5)],
        ];
        let loss = retention_loss(&tape, &[&a, &b], &qs);
        assert!((loss.value() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibrate_singleton_and_reject_paths() {
        let (adg, scorer) = risk_graph(&[1, 0], &[(0, 1)], &[0.3, 0.7]);
        let mut cfg = SoftConfig::sharp();
        cfg.margin_m = 1.0;
        let tape = Tape::new();
        let vars = ScorerVars::inject(&tape, &scorer);

        let tau = soft_calibrate(
            &tape,
            &vars,
            &[&adg],
            0.5,
            &cfg,
            FilterMode::Coherent,
            Orientation::Lower,
        )
        .unwrap();
        let direct = soft_nonconformity(&tape, &vars, &adg, &cfg, FilterMode::Coherent).unwrap();
        match tau {
            SoftThreshold::Value(v) => assert!((v.value() - direct.value()).abs() < 1e-9),
            _ => panic!("singleton calibration should be finite"),
        }

        let q = soft_predict(&tape, &vars, &[&adg], &SoftThreshold::Reject, &cfg, FilterMode::Coherent)
            .unwrap();
        assert!(q[0].iter().all(|x| x.value() <= cfg.epsilon * 2.0));
    }

    #[test]
    fn all_true_calibration_scores_the_grid_top() {
        let (adg, scorer) = risk_graph(&[1, 1, 1], &[(0, 1), (1, 2)], &[0.2, 0.5, 0.9]);
        let risks = hard::risk_scores(&scorer, &adg).unwrap();
        let grid = hard::build_tau_grid(&risks, 20.0).unwrap();
        let tape = Tape::new();
        let vars = ScorerVars::inject(&tape, &scorer);
        let cfg = SoftConfig::sharp();
        let soft_score = soft_nonconformity(&tape, &vars, &adg, &cfg, FilterMode::Coherent).unwrap();
        assert!((soft_score.value() - grid.max()).abs() < 1e-2 * (grid.max() - grid.min()));
    }

    #[test]
    fn config_validation() {
        assert!(SoftConfig::paper_validation().validate().is_ok());
        assert!(SoftConfig::sharp().validate().is_ok());
        let mut bad = SoftConfig::sharp();
        bad.t_p = 0.0;
        assert!(matches!(
            bad.validate(),
            Err(SoftError::InvalidConfig { field: "t_p" })
        ));
    }
}
