//! Scorer training: per-epoch calibration/prediction splits, Adam updates,
//! early stopping on validation retention loss.
//!
//! Each epoch re-draws a random calibration/prediction split of the training
//! problems, runs the differentiable pipeline end to end, and updates the
//! linear scorer from the retention-loss gradient. The monitored metric is
//! the same loss on the validation set, computed with the full training set
//! as calibration data; the best snapshot is returned. Deployment uses the
//! discrete pipeline, so training only ever shapes the scorer.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adg::Adg;
use crate::autodiff::{AutodiffError, Tape};
use crate::hard::{FilterMode, Orientation, ScorerParams};
use crate::soft::{retention_loss, soft_calibrate, soft_predict, ScorerVars, SoftConfig, SoftError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("need at least {needed} problems, got {got}")]
    TooFewProblems { needed: usize, got: usize },
    #[error("train config field `{0}` is out of range")]
    InvalidConfig(&'static str),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite gradient passed to the optimizer")]
    NonFiniteGradient,
    #[error(transparent)]
    Soft(#[from] SoftError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.first_moment.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - crate::math::powf(state.beta1, t as f64);
    let bc2 = 1.0 - crate::math::powf(state.beta2, t as f64);
    for i in 0..params.len() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * grads[i];
        *v = state.beta2 * *v + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= state.lr * m_hat / (crate::math::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

/// Training hyperparameters. `cal_fraction` is the per-epoch calibration
/// share of the training set; the split is re-drawn each epoch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub patience: usize,
    pub cal_fraction: f64,
    pub lr: f64,
    pub risk_offset: f64,
    pub seed: u64,
    pub soft: SoftConfig,
    pub mode: FilterMode,
    pub orientation: Orientation,
}

impl TrainConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            epochs: 100,
            patience: 10,
            cal_fraction: 0.5,
            lr: 0.015,
            risk_offset: 0.0,
            seed: 0,
            soft: SoftConfig::paper_validation(),
            mode: FilterMode::Coherent,
            orientation: Orientation::Lower,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TrainError::InvalidConfig("alpha"));
        }
        if !(self.cal_fraction > 0.0 && self.cal_fraction < 1.0) {
            return Err(TrainError::InvalidConfig("cal_fraction"));
        }
        if self.patience > self.epochs {
            return Err(TrainError::InvalidConfig("patience"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(TrainError::InvalidConfig("lr"));
        }
        if !self.risk_offset.is_finite() {
            return Err(TrainError::InvalidConfig("risk_offset"));
        }
        self.soft.validate()?;
        Ok(())
    }
}

/// Disjoint covering random split of `0..n`: calibration gets
/// floor(n * cal_fraction), at least one problem on each side.
pub fn epoch_split<R: Rng>(n: usize, cal_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    debug_assert!(n >= 2);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let n_cal = ((n as f64 * cal_fraction) as usize).clamp(1, n - 1);
    let mut cal = indices[..n_cal].to_vec();
    let mut pred = indices[n_cal..].to_vec();
    cal.sort_unstable();
    pred.sort_unstable();
    (cal, pred)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains the linear scorer on `train`, early-stopping on `val`.
pub fn train_scorer(
    train: &[Adg],
    val: &[Adg],
    n_features: usize,
    cfg: &TrainConfig,
) -> Result<(ScorerParams, TrainLog), TrainError> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(TrainError::TooFewProblems {
            needed: 2,
            got: train.len(),
        });
    }
    if val.is_empty() {
        return Err(TrainError::TooFewProblems { needed: 1, got: 0 });
    }

    let n_params = n_features + 1;
    let mut theta = vec![0.0; n_params];
    let mut adam = AdamState::new(n_params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all_train: Vec<&Adg> = train.iter().collect();
    let val_refs: Vec<&Adg> = val.iter().collect();

    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best_theta = theta.clone();
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        let (cal_idx, pred_idx) = epoch_split(train.len(), cfg.cal_fraction, &mut rng);
        let cal: Vec<&Adg> = cal_idx.iter().map(|&i| &train[i]).collect();
        let pred: Vec<&Adg> = pred_idx.iter().map(|&i| &train[i]).collect();

        let train_loss;
        {
            let tape = Tape::new();
            let vars = inject(&tape, &theta, cfg.risk_offset);
            let tau_hat = soft_calibrate(&tape, &vars, &cal, cfg.alpha, &cfg.soft, cfg.mode, cfg.orientation)?;
            let retention = soft_predict(&tape, &vars, &pred, &tau_hat, &cfg.soft, cfg.mode)?;
            let loss = retention_loss(&tape, &pred, &retention);
            train_loss = loss.value();
            if !train_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            let grads = tape.backward(loss)?;
            let mut g = Vec::with_capacity(n_params);
            g.extend(vars.weights.iter().map(|&w| grads.wrt(w)));
            g.push(grads.wrt(vars.bias));
            adam_step(&mut adam, &mut theta, &g)?;
        }

        let val_loss = {
            let tape = Tape::new();
            let vars = inject(&tape, &theta, cfg.risk_offset);
            let tau_hat =
                soft_calibrate(&tape, &vars, &all_train, cfg.alpha, &cfg.soft, cfg.mode, cfg.orientation)?;
            let retention = soft_predict(&tape, &vars, &val_refs, &tau_hat, &cfg.soft, cfg.mode)?;
            retention_loss(&tape, &val_refs, &retention).value()
        };
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }

        log.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_theta.copy_from_slice(&theta);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (weights, bias) = best_theta.split_at(n_features);
    let params = ScorerParams::new(weights.to_vec(), bias[0], cfg.risk_offset)
        .expect("adam rejects non-finite gradients, so parameters stay finite");
    Ok((params, log))
}

fn inject<'t>(tape: &'t Tape, theta: &[f64], risk_offset: f64) -> ScorerVars<'t> {
    let (weights, bias) = theta.split_at(theta.len() - 1);
    ScorerVars {
        weights: weights.iter().map(|&w| tape.leaf(w)).collect(),
        bias: tape.leaf(bias[0]),
        risk_offset,
    }
}
