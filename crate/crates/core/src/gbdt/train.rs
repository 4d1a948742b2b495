use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::binning::{BinnedMatrix, FeatureMatrix};
use super::ensemble::StumpEnsemble;
use super::loss::{logistic_grad_hess, mean_log_loss};
use super::stump::{fit_stump, SplitParams};
use super::GbdtError;
use crate::cohort::TaskDataset;
use crate::eval::auroc;

/// Boosting hyperparameters. Depth is fixed at one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_rounds: usize,
    pub learning_rate: f64,
    pub lambda_l2: f64,
    pub min_child_hessian: f64,
    /// Stop after this many rounds without validation-AUROC improvement.
    pub early_stopping_rounds: Option<usize>,
    pub max_bins: usize,
    /// Use every midpoint between distinct values as a candidate.
    pub exact: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_rounds: 200,
            learning_rate: 0.1,
            lambda_l2: 1.0,
            min_child_hessian: 1.0,
            early_stopping_rounds: Some(20),
            max_bins: 256,
            exact: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: String| Err(GbdtError::InvalidConfig(m));
        if self.num_rounds == 0 {
            return bad("num_rounds must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        if !(self.lambda_l2 >= 0.0) || !(self.min_child_hessian >= 0.0) {
            return bad("lambda_l2 and min_child_hessian must be >= 0".into());
        }
        if self.max_bins < 2 {
            return bad("max_bins must be at least 2".into());
        }
        if self.early_stopping_rounds == Some(0) {
            return bad("early_stopping_rounds must be positive".into());
        }
        Ok(())
    }

    /// Stable single-line rendering of every setting.
    pub fn canonical(&self) -> String {
        let es = self
            .early_stopping_rounds
            .map_or_else(|| "none".to_string(), |r| r.to_string());
        format!(
            "max_depth=1;num_rounds={};learning_rate={:?};lambda_l2={:?};min_child_hessian={:?};early_stopping_rounds={};max_bins={};exact={};seed={}",
            self.num_rounds,
            self.learning_rate,
            self.lambda_l2,
            self.min_child_hessian,
            es,
            self.max_bins,
            self.exact,
            self.seed
        )
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn split_params(&self) -> SplitParams {
        SplitParams {
            lambda_l2: self.lambda_l2,
            min_child_hessian: self.min_child_hessian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxRounds,
    NoValidSplit,
    EarlyStopping,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    /// Number of stumps in the model after this round (1-based).
    pub round: usize,
    pub gain: f64,
    pub train_log_loss: f64,
    pub validation_auroc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StumpEnsemble,
    pub history: Vec<RoundStats>,
    /// Stump count the model was truncated to.
    pub best_round: usize,
    pub stop_reason: StopReason,
}

fn check_labels(labels: &[bool], fold: &'static str) -> Result<f64, GbdtError> {
    if labels.is_empty() {
        return Err(GbdtError::DegenerateLabels(fold));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(GbdtError::DegenerateLabels(fold));
    }
    Ok(pos as f64 / labels.len() as f64)
}

/// Trains on a task's train fold with early stopping on its validation fold.
pub fn train(
    train: &TaskDataset,
    validation: &TaskDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, GbdtError> {
    let n = train.feature_names.len();
    let x_train = FeatureMatrix::from_rows(&train.rows(), n)?;
    let x_val = FeatureMatrix::from_rows(&validation.rows(), n)?;
    train_matrix(
        &x_train,
        &train.labels(),
        &x_val,
        &validation.labels(),
        train.feature_names.clone(),
        config,
    )
}

pub fn train_matrix(
    x_train: &FeatureMatrix,
    y_train: &[bool],
    x_val: &FeatureMatrix,
    y_val: &[bool],
    feature_names: Vec<String>,
    config: &TrainConfig,
) -> Result<TrainOutcome, GbdtError> {
    config.validate()?;
    if x_train.n_cols() != feature_names.len() || x_val.n_cols() != feature_names.len() {
        return Err(GbdtError::FeatureCountMismatch {
            expected: feature_names.len(),
            got: x_train.n_cols().min(x_val.n_cols()),
        });
    }
    let prevalence = check_labels(y_train, "train")?;
    check_labels(y_val, "validation")?;

    let base_score = (prevalence / (1.0 - prevalence)).ln();
    let lr = config.learning_rate;
    let binned = BinnedMatrix::new(x_train, config.max_bins, config.exact);
    let params = config.split_params();

    let mut train_margin = vec![base_score; x_train.n_rows()];
    let mut val_margin = vec![base_score; x_val.n_rows()];
    let mut stumps = Vec::new();
    let mut history = Vec::new();
    let mut best_auroc = auroc(&val_margin, y_val).expect("validation has both classes");
    let mut best_round = 0;
    let mut stop_reason = StopReason::MaxRounds;

    for round in 1..=config.num_rounds {
        let (grad, hess): (Vec<f64>, Vec<f64>) = train_margin
            .par_iter()
            .zip(y_train.par_iter())
            .map(|(&m, &y)| logistic_grad_hess(m, y))
            .unzip();
        let split = match fit_stump(&binned, &grad, &hess, &params) {
            Ok(s) => s,
            Err(GbdtError::NoValidSplit) => {
                stop_reason = StopReason::NoValidSplit;
                break;
            }
            Err(e) => return Err(e),
        };
        let stump = split.stump;
        let col = x_train.column(stump.feature_index);
        train_margin.par_iter_mut().zip(col.par_iter()).for_each(|(m, &v)| {
            *m += lr * stump.leaf((!v.is_nan()).then_some(v));
        });
        let vcol = x_val.column(stump.feature_index);
        val_margin.par_iter_mut().zip(vcol.par_iter()).for_each(|(m, &v)| {
            *m += lr * stump.leaf((!v.is_nan()).then_some(v));
        });
        stumps.push(stump);

        let val_auroc = auroc(&val_margin, y_val).expect("validation has both classes");
        history.push(RoundStats {
            round,
            gain: split.gain,
            train_log_loss: mean_log_loss(&train_margin, y_train),
            validation_auroc: val_auroc,
        });
        if val_auroc > best_auroc {
            best_auroc = val_auroc;
            best_round = round;
        }
        if let Some(patience) = config.early_stopping_rounds {
            if round - best_round >= patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }

    if config.early_stopping_rounds.is_some() {
        stumps.truncate(best_round);
    } else {
        best_round = stumps.len();
    }

    Ok(TrainOutcome {
        model: StumpEnsemble {
            base_score,
            learning_rate: lr,
            stumps,
            feature_names,
            training_config: config.canonical(),
            training_config_digest: config.digest(),
        },
        history,
        best_round,
        stop_reason,
    })
}
