//! Scoring of prior and posterior estimates against ground truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Truth;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {estimate} estimates vs {truth} truth values")]
    LengthMismatch { estimate: usize, truth: usize },
    #[error("nothing to score")]
    Empty,
}

pub fn prior_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs()
}

pub fn posterior_mae(estimate: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(estimate.len(), truth.len())?;
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / estimate.len() as f64)
}

fn check_lengths(estimate: usize, truth: usize) -> Result<(), EvalError> {
    if estimate != truth {
        return Err(EvalError::LengthMismatch { estimate, truth });
    }
    if estimate == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// ROC-AUC as the Mann-Whitney statistic with mid-ranks for ties.
/// `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], is_positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), is_positive.len());
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| is_positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub f1: f64,
    pub roc_auc: Option<f64>,
}

/// Accuracy and F1 at threshold 0.5 (ties count positive) plus ROC-AUC.
/// F1 is 0 when precision + recall is 0.
pub fn classification_scores(
    posteriors: &[f64],
    truth: &[Truth],
) -> Result<ClassificationScores, EvalError> {
    check_lengths(posteriors.len(), truth.len())?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, t) in posteriors.iter().zip(truth) {
        match (p >= 0.5, t.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / posteriors.len() as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let labels: Vec<bool> = truth.iter().map(|t| t.is_positive()).collect();
    Ok(ClassificationScores {
        accuracy,
        f1,
        roc_auc: roc_auc(posteriors, &labels),
    })
}

/// Scores of a single repeat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatScores {
    pub prior_abs_err: f64,
    pub posterior_mae: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<f64>,
}

/// Means over repeats. Optional fields average the repeats that have them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub prior_abs_err: f64,
    pub prior_abs_err_std: f64,
    pub posterior_mae: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub n_repeats: usize,
    pub per_repeat: Vec<RepeatScores>,
}

impl ScoreReport {
    pub fn aggregate(per_repeat: Vec<RepeatScores>) -> Result<Self, EvalError> {
        if per_repeat.is_empty() {
            return Err(EvalError::Empty);
        }
        let mean_of = |f: fn(&RepeatScores) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = per_repeat.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| crate::stats::mean(&vals))
        };
        let priors: Vec<f64> = per_repeat.iter().map(|r| r.prior_abs_err).collect();
        Ok(Self {
            prior_abs_err: crate::stats::mean(&priors),
            prior_abs_err_std: crate::stats::population_variance(&priors).sqrt(),
            posterior_mae: mean_of(|r| r.posterior_mae),
            accuracy: mean_of(|r| r.accuracy),
            f1: mean_of(|r| r.f1),
            roc_auc: mean_of(|r| r.roc_auc),
            n_repeats: per_repeat.len(),
            per_repeat,
        })
    }
}
