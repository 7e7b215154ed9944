//! Budget-free candidate scoring from the logit cache, and ranking.
//!
//! A candidate's fast score is the accuracy of the uniform logit ensemble
//! over its members. The optional count prior adds `lambda * |mask| / N`
//! and is maximised together with the accuracy, so `lambda > 0` pushes the
//! ranking toward soups with more ingredients.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cache::{ensemble_eval, LogitCache};
use crate::error::{Result, SoupError};
use crate::soup::{uniform_mix, EvalResult, SubsetMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    lambda: f64,
}

impl PriorConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(SoupError::InvalidInput(format!(
                "prior lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn none() -> Self {
        Self { lambda: 0.0 }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// A soup under consideration. Every score slot can be written once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    mask: SubsetMask,
    approx_acc: Option<f64>,
    approx_loss: Option<f64>,
    prior_score: Option<f64>,
    true_val: Option<EvalResult>,
    true_test: Option<EvalResult>,
}

fn set_once<T>(slot: &mut Option<T>, value: T, what: &str, mask: &SubsetMask) -> Result<()> {
    if slot.is_some() {
        return Err(SoupError::InvalidInput(format!(
            "{what} of candidate {mask} is already set"
        )));
    }
    *slot = Some(value);
    Ok(())
}

impl Candidate {
    pub fn new(mask: SubsetMask) -> Self {
        Self {
            mask,
            approx_acc: None,
            approx_loss: None,
            prior_score: None,
            true_val: None,
            true_test: None,
        }
    }

    pub fn mask(&self) -> &SubsetMask {
        &self.mask
    }

    pub fn approx_acc(&self) -> Option<f64> {
        self.approx_acc
    }

    pub fn approx_loss(&self) -> Option<f64> {
        self.approx_loss
    }

    pub fn prior_score(&self) -> Option<f64> {
        self.prior_score
    }

    pub fn true_val(&self) -> Option<&EvalResult> {
        self.true_val.as_ref()
    }

    pub fn true_test(&self) -> Option<&EvalResult> {
        self.true_test.as_ref()
    }

    pub fn record_true_val(&mut self, r: EvalResult) -> Result<()> {
        set_once(&mut self.true_val, r, "validation result", &self.mask)
    }

    pub fn record_true_test(&mut self, r: EvalResult) -> Result<()> {
        set_once(&mut self.true_test, r, "test result", &self.mask)
    }
}

/// Fills the approximate accuracy, loss and prior score of `cand`.
pub fn score_candidate(cache: &LogitCache, cand: &Candidate, prior: PriorConfig) -> Result<Candidate> {
    let n = cache.n_models();
    let eval = ensemble_eval(cache, &uniform_mix(&cand.mask, n)?)?;
    let mut out = cand.clone();
    set_once(&mut out.approx_acc, eval.accuracy, "approximate accuracy", &cand.mask)?;
    set_once(&mut out.approx_loss, eval.mean_loss, "approximate loss", &cand.mask)?;
    let score = eval.accuracy + prior.lambda * (cand.mask.len() as f64 / n as f64);
    set_once(&mut out.prior_score, score, "prior score", &cand.mask)?;
    Ok(out)
}

/// Larger masks first, then the lexicographically smaller mask.
pub(crate) fn mask_tiebreak(a: &SubsetMask, b: &SubsetMask) -> Ordering {
    b.len().cmp(&a.len()).then_with(|| a.cmp(b))
}

/// Ranking order: descending prior score, then [`mask_tiebreak`].
pub fn rank_cmp(a: &Candidate, b: &Candidate) -> Ordering {
    let sa = a.prior_score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.prior_score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa).then_with(|| mask_tiebreak(&a.mask, &b.mask))
}

pub fn rank_candidates(cands: &[Candidate]) -> Result<Vec<Candidate>> {
    if let Some(c) = cands.iter().find(|c| c.prior_score.is_none()) {
        return Err(SoupError::InvalidInput(format!(
            "candidate {} has not been scored",
            c.mask
        )));
    }
    let mut out = cands.to_vec();
    out.sort_by(rank_cmp);
    Ok(out)
}
