//! Candidate generation and the soup selection procedures.
//!
//! Only full soup evaluations on the validation split consume budget.
//! Logit-cache lookups are free, and the oracle's test-set evaluations are
//! diagnostic and not charged.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::approx::{mask_tiebreak, rank_candidates, score_candidate, Candidate, PriorConfig};
use crate::cache::LogitCache;
use crate::error::{Result, SoupError};
use crate::net::{ArchDescriptor, Dataset, WeightVector};
use crate::soup::{evaluate_soup, uniform_mix, EvalResult, SubsetMask};

/// Largest zoo accepted by [`enumerate_all`].
pub const MAX_ENUMERATE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    allowed: usize,
    spent: usize,
}

impl Budget {
    pub fn new(allowed: usize) -> Result<Self> {
        if allowed == 0 {
            return Err(SoupError::InvalidInput("budget must allow at least one evaluation".into()));
        }
        Ok(Self { allowed, spent: 0 })
    }

    pub fn allowed(&self) -> usize {
        self.allowed
    }

    pub fn spent(&self) -> usize {
        self.spent
    }

    pub fn remaining(&self) -> usize {
        self.allowed - self.spent
    }

    fn charge(&mut self) -> Result<()> {
        if self.spent >= self.allowed {
            return Err(SoupError::BudgetExhausted {
                allowed: self.allowed,
            });
        }
        self.spent += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Radin,
    Oracle,
    Uniform,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Radin => "radin",
            Method::Oracle => "oracle",
            Method::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub winner: Candidate,
    pub evaluated: Vec<Candidate>,
    pub budget: Budget,
}

/// Masks whose size is drawn uniformly from `2..=n-1` and whose members are
/// drawn uniformly without replacement; duplicates are redrawn.
pub fn sample_candidates_mc(n: usize, count: usize, seed: u64) -> Result<Vec<SubsetMask>> {
    if n < 3 {
        return Err(SoupError::InvalidInput(format!(
            "Monte-Carlo sampling needs a zoo of at least 3 models, got {n}"
        )));
    }
    if n > 64 {
        return Err(SoupError::InvalidInput(format!("zoo of {n} models is too large to sample")));
    }
    // sizes 2..=n-1: everything except the empty set, singletons and the full set
    let available = (1u128 << n) - n as u128 - 2;
    if count as u128 > available {
        return Err(SoupError::TooManyCandidates {
            requested: count,
            available,
            max_size: n - 1,
        });
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let size = rng.random_range(2..=n - 1);
        let members = index::sample(&mut rng, n, size).into_vec();
        let mask = SubsetMask::new(members, n)?;
        if seen.insert(mask.clone()) {
            out.push(mask);
        }
    }
    Ok(out)
}

/// Every non-empty subset of `0..n`, lexicographically ordered.
pub fn enumerate_all(n: usize) -> Result<Vec<SubsetMask>> {
    if n == 0 || n > MAX_ENUMERATE {
        return Err(SoupError::InvalidInput(format!(
            "exhaustive enumeration supports 1..={MAX_ENUMERATE} models, got {n}"
        )));
    }
    let mut out: Vec<SubsetMask> = (1u32..(1 << n))
        .map(|bits| {
            let members = (0..n).filter(|k| bits >> k & 1 == 1).collect();
            SubsetMask::new(members, n)
        })
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn check_inputs(zoo: &[WeightVector], cache: &LogitCache, val: &Dataset) -> Result<()> {
    if zoo.is_empty() {
        return Err(SoupError::InvalidInput("empty zoo".into()));
    }
    if cache.n_models() != zoo.len() {
        return Err(SoupError::DimensionMismatch {
            what: "logit cache model count",
            expected: zoo.len(),
            actual: cache.n_models(),
        });
    }
    cache.check_dataset(val)
}

fn charged_eval(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    val: &Dataset,
    mask: &SubsetMask,
    budget: &mut Budget,
) -> Result<EvalResult> {
    budget.charge()?;
    evaluate_soup(arch, zoo, &uniform_mix(mask, zoo.len())?, val)
}

/// Greedy ingredient addition over models sorted by individual validation
/// accuracy (read from the cache, free; ties keep manifest order).
///
/// A model is kept when the soup's validation accuracy does not drop. The
/// empty soup counts as `-inf`, so the best single model always enters.
/// Only the first `budget` models are tried; `None` means all `N`.
pub fn greedy_soup(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    cache: &LogitCache,
    val: &Dataset,
    budget: Option<usize>,
) -> Result<SelectionReport> {
    check_inputs(zoo, cache, val)?;
    let n = zoo.len();
    let individual = cache.per_model_eval()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| individual[b].accuracy.total_cmp(&individual[a].accuracy).then(a.cmp(&b)));

    let mut budget = Budget::new(budget.unwrap_or(n))?;
    let steps = budget.allowed().min(n);
    let mut evaluated = Vec::with_capacity(steps);
    let mut soup: Option<SubsetMask> = None;
    let mut current = f64::NEG_INFINITY;
    let mut winner_idx = 0;

    for &k in order.iter().take(steps) {
        let trial = match &soup {
            Some(s) => s.with(k),
            None => SubsetMask::new(vec![k], n)?,
        };
        let eval = charged_eval(arch, zoo, val, &trial, &mut budget)?;
        let mut cand = Candidate::new(trial.clone());
        cand.record_true_val(eval)?;
        evaluated.push(cand);
        if eval.accuracy >= current {
            current = eval.accuracy;
            soup = Some(trial);
            winner_idx = evaluated.len() - 1;
        }
    }
    Ok(SelectionReport {
        method: Method::Greedy,
        lambda: None,
        winner: evaluated[winner_idx].clone(),
        evaluated,
        budget,
    })
}

/// Winner among evaluated candidates: best accuracy under `key`, then the
/// larger mask, then the lexicographically smaller mask.
fn best_by(cands: &[Candidate], key: impl Fn(&Candidate) -> f64) -> usize {
    let mut best = 0;
    for i in 1..cands.len() {
        let ord = key(&cands[i])
            .total_cmp(&key(&cands[best]))
            .then_with(|| mask_tiebreak(cands[best].mask(), cands[i].mask()));
        if ord.is_gt() {
            best = i;
        }
    }
    best
}

/// Two-stage selection: rank every candidate by its cached-logit score, run
/// full validation on the top `min(b, |candidates|)` and return the best of
/// those by true validation accuracy.
pub fn radin(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    cache: &LogitCache,
    val: &Dataset,
    candidates: &[SubsetMask],
    b: usize,
    prior: PriorConfig,
) -> Result<SelectionReport> {
    if b == 0 {
        return Err(SoupError::InvalidInput("budget B must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(SoupError::InvalidInput("no candidates to select from".into()));
    }
    check_inputs(zoo, cache, val)?;
    let scored = candidates
        .iter()
        .map(|m| score_candidate(cache, &Candidate::new(m.clone()), prior))
        .collect::<Result<Vec<_>>>()?;
    let ranked = rank_candidates(&scored)?;

    let mut budget = Budget::new(b)?;
    let mut evaluated = Vec::with_capacity(b.min(ranked.len()));
    for mut cand in ranked.into_iter().take(b) {
        let eval = charged_eval(arch, zoo, val, cand.mask(), &mut budget)?;
        cand.record_true_val(eval)?;
        evaluated.push(cand);
    }
    let w = best_by(&evaluated, |c| c.true_val().map_or(f64::NEG_INFINITY, |r| r.accuracy));
    Ok(SelectionReport {
        method: Method::Radin,
        lambda: Some(prior.lambda()),
        winner: evaluated[w].clone(),
        evaluated,
        budget,
    })
}

/// Best candidate by test accuracy. A diagnostic upper bound; it reads the
/// test split and is never used to pick a soup.
pub fn oracle(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    test: &Dataset,
    candidates: &[SubsetMask],
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(SoupError::InvalidInput("no candidates to select from".into()));
    }
    let mut evaluated = Vec::with_capacity(candidates.len());
    for m in candidates {
        let mut cand = Candidate::new(m.clone());
        cand.record_true_test(evaluate_soup(arch, zoo, &uniform_mix(m, zoo.len())?, test)?)?;
        evaluated.push(cand);
    }
    let w = best_by(&evaluated, |c| c.true_test().map_or(f64::NEG_INFINITY, |r| r.accuracy));
    Ok(SelectionReport {
        method: Method::Oracle,
        lambda: None,
        winner: evaluated[w].clone(),
        evaluated,
        budget: Budget {
            allowed: candidates.len(),
            spent: 0,
        },
    })
}

/// The soup of all `N` models, one budget unit.
pub fn uniform_soup(arch: &ArchDescriptor, zoo: &[WeightVector], val: &Dataset) -> Result<SelectionReport> {
    let mask = SubsetMask::full(zoo.len())?;
    let mut budget = Budget::new(1)?;
    let mut cand = Candidate::new(mask.clone());
    cand.record_true_val(charged_eval(arch, zoo, val, &mask, &mut budget)?)?;
    Ok(SelectionReport {
        method: Method::Uniform,
        lambda: None,
        winner: cand.clone(),
        evaluated: vec![cand],
        budget,
    })
}

/// Fills `true_test` of a report's winner (not budgeted).
pub fn attach_test(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    test: &Dataset,
    report: &mut SelectionReport,
) -> Result<()> {
    if report.winner.true_test().is_none() {
        let p = uniform_mix(report.winner.mask(), zoo.len())?;
        report.winner.record_true_test(evaluate_soup(arch, zoo, &p, test)?)?;
    }
    Ok(())
}
