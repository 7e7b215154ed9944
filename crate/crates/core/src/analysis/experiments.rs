//! Diagnostic experiments over a zoo: fast-vs-true correlation, budget
//! sweeps and the spread of soup accuracy by ingredient count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{kendall_tau, mann_whitney_u, spearman, spearman_permutation_p, MannWhitney};
use crate::approx::{score_candidate, Candidate, PriorConfig};
use crate::cache::LogitCache;
use crate::error::{Result, SoupError};
use crate::net::{ArchDescriptor, Dataset, WeightVector};
use crate::select::{attach_test, greedy_soup, radin, uniform_soup, Method, SelectionReport};
use crate::soup::{evaluate_soup, uniform_mix, SubsetMask};

/// Shuffles used for the Spearman permutation p-values.
pub const PERMUTATIONS: usize = 9999;
const PERMUTATION_SEED: u64 = 0x5eed;

pub(crate) mod mask_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::soup::SubsetMask;

    pub fn serialize<S: Serializer>(m: &SubsetMask, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(m)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SubsetMask, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    #[serde(with = "mask_text")]
    pub mask: SubsetMask,
    pub size: usize,
    pub approx_val_acc: f64,
    pub true_val_acc: f64,
    pub true_test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterTable {
    pub rows: Vec<ScatterRow>,
    pub spearman_val: Option<f64>,
    pub spearman_test: Option<f64>,
    pub permutation_p_val: Option<f64>,
    pub permutation_p_test: Option<f64>,
}

impl ScatterTable {
    /// Builds the table and its correlation summary. Correlations that are
    /// undefined (fewer than 3 rows, constant column) are left absent.
    pub fn from_rows(rows: Vec<ScatterRow>) -> Self {
        let approx: Vec<f64> = rows.iter().map(|r| r.approx_val_acc).collect();
        let val: Vec<f64> = rows.iter().map(|r| r.true_val_acc).collect();
        let test: Vec<f64> = rows.iter().map(|r| r.true_test_acc).collect();
        let rho = |ys: &[f64]| spearman(&approx, ys).ok();
        let p = |ys: &[f64]| spearman_permutation_p(&approx, ys, PERMUTATIONS, PERMUTATION_SEED).ok();
        Self {
            spearman_val: rho(&val),
            spearman_test: rho(&test),
            permutation_p_val: p(&val),
            permutation_p_test: p(&test),
            rows,
        }
    }

    pub fn from_candidates(cands: &[Candidate]) -> Result<Self> {
        let rows = cands
            .iter()
            .map(|c| {
                let missing = |what: &str| SoupError::InvalidInput(format!("candidate {} lacks {what}", c.mask()));
                Ok(ScatterRow {
                    mask: c.mask().clone(),
                    size: c.mask().len(),
                    approx_val_acc: c.approx_acc().ok_or_else(|| missing("an approximate score"))?,
                    true_val_acc: c.true_val().ok_or_else(|| missing("a validation result"))?.accuracy,
                    true_test_acc: c.true_test().ok_or_else(|| missing("a test result"))?.accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_rows(rows))
    }
}

/// Scores every mask from the cache and fully evaluates it on both
/// validation and test. Unbudgeted; for diagnostics only.
pub fn evaluate_candidates(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    cache: &LogitCache,
    masks: &[SubsetMask],
    val: &Dataset,
    test: &Dataset,
) -> Result<Vec<Candidate>> {
    cache.check_dataset(val)?;
    masks
        .iter()
        .map(|m| {
            let mut c = score_candidate(cache, &Candidate::new(m.clone()), PriorConfig::none())?;
            let p = uniform_mix(m, zoo.len())?;
            c.record_true_val(evaluate_soup(arch, zoo, &p, val)?)?;
            c.record_true_test(evaluate_soup(arch, zoo, &p, test)?)?;
            Ok(c)
        })
        .collect()
}

/// Fast validation estimate against true validation and test accuracy.
pub fn correlate_experiment(
    cache: &LogitCache,
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    masks: &[SubsetMask],
    val: &Dataset,
    test: &Dataset,
) -> Result<ScatterTable> {
    ScatterTable::from_candidates(&evaluate_candidates(arch, zoo, cache, masks, val, test)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: usize,
    pub method: Method,
    pub lambda: Option<f64>,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Rows of one method (and lambda, for ranked selection), in budget order.
    pub fn series(&self, method: Method, lambda: Option<f64>) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.lambda == lambda)
            .collect()
    }
}

fn sweep_row(budget: usize, report: &SelectionReport) -> SweepRow {
    SweepRow {
        budget,
        method: report.method,
        lambda: report.lambda,
        val_acc: report.winner.true_val().map_or(f64::NAN, |r| r.accuracy),
        test_acc: report.winner.true_test().map_or(f64::NAN, |r| r.accuracy),
    }
}

/// For every budget: greedy (stopped after `B` evaluations, so it holds its
/// final value once `B >= N`), ranked selection for each lambda, and the
/// uniform soup. Rows are ordered by budget, then in that method order.
#[allow(clippy::too_many_arguments)]
pub fn budget_sweep(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    cache: &LogitCache,
    masks: &[SubsetMask],
    budgets: &[usize],
    lambdas: &[f64],
    val: &Dataset,
    test: &Dataset,
) -> Result<SweepReport> {
    if budgets.is_empty() {
        return Err(SoupError::InvalidInput("budget range is empty".into()));
    }
    let priors = lambdas
        .iter()
        .map(|&l| PriorConfig::new(l))
        .collect::<Result<Vec<_>>>()?;
    let mut uniform = uniform_soup(arch, zoo, val)?;
    attach_test(arch, zoo, test, &mut uniform)?;

    let mut rows = Vec::with_capacity(budgets.len() * (priors.len() + 2));
    for &b in budgets {
        let mut greedy = greedy_soup(arch, zoo, cache, val, Some(b))?;
        attach_test(arch, zoo, test, &mut greedy)?;
        rows.push(sweep_row(b, &greedy));
        for &prior in &priors {
            let mut r = radin(arch, zoo, cache, val, masks, b, prior)?;
            attach_test(arch, zoo, test, &mut r)?;
            rows.push(sweep_row(b, &r));
        }
        rows.push(sweep_row(b, &uniform));
    }
    Ok(SweepReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub count: usize,
    pub n: usize,
    pub mean: f64,
    /// Population variance (divides by `n`).
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub rows: Vec<CountRow>,
    /// Soups with more than `N/2` members against the rest, on test accuracy.
    pub mann_whitney: Option<MannWhitney>,
    pub large_group: usize,
    pub small_group: usize,
    /// Kendall tau between ingredient count and per-count variance.
    pub kendall_count_variance: Option<f64>,
}

/// Test-accuracy statistics grouped by soup size.
pub fn variance_by_count(cands: &[Candidate], n_models: usize) -> Result<VarianceReport> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in cands {
        let acc = c
            .true_test()
            .ok_or_else(|| SoupError::InvalidInput(format!("candidate {} has no test result", c.mask())))?
            .accuracy;
        groups.entry(c.mask().len()).or_default().push(acc);
    }
    let rows: Vec<CountRow> = groups
        .iter()
        .map(|(&count, accs)| {
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let variance = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            CountRow {
                count,
                n: accs.len(),
                mean,
                variance,
                min: accs.iter().copied().fold(f64::INFINITY, f64::min),
                max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    let half = n_models as f64 / 2.0;
    let (mut large, mut small) = (Vec::new(), Vec::new());
    for (&count, accs) in &groups {
        if count as f64 > half {
            large.extend_from_slice(accs);
        } else {
            small.extend_from_slice(accs);
        }
    }
    let mann_whitney = if large.is_empty() || small.is_empty() {
        None
    } else {
        Some(mann_whitney_u(&large, &small)?)
    };
    let counts: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
    let vars: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    Ok(VarianceReport {
        kendall_count_variance: kendall_tau(&counts, &vars).ok(),
        large_group: large.len(),
        small_group: small.len(),
        mann_whitney,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soup::EvalResult;

    fn cand(members: Vec<usize>, n: usize, test_acc: f64) -> Candidate {
        let mut c = Candidate::new(SubsetMask::new(members, n).unwrap());
        c.record_true_test(EvalResult { accuracy: test_acc, mean_loss: 1.0, n_examples: 10 }).unwrap();
        c
    }

    #[test]
    fn single_size_has_one_row_and_no_test() {
        let cs = vec![cand(vec![0, 1], 6, 0.5), cand(vec![2, 3], 6, 0.7), cand(vec![1, 4], 6, 0.6)];
        let r = variance_by_count(&cs, 6).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].n, 3);
        assert!((r.rows[0].mean - 0.6).abs() < 1e-12);
        assert!((r.rows[0].variance - 0.02 / 3.0).abs() < 1e-12);
        assert_eq!((r.rows[0].min, r.rows[0].max), (0.5, 0.7));
        assert!(r.mann_whitney.is_none());
        assert!(r.kendall_count_variance.is_none());
    }

    #[test]
    fn separated_groups_are_significant() {
        let mut cs = Vec::new();
        for i in 0..8 {
            cs.push(cand(vec![0, 1], 8, 0.50 + i as f64 * 0.001));
            cs.push(cand(vec![0, 1, 2, 3, 4, 5], 8, 0.90 + i as f64 * 0.001));
        }
        let r = variance_by_count(&cs, 8).unwrap();
        let mw = r.mann_whitney.unwrap();
        assert!(mw.p_value < 0.01);
        assert_eq!((r.large_group, r.small_group), (8, 8));
    }

    #[test]
    fn missing_test_is_an_error() {
        let c = Candidate::new(SubsetMask::new(vec![0, 1], 3).unwrap());
        assert!(variance_by_count(&[c], 3).is_err());
    }

    #[test]
    fn tiny_scatter_has_no_correlation() {
        let row = ScatterRow {
            mask: SubsetMask::new(vec![0, 1], 3).unwrap(),
            size: 2,
            approx_val_acc: 0.5,
            true_val_acc: 0.5,
            true_test_acc: 0.4,
        };
        let t = ScatterTable::from_rows(vec![row]);
        assert_eq!(t.rows.len(), 1);
        assert!(t.spearman_val.is_none() && t.spearman_test.is_none());
    }
}
