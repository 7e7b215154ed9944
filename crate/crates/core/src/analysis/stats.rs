//! Rank statistics: Spearman and Kendall correlation, a permutation test
//! for Spearman, and the Mann-Whitney U test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use crate::error::{Result, SoupError};

/// Largest group size for which Mann-Whitney uses the exact null
/// distribution (when there are no ties).
pub const MWU_EXACT_MAX: usize = 20;

fn check_finite(xs: &[f64], name: &str) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(SoupError::InvalidInput(format!("{name} contains a non-finite value")));
    }
    Ok(())
}

/// 1-based ranks, ties receiving the average of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Result<Vec<f64>> {
    check_finite(xs, "rank input")?;
    Ok(Data::new(xs.to_vec()).ranks(RankTieBreaker::Average))
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(SoupError::DimensionMismatch {
            what: "correlation sample lengths",
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(SoupError::InvalidInput(format!(
            "correlation needs at least 3 pairs, got {}",
            xs.len()
        )));
    }
    Ok(())
}

/// Pearson correlation of average ranks. Errors when either input is
/// constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let rx = average_ranks(xs)?;
    let ry = average_ranks(ys)?;
    pearson(&rx, &ry).ok_or_else(|| SoupError::Undefined("spearman correlation of a constant input".into()))
}

/// Two-sided permutation p-value for Spearman's rho: the share of
/// `n_perm` shuffles of `ys` whose |rho| reaches the observed |rho|, with
/// the usual +1 correction so p is never zero.
pub fn spearman_permutation_p(xs: &[f64], ys: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    let observed = spearman(xs, ys)?.abs();
    let rx = average_ranks(xs)?;
    let mut ry = average_ranks(ys)?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        ry.shuffle(&mut rng);
        let rho = pearson(&rx, &ry).unwrap_or(0.0).abs();
        if rho >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (n_perm + 1) as f64)
}

/// Kendall's tau-b.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    check_finite(xs, "kendall x")?;
    check_finite(ys, "kendall y")?;
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let dx = (xs[i] - xs[j]).signum() as i64 * ((xs[i] != xs[j]) as i64);
            let dy = (ys[i] - ys[j]).signum() as i64 * ((ys[i] != ys[j]) as i64);
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let denom = (((concordant + discordant + tie_x) * (concordant + discordant + tie_y)) as f64).sqrt();
    if denom == 0.0 {
        return Err(SoupError::Undefined("kendall tau of a constant input".into()));
    }
    Ok((concordant - discordant) as f64 / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MwuMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub method: MwuMethod,
}

/// Number of rank arrangements of `m` vs `n` items giving each U value,
/// `counts[u]` for `u` in `0..=m*n`.
fn exact_u_counts(m: usize, n: usize) -> Vec<f64> {
    // table[j][u] for the current number of first-sample items i
    let max = m * n;
    let mut prev: Vec<Vec<f64>> = (0..=n)
        .map(|_| {
            let mut v = vec![0.0; max + 1];
            v[0] = 1.0;
            v
        })
        .collect();
    for i in 1..=m {
        let mut cur = vec![vec![0.0; max + 1]; n + 1];
        cur[0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                // the largest item belongs to sample one (beats all j) or sample two
                let from_first = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = from_first + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Two-sided Mann-Whitney U test. Exact null distribution when both groups
/// have at most [`MWU_EXACT_MAX`] members and no value is tied; otherwise
/// the normal approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(SoupError::InvalidInput("Mann-Whitney needs two non-empty groups".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let mut joined = a.to_vec();
    joined.extend_from_slice(b);
    let ranks = average_ranks(&joined)?;
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let mut sorted = joined.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let (nf1, nf2) = (n1 as f64, n2 as f64);
    if tie_term == 0.0 && n1.max(n2) <= MWU_EXACT_MAX {
        let counts = exact_u_counts(n1, n2);
        let total: f64 = counts.iter().sum();
        let k = u.round() as usize;
        let lower: f64 = counts[..=k].iter().sum::<f64>() / total;
        let upper: f64 = counts[k..].iter().sum::<f64>() / total;
        return Ok(MannWhitney {
            u,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            method: MwuMethod::Exact,
        });
    }

    let n = nf1 + nf2;
    let mean = nf1 * nf2 / 2.0;
    let var = nf1 * nf2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_value,
        method: MwuMethod::Normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook rank-difference form, valid without ties.
    fn spearman_rank_difference(xs: &[f64], ys: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|x| 1.0 + v.iter().filter(|y| *y < x).count() as f64).collect()
        };
        let (rx, ry) = (rank(xs), rank(ys));
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let n = xs.len() as f64;
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn spearman_extremes() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&xs, &xs).unwrap(), 1.0);
        let rev: Vec<f64> = xs.iter().rev().copied().collect();
        assert_eq!(spearman(&xs, &rev).unwrap(), -1.0);
    }

    #[test]
    fn spearman_small_hand_example() {
        // d = (-1, 1, -1, 1, 0), sum d^2 = 4: rho = 1 - 24 / 120 = 0.8
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 5.0];
        let oracle = spearman_rank_difference(&xs, &ys);
        assert_eq!(oracle, 0.8);
        assert!((spearman(&xs, &ys).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(SoupError::Undefined(_))));
        assert!(spearman(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn spearman_with_ties_matches_scipy() {
        // scipy.stats.spearmanr([1,2,2,3,4],[1,3,2,2,5]).statistic
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 2.0, 5.0]).unwrap();
        assert!((rho - 0.763_157_894_736_842).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn permutation_p_small_for_strong_association() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + ((x * 7.3).sin() * 5.0)).collect();
        let p = spearman_permutation_p(&xs, &ys, 999, 1).unwrap();
        assert_eq!(p, 1.0 / 1000.0);
        let noise: Vec<f64> = (0..50).map(|i| ((i * 37 % 50) as f64 * 1.7).sin()).collect();
        assert!(spearman_permutation_p(&xs, &noise, 999, 1).unwrap() > 0.01);
    }

    #[test]
    fn kendall_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&xs, &xs).unwrap(), 1.0);
        assert_eq!(kendall_tau(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        // scipy.stats.kendalltau([1,2,3,4,5],[3,1,2,5,4]).statistic = 0.4
        assert!((kendall_tau(&[1.0, 2.0, 3.0, 4.0, 5.0], &[3.0, 1.0, 2.0, 5.0, 4.0]).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_exact_separated_groups() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (10..20).map(|i| i as f64).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, MwuMethod::Exact);
        assert_eq!(r.u, 0.0);
        // scipy.stats.mannwhitneyu(range(10), range(10, 20), method="exact").pvalue
        assert!((r.p_value - 1.082_508_822_446_903e-5).abs() < 1e-15);
        assert!((r.p_value - 2.0 / 184_756.0).abs() < 1e-15);

        let r = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        assert!((r.p_value - 2.0 / 252.0).abs() < 1e-15);
    }

    #[test]
    fn mann_whitney_normal_with_ties_matches_scipy() {
        let a = [1., 2., 2., 3., 5., 6., 7., 8., 9., 10., 11., 12., 13., 14., 15., 16., 17., 18., 19., 20., 21., 22.];
        let b = [3., 4., 4., 5., 6., 30., 31., 32., 33., 34., 35., 36., 37., 38., 39., 40., 41., 42., 43., 44., 45., 46., 47.];
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, MwuMethod::Normal);
        assert_eq!(r.u, 88.5);
        assert!((r.p_value - 0.000_195_810_147_077_390_8).abs() < 1e-9, "{}", r.p_value);
    }

    #[test]
    fn mann_whitney_identical_groups() {
        let r = mann_whitney_u(&[1.0; 5], &[1.0; 7]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn exact_counts_are_a_distribution() {
        let c = exact_u_counts(4, 6);
        assert_eq!(c.iter().sum::<f64>(), 210.0); // C(10, 4)
        for u in 0..=24 {
            assert_eq!(c[u], c[24 - u]);
        }
    }

    proptest! {
        #[test]
        fn spearman_symmetric_and_rank_invariant(
            xs in prop::collection::vec(-100.0f64..100.0, 3..30),
            seed in any::<u64>(),
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| (x * 0.3 + (i as f64 + seed as f64 % 13.0).sin() * 40.0).round()).collect();
            let (Ok(a), Ok(b)) = (spearman(&xs, &ys), spearman(&ys, &xs)) else { return Ok(()); };
            prop_assert!((a - b).abs() <= 1e-12);
            let warped: Vec<f64> = xs.iter().map(|x| x * x * x + 2.0 * x).collect();
            let c = spearman(&warped, &ys).unwrap();
            prop_assert!((a - c).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
