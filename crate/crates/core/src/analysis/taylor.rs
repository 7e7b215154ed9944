//! Numerical check that ensemble loss and soup loss agree to first order
//! around a shared initialization.
//!
//! Each model is displaced as `w_k = w_init + eps * delta_k`. Both losses
//! share their value and differential at `eps = 0`, so the gap
//! `|L_ens - L_soup|` shrinks like `eps^2`: halving `eps` should divide the
//! gap by about four. Everything runs in `f64` so the gap is not swamped by
//! `f32` rounding at small `eps`.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoupError};
use crate::net::{cross_entropy_rows, forward_f64, ArchDescriptor, Dataset, WeightVector};
use crate::soup::MixVector;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub epsilons: Vec<f64>,
    pub ensemble_losses: Vec<f64>,
    pub soup_losses: Vec<f64>,
    pub gaps: Vec<f64>,
    /// `gaps[i + 1] / gaps[i]`; absent when `gaps[i]` is zero.
    pub decay_ratios: Vec<Option<f64>>,
}

impl TaylorReport {
    /// The last `k` decay ratios, i.e. those for the smallest epsilons.
    pub fn tail_ratios(&self, k: usize) -> &[Option<f64>] {
        &self.decay_ratios[self.decay_ratios.len().saturating_sub(k)..]
    }
}

/// `n` standard-normal directions of length `m`, each scaled to unit norm.
pub fn random_directions(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize(&v)
        })
        .collect()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

/// Strictly decreasing geometric sequence `start, start/2, ...`.
pub fn halving_epsilons(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start / f64::powi(2.0, i as i32)).collect()
}

pub fn taylor_check(
    arch: &ArchDescriptor,
    w_init: &WeightVector,
    deltas: &[Vec<f64>],
    p: &MixVector,
    epsilons: &[f64],
    data: &Dataset,
) -> Result<TaylorReport> {
    w_init.check_arch(arch)?;
    let m = arch.param_count();
    p.check_len(deltas.len())?;
    for (k, d) in deltas.iter().enumerate() {
        if d.len() != m {
            return Err(SoupError::DimensionMismatch {
                what: "direction length",
                expected: m,
                actual: d.len(),
            });
        }
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(SoupError::InvalidInput(format!(
                "direction {k} has norm {norm}, expected unit norm"
            )));
        }
    }
    if epsilons.is_empty() {
        return Err(SoupError::InvalidInput("no epsilons given".into()));
    }
    if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SoupError::InvalidInput(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }

    let init = w_init.to_f64();
    let x: Vec<f64> = data.features().as_slice().iter().map(|&v| v as f64).collect();
    let c = arch.output_dim();
    let rows = data.len();

    let mut report = TaylorReport {
        epsilons: epsilons.to_vec(),
        ensemble_losses: Vec::with_capacity(epsilons.len()),
        soup_losses: Vec::with_capacity(epsilons.len()),
        gaps: Vec::with_capacity(epsilons.len()),
        decay_ratios: Vec::with_capacity(epsilons.len().saturating_sub(1)),
    };
    for &eps in epsilons {
        let mut ens = vec![0.0f64; rows * c];
        let mut soup = vec![0.0f64; m];
        for (&pk, delta) in p.weights().iter().zip(deltas) {
            if pk == 0.0 {
                continue;
            }
            let w: Vec<f64> = init.iter().zip(delta).map(|(a, d)| a + eps * d).collect();
            for (o, v) in ens.iter_mut().zip(forward_f64(arch, &w, &x)?) {
                *o += pk * v;
            }
            for (s, v) in soup.iter_mut().zip(&w) {
                *s += pk * v;
            }
        }
        let l_ens = cross_entropy_rows(&ens, c, data.labels())?;
        let l_soup = cross_entropy_rows(&forward_f64(arch, &soup, &x)?, c, data.labels())?;
        if !(l_ens.is_finite() && l_soup.is_finite()) {
            return Err(SoupError::NonFinite(format!(
                "taylor losses at eps {eps}: ensemble {l_ens}, soup {l_soup}"
            )));
        }
        report.ensemble_losses.push(l_ens);
        report.soup_losses.push(l_soup);
        report.gaps.push((l_ens - l_soup).abs());
    }
    report.decay_ratios = report
        .gaps
        .windows(2)
        .map(|g| (g[0] > 0.0).then(|| g[1] / g[0]))
        .collect();
    Ok(report)
}
