//! Weight-space soups and their full evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SoupError};
use crate::matrix::Matrix;
use crate::net::{accuracy, cross_entropy, forward, ArchDescriptor, Dataset, WeightVector};

const SIMPLEX_TOL: f64 = 1e-9;

/// Mixing coefficients over the zoo: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixVector {
    p: Vec<f64>,
}

impl MixVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SoupError::InvalidInput(
                "mix coefficients must be finite and non-negative".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(SoupError::InvalidInput(format!(
                "mix coefficients sum to {total}, not 1"
            )));
        }
        if !p.iter().any(|&v| v > 0.0) {
            return Err(SoupError::InvalidInput("mix has no positive coefficient".into()));
        }
        Ok(Self { p })
    }

    pub fn one_hot(k: usize, n: usize) -> Result<Self> {
        uniform_mix(&SubsetMask::new(vec![k], n)?, n)
    }

    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.p.len() != n {
            return Err(SoupError::DimensionMismatch {
                what: "mix vector length N",
                expected: n,
                actual: self.p.len(),
            });
        }
        Ok(())
    }
}

/// Non-empty sorted set of model indices.
///
/// Ordered lexicographically on the sorted member list, so `{0} < {0,1} <
/// {0,2} < {1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask {
    members: Vec<usize>,
}

impl SubsetMask {
    /// Members may arrive in any order but must be distinct and below `n`.
    pub fn new(mut members: Vec<usize>, n: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(SoupError::InvalidInput("subset mask is empty".into()));
        }
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(SoupError::InvalidInput(format!(
                "subset mask {members:?} has duplicate members"
            )));
        }
        if let Some(&bad) = members.iter().find(|&&k| k >= n) {
            return Err(SoupError::InvalidInput(format!(
                "model index {bad} out of range for a zoo of {n}"
            )));
        }
        Ok(Self { members })
    }

    pub fn full(n: usize) -> Result<Self> {
        Self::new((0..n).collect(), n)
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.members.binary_search(&k).is_ok()
    }

    pub(crate) fn check_n(&self, n: usize) -> Result<()> {
        match self.members.last() {
            Some(&last) if last < n => Ok(()),
            _ => Err(SoupError::InvalidInput(format!(
                "mask {self} is out of range for a zoo of {n}"
            ))),
        }
    }

    pub(crate) fn with(&self, k: usize) -> Self {
        let mut members = self.members.clone();
        if let Err(pos) = members.binary_search(&k) {
            members.insert(pos, k);
        }
        Self { members }
    }
}

/// Members joined by `-`, e.g. `0-2-5`.
impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.members.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

impl FromStr for SubsetMask {
    type Err = SoupError;

    fn from_str(s: &str) -> Result<Self> {
        let members = s
            .split('-')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| SoupError::InvalidInput(format!("bad mask token {t:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, usize::MAX)
    }
}

impl Serialize for SubsetMask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.members.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SubsetMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let members = Vec::<usize>::deserialize(d)?;
        SubsetMask::new(members, usize::MAX).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n_examples: usize,
}

impl EvalResult {
    pub(crate) fn from_logits<T: Copy + Into<f64>>(logits: &Matrix<T>, labels: &[u32]) -> Result<Self> {
        let mean_loss = cross_entropy(logits, labels)?;
        if !mean_loss.is_finite() {
            return Err(SoupError::NonFinite(format!("evaluation loss is {mean_loss}")));
        }
        Ok(Self {
            accuracy: accuracy(logits, labels)?,
            mean_loss,
            n_examples: labels.len(),
        })
    }
}

/// `1/|mask|` on members, zero elsewhere.
pub fn uniform_mix(mask: &SubsetMask, n: usize) -> Result<MixVector> {
    mask.check_n(n)?;
    let share = 1.0 / mask.len() as f64;
    let mut p = vec![0.0; n];
    for &k in mask.members() {
        p[k] = share;
    }
    MixVector::new(p)
}

/// Elementwise `sum_k p_k w_k`, accumulated in `f64` left to right over `k`.
pub fn mix_weights(zoo: &[WeightVector], p: &MixVector) -> Result<WeightVector> {
    p.check_len(zoo.len())?;
    let first = zoo.first().ok_or_else(|| SoupError::InvalidInput("empty zoo".into()))?;
    for (k, w) in zoo.iter().enumerate().skip(1) {
        if w.arch_hash() != first.arch_hash() {
            return Err(SoupError::ArchHashMismatch {
                expected: first.arch_hash().0,
                found: w.arch_hash().0,
            });
        }
        if w.len() != first.len() {
            return Err(SoupError::DimensionMismatch {
                what: "zoo member parameter count",
                expected: first.len(),
                actual: zoo[k].len(),
            });
        }
    }
    let active: Vec<(f64, &[f32])> = p
        .weights()
        .iter()
        .zip(zoo)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, w)| (pk, w.values()))
        .collect();
    let values = (0..first.len())
        .map(|i| {
            let mut acc = 0.0f64;
            for (pk, w) in &active {
                acc += pk * w[i] as f64;
            }
            acc as f32
        })
        .collect();
    Ok(WeightVector::from_raw(values, first.arch_hash()))
}

/// Accuracy and loss of a model on `data`.
pub fn evaluate_weights(arch: &ArchDescriptor, w: &WeightVector, data: &Dataset) -> Result<EvalResult> {
    let logits = forward(arch, w, data.features())?;
    EvalResult::from_logits(&logits, data.labels())
}

/// Full evaluation of the soup `sum_k p_k w_k`. One call is one unit of
/// budget when `data` is the validation split.
pub fn evaluate_soup(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    p: &MixVector,
    data: &Dataset,
) -> Result<EvalResult> {
    let soup = mix_weights(zoo, p)?;
    evaluate_weights(arch, &soup, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, SplitTag};
    use proptest::prelude::*;

    fn arch() -> ArchDescriptor {
        ArchDescriptor::new(vec![3, 4, 2], Activation::Tanh).unwrap()
    }

    #[test]
    fn uniform_mix_cases() {
        let m = |v: Vec<usize>, n| uniform_mix(&SubsetMask::new(v, n).unwrap(), n).unwrap();
        assert_eq!(m(vec![2], 4).weights(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m(vec![0, 2], 4).weights(), &[0.5, 0.0, 0.5, 0.0]);
        assert_eq!(m(vec![0, 1, 2], 3).weights(), &[1.0 / 3.0; 3]);
        assert!(SubsetMask::new(vec![], 3).is_err());
        assert!(SubsetMask::new(vec![1, 1], 3).is_err());
        assert!(SubsetMask::new(vec![3], 3).is_err());
        assert!(uniform_mix(&SubsetMask::new(vec![3], 5).unwrap(), 3).is_err());
    }

    #[test]
    fn mix_vector_validation() {
        assert!(MixVector::new(vec![0.5, 0.6]).is_err());
        assert!(MixVector::new(vec![1.5, -0.5]).is_err());
        assert!(MixVector::new(vec![0.0, 0.0]).is_err());
        assert!(MixVector::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn mask_text_form() {
        let m: SubsetMask = "5-0-2".parse().unwrap();
        assert_eq!(m.members(), &[0, 2, 5]);
        assert_eq!(m.to_string(), "0-2-5");
        assert!("1-x".parse::<SubsetMask>().is_err());
        assert!(SubsetMask::new(vec![0], 2).unwrap() < SubsetMask::new(vec![0, 1], 2).unwrap());
        assert!(SubsetMask::new(vec![0, 1], 2).unwrap() < SubsetMask::new(vec![1], 2).unwrap());
    }

    #[test]
    fn one_hot_soup_is_the_model() {
        let zoo: Vec<_> = (0..3).map(|s| WeightVector::random_init(&arch(), s)).collect();
        for k in 0..3 {
            let soup = mix_weights(&zoo, &MixVector::one_hot(k, 3).unwrap()).unwrap();
            assert_eq!(soup.values(), zoo[k].values());
        }
    }

    #[test]
    fn identical_models_average_to_themselves() {
        let w = WeightVector::random_init(&arch(), 4);
        let soup = mix_weights(&[w.clone(), w.clone()], &MixVector::new(vec![0.5, 0.5]).unwrap()).unwrap();
        for (a, b) in soup.values().iter().zip(w.values()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn mix_matches_scalar_oracle() {
        let zoo: Vec<_> = (0..3).map(|s| WeightVector::random_init(&arch(), 10 + s)).collect();
        let p = [0.2, 0.3, 0.5];
        let soup = mix_weights(&zoo, &MixVector::new(p.to_vec()).unwrap()).unwrap();
        for i in 0..soup.len() {
            let want = p[0] * zoo[0].values()[i] as f64
                + p[1] * zoo[1].values()[i] as f64
                + p[2] * zoo[2].values()[i] as f64;
            assert!((soup.values()[i] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn mix_rejects_mismatches() {
        let zoo: Vec<_> = (0..2).map(|s| WeightVector::random_init(&arch(), s)).collect();
        assert!(mix_weights(&zoo, &MixVector::new(vec![1.0 / 3.0; 3]).unwrap()).is_err());
        let other = ArchDescriptor::new(vec![3, 4, 2], Activation::Relu).unwrap();
        let mixed = vec![zoo[0].clone(), WeightVector::random_init(&other, 1)];
        assert!(matches!(
            mix_weights(&mixed, &MixVector::new(vec![0.5, 0.5]).unwrap()),
            Err(SoupError::ArchHashMismatch { .. })
        ));
    }

    #[test]
    fn single_model_soup_evaluates_like_the_model() {
        let zoo: Vec<_> = (0..3).map(|s| WeightVector::random_init(&arch(), s)).collect();
        let x = Matrix::from_vec(4, 3, vec![0.1, 0.2, -0.3, 1.0, 0.0, 0.5, -1.0, 2.0, 0.3, 0.7, -0.7, 0.1]).unwrap();
        let data = Dataset::new(x, vec![0, 1, 1, 0], 2, SplitTag::Validation).unwrap();
        let direct = evaluate_weights(&arch(), &zoo[1], &data).unwrap();
        let soup = evaluate_soup(&arch(), &zoo, &MixVector::one_hot(1, 3).unwrap(), &data).unwrap();
        assert_eq!(direct, soup);
    }

    proptest! {
        #[test]
        fn mix_is_permutation_invariant_and_in_hull(
            seeds in prop::collection::vec(any::<u64>(), 4),
            raw in prop::collection::vec(0.01f64..1.0, 4),
            rot in 0usize..4,
        ) {
            let zoo: Vec<_> = seeds.iter().map(|&s| WeightVector::random_init(&arch(), s)).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let Ok(mix) = MixVector::new(p.clone()) else { return Ok(()); };
            let soup = mix_weights(&zoo, &mix).unwrap();

            let mut pz = zoo.clone();
            pz.rotate_left(rot);
            let mut pp = p.clone();
            pp.rotate_left(rot);
            let psoup = mix_weights(&pz, &MixVector::new(pp).unwrap()).unwrap();
            for i in 0..soup.len() {
                prop_assert!((soup.values()[i] as f64 - psoup.values()[i] as f64).abs() <= 1e-9 + f32::EPSILON as f64 * soup.values()[i].abs() as f64);
                let lo = zoo.iter().map(|w| w.values()[i]).fold(f32::INFINITY, f32::min);
                let hi = zoo.iter().map(|w| w.values()[i]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(soup.values()[i] >= lo - 1e-7 && soup.values()[i] <= hi + 1e-7);
            }
        }
    }
}
