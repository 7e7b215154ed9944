//! Cached per-model validation logits and the logit-ensemble estimate.
//!
//! Cache file (`.lc`), little-endian:
//!
//! | bytes   | field                                              |
//! |---------|----------------------------------------------------|
//! | 8       | magic `SOUPLC01`                                   |
//! | 24      | N, D, C (u64 LE each)                              |
//! | 4·N·D·C | logits, model-major then row-major (f32 LE)        |
//! | 4·D     | labels (u32 LE)                                    |
//! | 8       | dataset checksum (u64 LE)                          |
//! | N × …   | model ids: u32 LE byte length, then UTF-8 bytes    |

use std::path::Path;

use crate::error::{Result, SoupError};
use crate::io::{dataset_checksum, read_file, to_usize, write_file, Reader};
use crate::matrix::Matrix;
use crate::net::{forward, ArchDescriptor, Dataset, SplitTag, WeightVector};
use crate::soup::{EvalResult, MixVector};

pub const CACHE_MAGIC: &[u8; 8] = b"SOUPLC01";

#[derive(Debug, Clone, PartialEq)]
pub struct LogitCache {
    n_models: usize,
    n_examples: usize,
    n_classes: usize,
    logits: Vec<f32>,
    labels: Vec<u32>,
    model_ids: Vec<String>,
    dataset_checksum: u64,
}

impl LogitCache {
    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn dataset_checksum(&self) -> u64 {
        self.dataset_checksum
    }

    /// Logits of model `k` as a `D x C` matrix.
    pub fn slice(&self, k: usize) -> Matrix<f32> {
        let len = self.n_examples * self.n_classes;
        Matrix::from_vec(
            self.n_examples,
            self.n_classes,
            self.logits[k * len..(k + 1) * len].to_vec(),
        )
        .expect("cache dimensions are consistent")
    }

    /// Errors unless `data` is the dataset this cache was built from.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let found = dataset_checksum(data);
        if found != self.dataset_checksum {
            return Err(SoupError::ChecksumMismatch {
                what: "logit cache vs validation dataset".into(),
                expected: format!("{:016x}", self.dataset_checksum),
                found: format!("{found:016x}"),
            });
        }
        Ok(())
    }

    /// Individual accuracy and loss of every model, read from the cache.
    pub fn per_model_eval(&self) -> Result<Vec<EvalResult>> {
        (0..self.n_models)
            .map(|k| EvalResult::from_logits(&self.slice(k), &self.labels))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 4 * (self.logits.len() + self.labels.len()));
        out.extend_from_slice(CACHE_MAGIC);
        for v in [self.n_models, self.n_examples, self.n_classes] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in &self.logits {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for y in &self.labels {
            out.extend_from_slice(&y.to_le_bytes());
        }
        out.extend_from_slice(&self.dataset_checksum.to_le_bytes());
        for id in &self.model_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(CACHE_MAGIC)?;
        let n = to_usize(r.u64()?, "N")?;
        let d = to_usize(r.u64()?, "D")?;
        let c = to_usize(r.u64()?, "C")?;
        if n == 0 || d == 0 || c == 0 {
            return Err(SoupError::InvalidInput(format!(
                "{}: cache header has a zero dimension (N={n}, D={d}, C={c})",
                path.display()
            )));
        }
        r.require(4 * (n as u64) * (d as u64) * (c as u64) + 4 * d as u64 + 8)?;
        let logits = r.f32s(n * d * c)?;
        let labels = r.u32s(d)?;
        let dataset_checksum = r.u64()?;
        let mut model_ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let id = String::from_utf8(raw.to_vec()).map_err(|_| {
                SoupError::InvalidInput(format!("{}: model id is not UTF-8", path.display()))
            })?;
            model_ids.push(id);
        }
        r.finish()?;
        if let Some(&y) = labels.iter().find(|&&y| y as usize >= c) {
            return Err(SoupError::InvalidInput(format!(
                "{}: label {y} out of range for {c} classes",
                path.display()
            )));
        }
        Ok(Self {
            n_models: n,
            n_examples: d,
            n_classes: c,
            logits,
            labels,
            model_ids,
            dataset_checksum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Runs every model once over the validation split.
pub fn build_cache(
    arch: &ArchDescriptor,
    zoo: &[WeightVector],
    model_ids: &[String],
    val: &Dataset,
) -> Result<LogitCache> {
    if val.split() != SplitTag::Validation {
        return Err(SoupError::InvalidInput(format!(
            "logit cache must be built on the validation split, got {}",
            val.split()
        )));
    }
    if zoo.is_empty() {
        return Err(SoupError::InvalidInput("empty zoo".into()));
    }
    if model_ids.len() != zoo.len() {
        return Err(SoupError::DimensionMismatch {
            what: "model id count",
            expected: zoo.len(),
            actual: model_ids.len(),
        });
    }
    let c = arch.output_dim();
    let mut logits = Vec::with_capacity(zoo.len() * val.len() * c);
    for w in zoo {
        logits.extend(forward(arch, w, val.features())?.into_vec());
    }
    Ok(LogitCache {
        n_models: zoo.len(),
        n_examples: val.len(),
        n_classes: c,
        logits,
        labels: val.labels().to_vec(),
        model_ids: model_ids.to_vec(),
        dataset_checksum: dataset_checksum(val),
    })
}

/// Per-example `sum_k p_k * logits_k`, accumulated in `f64` left to right
/// over `k`.
pub fn ensemble_logits(cache: &LogitCache, p: &MixVector) -> Result<Matrix<f64>> {
    p.check_len(cache.n_models)?;
    let len = cache.n_examples * cache.n_classes;
    let mut out = vec![0.0f64; len];
    for (k, &pk) in p.weights().iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        let slice = &cache.logits[k * len..(k + 1) * len];
        for (o, &v) in out.iter_mut().zip(slice) {
            *o += pk * v as f64;
        }
    }
    Matrix::from_vec(cache.n_examples, cache.n_classes, out)
}

/// Accuracy and loss of the logit ensemble. Costs no budget.
pub fn ensemble_eval(cache: &LogitCache, p: &MixVector) -> Result<EvalResult> {
    EvalResult::from_logits(&ensemble_logits(cache, p)?, &cache.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use crate::soup::{evaluate_soup, uniform_mix, SubsetMask};
    use proptest::prelude::*;

    fn arch() -> ArchDescriptor {
        ArchDescriptor::new(vec![3, 5, 4], Activation::Relu).unwrap()
    }

    fn val(rows: usize) -> Dataset {
        let feats: Vec<f32> = (0..rows * 3).map(|i| ((i * 37 % 17) as f32 - 8.0) / 4.0).collect();
        let labels = (0..rows).map(|i| (i % 4) as u32).collect();
        Dataset::new(Matrix::from_vec(rows, 3, feats).unwrap(), labels, 4, SplitTag::Validation).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("m{k}")).collect()
    }

    fn zoo(n: usize) -> Vec<WeightVector> {
        (0..n).map(|s| WeightVector::random_init(&arch(), 100 + s as u64)).collect()
    }

    #[test]
    fn single_model_slice_equals_forward() {
        let z = zoo(1);
        let v = val(12);
        let cache = build_cache(&arch(), &z, &ids(1), &v).unwrap();
        assert_eq!(cache.slice(0), forward(&arch(), &z[0], v.features()).unwrap());
    }

    #[test]
    fn identical_models_give_identical_slices() {
        let w = WeightVector::random_init(&arch(), 3);
        let cache = build_cache(&arch(), &[w.clone(), w], &ids(2), &val(10)).unwrap();
        assert_eq!(cache.slice(0), cache.slice(1));
        let u = ensemble_eval(&cache, &MixVector::new(vec![0.5, 0.5]).unwrap()).unwrap();
        let single = ensemble_eval(&cache, &MixVector::one_hot(0, 2).unwrap()).unwrap();
        assert_eq!(u, single);
    }

    #[test]
    fn cache_accuracy_matches_one_hot_soups() {
        let z = zoo(5);
        let v = val(50);
        let cache = build_cache(&arch(), &z, &ids(5), &v).unwrap();
        let per_model = cache.per_model_eval().unwrap();
        for k in 0..5 {
            let p = MixVector::one_hot(k, 5).unwrap();
            let soup = evaluate_soup(&arch(), &z, &p, &v).unwrap();
            assert_eq!(per_model[k].accuracy, soup.accuracy);
            assert_eq!(per_model[k], soup);
            assert_eq!(ensemble_eval(&cache, &p).unwrap(), soup);
        }
    }

    #[test]
    fn one_hot_ensemble_is_the_slice() {
        let cache = build_cache(&arch(), &zoo(3), &ids(3), &val(8)).unwrap();
        let e = ensemble_logits(&cache, &MixVector::one_hot(2, 3).unwrap()).unwrap();
        assert_eq!(e, cache.slice(2).map(|v| v as f64));
    }

    #[test]
    fn opposite_logits_cancel() {
        let a = ArchDescriptor::new(vec![3, 4], Activation::Identity).unwrap();
        let w = WeightVector::random_init(&a, 8);
        let neg = WeightVector::new(&a, w.values().iter().map(|v| -v).collect()).unwrap();
        let cache = build_cache(&a, &[w, neg], &ids(2), &val(6)).unwrap();
        let e = ensemble_logits(&cache, &MixVector::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_ensemble_matches_scalar_oracle() {
        let cache = build_cache(&arch(), &zoo(4), &ids(4), &val(9)).unwrap();
        let e = ensemble_logits(&cache, &MixVector::new(vec![0.25; 4]).unwrap()).unwrap();
        for d in 0..9 {
            for c in 0..4 {
                let want: f64 = (0..4).map(|k| cache.slice(k).get(d, c) as f64).sum::<f64>() / 4.0;
                assert!((e.get(d, c) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn linear_nets_make_ensemble_and_soup_agree() {
        let a = ArchDescriptor::new(vec![3, 4], Activation::Identity).unwrap();
        let z: Vec<_> = (0..4).map(|s| WeightVector::random_init(&a, s)).collect();
        let v = val(20);
        let cache = build_cache(&a, &z, &ids(4), &v).unwrap();
        for members in [vec![0, 1], vec![1, 2, 3], vec![0, 1, 2, 3], vec![3]] {
            let p = uniform_mix(&SubsetMask::new(members, 4).unwrap(), 4).unwrap();
            let ens = ensemble_eval(&cache, &p).unwrap();
            let soup = evaluate_soup(&a, &z, &p, &v).unwrap();
            assert!((ens.mean_loss - soup.mean_loss).abs() <= 1e-5);
        }
    }

    #[test]
    fn build_requires_validation_split() {
        let v = val(4).with_split(SplitTag::Test);
        assert!(build_cache(&arch(), &zoo(2), &ids(2), &v).is_err());
        assert!(build_cache(&arch(), &zoo(2), &ids(3), &val(4)).is_err());
    }

    #[test]
    fn file_round_trip_and_checksum_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("val.lc");
        let v = val(7);
        let cache = build_cache(&arch(), &zoo(3), &ids(3), &v).unwrap();
        cache.save(&path).unwrap();
        let back = LogitCache::load(&path).unwrap();
        assert_eq!(back, cache);
        back.check_dataset(&v).unwrap();
        assert!(matches!(back.check_dataset(&val(8)), Err(SoupError::ChecksumMismatch { .. })));

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"SOUPLC01");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(LogitCache::load(&path), Err(SoupError::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn ensemble_is_affine_in_mix(a in 0.0f64..=1.0, seed in 0u64..1000) {
            let cache = build_cache(&arch(), &[
                WeightVector::random_init(&arch(), seed),
                WeightVector::random_init(&arch(), seed + 1),
                WeightVector::random_init(&arch(), seed + 2),
            ], &ids(3), &val(5)).unwrap();
            let p = MixVector::new(vec![0.2, 0.3, 0.5]).unwrap();
            let q = MixVector::new(vec![0.6, 0.4, 0.0]).unwrap();
            let b = 1.0 - a;
            let r: Vec<f64> = p.weights().iter().zip(q.weights()).map(|(x, y)| a * x + b * y).collect();
            let Ok(r) = MixVector::new(r) else { return Ok(()); };
            let ep = ensemble_logits(&cache, &p).unwrap();
            let eq = ensemble_logits(&cache, &q).unwrap();
            let er = ensemble_logits(&cache, &r).unwrap();
            for i in 0..er.as_slice().len() {
                let lin = a * ep.as_slice()[i] + b * eq.as_slice()[i];
                prop_assert!((er.as_slice()[i] - lin).abs() < 1e-6);
            }
        }
    }
}
