//! On-disk formats for weights, datasets and zoo manifests.
//!
//! All binary formats are little-endian with no padding or compression.
//!
//! Weight file (`.wt`):
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 8     | magic `SOUPWT01`                       |
//! | 8     | architecture hash (u64 LE)             |
//! | 8     | M, parameter count (u64 LE)            |
//! | 4·M   | parameters (f32 LE)                    |
//!
//! Dataset file (`.ds`):
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 8     | magic `SOUPDS01`                       |
//! | 24    | D, F, C (u64 LE each)                  |
//! | 4·D·F | features, row-major (f32 LE)           |
//! | 4·D   | labels (u32 LE)                        |
//!
//! A zoo is a JSON manifest next to its weight files: model `k` of the
//! manifest is stored as `<model_id>.wt` in the manifest's directory and the
//! shared initialization as `<init_id>`. Manifest position is the canonical
//! model index everywhere else in the crate.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::checksum::digest64;
use crate::error::{Result, SoupError};
use crate::matrix::Matrix;
use crate::net::{ArchDescriptor, Dataset, Hyperparams, SplitTag, WeightVector};

pub const WEIGHT_MAGIC: &[u8; 8] = b"SOUPWT01";
pub const DATASET_MAGIC: &[u8; 8] = b"SOUPDS01";

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SoupError::MissingArtifact {
                path: path.to_path_buf(),
                hint: "file not found".into(),
            }
        } else {
            SoupError::io(path, e)
        }
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| SoupError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| SoupError::io(path, e))
}

/// Bounds-checked little-endian reader over a whole file image.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let found = self.take(8)?;
        if found != magic {
            return Err(SoupError::BadMagic {
                path: self.path.to_path_buf(),
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    /// Fails with a truncation error unless `n` more bytes are present.
    pub(crate) fn require(&self, n: u64) -> Result<()> {
        let expected = self.pos as u64 + n;
        if (self.bytes.len() as u64) < expected {
            return Err(SoupError::Truncated {
                path: self.path.to_path_buf(),
                expected,
                actual: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n as u64)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(SoupError::InvalidInput(format!(
                "{}: {} trailing bytes after payload",
                self.path.display(),
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| SoupError::InvalidInput(format!("{what} = {v} does not fit in memory")))
}

pub fn weights_to_bytes(w: &WeightVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * w.len());
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&w.arch_hash().0.to_le_bytes());
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for v in w.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8], path: &Path, arch: &ArchDescriptor) -> Result<WeightVector> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(WEIGHT_MAGIC)?;
    let hash = r.u64()?;
    let expected = arch.hash().0;
    if hash != expected {
        return Err(SoupError::ArchHashMismatch {
            expected,
            found: hash,
        });
    }
    let m = to_usize(r.u64()?, "M")?;
    r.require(4 * m as u64)?;
    let values = r.f32s(m)?;
    r.finish()?;
    WeightVector::new(arch, values)
}

pub fn save_weights(path: &Path, arch: &ArchDescriptor, w: &WeightVector) -> Result<()> {
    w.check_arch(arch)?;
    write_file(path, &weights_to_bytes(w))
}

pub fn load_weights(path: &Path, arch: &ArchDescriptor) -> Result<WeightVector> {
    weights_from_bytes(&read_file(path)?, path, arch)
}

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let (d, f) = (ds.len(), ds.n_features());
    let mut out = Vec::with_capacity(32 + 4 * d * (f + 1));
    out.extend_from_slice(DATASET_MAGIC);
    for v in [d, f, ds.n_classes()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in ds.features().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for y in ds.labels() {
        out.extend_from_slice(&y.to_le_bytes());
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8], path: &Path, split: SplitTag) -> Result<Dataset> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(DATASET_MAGIC)?;
    let d = to_usize(r.u64()?, "D")?;
    let f = to_usize(r.u64()?, "F")?;
    let c = to_usize(r.u64()?, "C")?;
    r.require(4 * (d as u64) * (f as u64 + 1))?;
    let features = r.f32s(d * f)?;
    let labels = r.u32s(d)?;
    r.finish()?;
    Dataset::new(Matrix::from_vec(d, f, features)?, labels, c, split)
}

/// Checksum of a dataset's serialized form.
pub fn dataset_checksum(ds: &Dataset) -> u64 {
    digest64(&dataset_to_bytes(ds))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &dataset_to_bytes(ds))
}

pub fn load_dataset(path: &Path, split: SplitTag) -> Result<Dataset> {
    dataset_from_bytes(&read_file(path)?, path, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_id: String,
    pub hyperparams: Hyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooManifest {
    pub arch: ArchDescriptor,
    pub init_id: String,
    pub models: Vec<ModelEntry>,
    #[serde(rename = "N")]
    pub n: usize,
}

impl ZooManifest {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(SoupError::Manifest("zoo has no models".into()));
        }
        if self.n != self.models.len() {
            return Err(SoupError::Manifest(format!(
                "N = {} but {} model entries listed",
                self.n,
                self.models.len()
            )));
        }
        let mut seen = HashSet::new();
        for m in &self.models {
            if m.model_id.is_empty() || m.model_id.contains(['/', '\\']) {
                return Err(SoupError::Manifest(format!("invalid model_id {:?}", m.model_id)));
            }
            if !seen.insert(m.model_id.as_str()) {
                return Err(SoupError::Manifest(format!("duplicate model_id {:?}", m.model_id)));
            }
        }
        Ok(())
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.model_id.clone()).collect()
    }

    pub fn weight_path(dir: &Path, model_id: &str) -> PathBuf {
        dir.join(format!("{model_id}.wt"))
    }
}

pub fn save_manifest(path: &Path, manifest: &ZooManifest) -> Result<()> {
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| SoupError::Serde(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<ZooManifest> {
    let bytes = read_file(path)?;
    let manifest: ZooManifest =
        serde_json::from_slice(&bytes).map_err(|e| SoupError::Manifest(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

/// Loads the manifest and every model's weights, in manifest order.
pub fn load_zoo(manifest_path: &Path) -> Result<(ZooManifest, Vec<WeightVector>)> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_dir(manifest_path);
    let weights = manifest
        .models
        .iter()
        .map(|m| load_weights(&ZooManifest::weight_path(dir, &m.model_id), &manifest.arch))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, weights))
}

pub fn load_init(manifest_path: &Path, manifest: &ZooManifest) -> Result<WeightVector> {
    load_weights(&manifest_dir(manifest_path).join(&manifest.init_id), &manifest.arch)
}

/// Parameters of the synthetic Gaussian-blob task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_classes: usize,
    pub n_features: usize,
    pub n_per_class: usize,
    pub blob_std: f64,
    pub seed: u64,
    /// Example counts for pretrain, finetune, validation and test.
    pub splits: [usize; 4],
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SoupError::InvalidInput(format!("dataset spec: {m}")));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.n_features == 0 || self.n_per_class == 0 {
            return bad("n_features and n_per_class must be positive".into());
        }
        if !(self.blob_std.is_finite() && self.blob_std > 0.0) {
            return bad(format!("blob_std must be positive, got {}", self.blob_std));
        }
        if self.splits.contains(&0) {
            return bad(format!("every split needs at least one example, got {:?}", self.splits));
        }
        let pool = self.n_classes * self.n_per_class;
        let want: usize = self.splits.iter().sum();
        if want > pool {
            return bad(format!(
                "splits need {want} examples but the pool holds only n_classes * n_per_class = {pool}"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub pretrain: Dataset,
    pub finetune: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, tag: SplitTag) -> &Dataset {
        match tag {
            SplitTag::Pretrain => &self.pretrain,
            SplitTag::Finetune => &self.finetune,
            SplitTag::Validation => &self.validation,
            SplitTag::Test => &self.test,
        }
    }
}

/// Draws `n_per_class` points around one standard-normal mean per class,
/// shuffles the pool and cuts it into the four disjoint splits.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = SplitMix64::seed_from_u64(spec.seed);
    let f = spec.n_features;
    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..f).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut pool: Vec<(Vec<f32>, u32)> = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            let x = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (m + spec.blob_std * z) as f32
                })
                .collect();
            pool.push((x, c as u32));
        }
    }
    pool.shuffle(&mut rng);

    let mut start = 0;
    let mut take = |n: usize, tag: SplitTag| -> Result<Dataset> {
        let part = &pool[start..start + n];
        start += n;
        let mut feats = Vec::with_capacity(n * f);
        let mut labels = Vec::with_capacity(n);
        for (x, y) in part {
            feats.extend_from_slice(x);
            labels.push(*y);
        }
        Dataset::new(Matrix::from_vec(n, f, feats)?, labels, spec.n_classes, tag)
    };
    Ok(Splits {
        pretrain: take(spec.splits[0], SplitTag::Pretrain)?,
        finetune: take(spec.splits[1], SplitTag::Finetune)?,
        validation: take(spec.splits[2], SplitTag::Validation)?,
        test: take(spec.splits[3], SplitTag::Test)?,
    })
}

pub fn dataset_path(dir: &Path, tag: SplitTag) -> PathBuf {
    dir.join(format!("{tag}.ds"))
}

pub fn save_splits(dir: &Path, splits: &Splits) -> Result<()> {
    for tag in SplitTag::ALL {
        save_dataset(&dataset_path(dir, tag), splits.get(tag))?;
    }
    Ok(())
}
