//! Command-line pipeline: data generation, zoo training, logit caching,
//! selection and analysis, all driven by one JSON run config.
//!
//! Artifacts live under the output directory:
//!
//! ```text
//! data/{pretrain,finetune,validation,test}.ds
//! zoo/init.wt  zoo/model_XX.wt  zoo/manifest.json
//! cache/validation.lc
//! reports/*.csv | *.json
//! checksums.json
//! ```
//!
//! Every artifact written is recorded in `checksums.json` (SHA-256, hex)
//! and verified before it is read back.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::experiments::{
    budget_sweep, evaluate_candidates, variance_by_count, ScatterTable,
};
use crate::analysis::report::{render, render_variance, to_csv, to_json, Format, Tabular};
use crate::analysis::taylor::{normalize, random_directions, taylor_check};
use crate::approx::{Candidate, PriorConfig};
use crate::cache::{build_cache, LogitCache};
use crate::checksum::hex_digest;
use crate::error::{Result, SoupError};
use crate::io::{
    dataset_path, gen_dataset, load_dataset, load_manifest, load_weights, read_file, save_manifest,
    save_splits, save_weights, write_file, DatasetSpec, ModelEntry, ZooManifest,
};
use crate::net::{sgd_train, Activation, ArchDescriptor, Dataset, Hyperparams, SplitTag, WeightVector};
use crate::select::{attach_test, greedy_soup, oracle, radin, sample_candidates_mc, Method, SelectionReport};
use crate::soup::{evaluate_weights, uniform_mix, SubsetMask};

pub const CHECKSUMS: &str = "checksums.json";
pub const ZOO_MANIFEST: &str = "zoo/manifest.json";
pub const CACHE_FILE: &str = "cache/validation.lc";
const INIT_ID: &str = "init.wt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooSpec {
    pub n_models: usize,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub input_noise_stds: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_seed: u64,
}

impl ZooSpec {
    /// Hyperparameters of model `k`: the learning rate cycles fastest, then
    /// weight decay, then input noise; every model gets its own seed.
    pub fn hyperparams(&self, k: usize) -> Hyperparams {
        let wd = self.weight_decays.len();
        Hyperparams {
            learning_rate: self.learning_rates[k % self.learning_rates.len()],
            weight_decay: self.weight_decays[k % wd],
            input_noise_std: self.input_noise_stds[(k / wd) % self.input_noise_stds.len()],
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.base_seed.wrapping_add(k as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub count: usize,
    pub seed: u64,
    /// Append the all-models mask to the sampled candidates.
    pub include_uniform: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetRange {
    pub min: usize,
    pub max: usize,
}

impl BudgetRange {
    pub fn budgets(&self) -> Vec<usize> {
        (self.min..=self.max).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionSource {
    /// Normalized fine-tuning displacements `w_k - w_init`.
    Zoo,
    /// Seeded Gaussian unit directions.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorSpec {
    pub epsilons: Vec<f64>,
    pub directions: DirectionSource,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub arch: ArchDescriptor,
    pub pretrain: Hyperparams,
    pub zoo: ZooSpec,
    pub candidates: CandidateSpec,
    pub budgets: BudgetRange,
    pub lambdas: Vec<f64>,
    pub taylor: TaylorSpec,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec {
                n_classes: 4,
                n_features: 8,
                n_per_class: 400,
                blob_std: 1.5,
                seed: 7,
                splits: [600, 300, 300, 400],
            },
            arch: ArchDescriptor::new(vec![8, 16, 4], Activation::Tanh).expect("default arch"),
            pretrain: Hyperparams {
                learning_rate: 0.05,
                weight_decay: 0.0,
                epochs: 3,
                batch_size: 32,
                seed: 1,
                input_noise_std: 0.0,
            },
            zoo: ZooSpec {
                n_models: 8,
                learning_rates: vec![3e-3, 1e-3, 3e-4],
                weight_decays: vec![0.0, 1e-4],
                input_noise_stds: vec![0.0, 0.05],
                epochs: 100,
                batch_size: 16,
                base_seed: 100,
            },
            candidates: CandidateSpec {
                count: 200,
                seed: 2024,
                include_uniform: true,
            },
            budgets: BudgetRange { min: 1, max: 25 },
            lambdas: vec![0.0, 1.0],
            taylor: TaylorSpec {
                epsilons: vec![1e-1, 5e-2, 2.5e-2, 1.25e-2],
                directions: DirectionSource::Zoo,
                seed: 0,
            },
            output_dir: PathBuf::from("soupkit-out"),
        }
    }
}

fn config_err(msg: impl Into<String>) -> SoupError {
    SoupError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |field: &str, e: SoupError| match e {
            SoupError::InvalidInput(m) => config_err(format!("{field}: {m}")),
            other => config_err(format!("{field}: {other}")),
        };
        self.dataset.validate().map_err(|e| wrap("dataset", e))?;
        if self.arch.input_dim() != self.dataset.n_features {
            return Err(config_err(format!(
                "arch.layer_widths: input width {} != dataset.n_features {}",
                self.arch.input_dim(),
                self.dataset.n_features
            )));
        }
        if self.arch.output_dim() != self.dataset.n_classes {
            return Err(config_err(format!(
                "arch.layer_widths: output width {} != dataset.n_classes {}",
                self.arch.output_dim(),
                self.dataset.n_classes
            )));
        }
        self.pretrain.validate().map_err(|e| wrap("pretrain", e))?;
        let z = &self.zoo;
        if z.n_models == 0 {
            return Err(config_err("zoo.n_models must be >= 1"));
        }
        if z.learning_rates.is_empty() || z.weight_decays.is_empty() || z.input_noise_stds.is_empty() {
            return Err(config_err("zoo: every hyperparameter grid needs at least one value"));
        }
        for k in 0..z.n_models {
            z.hyperparams(k).validate().map_err(|e| wrap("zoo", e))?;
        }
        if self.candidates.count == 0 {
            return Err(config_err("candidates.count must be >= 1"));
        }
        if z.n_models < 3 {
            return Err(config_err(format!(
                "zoo.n_models = {} but Monte-Carlo candidates need at least 3 models",
                z.n_models
            )));
        }
        if self.budgets.min == 0 || self.budgets.min > self.budgets.max {
            return Err(config_err(format!(
                "budgets: need 1 <= min <= max, got min {} max {}",
                self.budgets.min, self.budgets.max
            )));
        }
        if self.lambdas.is_empty() {
            return Err(config_err("lambdas must list at least one value"));
        }
        for &l in &self.lambdas {
            PriorConfig::new(l).map_err(|e| wrap("lambdas", e))?;
        }
        let eps = &self.taylor.epsilons;
        if eps.is_empty()
            || eps.iter().any(|e| !(e.is_finite() && *e > 0.0))
            || eps.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(config_err("taylor.epsilons must be positive and strictly decreasing"));
        }
        Ok(())
    }
}

/// Output directory with a checksum sidecar.
pub struct Workspace {
    root: PathBuf,
    sums: BTreeMap<String, String>,
}

fn hint_for(rel: &str) -> &'static str {
    if rel.starts_with("data/") {
        "run `soupkit gen-data` first"
    } else if rel.starts_with("zoo/") {
        "run `soupkit train-zoo` first"
    } else if rel.starts_with("cache/") {
        "run `soupkit cache` first"
    } else {
        "produce it with the matching command first"
    }
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self> {
        let side = root.join(CHECKSUMS);
        let sums = if side.exists() {
            let bytes = read_file(&side)?;
            serde_json::from_slice(&bytes)
                .map_err(|e| SoupError::Manifest(format!("{}: {e}", side.display())))?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            root: root.to_path_buf(),
            sums,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn checksums(&self) -> &BTreeMap<String, String> {
        &self.sums
    }

    /// Writes `bytes` to `rel` and records its digest.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.path(rel), bytes)?;
        self.sums.insert(rel.to_string(), hex_digest(bytes));
        self.persist()
    }

    /// Records the digest of a file already written at `rel`.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = read_file(&self.path(rel))?;
        self.sums.insert(rel.to_string(), hex_digest(&bytes));
        self.persist()
    }

    fn persist(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.sums).map_err(|e| SoupError::Serde(e.to_string()))?;
        text.push('\n');
        write_file(&self.path(CHECKSUMS), text.as_bytes())
    }

    /// Checks `rel` against the sidecar and returns its absolute path.
    pub fn verify(&self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        let bytes = read_file(&path).map_err(|e| match e {
            SoupError::MissingArtifact { path, .. } => SoupError::MissingArtifact {
                path,
                hint: hint_for(rel).into(),
            },
            other => other,
        })?;
        let expected = self.sums.get(rel).ok_or_else(|| SoupError::ChecksumMismatch {
            what: rel.to_string(),
            expected: format!("an entry in {CHECKSUMS}"),
            found: "none".into(),
        })?;
        let found = hex_digest(&bytes);
        if &found != expected {
            return Err(SoupError::ChecksumMismatch {
                what: rel.to_string(),
                expected: expected.clone(),
                found,
            });
        }
        Ok(path)
    }
}

fn data_rel(tag: SplitTag) -> String {
    format!("data/{tag}.ds")
}

fn report_rel(name: &str, format: Format) -> String {
    format!("reports/{name}.{}", format.extension())
}

pub fn model_id(k: usize) -> String {
    format!("model_{k:02}")
}

/// Everything a selection command reads.
pub struct Loaded {
    pub manifest: ZooManifest,
    pub zoo: Vec<WeightVector>,
    pub cache: LogitCache,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_split(ws: &Workspace, tag: SplitTag) -> Result<Dataset> {
    load_dataset(&ws.verify(&data_rel(tag))?, tag)
}

pub fn load_zoo_checked(ws: &Workspace) -> Result<(ZooManifest, Vec<WeightVector>, WeightVector)> {
    let manifest = load_manifest(&ws.verify(ZOO_MANIFEST)?)?;
    let zoo = manifest
        .models
        .iter()
        .map(|m| load_weights(&ws.verify(&format!("zoo/{}.wt", m.model_id))?, &manifest.arch))
        .collect::<Result<Vec<_>>>()?;
    let init = load_weights(&ws.verify(&format!("zoo/{}", manifest.init_id))?, &manifest.arch)?;
    Ok((manifest, zoo, init))
}

fn check_manifest_arch(cfg: &RunConfig, manifest: &ZooManifest) -> Result<()> {
    if manifest.arch != cfg.arch {
        return Err(SoupError::ArchHashMismatch {
            expected: cfg.arch.hash().0,
            found: manifest.arch.hash().0,
        });
    }
    Ok(())
}

pub fn load_all(cfg: &RunConfig, ws: &Workspace) -> Result<Loaded> {
    let (manifest, zoo, _) = load_zoo_checked(ws)?;
    check_manifest_arch(cfg, &manifest)?;
    let val = load_split(ws, SplitTag::Validation)?;
    let test = load_split(ws, SplitTag::Test)?;
    let cache = LogitCache::load(&ws.verify(CACHE_FILE)?)?;
    if cache.model_ids() != manifest.model_ids().as_slice() {
        return Err(SoupError::Manifest(format!(
            "{CACHE_FILE} was built for models {:?}, manifest lists {:?}; rerun `soupkit cache`",
            cache.model_ids(),
            manifest.model_ids()
        )));
    }
    cache.check_dataset(&val)?;
    Ok(Loaded {
        manifest,
        zoo,
        cache,
        val,
        test,
    })
}

/// Sampled masks of sizes `2..=N-1`.
pub fn mc_masks(cfg: &RunConfig, n: usize, seed: u64) -> Result<Vec<SubsetMask>> {
    sample_candidates_mc(n, cfg.candidates.count, seed)
}

/// Sampled masks plus, when configured, the uniform soup.
pub fn selection_masks(cfg: &RunConfig, n: usize, seed: u64) -> Result<Vec<SubsetMask>> {
    let mut masks = mc_masks(cfg, n, seed)?;
    if cfg.candidates.include_uniform {
        masks.push(SubsetMask::full(n)?);
    }
    Ok(masks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerRow {
    pub method: Method,
    pub lambda: Option<f64>,
    pub budget_allowed: usize,
    pub budget_spent: usize,
    pub winner: String,
    pub size: usize,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

impl WinnerRow {
    pub fn from_report(r: &SelectionReport) -> Self {
        WinnerRow {
            method: r.method,
            lambda: r.lambda,
            budget_allowed: r.budget.allowed(),
            budget_spent: r.budget.spent(),
            winner: r.winner.mask().to_string(),
            size: r.winner.mask().len(),
            val_acc: r.winner.true_val().map(|e| e.accuracy),
            test_acc: r.winner.true_test().map(|e| e.accuracy),
        }
    }
}

impl Tabular for Vec<WinnerRow> {
    type Row = WinnerRow;
    const HEADER: &'static [&'static str] =
        &["method", "lambda", "budget_allowed", "budget_spent", "winner", "size", "val_acc", "test_acc"];

    fn to_rows(&self) -> Vec<WinnerRow> {
        self.clone()
    }

    fn from_rows(rows: Vec<WinnerRow>) -> Result<Self> {
        Ok(rows)
    }
}

fn selection_bytes(r: &SelectionReport, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Csv => to_csv(&vec![WinnerRow::from_report(r)]),
        Format::Json => to_json(r),
    }
}

/// Command-line overrides applied on top of the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub budget: Option<usize>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

pub struct Session {
    pub cfg: RunConfig,
    pub ws: Workspace,
    pub format: Format,
    pub seed: u64,
    pub budget: Option<usize>,
    pub lambda: Option<f64>,
}

impl Session {
    pub fn new(cfg: RunConfig, ov: &Overrides) -> Result<Self> {
        cfg.validate()?;
        if let Some(l) = ov.lambda {
            PriorConfig::new(l).map_err(|_| config_err(format!("--lambda must be finite and >= 0, got {l}")))?;
        }
        if ov.budget == Some(0) {
            return Err(config_err("--budget must be >= 1"));
        }
        let root = ov.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok(Session {
            ws: Workspace::open(&root)?,
            format: ov.format.unwrap_or(Format::Csv),
            seed: ov.seed.unwrap_or(cfg.candidates.seed),
            budget: ov.budget,
            lambda: ov.lambda,
            cfg,
        })
    }

    fn emit(&mut self, name: &str, bytes: Vec<u8>) -> Result<String> {
        let rel = report_rel(name, self.format);
        self.ws.write(&rel, &bytes)?;
        Ok(rel)
    }

    pub fn gen_data(&mut self) -> Result<Vec<String>> {
        let splits = gen_dataset(&self.cfg.dataset).map_err(|e| match e {
            SoupError::InvalidInput(m) => config_err(m),
            other => other,
        })?;
        save_splits(&self.ws.path("data"), &splits)?;
        let mut out = Vec::new();
        for tag in SplitTag::ALL {
            let rel = data_rel(tag);
            debug_assert_eq!(self.ws.path(&rel), dataset_path(&self.ws.path("data"), tag));
            self.ws.record(&rel)?;
            out.push(rel);
        }
        Ok(out)
    }

    pub fn train_zoo(&mut self) -> Result<Vec<String>> {
        let arch = &self.cfg.arch;
        let pretrain = load_split(&self.ws, SplitTag::Pretrain)?;
        let finetune = load_split(&self.ws, SplitTag::Finetune)?;
        let val = load_split(&self.ws, SplitTag::Validation)?;
        let start = WeightVector::random_init(arch, self.cfg.pretrain.seed);
        let init = sgd_train(arch, &start, &pretrain, &self.cfg.pretrain)?;

        let mut out = Vec::new();
        let init_rel = format!("zoo/{INIT_ID}");
        save_weights(&self.ws.path(&init_rel), arch, &init)?;
        self.ws.record(&init_rel)?;
        out.push(init_rel);

        let mut models = Vec::with_capacity(self.cfg.zoo.n_models);
        for k in 0..self.cfg.zoo.n_models {
            let hp = self.cfg.zoo.hyperparams(k);
            let w = sgd_train(arch, &init, &finetune, &hp)?;
            let id = model_id(k);
            let rel = format!("zoo/{id}.wt");
            save_weights(&self.ws.path(&rel), arch, &w)?;
            self.ws.record(&rel)?;
            out.push(rel);
            models.push(ModelEntry {
                model_id: id,
                hyperparams: hp,
                val_acc: Some(evaluate_weights(arch, &w, &val)?.accuracy),
            });
        }
        let manifest = ZooManifest {
            arch: arch.clone(),
            init_id: INIT_ID.into(),
            n: models.len(),
            models,
        };
        save_manifest(&self.ws.path(ZOO_MANIFEST), &manifest)?;
        self.ws.record(ZOO_MANIFEST)?;
        out.push(ZOO_MANIFEST.into());
        Ok(out)
    }

    pub fn cache(&mut self) -> Result<Vec<String>> {
        let (manifest, zoo, _) = load_zoo_checked(&self.ws)?;
        check_manifest_arch(&self.cfg, &manifest)?;
        let val = load_split(&self.ws, SplitTag::Validation)?;
        let cache = build_cache(&manifest.arch, &zoo, &manifest.model_ids(), &val)?;
        self.ws.write(CACHE_FILE, &cache.to_bytes())?;
        Ok(vec![CACHE_FILE.into()])
    }

    pub fn greedy(&mut self) -> Result<Vec<String>> {
        let l = load_all(&self.cfg, &self.ws)?;
        let mut r = greedy_soup(&l.manifest.arch, &l.zoo, &l.cache, &l.val, self.budget)?;
        attach_test(&l.manifest.arch, &l.zoo, &l.test, &mut r)?;
        let bytes = selection_bytes(&r, self.format)?;
        Ok(vec![self.emit("greedy", bytes)?])
    }

    pub fn radin(&mut self) -> Result<Vec<String>> {
        let l = load_all(&self.cfg, &self.ws)?;
        let b = self.budget.unwrap_or(self.cfg.budgets.max);
        let prior = PriorConfig::new(self.lambda.unwrap_or(self.cfg.lambdas[0]))?;
        let masks = selection_masks(&self.cfg, l.zoo.len(), self.seed)?;
        let mut r = radin(&l.manifest.arch, &l.zoo, &l.cache, &l.val, &masks, b, prior)?;
        attach_test(&l.manifest.arch, &l.zoo, &l.test, &mut r)?;
        let bytes = selection_bytes(&r, self.format)?;
        Ok(vec![self.emit("radin", bytes)?])
    }

    pub fn oracle(&mut self) -> Result<Vec<String>> {
        let l = load_all(&self.cfg, &self.ws)?;
        let masks = selection_masks(&self.cfg, l.zoo.len(), self.seed)?;
        let r = oracle(&l.manifest.arch, &l.zoo, &l.test, &masks)?;
        let bytes = selection_bytes(&r, self.format)?;
        Ok(vec![self.emit("oracle", bytes)?])
    }

    pub fn sweep(&mut self) -> Result<Vec<String>> {
        let l = load_all(&self.cfg, &self.ws)?;
        let masks = selection_masks(&self.cfg, l.zoo.len(), self.seed)?;
        let lambdas = match self.lambda {
            Some(x) => vec![x],
            None => self.cfg.lambdas.clone(),
        };
        let report = budget_sweep(
            &l.manifest.arch,
            &l.zoo,
            &l.cache,
            &masks,
            &self.cfg.budgets.budgets(),
            &lambdas,
            &l.val,
            &l.test,
        )?;
        let bytes = render(&report, self.format)?;
        Ok(vec![self.emit("sweep", bytes)?])
    }

    pub fn taylor(&mut self) -> Result<Vec<String>> {
        let (manifest, zoo, init) = load_zoo_checked(&self.ws)?;
        check_manifest_arch(&self.cfg, &manifest)?;
        let val = load_split(&self.ws, SplitTag::Validation)?;
        let arch = &manifest.arch;
        let deltas = match self.cfg.taylor.directions {
            DirectionSource::Random => random_directions(arch.param_count(), zoo.len(), self.cfg.taylor.seed),
            DirectionSource::Zoo => {
                let base = init.to_f64();
                zoo.iter()
                    .zip(manifest.model_ids())
                    .map(|(w, id)| {
                        let d: Vec<f64> = w.to_f64().iter().zip(&base).map(|(a, b)| a - b).collect();
                        if d.iter().all(|&x| x == 0.0) {
                            return Err(SoupError::InvalidInput(format!(
                                "{id} did not move from the shared init; use random directions"
                            )));
                        }
                        Ok(normalize(&d))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let p = uniform_mix(&SubsetMask::full(zoo.len())?, zoo.len())?;
        let report = taylor_check(arch, &init, &deltas, &p, &self.cfg.taylor.epsilons, &val)?;
        let bytes = render(&report, self.format)?;
        Ok(vec![self.emit("taylor", bytes)?])
    }

    fn diagnostic_candidates(&self, l: &Loaded) -> Result<Vec<Candidate>> {
        let masks = mc_masks(&self.cfg, l.zoo.len(), self.seed)?;
        evaluate_candidates(&l.manifest.arch, &l.zoo, &l.cache, &masks, &l.val, &l.test)
    }

    fn write_scatter(&mut self, cands: &[Candidate]) -> Result<String> {
        let table = ScatterTable::from_candidates(cands)?;
        let bytes = render(&table, self.format)?;
        self.emit("scatter", bytes)
    }

    fn write_variance(&mut self, cands: &[Candidate], n: usize) -> Result<String> {
        let bytes = render_variance(&variance_by_count(cands, n)?, self.format)?;
        self.emit("variance", bytes)
    }

    pub fn correlate(&mut self) -> Result<Vec<String>> {
        let l = load_all(&self.cfg, &self.ws)?;
        let cands = self.diagnostic_candidates(&l)?;
        Ok(vec![self.write_scatter(&cands)?])
    }

    pub fn variance(&mut self) -> Result<Vec<String>> {
        let l = load_all(&self.cfg, &self.ws)?;
        let cands = self.diagnostic_candidates(&l)?;
        Ok(vec![self.write_variance(&cands, l.zoo.len())?])
    }

    /// Every stage in order; the diagnostic candidates are evaluated once
    /// and shared by the scatter and variance reports.
    pub fn pipeline(&mut self) -> Result<Vec<String>> {
        let mut out = self.gen_data()?;
        out.extend(self.train_zoo()?);
        out.extend(self.cache()?);
        out.extend(self.greedy()?);
        out.extend(self.radin()?);
        out.extend(self.oracle()?);
        out.extend(self.sweep()?);
        out.extend(self.taylor()?);
        let l = load_all(&self.cfg, &self.ws)?;
        let cands = self.diagnostic_candidates(&l)?;
        out.push(self.write_scatter(&cands)?);
        out.push(self.write_variance(&cands, l.zoo.len())?);
        Ok(out)
    }

    pub fn run(&mut self, cmd: &Command) -> Result<Vec<String>> {
        match cmd {
            Command::GenData => self.gen_data(),
            Command::TrainZoo => self.train_zoo(),
            Command::Cache => self.cache(),
            Command::Greedy => self.greedy(),
            Command::Radin => self.radin(),
            Command::Oracle => self.oracle(),
            Command::Sweep => self.sweep(),
            Command::Taylor => self.taylor(),
            Command::Correlate => self.correlate(),
            Command::Variance => self.variance(),
            Command::Pipeline => self.pipeline(),
            Command::DefaultConfig => Ok(Vec::new()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "soupkit", version, about = "Budgeted model-soup selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run config (JSON). Built-in defaults are used when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Evaluation budget B (radin, greedy).
    #[arg(long, global = true, value_name = "B")]
    pub budget: Option<usize>,

    /// Prior strength (radin, sweep).
    #[arg(long, global = true, value_name = "F")]
    pub lambda: Option<f64>,

    /// Candidate sampling seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the four dataset splits.
    GenData,
    /// Pretrain the shared init and fine-tune the zoo.
    TrainZoo,
    /// Cache per-model validation logits.
    Cache,
    /// Greedy soup in cache-sorted order.
    Greedy,
    /// Rank candidates by the cached ensemble, fully evaluate the top B.
    Radin,
    /// Best candidate on test (diagnostic).
    Oracle,
    /// Budget sweep over all methods.
    Sweep,
    /// First-order equivalence check around the shared init.
    Taylor,
    /// Fast score vs true accuracy scatter.
    Correlate,
    /// Test-accuracy spread by soup size.
    Variance,
    /// All of the above in order.
    Pipeline,
    /// Print the built-in config as JSON.
    DefaultConfig,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            budget: self.budget,
            lambda: self.lambda,
            seed: self.seed,
            out: self.out.clone(),
            format: self.format.map(Format::from),
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Vec<String>> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.command == Command::DefaultConfig {
        print!("{}", cfg.to_json());
        return Ok(Vec::new());
    }
    let mut session = Session::new(cfg, &cli.overrides())?;
    session.run(&cli.command)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(written) => {
            for rel in written {
                println!("wrote {rel}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
