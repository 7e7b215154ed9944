//! C ABI over soupkit.
//!
//! Objects are opaque handles created by `*_load` / `*_build` functions and
//! released with the matching `*_free`. Every entry point returns a
//! [`SoupStatus`]; on failure a message is available from
//! [`soup_last_error`] on the same thread until the next failing call.
//! Panics are caught at the boundary and reported as `SOUP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use soupkit::analysis::stats::spearman;
use soupkit::io::{load_dataset, load_zoo};
use soupkit::{
    build_cache, ensemble_eval, evaluate_soup, greedy_soup, radin, sample_candidates_mc, ArchDescriptor,
    Dataset, EvalResult, LogitCache, MixVector, PriorConfig, SelectionReport, SoupError, SplitTag,
    SubsetMask, WeightVector,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoupStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingArtifact = 3,
    CorruptArtifact = 4,
    NonFinite = 5,
    BufferTooSmall = 6,
    Panic = 7,
    Other = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoupSplit {
    Pretrain = 0,
    Finetune = 1,
    Validation = 2,
    Test = 3,
}

impl From<SoupSplit> for SplitTag {
    fn from(s: SoupSplit) -> Self {
        match s {
            SoupSplit::Pretrain => SplitTag::Pretrain,
            SoupSplit::Finetune => SplitTag::Finetune,
            SoupSplit::Validation => SplitTag::Validation,
            SoupSplit::Test => SplitTag::Test,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SoupEval {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n_examples: usize,
}

impl From<EvalResult> for SoupEval {
    fn from(r: EvalResult) -> Self {
        SoupEval {
            accuracy: r.accuracy,
            mean_loss: r.mean_loss,
            n_examples: r.n_examples,
        }
    }
}

/// A loaded zoo: architecture plus weights in manifest order.
pub struct SoupZoo {
    arch: ArchDescriptor,
    ids: Vec<String>,
    weights: Vec<WeightVector>,
}

pub struct SoupDataset(Dataset);

pub struct SoupCache(LogitCache);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SoupStatus, String);

impl From<SoupError> for Failure {
    fn from(e: SoupError) -> Self {
        let status = match &e {
            SoupError::MissingArtifact { .. } => SoupStatus::MissingArtifact,
            SoupError::BadMagic { .. }
            | SoupError::Truncated { .. }
            | SoupError::ArchHashMismatch { .. }
            | SoupError::ChecksumMismatch { .. }
            | SoupError::Manifest(_) => SoupStatus::CorruptArtifact,
            SoupError::NonFinite(_) | SoupError::NonFiniteLoss { .. } => SoupStatus::NonFinite,
            SoupError::DimensionMismatch { .. }
            | SoupError::InvalidInput(_)
            | SoupError::InvalidArch(_)
            | SoupError::TooManyCandidates { .. }
            | SoupError::Undefined(_)
            | SoupError::EmptyDataset => SoupStatus::InvalidArgument,
            _ => SoupStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SoupStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SoupStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SoupStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SoupStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SoupStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn soup_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a zoo manifest and every weight file it lists.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soup_zoo_load(manifest_path: *const c_char, out: *mut *mut SoupZoo) -> SoupStatus {
    guard(|| {
        let path = path_arg(manifest_path, "manifest_path")?;
        let (manifest, weights) = load_zoo(&path)?;
        let zoo = SoupZoo {
            ids: manifest.model_ids(),
            arch: manifest.arch,
            weights,
        };
        put(out, boxed(zoo), "out")
    })
}

/// # Safety
/// `zoo` must come from [`soup_zoo_load`] and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn soup_zoo_free(zoo: *mut SoupZoo) {
    if !zoo.is_null() {
        drop(Box::from_raw(zoo));
    }
}

/// Number of models, or 0 for NULL.
///
/// # Safety
/// `zoo` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn soup_zoo_len(zoo: *const SoupZoo) -> usize {
    zoo.as_ref().map_or(0, |z| z.weights.len())
}

/// Parameter count of the zoo architecture, or 0 for NULL.
///
/// # Safety
/// `zoo` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn soup_zoo_param_count(zoo: *const SoupZoo) -> usize {
    zoo.as_ref().map_or(0, |z| z.arch.param_count())
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soup_dataset_load(
    path: *const c_char,
    split: SoupSplit,
    out: *mut *mut SoupDataset,
) -> SoupStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let ds = load_dataset(&path, split.into())?;
        put(out, boxed(SoupDataset(ds)), "out")
    })
}

/// # Safety
/// `ds` must come from [`soup_dataset_load`] and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn soup_dataset_free(ds: *mut SoupDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of examples, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn soup_dataset_len(ds: *const SoupDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Caches every model's logits on a validation split.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soup_cache_build(
    zoo: *const SoupZoo,
    val: *const SoupDataset,
    out: *mut *mut SoupCache,
) -> SoupStatus {
    guard(|| {
        let z = get(zoo, "zoo")?;
        let v = get(val, "val")?;
        let cache = build_cache(&z.arch, &z.weights, &z.ids, &v.0)?;
        put(out, boxed(SoupCache(cache)), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soup_cache_load(path: *const c_char, out: *mut *mut SoupCache) -> SoupStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let cache = LogitCache::load(&path)?;
        put(out, boxed(SoupCache(cache)), "out")
    })
}

/// # Safety
/// `cache` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn soup_cache_save(cache: *const SoupCache, path: *const c_char) -> SoupStatus {
    guard(|| {
        let c = get(cache, "cache")?;
        let path = path_arg(path, "path")?;
        c.0.save(&path)?;
        Ok(())
    })
}

/// # Safety
/// `cache` must come from a cache constructor and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn soup_cache_free(cache: *mut SoupCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Accuracy and loss of the `p`-weighted logit ensemble. Free of budget.
///
/// # Safety
/// `p` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soup_ensemble_eval(
    cache: *const SoupCache,
    p: *const f64,
    n: usize,
    out: *mut SoupEval,
) -> SoupStatus {
    guard(|| {
        let c = get(cache, "cache")?;
        let mix = MixVector::new(slice_arg(p, n, "p")?.to_vec())?;
        put(out, ensemble_eval(&c.0, &mix)?.into(), "out")
    })
}

/// Full evaluation of the weight soup `sum_k p_k w_k` on `data`.
///
/// # Safety
/// `p` must point to `n` doubles; handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn soup_evaluate_soup(
    zoo: *const SoupZoo,
    p: *const f64,
    n: usize,
    data: *const SoupDataset,
    out: *mut SoupEval,
) -> SoupStatus {
    guard(|| {
        let z = get(zoo, "zoo")?;
        let d = get(data, "data")?;
        let mix = MixVector::new(slice_arg(p, n, "p")?.to_vec())?;
        put(out, evaluate_soup(&z.arch, &z.weights, &mix, &d.0)?.into(), "out")
    })
}

unsafe fn write_winner(
    report: &SelectionReport,
    members: *mut usize,
    capacity: usize,
    out_len: *mut usize,
    out_eval: *mut SoupEval,
    out_spent: *mut usize,
) -> Result<(), Failure> {
    let m = report.winner.mask().members();
    put(out_len, m.len(), "out_len")?;
    if m.len() > capacity {
        return Err(Failure(
            SoupStatus::BufferTooSmall,
            format!("winner has {} members, buffer holds {capacity}", m.len()),
        ));
    }
    if members.is_null() {
        return Err(null("members"));
    }
    ptr::copy_nonoverlapping(m.as_ptr(), members, m.len());
    if !out_eval.is_null() {
        let val = report.winner.true_val().copied().unwrap_or(EvalResult {
            accuracy: f64::NAN,
            mean_loss: f64::NAN,
            n_examples: 0,
        });
        out_eval.write(val.into());
    }
    if !out_spent.is_null() {
        out_spent.write(report.budget.spent());
    }
    Ok(())
}

/// Greedy soup over all models. The winner's member indices are written to
/// `members` (capacity `capacity`), their count to `out_len`. `out_eval`
/// and `out_spent` may be NULL.
///
/// # Safety
/// Handles must be live; `members` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn soup_greedy(
    zoo: *const SoupZoo,
    cache: *const SoupCache,
    val: *const SoupDataset,
    members: *mut usize,
    capacity: usize,
    out_len: *mut usize,
    out_eval: *mut SoupEval,
    out_spent: *mut usize,
) -> SoupStatus {
    guard(|| {
        let z = get(zoo, "zoo")?;
        let c = get(cache, "cache")?;
        let v = get(val, "val")?;
        let r = greedy_soup(&z.arch, &z.weights, &c.0, &v.0, None)?;
        write_winner(&r, members, capacity, out_len, out_eval, out_spent)
    })
}

/// Ranked selection over `n_candidates` Monte-Carlo masks (plus the
/// uniform soup when `include_uniform`), full evaluation of the top
/// `budget`. Output conventions as in [`soup_greedy`].
///
/// # Safety
/// Handles must be live; `members` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn soup_radin_mc(
    zoo: *const SoupZoo,
    cache: *const SoupCache,
    val: *const SoupDataset,
    n_candidates: usize,
    seed: u64,
    include_uniform: bool,
    budget: usize,
    lambda: f64,
    members: *mut usize,
    capacity: usize,
    out_len: *mut usize,
    out_eval: *mut SoupEval,
    out_spent: *mut usize,
) -> SoupStatus {
    guard(|| {
        let z = get(zoo, "zoo")?;
        let c = get(cache, "cache")?;
        let v = get(val, "val")?;
        let n = z.weights.len();
        let mut masks = sample_candidates_mc(n, n_candidates, seed)?;
        if include_uniform {
            masks.push(SubsetMask::full(n)?);
        }
        let prior = PriorConfig::new(lambda)?;
        let r = radin(&z.arch, &z.weights, &c.0, &v.0, &masks, budget, prior)?;
        write_winner(&r, members, capacity, out_len, out_eval, out_spent)
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `xs` and `ys` must each point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soup_spearman(xs: *const f64, ys: *const f64, n: usize, out: *mut f64) -> SoupStatus {
    guard(|| {
        let x = slice_arg(xs, n, "xs")?;
        let y = slice_arg(ys, n, "ys")?;
        put(out, spearman(x, y)?, "out")
    })
}
