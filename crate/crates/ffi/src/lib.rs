//! C interface to `triplet_meta`.
//!
//! Every fallible call returns a [`TmStatus`]; on failure the message is kept
//! per thread and read with [`tm_last_error_message`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use triplet_meta::clustering::{self, ClusterAssignment, KMeansConfig};
use triplet_meta::dataset::{self, Dataset, Format};
use triplet_meta::embedding::{self, Embedding, TrainConfig, TrainHistory};
use triplet_meta::triplets::{self, BudgetParams, LogBase};
use triplet_meta::{meta, Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Dependency = 4,
    Oracle = 5,
    Numeric = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmLogBase {
    Natural = 0,
    Base2 = 1,
    Base10 = 2,
}

/// Training hyperparameters. Obtain defaults from [`tm_train_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TmTrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<TmTrainConfig> for TrainConfig {
    fn from(c: TmTrainConfig) -> Self {
        TrainConfig {
            margin: c.margin,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seed,
            init_scale: c.init_scale,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// A loaded study table.
pub struct TmDataset(Dataset);

/// A trained embedding with its history.
pub struct TmTraining(TrainHistory);

/// A k-means partition.
pub struct TmClusters(ClusterAssignment);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn status_of(kind: ErrorKind) -> TmStatus {
    match kind {
        ErrorKind::Input => TmStatus::InvalidInput,
        ErrorKind::Config => TmStatus::Config,
        ErrorKind::Dependency => TmStatus::Dependency,
        ErrorKind::Oracle => TmStatus::Oracle,
        ErrorKind::Numeric => TmStatus::Numeric,
        ErrorKind::Io => TmStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            TmStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(e.kind())
        }
        Err(_) => {
            set_error("internal panic".into());
            TmStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `p` must be null only when `len` is 0, otherwise valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(nonnull(p, what)?, len))
}

unsafe fn write<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    nonnull(out, what)?;
    out.write(value);
    Ok(())
}

/// Copies `src` into `buf` when `cap` is large enough and always reports the
/// required length through `len_out`.
unsafe fn copy_out<T: Copy>(
    src: &[T],
    buf: *mut T,
    cap: usize,
    len_out: *mut usize,
) -> Result<(), Failure> {
    if !len_out.is_null() {
        len_out.write(src.len());
    }
    if cap < src.len() {
        return Err(Error::InvalidInput(format!(
            "buffer holds {cap} element(s) but {} are needed",
            src.len()
        ))
        .into());
    }
    if !src.is_empty() {
        ptr::copy_nonoverlapping(src.as_ptr(), nonnull(buf, "buf")? as *mut T, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `.csv` or `.json` study table.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_dataset_load(path: *const c_char, out: *mut *mut TmDataset) -> TmStatus {
    guard(|| {
        let path = CStr::from_ptr(nonnull(path, "path")?)
            .to_str()
            .map_err(|_| Error::InvalidInput("path is not valid UTF-8".into()))?;
        nonnull(out, "out")?;
        let path = Path::new(path);
        let format = Format::from_path(path)
            .ok_or_else(|| Error::InvalidInput(format!("cannot infer format of {}", path.display())))?;
        let ds = dataset::load_dataset(path, format)?;
        out.write(Box::into_raw(Box::new(TmDataset(ds))));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`tm_dataset_load`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn tm_dataset_len(ds: *const TmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Copies effects and variances in study order; either buffer may be null.
///
/// # Safety
/// Non-null buffers must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn tm_dataset_effects(
    ds: *const TmDataset,
    effects: *mut f64,
    variances: *mut f64,
    cap: usize,
) -> TmStatus {
    guard(|| {
        let ds = &nonnull(ds, "ds")?.as_ref().expect("checked").0;
        if !effects.is_null() {
            copy_out(&ds.effects(), effects, cap, ptr::null_mut())?;
        }
        if !variances.is_null() {
            copy_out(&ds.variances(), variances, cap, ptr::null_mut())?;
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or come from [`tm_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn tm_dataset_free(ds: *mut TmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_triplet_budget(
    m: usize,
    d: usize,
    lambda: u32,
    log_base: TmLogBase,
    out: *mut usize,
) -> TmStatus {
    guard(|| {
        let log_base = match log_base {
            TmLogBase::Natural => LogBase::Natural,
            TmLogBase::Base2 => LogBase::Base2,
            TmLogBase::Base10 => LogBase::Base10,
        };
        let b = triplets::triplet_budget(BudgetParams { m, d, lambda, log_base })?;
        write(out, b, "out")
    })
}

/// # Safety
/// `xa`, `xp` and `xn` must each hold `d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_triplet_loss(
    xa: *const f64,
    xp: *const f64,
    xn: *const f64,
    d: usize,
    margin: f64,
    out: *mut f64,
) -> TmStatus {
    guard(|| {
        let l = embedding::triplet_loss(
            slice(xa, d, "xa")?,
            slice(xp, d, "xp")?,
            slice(xn, d, "xn")?,
            margin,
        )?;
        write(out, l, "out")
    })
}

/// # Safety
/// `effects` and `variances` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_reml_tau2(
    effects: *const f64,
    variances: *const f64,
    n: usize,
    out: *mut f64,
) -> TmStatus {
    guard(|| {
        let t = meta::reml_tau2(slice(effects, n, "effects")?, slice(variances, n, "variances")?)?;
        write(out, t, "out")
    })
}

/// Inverse-variance pooled mean and its standard error at a given τ².
///
/// # Safety
/// `effects` and `variances` must hold `n` doubles; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_pooled_effect(
    effects: *const f64,
    variances: *const f64,
    n: usize,
    tau2: f64,
    mu_out: *mut f64,
    se_out: *mut f64,
) -> TmStatus {
    guard(|| {
        nonnull(mu_out, "mu_out")?;
        nonnull(se_out, "se_out")?;
        let (mu, se) =
            meta::pooled_effect(slice(effects, n, "effects")?, slice(variances, n, "variances")?, tau2)?;
        mu_out.write(mu);
        se_out.write(se);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn tm_train_config_default() -> TmTrainConfig {
    let c = TrainConfig::default();
    TmTrainConfig {
        margin: c.margin,
        learning_rate: c.learning_rate,
        epochs: c.epochs,
        batch_size: c.batch_size,
        seed: c.seed,
        init_scale: c.init_scale,
        beta1: c.beta1,
        beta2: c.beta2,
        epsilon: c.epsilon,
    }
}

/// Trains an `m × d` embedding on `n_triplets` (anchor, positive, negative)
/// index triples stored flat in `triples`.
///
/// # Safety
/// `triples` must hold `3 * n_triplets` indices, `cfg` must be valid and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_train(
    triples: *const usize,
    n_triplets: usize,
    m: usize,
    d: usize,
    cfg: *const TmTrainConfig,
    out: *mut *mut TmTraining,
) -> TmStatus {
    guard(|| {
        let flat = slice(triples, 3 * n_triplets, "triples")?;
        let cfg: TrainConfig = (*nonnull(cfg, "cfg")?).into();
        nonnull(out, "out")?;
        let triples: Vec<[usize; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let h = embedding::train_indices(&triples, m, d, &cfg, &mut ())?;
        out.write(Box::into_raw(Box::new(TmTraining(h))));
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`tm_train`].
#[no_mangle]
pub unsafe extern "C" fn tm_training_best_epoch(t: *const TmTraining) -> usize {
    t.as_ref().map_or(0, |t| t.0.best_epoch)
}

/// NaN for a null handle.
///
/// # Safety
/// `t` must come from [`tm_train`].
#[no_mangle]
pub unsafe extern "C" fn tm_training_best_error(t: *const TmTraining) -> f64 {
    t.as_ref().map_or(f64::NAN, |t| t.0.best().triplet_error)
}

/// Copies the best checkpoint, row-major `m × d`.
///
/// # Safety
/// `buf` must hold `cap` doubles; `len_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn tm_training_coords(
    t: *const TmTraining,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> TmStatus {
    guard(|| {
        let t = &nonnull(t, "t")?.as_ref().expect("checked").0;
        copy_out(&t.best_coords.coords, buf, cap, len_out)
    })
}

/// # Safety
/// `t` must be null or come from [`tm_train`].
#[no_mangle]
pub unsafe extern "C" fn tm_training_free(t: *mut TmTraining) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// k-means with k-means++ seeding over `m` points of dimension `d`.
/// `restarts` of 0 uses the library default.
///
/// # Safety
/// `coords` must hold `m * d` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_kmeans(
    coords: *const f64,
    m: usize,
    d: usize,
    k: usize,
    seed: u64,
    restarts: usize,
    out: *mut *mut TmClusters,
) -> TmStatus {
    guard(|| {
        let e = Embedding::new(m, d, slice(coords, m * d, "coords")?.to_vec())?;
        nonnull(out, "out")?;
        let mut cfg = KMeansConfig::default();
        if restarts > 0 {
            cfg.restarts = restarts;
        }
        let ca = clustering::kmeans(&e, k, seed, &cfg)?;
        out.write(Box::into_raw(Box::new(TmClusters(ca))));
        Ok(())
    })
}

/// NaN for a null handle.
///
/// # Safety
/// `c` must come from [`tm_kmeans`].
#[no_mangle]
pub unsafe extern "C" fn tm_clusters_wcss(c: *const TmClusters) -> f64 {
    c.as_ref().map_or(f64::NAN, |c| c.0.wcss)
}

/// # Safety
/// `buf` must hold `cap` entries; `len_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn tm_clusters_labels(
    c: *const TmClusters,
    buf: *mut usize,
    cap: usize,
    len_out: *mut usize,
) -> TmStatus {
    guard(|| {
        let c = &nonnull(c, "c")?.as_ref().expect("checked").0;
        copy_out(&c.labels, buf, cap, len_out)
    })
}

/// # Safety
/// `c` must be null or come from [`tm_kmeans`].
#[no_mangle]
pub unsafe extern "C" fn tm_clusters_free(c: *mut TmClusters) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `a` and `b` must hold `n` labels; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_adjusted_rand_index(
    a: *const usize,
    b: *const usize,
    n: usize,
    out: *mut f64,
) -> TmStatus {
    guard(|| {
        let v = clustering::adjusted_rand_index(slice(a, n, "a")?, slice(b, n, "b")?)?;
        write(out, v, "out")
    })
}
