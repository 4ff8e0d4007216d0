//! C ABI over the `sspsc` library.
//!
//! Datasets and models are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`SspscStatus`]; on failure the
//! message is available from [`sspsc_last_error`] on the same thread.
//! Matrices are passed row-major as `rows × cols` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::DMatrix;
use sspsc::io::SavedModel;
use sspsc::{DatasetPair, EigenSelection, Error, Hyperparams, LossKind};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SspscStatus {
    Ok = 0,
    NullPointer = 1,
    /// Rejected input: shapes, labels, hyperparameters, file contents.
    InvalidInput = 2,
    /// A numerical routine failed.
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SspscLoss {
    Hinge = 0,
    Logistic = 1,
    Exponential = 2,
}

/// Mirror of the library hyperparameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SspscHyperparams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub r: usize,
    pub k: usize,
    pub delta: f64,
    pub rho: f64,
    pub loss: SspscLoss,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Nonzero selects the largest eigenvalues in the subspace step.
    pub eigen_largest: i32,
}

/// Opaque source/target training data.
pub struct SspscDataset {
    pair: DatasetPair,
}

/// Opaque trained model.
pub struct SspscModel {
    model: SavedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SspscStatus {
    match e {
        Error::Io { .. } => SspscStatus::Io,
        e if e.is_numeric() => SspscStatus::Numeric,
        _ => SspscStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SspscStatus, String)>) -> SspscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SspscStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SspscStatus::Panic
        }
    }
}

fn lib<T>(r: sspsc::Result<T>) -> Result<T, (SspscStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (SspscStatus, String) {
    (SspscStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (SspscStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (SspscStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (SspscStatus::InvalidInput, "path is not UTF-8".into()))
}

fn to_hp(h: &SspscHyperparams) -> Hyperparams {
    Hyperparams {
        c1: h.c1,
        c2: h.c2,
        c3: h.c3,
        r: h.r,
        k: h.k,
        delta: h.delta,
        rho: h.rho,
        loss: match h.loss {
            SspscLoss::Hinge => LossKind::Hinge,
            SspscLoss::Logistic => LossKind::Logistic,
            SspscLoss::Exponential => LossKind::Exponential,
        },
        max_outer_iters: h.max_outer_iters,
        max_inner_iters: h.max_inner_iters,
        tol: h.tol,
        seed: h.seed,
        eigen_selection: if h.eigen_largest != 0 {
            EigenSelection::Largest
        } else {
            EigenSelection::Smallest
        },
    }
}

fn from_hp(h: &Hyperparams) -> SspscHyperparams {
    SspscHyperparams {
        c1: h.c1,
        c2: h.c2,
        c3: h.c3,
        r: h.r,
        k: h.k,
        delta: h.delta,
        rho: h.rho,
        loss: match h.loss {
            LossKind::Hinge => SspscLoss::Hinge,
            LossKind::Logistic => SspscLoss::Logistic,
            LossKind::Exponential => SspscLoss::Exponential,
        },
        max_outer_iters: h.max_outer_iters,
        max_inner_iters: h.max_inner_iters,
        tol: h.tol,
        seed: h.seed,
        eigen_largest: (h.eigen_selection == EigenSelection::Largest) as i32,
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sspsc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default hyperparameters for `dim` features.
///
/// # Safety
/// `out` must be null or point to writable memory for one struct.
#[no_mangle]
pub unsafe extern "C" fn sspsc_hyperparams_default(dim: usize, out: *mut SspscHyperparams) -> SspscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = from_hp(&Hyperparams::for_dim(dim));
        Ok(())
    })
}

/// Copies training data into a new dataset. Labels are ±1; `target_labels`
/// covers the first `n_target_labeled` target rows.
///
/// # Safety
/// Each pointer must be null or valid for the stated number of elements;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sspsc_dataset_new(
    source_features: *const f64,
    source_labels: *const i32,
    n_source: usize,
    target_features: *const f64,
    n_target: usize,
    target_labels: *const i32,
    n_target_labeled: usize,
    dim: usize,
    out: *mut *mut SspscDataset,
) -> SspscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let xs = slice(source_features, n_source * dim, "source_features")?;
        let ys = slice(source_labels, n_source, "source_labels")?;
        let xt = slice(target_features, n_target * dim, "target_features")?;
        let yt = slice(target_labels, n_target_labeled, "target_labels")?;
        let ys: Vec<i64> = ys.iter().map(|&y| y as i64).collect();
        let yt: Vec<i64> = yt.iter().map(|&y| y as i64).collect();
        let pair = lib(DatasetPair::new(
            DMatrix::from_row_slice(n_source, dim, xs),
            &ys,
            DMatrix::from_row_slice(n_target, dim, xt),
            &yt,
        ))?;
        *out = Box::into_raw(Box::new(SspscDataset { pair }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from [`sspsc_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sspsc_dataset_free(dataset: *mut SspscDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a model. `hyperparams` may be null for the defaults.
///
/// # Safety
/// `dataset` must be a live handle, `hyperparams` null or valid, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sspsc_fit(
    dataset: *const SspscDataset,
    hyperparams: *const SspscHyperparams,
    out: *mut *mut SspscModel,
) -> SspscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let hp = match hyperparams.as_ref() {
            Some(h) => to_hp(h),
            None => Hyperparams::for_dim(ds.pair.dim()),
        };
        let (state, _) = lib(sspsc::fit(&ds.pair, &hp))?;
        *out = Box::into_raw(Box::new(SspscModel {
            model: SavedModel {
                hyperparams: hp,
                state,
                normalizer: None,
            },
        }));
        Ok(())
    })
}

/// Target-domain scores and ±1 labels for `n_rows` rows of `dim` features.
///
/// # Safety
/// `model` must be a live handle; `features` valid for `n_rows·dim`
/// doubles; `scores` and `labels` null or writable for `n_rows` elements.
#[no_mangle]
pub unsafe extern "C" fn sspsc_predict(
    model: *const SspscModel,
    features: *const f64,
    n_rows: usize,
    dim: usize,
    scores: *mut f64,
    labels: *mut i32,
) -> SspscStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = slice(features, n_rows * dim, "features")?;
        let (s, y) = lib(m.model.predict(&DMatrix::from_row_slice(n_rows, dim, x)))?;
        if n_rows > 0 {
            if !scores.is_null() {
                std::slice::from_raw_parts_mut(scores, n_rows).copy_from_slice(&s);
            }
            if !labels.is_null() {
                for (dst, &v) in std::slice::from_raw_parts_mut(labels, n_rows).iter_mut().zip(&y) {
                    *dst = v as i32;
                }
            }
        }
        Ok(())
    })
}

/// Feature dimension of a model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sspsc_model_dim(model: *const SspscModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.state.dim())
}

/// Copies the target classifier `𝛗` (`dim` doubles) into `out`.
///
/// # Safety
/// `model` must be a live handle; `out` writable for `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sspsc_model_target_weights(model: *const SspscModel, out: *mut f64, dim: usize) -> SspscStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = &m.model.state.varphi;
        if dim != v.len() {
            return Err((SspscStatus::InvalidInput, format!("model has {} features, buffer {dim}", v.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a nul-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn sspsc_model_save(model: *const SspscModel, path: *const c_char) -> SspscStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        lib(m.model.save(path_arg(path)?))
    })
}

/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sspsc_model_load(path: *const c_char, out: *mut *mut SspscModel) -> SspscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = lib(SavedModel::load(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(SspscModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sspsc_model_free(model: *mut SspscModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
