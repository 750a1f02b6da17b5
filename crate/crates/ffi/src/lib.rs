//! C interface to `soap-core`.
//!
//! Every fallible function returns a [`SoapStatus`]; on failure the message
//! is kept per thread and can be copied out with [`soap_last_error`].
//! Datasets and models cross the boundary as opaque handles that must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use soap_core::baselines::{baseline_train, BaselineSpec};
use soap_core::data::gen_gaussians;
use soap_core::harness::Method;
use soap_core::soap::{SoapConfig, SoapTrainer};
use soap_core::{average_precision, Arch, Dataset, Error, ScoreModel, SurrogateSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoapStatus {
    Ok = 0,
    Usage = 1,
    UndefinedMetric = 2,
    NumericInput = 3,
    DivisionDomain = 4,
    Precondition = 5,
    Invariant = 6,
    RunFailed = 7,
    Parse = 8,
    Io = 9,
    NullPointer = 10,
    Panic = 11,
}

impl From<&Error> for SoapStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Usage(_) => SoapStatus::Usage,
            Error::UndefinedMetric(_) => SoapStatus::UndefinedMetric,
            Error::NumericInput(_) => SoapStatus::NumericInput,
            Error::DivisionDomain(_) => SoapStatus::DivisionDomain,
            Error::Precondition(_) => SoapStatus::Precondition,
            Error::Invariant(_) => SoapStatus::Invariant,
            Error::RunFailed(_) => SoapStatus::RunFailed,
            Error::Parse { .. } => SoapStatus::Parse,
            Error::Io { .. } => SoapStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoapMethod {
    SoapSgd = 0,
    SoapAdam = 1,
    SoapAmsgrad = 2,
    Ce = 3,
    CbCe = 4,
    Focal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoapSurrogate {
    SquaredHinge = 0,
    Logistic = 1,
    Sigmoid = 2,
}

/// Training settings. Obtain defaults from [`soap_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SoapTrainOptions {
    pub method: SoapMethod,
    pub surrogate: SoapSurrogate,
    /// Margin for the squared hinge, scale for logistic and sigmoid.
    pub surrogate_param: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub batch_pos: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub u0: f64,
    pub seed: u64,
}

/// Opaque dataset handle.
pub struct SoapDataset(Dataset);

/// Opaque model handle.
pub struct SoapModel(ScoreModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard<F>(f: F) -> SoapStatus
where
    F: FnOnce() -> Result<(), SoapStatus>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SoapStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_last_error("internal panic".into());
            SoapStatus::Panic
        }
    }
}

fn fail(e: Error) -> SoapStatus {
    let status = SoapStatus::from(&e);
    set_last_error(e.to_string());
    status
}

fn null(what: &str) -> SoapStatus {
    set_last_error(format!("{what} is null"));
    SoapStatus::NullPointer
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap` bytes. Returns the length the
/// full message needs including the terminator, or 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn soap_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn soap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Average precision of `scores` against labels in {-1, +1}.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn soap_average_precision(
    scores: *const f64,
    labels: *const i8,
    n: usize,
    out: *mut f64,
) -> SoapStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return Err(null("scores, labels or out"));
        }
        let scores = std::slice::from_raw_parts(scores, n);
        let labels = std::slice::from_raw_parts(labels, n);
        *out = average_precision(scores, labels).map_err(fail)?;
        Ok(())
    })
}

/// Two isotropic Gaussian classes; see the core generator.
///
/// # Safety
/// `out` must be writable; on success it receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn soap_dataset_generate(
    n: usize,
    d: usize,
    ratio: f64,
    sep: f64,
    seed: u64,
    out: *mut *mut SoapDataset,
) -> SoapStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = gen_gaussians(n, d, ratio, sep, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(SoapDataset(data)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn soap_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut SoapDataset,
) -> SoapStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("path or out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::Usage("path is not valid UTF-8".into())))?;
        let data = Dataset::load_csv(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(SoapDataset(data)));
        Ok(())
    })
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn soap_dataset_len(data: *const SoapDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn soap_dataset_dim(data: *const SoapDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn soap_dataset_n_pos(data: *const SoapDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n_pos())
}

/// Copies the labels into `out`, which must hold `soap_dataset_len` values.
///
/// # Safety
/// `data` must be a live handle and `out` must point to enough writable space.
#[no_mangle]
pub unsafe extern "C" fn soap_dataset_labels(data: *const SoapDataset, out: *mut i8) -> SoapStatus {
    guard(|| {
        let (Some(data), false) = (data.as_ref(), out.is_null()) else {
            return Err(null("data or out"));
        };
        let labels = data.0.labels();
        ptr::copy_nonoverlapping(labels.as_ptr(), out, labels.len());
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn soap_dataset_free(data: *mut SoapDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Linear scorer with zero initial weights.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soap_model_new_linear(
    d_in: usize,
    squash: bool,
    out: *mut *mut SoapModel,
) -> SoapStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = ScoreModel::init(Arch::Linear { d_in }, squash, 0).map_err(fail)?;
        *out = Box::into_raw(Box::new(SoapModel(model)));
        Ok(())
    })
}

/// Tanh MLP with `n_hidden` hidden layers of the given widths.
///
/// # Safety
/// `hidden` must point to `n_hidden` readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn soap_model_new_mlp(
    d_in: usize,
    hidden: *const usize,
    n_hidden: usize,
    squash: bool,
    seed: u64,
    out: *mut *mut SoapModel,
) -> SoapStatus {
    guard(|| {
        if out.is_null() || (hidden.is_null() && n_hidden > 0) {
            return Err(null("hidden or out"));
        }
        let hidden = if n_hidden == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(hidden, n_hidden).to_vec()
        };
        let model = ScoreModel::init(Arch::Mlp { d_in, hidden }, squash, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(SoapModel(model)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn soap_model_load(
    path: *const c_char,
    out: *mut *mut SoapModel,
) -> SoapStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("path or out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::Usage("path is not valid UTF-8".into())))?;
        let model = ScoreModel::load_checkpoint(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(SoapModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn soap_model_save(
    model: *const SoapModel,
    path: *const c_char,
) -> SoapStatus {
    guard(|| {
        let (Some(model), false) = (model.as_ref(), path.is_null()) else {
            return Err(null("model or path"));
        };
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::Usage("path is not valid UTF-8".into())))?;
        model.0.save_checkpoint(Path::new(path)).map_err(fail)
    })
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn soap_model_param_count(model: *const SoapModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.params().len())
}

/// Scores every row of `data` into `out`, which must hold
/// `soap_dataset_len(data)` values.
///
/// # Safety
/// Both handles must be live and `out` must point to enough writable space.
#[no_mangle]
pub unsafe extern "C" fn soap_model_forward(
    model: *const SoapModel,
    data: *const SoapDataset,
    out: *mut f64,
) -> SoapStatus {
    guard(|| {
        let (Some(model), Some(data), false) = (model.as_ref(), data.as_ref(), out.is_null())
        else {
            return Err(null("model, data or out"));
        };
        let scores = model.0.forward(data.0.features()).map_err(fail)?;
        ptr::copy_nonoverlapping(scores.as_ptr(), out, scores.len());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn soap_model_free(model: *mut SoapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub extern "C" fn soap_train_options_default() -> SoapTrainOptions {
    let config = SoapConfig::default();
    SoapTrainOptions {
        method: SoapMethod::SoapAdam,
        surrogate: SoapSurrogate::SquaredHinge,
        surrogate_param: 1.0,
        iters: config.iters,
        batch_size: config.batch_size,
        batch_pos: config.batch_pos,
        alpha: config.alpha,
        gamma: config.gamma,
        u0: config.u0,
        seed: config.seed,
    }
}

fn method_of(m: SoapMethod) -> Method {
    match m {
        SoapMethod::SoapSgd => Method::SoapSgd,
        SoapMethod::SoapAdam => Method::SoapAdam,
        SoapMethod::SoapAmsgrad => Method::SoapAmsgrad,
        SoapMethod::Ce => Method::Ce,
        SoapMethod::CbCe => Method::CbCe,
        SoapMethod::Focal => Method::Focal,
    }
}

fn train(
    model: &ScoreModel,
    data: &Dataset,
    opts: &SoapTrainOptions,
) -> soap_core::Result<ScoreModel> {
    let surrogate = match opts.surrogate {
        SoapSurrogate::SquaredHinge => SurrogateSpec::squared_hinge(opts.surrogate_param)?,
        SoapSurrogate::Logistic => SurrogateSpec::logistic(opts.surrogate_param)?,
        SoapSurrogate::Sigmoid => SurrogateSpec::sigmoid(opts.surrogate_param)?,
    };
    let method = method_of(opts.method);
    let mut config = SoapConfig {
        iters: opts.iters,
        batch_size: opts.batch_size,
        batch_pos: opts.batch_pos,
        alpha: opts.alpha,
        gamma: opts.gamma,
        u0: opts.u0,
        seed: opts.seed,
        eval_every: opts.iters.max(1),
        ..SoapConfig::default()
    };
    let baseline = match method {
        Method::Ce => Some(BaselineSpec::Ce),
        Method::CbCe => Some(BaselineSpec::CbCe { beta: 0.999 }),
        Method::Focal => Some(BaselineSpec::Focal { gamma: 2.0 }),
        _ => None,
    };
    match baseline {
        Some(spec) => Ok(baseline_train(&config, data, None, model.clone(), spec, surrogate)?.0),
        None => {
            config.update = method.soap_update().unwrap_or(config.update);
            let trainer = SoapTrainer::new(config, data, model.clone(), surrogate)?;
            Ok(trainer.run_with(None, |_| Ok(()))?.0)
        }
    }
}

/// Trains `model` in place on `data`. On failure the model is unchanged.
///
/// # Safety
/// `model` and `data` must be live handles; `opts` must point to valid
/// options.
#[no_mangle]
pub unsafe extern "C" fn soap_train(
    model: *mut SoapModel,
    data: *const SoapDataset,
    opts: *const SoapTrainOptions,
) -> SoapStatus {
    guard(|| {
        let (Some(model), Some(data), Some(opts)) = (model.as_mut(), data.as_ref(), opts.as_ref())
        else {
            return Err(null("model, data or opts"));
        };
        model.0 = train(&model.0, &data.0, opts).map_err(fail)?;
        Ok(())
    })
}
