//! C ABI over `gma-uncertainty`.
//!
//! Handles are opaque pointers created by `*_load`/`*_generate` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`GmaStatus`]; on failure the message is kept per thread and can be copied
//! out with [`gma_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gma_uncertainty::checkpoint::Checkpoint;
use gma_uncertainty::dataset::{load_dataset, load_clip, Dataset, PoseSequence, SplitName};
use gma_uncertainty::model::Model;
use gma_uncertainty::synthgen::{generate, SynthConfig};
use gma_uncertainty::trainer::{evaluate, noise_probe, predict, split_clips};
use gma_uncertainty::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Schema = 5,
    Topology = 6,
    Config = 7,
    Checkpoint = 8,
    NonFinite = 9,
    Metric = 10,
    Panic = 11,
}

impl From<&Error> for GmaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => GmaStatus::Io,
            Error::Parse { .. } => GmaStatus::Parse,
            Error::Schema { .. } | Error::JointCount { .. } | Error::Preprocess { .. } => GmaStatus::Schema,
            Error::Topology(_) | Error::Shape(_) => GmaStatus::Topology,
            Error::Config(_) | Error::Split(_) | Error::Training(_) => GmaStatus::Config,
            Error::Checkpoint(_) => GmaStatus::Checkpoint,
            Error::NonFinite { .. } => GmaStatus::NonFinite,
            Error::Metric(_) => GmaStatus::Metric,
        }
    }
}

/// Per-clip output. `hard_label` is 1 when `p_f ≥ 0.5`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GmaPrediction {
    pub p_f: f64,
    pub hard_label: u8,
    pub mu: f64,
    pub u_e: f64,
    pub u_a: f64,
    pub sigma2: f64,
    pub p: f64,
}

/// Split-level metrics in percent; undefined values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GmaMetrics {
    pub records: usize,
    pub acc: f64,
    pub sn: f64,
    pub sp: f64,
    pub auc_roc: f64,
    pub auc_ua_epistemic: f64,
    pub auc_ua_aleatoric: f64,
    pub auc_ua_total: f64,
}

/// Trained model plus the partition it was trained with.
pub struct GmaModel {
    checkpoint: Checkpoint,
    model: Model,
}

pub struct GmaDataset {
    dataset: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: GmaStatus, msg: impl Into<String>) -> GmaStatus {
    set_error(msg.into());
    status
}

fn fail_with(e: Error) -> GmaStatus {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(&e);
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    fail(GmaStatus::from(&e), msg)
}

/// Runs `f`, converting panics into `GmaStatus::Panic`.
fn guard(f: impl FnOnce() -> GmaStatus) -> GmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == GmaStatus::Ok {
                set_error(String::new());
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(GmaStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, GmaStatus> {
    if s.is_null() {
        return Err(fail(GmaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(GmaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! try_core {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail_with(e),
        }
    };
}

fn to_prediction(r: &gma_uncertainty::metrics::PredictionRecord) -> GmaPrediction {
    GmaPrediction {
        p_f: r.p_f,
        hard_label: r.hard_label,
        mu: r.estimate.mu,
        u_e: r.estimate.u_e,
        u_a: r.estimate.u_a,
        sigma2: r.estimate.sigma2,
        p: r.estimate.p,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated when `cap > 0`). Returns the full message length in bytes
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gma_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gma_model_load(path: *const c_char, out: *mut *mut GmaModel) -> GmaStatus {
    guard(|| {
        if out.is_null() {
            return fail(GmaStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = try_status!(read_str(path, "path"));
        let checkpoint = try_core!(Checkpoint::load(path));
        let model = try_core!(checkpoint.to_model());
        *out = Box::into_raw(Box::new(GmaModel { checkpoint, model }));
        GmaStatus::Ok
    })
}

/// # Safety
/// `model` must be null or a handle from [`gma_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gma_model_free(model: *mut GmaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Joint count of the clips the model accepts, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gma_model_joint_count(model: *const GmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.topology.joint_count())
}

/// Embedding width D, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gma_model_embedding_dim(model: *const GmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.encoder.embedding_dim)
}

/// # Safety
/// `coords` must point to `frames * joints * 2` doubles laid out as
/// `[frame][joint][x, y]`.
unsafe fn sequence_from_raw(coords: *const f64, frames: usize, joints: usize, fps: f64) -> Result<PoseSequence, GmaStatus> {
    if coords.is_null() {
        return Err(fail(GmaStatus::NullPointer, "coords is null"));
    }
    let n = frames
        .checked_mul(joints)
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(|| fail(GmaStatus::InvalidArgument, "clip size overflows"))?;
    let data = std::slice::from_raw_parts(coords, n).to_vec();
    PoseSequence::new("ffi", "ffi", fps, 0, frames, joints, 2, data).map_err(fail_with)
}

/// Predicts one clip given as raw coordinates.
///
/// # Safety
/// `model` must be a live handle, `coords` must hold `frames * joints * 2`
/// doubles and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gma_predict(
    model: *const GmaModel,
    coords: *const f64,
    frames: usize,
    joints: usize,
    fps: f64,
    out: *mut GmaPrediction,
) -> GmaStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(GmaStatus::NullPointer, "model is null");
        };
        if out.is_null() {
            return fail(GmaStatus::NullPointer, "out is null");
        }
        let seq = try_status!(sequence_from_raw(coords, frames, joints, fps));
        let rec = try_core!(predict(&m.model, &seq));
        *out = to_prediction(&rec);
        GmaStatus::Ok
    })
}

/// Predicts a clip stored as a JSON clip file.
///
/// # Safety
/// `model` must be a live handle, `path` a valid C string and `out` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn gma_predict_file(
    model: *const GmaModel,
    path: *const c_char,
    out: *mut GmaPrediction,
) -> GmaStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(GmaStatus::NullPointer, "model is null");
        };
        if out.is_null() {
            return fail(GmaStatus::NullPointer, "out is null");
        }
        let path = try_status!(read_str(path, "path"));
        let seq = try_core!(load_clip(path, 10.0));
        let rec = try_core!(predict(&m.model, &seq));
        *out = to_prediction(&rec);
        GmaStatus::Ok
    })
}

/// Mean U_a at each noise level (std multiples of the per-channel clip std).
///
/// # Safety
/// `coords` as for [`gma_predict`]; `levels` and `out_mean_u_a` must hold
/// `n_levels` doubles.
#[no_mangle]
pub unsafe extern "C" fn gma_noise_probe(
    model: *const GmaModel,
    coords: *const f64,
    frames: usize,
    joints: usize,
    fps: f64,
    levels: *const f64,
    n_levels: usize,
    draws: usize,
    out_mean_u_a: *mut f64,
) -> GmaStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(GmaStatus::NullPointer, "model is null");
        };
        if levels.is_null() || out_mean_u_a.is_null() {
            return fail(GmaStatus::NullPointer, "levels or out_mean_u_a is null");
        }
        let seq = try_status!(sequence_from_raw(coords, frames, joints, fps));
        let levels = std::slice::from_raw_parts(levels, n_levels);
        let rows = try_core!(noise_probe(&m.model, &seq, levels, draws));
        let out = std::slice::from_raw_parts_mut(out_mean_u_a, n_levels);
        for (o, r) in out.iter_mut().zip(&rows) {
            *o = r.mean_u_a;
        }
        GmaStatus::Ok
    })
}

/// Loads a dataset directory.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gma_dataset_load(path: *const c_char, out: *mut *mut GmaDataset) -> GmaStatus {
    guard(|| {
        if out.is_null() {
            return fail(GmaStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = try_status!(read_str(path, "path"));
        let dataset = try_core!(load_dataset(path));
        *out = Box::into_raw(Box::new(GmaDataset { dataset }));
        GmaStatus::Ok
    })
}

/// Generates a synthetic dataset with default settings apart from the sizes
/// and seed given.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gma_dataset_generate(
    subjects_per_class: usize,
    clips_per_subject: usize,
    frames: usize,
    seed: u64,
    out: *mut *mut GmaDataset,
) -> GmaStatus {
    guard(|| {
        if out.is_null() {
            return fail(GmaStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let cfg = SynthConfig {
            subjects_per_class,
            clips_per_subject,
            frames,
            seed,
            ..SynthConfig::default()
        };
        let dataset = try_core!(generate(&cfg));
        *out = Box::into_raw(Box::new(GmaDataset { dataset }));
        GmaStatus::Ok
    })
}

/// Number of clips, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gma_dataset_len(dataset: *const GmaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.dataset.len())
}

/// # Safety
/// `dataset` must be null or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gma_dataset_free(dataset: *mut GmaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Evaluates a split (`"train"`, `"val"`, `"test"` or `"all"`) of the
/// checkpoint's partition.
///
/// # Safety
/// Handles must be live, `split` a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gma_evaluate(
    model: *const GmaModel,
    dataset: *const GmaDataset,
    split: *const c_char,
    out: *mut GmaMetrics,
) -> GmaStatus {
    guard(|| {
        let (Some(m), Some(d)) = (model.as_ref(), dataset.as_ref()) else {
            return fail(GmaStatus::NullPointer, "model or dataset is null");
        };
        if out.is_null() {
            return fail(GmaStatus::NullPointer, "out is null");
        }
        let split = try_status!(read_str(split, "split"));
        let which: SplitName = try_core!(split.parse());
        let clips = try_core!(split_clips(&m.checkpoint, &d.dataset, which));
        let ev = try_core!(evaluate(&m.model, &d.dataset, &clips, split));
        let r = &ev.report;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = GmaMetrics {
            records: r.records,
            acc: nan(r.acc),
            sn: nan(r.sn),
            sp: nan(r.sp),
            auc_roc: nan(r.auc_roc),
            auc_ua_epistemic: nan(r.auc_ua.epistemic),
            auc_ua_aleatoric: nan(r.auc_ua.aleatoric),
            auc_ua_total: nan(r.auc_ua.total),
        };
        GmaStatus::Ok
    })
}
