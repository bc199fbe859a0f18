//! C ABI over `respnet`: checkpoint loading and inference, front-end patch
//! extraction, and ICBHI scoring.
//!
//! Every fallible function returns a [`RespnetStatus`]; on failure the
//! message is available from [`respnet_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use respnet::dsp::AudioClip;
use respnet::models::{load_checkpoint, Model, ModelError};
use respnet::pipeline::{aggregate_patches, predict_label, predict_probs, PipelineError, SoftLabel};
use respnet::spectrogram::{FrontEnd, FrontEndKind, SpectrogramError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RespnetStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Front-end codes accepted by [`respnet_frontend_new`].
pub const RESPNET_FRONTEND_SCAL_MORSE: u32 = 0;
pub const RESPNET_FRONTEND_SCAL_AMOR: u32 = 1;
pub const RESPNET_FRONTEND_GAMMA: u32 = 2;

/// A trained classifier.
pub struct RespnetModel {
    model: Model,
}

/// Front-end settings.
pub struct RespnetFrontEnd {
    frontend: FrontEnd,
}

/// Standardized patches of one clip, `count x rows x cols`, row-major.
pub struct RespnetPatches {
    values: Vec<f32>,
    count: usize,
    rows: usize,
    cols: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: RespnetStatus, message: impl Into<String>) -> RespnetStatus {
    set_error(message.into());
    status
}

fn model_status(e: &ModelError) -> RespnetStatus {
    match e {
        ModelError::Io(_) => RespnetStatus::Io,
        ModelError::Checkpoint(_) => RespnetStatus::Format,
        ModelError::InputShape { .. } => RespnetStatus::Shape,
        _ => RespnetStatus::InvalidArgument,
    }
}

fn pipeline_status(e: &PipelineError) -> RespnetStatus {
    match e {
        PipelineError::Io(_) => RespnetStatus::Io,
        PipelineError::Model(m) => model_status(m),
        PipelineError::ShapeMismatch(_) => RespnetStatus::Shape,
        _ => RespnetStatus::InvalidArgument,
    }
}

fn spectrogram_status(e: &SpectrogramError) -> RespnetStatus {
    match e {
        SpectrogramError::Io(_) => RespnetStatus::Io,
        SpectrogramError::Shape(_) | SpectrogramError::ImageTooNarrow { .. } | SpectrogramError::ClipTooShort { .. } => RespnetStatus::Shape,
        _ => RespnetStatus::InvalidArgument,
    }
}

/// Runs `f`, turning a panic into `Internal`.
fn guarded(f: impl FnOnce() -> RespnetStatus) -> RespnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RespnetStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

/// Message of the last failure on this thread, or NULL if none. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn respnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn respnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn respnet_model_load(path: *const c_char, out: *mut *mut RespnetModel) -> RespnetStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(RespnetStatus::NullArgument, "path and out must be non-null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(RespnetStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match load_checkpoint(Path::new(path)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(RespnetModel { model }));
                RespnetStatus::Ok
            }
            Err(e) => fail(model_status(&e), format!("{path}: {e}")),
        }
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from [`respnet_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn respnet_model_free(model: *mut RespnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Class count, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn respnet_model_num_classes(model: *const RespnetModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().n_classes)
}

/// Patch height and width the model expects.
///
/// # Safety
/// `model` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn respnet_model_input_shape(model: *const RespnetModel, rows: *mut usize, cols: *mut usize) -> RespnetStatus {
    let (Some(m), false, false) = (model.as_ref(), rows.is_null(), cols.is_null()) else {
        return fail(RespnetStatus::NullArgument, "model, rows and cols must be non-null");
    };
    (*rows, *cols) = m.model.config().input_hw;
    RespnetStatus::Ok
}

unsafe fn patch_probs(model: *const RespnetModel, patches: *const f32, n_patches: usize) -> Result<Vec<Vec<f64>>, RespnetStatus> {
    let Some(m) = model.as_ref() else {
        return Err(fail(RespnetStatus::NullArgument, "model must be non-null"));
    };
    if patches.is_null() {
        return Err(fail(RespnetStatus::NullArgument, "patches must be non-null"));
    }
    if n_patches == 0 {
        return Err(fail(RespnetStatus::InvalidArgument, "at least one patch is required"));
    }
    let (rows, cols) = m.model.config().input_hw;
    let inputs = std::slice::from_raw_parts(patches, n_patches * rows * cols);
    match predict_probs(&m.model, inputs, rows, cols) {
        Ok(p) => Ok(p.into_iter().map(|s| s.probs().to_vec()).collect()),
        Err(e) => Err(fail(pipeline_status(&e), e.to_string())),
    }
}

/// Eval-mode class probabilities of `n_patches` patches laid out as
/// `n_patches x rows x cols`. Writes `n_patches x C` values to `out`.
///
/// # Safety
/// `patches` must hold `n_patches * rows * cols` floats and `out` room for
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn respnet_model_predict(
    model: *const RespnetModel,
    patches: *const f32,
    n_patches: usize,
    out: *mut f64,
    out_len: usize,
) -> RespnetStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RespnetStatus::NullArgument, "out must be non-null");
        }
        let c = respnet_model_num_classes(model);
        if out_len < n_patches * c {
            return fail(RespnetStatus::BufferTooSmall, format!("need {} values, got {out_len}", n_patches * c));
        }
        match patch_probs(model, patches, n_patches) {
            Ok(rows) => {
                let dst = std::slice::from_raw_parts_mut(out, n_patches * c);
                for (chunk, row) in dst.chunks_mut(c).zip(rows) {
                    chunk.copy_from_slice(&row);
                }
                RespnetStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Classifies one instance from its patches: probabilities are averaged
/// over patches and the label is their argmax, ties to the lowest class.
///
/// # Safety
/// As [`respnet_model_predict`]; `out` holds `out_len >= C` doubles and
/// `label` is writable.
#[no_mangle]
pub unsafe extern "C" fn respnet_model_classify(
    model: *const RespnetModel,
    patches: *const f32,
    n_patches: usize,
    out: *mut f64,
    out_len: usize,
    label: *mut usize,
) -> RespnetStatus {
    guarded(|| {
        if out.is_null() || label.is_null() {
            return fail(RespnetStatus::NullArgument, "out and label must be non-null");
        }
        let c = respnet_model_num_classes(model);
        if out_len < c {
            return fail(RespnetStatus::BufferTooSmall, format!("need {c} values, got {out_len}"));
        }
        let rows = match patch_probs(model, patches, n_patches) {
            Ok(rows) => rows,
            Err(s) => return s,
        };
        let labels: Result<Vec<_>, _> = rows.into_iter().map(SoftLabel::new).collect();
        match labels.and_then(|l| aggregate_patches(&l)) {
            Ok(mean) => {
                std::slice::from_raw_parts_mut(out, c).copy_from_slice(mean.probs());
                *label = predict_label(&mean);
                RespnetStatus::Ok
            }
            Err(e) => fail(pipeline_status(&e), e.to_string()),
        }
    })
}

/// Creates a front-end with default settings for one of the
/// `RESPNET_FRONTEND_*` codes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn respnet_frontend_new(kind: u32, out: *mut *mut RespnetFrontEnd) -> RespnetStatus {
    if out.is_null() {
        return fail(RespnetStatus::NullArgument, "out must be non-null");
    }
    *out = ptr::null_mut();
    match u8::try_from(kind).ok().and_then(FrontEndKind::from_code) {
        Some(k) => {
            *out = Box::into_raw(Box::new(RespnetFrontEnd { frontend: FrontEnd::new(k) }));
            RespnetStatus::Ok
        }
        None => fail(RespnetStatus::InvalidArgument, format!("unknown front-end code {kind}")),
    }
}

/// Releases a front-end; NULL is ignored.
///
/// # Safety
/// `frontend` must come from [`respnet_frontend_new`].
#[no_mangle]
pub unsafe extern "C" fn respnet_frontend_free(frontend: *mut RespnetFrontEnd) {
    if !frontend.is_null() {
        drop(Box::from_raw(frontend));
    }
}

/// Standardized patches of a mono clip. The clip should already be
/// conditioned (resampled, filtered and normalized) for its task.
///
/// # Safety
/// `samples` must hold `len` floats and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn respnet_frontend_patches(
    frontend: *const RespnetFrontEnd,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut RespnetPatches,
) -> RespnetStatus {
    guarded(|| {
        let (Some(fe), false, false) = (frontend.as_ref(), samples.is_null(), out.is_null()) else {
            return fail(RespnetStatus::NullArgument, "frontend, samples and out must be non-null");
        };
        *out = ptr::null_mut();
        let data = std::slice::from_raw_parts(samples, len).to_vec();
        let clip = match AudioClip::new(data, sample_rate, "ffi", None) {
            Ok(c) => c,
            Err(e) => return fail(RespnetStatus::InvalidArgument, e.to_string()),
        };
        match fe.frontend.patches(&clip) {
            Ok(patches) => {
                let (rows, cols) = (patches[0].rows, patches[0].cols);
                let count = patches.len();
                let values = patches.into_iter().flat_map(|p| p.values).collect();
                *out = Box::into_raw(Box::new(RespnetPatches { values, count, rows, cols }));
                RespnetStatus::Ok
            }
            Err(e) => fail(spectrogram_status(&e), e.to_string()),
        }
    })
}

/// Number of patches, or 0 for NULL.
///
/// # Safety
/// `patches` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn respnet_patches_count(patches: *const RespnetPatches) -> usize {
    patches.as_ref().map_or(0, |p| p.count)
}

/// Rows and columns of every patch.
///
/// # Safety
/// `patches` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn respnet_patches_shape(patches: *const RespnetPatches, rows: *mut usize, cols: *mut usize) -> RespnetStatus {
    let (Some(p), false, false) = (patches.as_ref(), rows.is_null(), cols.is_null()) else {
        return fail(RespnetStatus::NullArgument, "patches, rows and cols must be non-null");
    };
    (*rows, *cols) = (p.rows, p.cols);
    RespnetStatus::Ok
}

/// Contiguous `count x rows x cols` values, owned by the handle.
///
/// # Safety
/// `patches` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn respnet_patches_data(patches: *const RespnetPatches) -> *const f32 {
    patches.as_ref().map_or(ptr::null(), |p| p.values.as_ptr())
}

/// Releases patches; NULL is ignored.
///
/// # Safety
/// `patches` must come from [`respnet_frontend_patches`].
#[no_mangle]
pub unsafe extern "C" fn respnet_patches_free(patches: *mut RespnetPatches) {
    if !patches.is_null() {
        drop(Box::from_raw(patches));
    }
}

/// Average and harmonic scores of a sensitivity and specificity in [0, 1].
///
/// # Safety
/// `as_score` and `hs_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn respnet_icbhi_scores(sen: f64, spec: f64, as_score: *mut f64, hs_score: *mut f64) -> RespnetStatus {
    if as_score.is_null() || hs_score.is_null() {
        return fail(RespnetStatus::NullArgument, "as_score and hs_score must be non-null");
    }
    if !((0.0..=1.0).contains(&sen) && (0.0..=1.0).contains(&spec)) {
        return fail(RespnetStatus::InvalidArgument, format!("sen {sen} and spec {spec} must lie in [0, 1]"));
    }
    (*as_score, *hs_score) = respnet::metrics::icbhi_scores(sen, spec);
    RespnetStatus::Ok
}
