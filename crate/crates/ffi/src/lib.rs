//! C ABI over the camds classifier and metrics.
//!
//! Every function returns a [`CamdsStatus`]; on failure a message is
//! available from [`camds_last_error_message`] on the same thread. Models
//! are opaque handles created by [`camds_model_load`] and released with
//! [`camds_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use camds::metrics::{aggregate_patient, auc, krippendorff_alpha, roc, RatingMatrix};
use camds::model::{Checkpoint, Model, ABNORMAL, NORMAL};
use camds::tensor::{Mode, Tensor};
use camds::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    VersionMismatch = 5,
    Shape = 6,
    Undefined = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

/// Opaque model handle.
pub struct CamdsModel {
    model: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (CamdsStatus, String);

fn status_of(e: &Error) -> CamdsStatus {
    match e {
        Error::Io { .. } => CamdsStatus::Io,
        Error::Parse { .. } => CamdsStatus::Parse,
        Error::Version { .. } => CamdsStatus::VersionMismatch,
        Error::Shape(_) => CamdsStatus::Shape,
        Error::Undefined(_) | Error::Empty(_) => CamdsStatus::Undefined,
        Error::Config(_) => CamdsStatus::InvalidArgument,
        _ => CamdsStatus::Internal,
    }
}

fn lib(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

fn invalid(msg: impl Into<String>) -> Failure {
    (CamdsStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CamdsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CamdsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CamdsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err((CamdsStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_ref<'a>(m: *const CamdsModel) -> Result<&'a CamdsModel, Failure> {
    non_null(m, "model")?;
    Ok(&*m)
}

/// Last error message on this thread, or null if the last call succeeded.
/// The pointer stays valid until the next camds call on this thread.
#[no_mangle]
pub extern "C" fn camds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn camds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camds_model_load(path: *const c_char, out: *mut *mut CamdsModel) -> CamdsStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let ckpt = Checkpoint::load(Path::new(path)).map_err(lib)?;
        let model = Model::<f32>::from_checkpoint(&ckpt).map_err(lib)?;
        *out = Box::into_raw(Box::new(CamdsModel { model }));
        Ok(())
    })
}

/// Releases a handle from [`camds_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn camds_model_free(model: *mut CamdsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Network input side `S`; frames are planar `3 × S × S` floats in [0, 1].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camds_model_input_size(model: *const CamdsModel, out: *mut usize) -> CamdsStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out, "out")?;
        *out = m.model.config().input_size;
        Ok(())
    })
}

/// Number of resolution stages.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camds_model_num_resolutions(model: *const CamdsModel, out: *mut usize) -> CamdsStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out, "out")?;
        *out = m.model.config().num_resolutions;
        Ok(())
    })
}

fn batch_tensor(model: &Model<f32>, pixels: &[f32], batch: usize) -> Result<Tensor<f32>, Failure> {
    let s = model.config().input_size;
    Tensor::new([batch, 3, s, s], pixels.to_vec()).map_err(lib)
}

/// Abnormal-class probabilities for `batch` frames (`batch · 3 · S · S`
/// floats) written to `out_probs[0..batch]`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn camds_model_predict(
    model: *const CamdsModel,
    pixels: *const f32,
    batch: usize,
    out_probs: *mut f64,
) -> CamdsStatus {
    guard(|| {
        let m = model_ref(model)?;
        if batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        let s = m.model.config().input_size;
        let px = slice(pixels, batch * 3 * s * s, "pixels")?;
        non_null(out_probs, "out_probs")?;
        let mut net = m.model.clone();
        let fwd = net.forward(&batch_tensor(&m.model, px, batch)?, Mode::Eval).map_err(lib)?;
        let probs = fwd.predict_proba();
        std::slice::from_raw_parts_mut(out_probs, batch).copy_from_slice(&probs);
        Ok(())
    })
}

/// Positive class activation map `max(0, cam)` of one frame at 1-based
/// `resolution` for `class` (0 normal, 1 abnormal). Writes the map
/// row-major into `out_map` (capacity `capacity` floats) and its size to
/// `out_height`/`out_width`. If the buffer is too small nothing is written
/// except the size and [`CamdsStatus::BufferTooSmall`] is returned.
///
/// # Safety
/// `pixels` must hold `3 · S · S` floats, `out_map` `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn camds_model_cam(
    model: *const CamdsModel,
    pixels: *const f32,
    resolution: usize,
    class: usize,
    out_map: *mut f32,
    capacity: usize,
    out_height: *mut usize,
    out_width: *mut usize,
) -> CamdsStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out_height, "out_height")?;
        non_null(out_width, "out_width")?;
        if class != NORMAL && class != ABNORMAL {
            return Err(invalid(format!("class {class} is not 0 or 1")));
        }
        if resolution == 0 || !m.model.cam_resolutions().contains(&(resolution - 1)) {
            return Err(invalid(format!(
                "resolution {resolution} has no activation map (available: {:?})",
                m.model.cam_resolutions().iter().map(|t| t + 1).collect::<Vec<_>>()
            )));
        }
        let s = m.model.config().input_size;
        let px = slice(pixels, 3 * s * s, "pixels")?;
        let mut net = m.model.clone();
        let fwd = net.forward(&batch_tensor(&m.model, px, 1)?, Mode::Eval).map_err(lib)?;
        let map = fwd.positive_cam(resolution - 1, class, 0).map_err(lib)?;
        let (h, w) = map.dims2().map_err(lib)?;
        *out_height = h;
        *out_width = w;
        if capacity < h * w {
            return Err((
                CamdsStatus::BufferTooSmall,
                format!("map needs {} floats, buffer holds {capacity}", h * w),
            ));
        }
        non_null(out_map, "out_map")?;
        std::slice::from_raw_parts_mut(out_map, h * w).copy_from_slice(map.data());
        Ok(())
    })
}

/// Trapezoid ROC AUC; `labels` are 0/1 with 1 = abnormal.
///
/// # Safety
/// `probs` and `labels` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn camds_auc(probs: *const f64, labels: *const u8, n: usize, out: *mut f64) -> CamdsStatus {
    guard(|| {
        let p = slice(probs, n, "probs")?;
        let l: Vec<usize> = slice(labels, n, "labels")?.iter().map(|&v| v as usize).collect();
        non_null(out, "out")?;
        if l.iter().any(|&v| v > 1) {
            return Err(invalid("labels must be 0 or 1"));
        }
        *out = auc(&roc(p, &l).map_err(lib)?).map_err(lib)?;
        Ok(())
    })
}

/// Mean of one patient's frame probabilities (order-independent).
///
/// # Safety
/// `probs` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn camds_aggregate_patient(probs: *const f64, n: usize, out: *mut f64) -> CamdsStatus {
    guard(|| {
        let p = slice(probs, n, "probs")?;
        non_null(out, "out")?;
        *out = aggregate_patient(p).map_err(lib)?;
        Ok(())
    })
}

/// Nominal Krippendorff's alpha of a row-major `raters × items` grid of
/// integer labels; cells equal to `missing` are absent ratings. Writes NaN
/// when all pairable ratings agree on a single label.
///
/// # Safety
/// `ratings` must hold `raters · items` elements.
#[no_mangle]
pub unsafe extern "C" fn camds_krippendorff_alpha(
    ratings: *const i32,
    raters: usize,
    items: usize,
    missing: i32,
    out: *mut f64,
) -> CamdsStatus {
    guard(|| {
        let r = slice(ratings, raters * items, "ratings")?;
        non_null(out, "out")?;
        let grid = r
            .chunks(items.max(1))
            .take(raters)
            .map(|row| row.iter().map(|&v| (v != missing).then(|| v.to_string())).collect())
            .collect();
        let matrix = RatingMatrix::from_grid(grid).map_err(lib)?;
        *out = krippendorff_alpha(&matrix).map_err(lib)?;
        Ok(())
    })
}
