//! C ABI over the tracker: opaque handles, plain status codes, and a
//! thread-local last-error message. Frames cross the boundary as row-major
//! `double` intensities in `[0, 1]`.
//!
//! The generated header lands in `include/coordtrack.h` (and `OUT_DIR`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use coordtrack::bbox::BBox;
use coordtrack::error::CoreError;
use coordtrack::image::GrayImage;
use coordtrack::metrics;
use coordtrack::model::TrackModel;
use coordtrack::tracker::{track_frame, TrackerState};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CtStatus {
    CtOk = 0,
    CtNullArgument = 1,
    CtIo = 2,
    CtMalformed = 3,
    CtContract = 4,
    CtDiverged = 5,
    CtBadUtf8 = 6,
    CtPanic = 7,
}

/// Axis-aligned box in image pixels, top-left origin.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CtBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Aggregate tracking metrics over one box sequence pair.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CtMetrics {
    /// Success-plot AUC over the IoU threshold sweep.
    pub suc: f64,
    /// Fraction of frames with center error <= 20 px.
    pub pre: f64,
    /// Fraction of frames with size-normalized center error <= 0.2.
    pub normp: f64,
}

/// Opaque tracker handle: model weights plus per-sequence state.
pub struct CtTracker {
    model: TrackModel,
    state: Option<TrackerState>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let cstring = CString::new(msg).unwrap_or_else(|_| CString::new("error message had NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(cstring));
}

fn status_of(e: &CoreError) -> CtStatus {
    match e {
        CoreError::Io { .. } => CtStatus::CtIo,
        CoreError::Malformed { .. } => CtStatus::CtMalformed,
        CoreError::Diverged { .. } => CtStatus::CtDiverged,
        _ => CtStatus::CtContract,
    }
}

fn fail(e: CoreError) -> CtStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn guard(f: impl FnOnce() -> CtStatus) -> CtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".to_string());
            CtStatus::CtPanic
        }
    }
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn ct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Last error message for this thread, or NULL if none. The caller owns
/// the string and must release it with `ct_string_free`.
#[no_mangle]
pub extern "C" fn ct_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from `ct_last_error_message` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn ct_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load weights and build a tracker. Returns NULL on failure; inspect
/// `ct_last_error_message`.
///
/// # Safety
/// `weights_path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_new(weights_path: *const c_char) -> *mut CtTracker {
    if weights_path.is_null() {
        set_error("weights_path is NULL".to_string());
        return std::ptr::null_mut();
    }
    let path = match CStr::from_ptr(weights_path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("weights_path is not UTF-8".to_string());
            return std::ptr::null_mut();
        }
    };
    match catch_unwind(|| TrackModel::load(Path::new(path))) {
        Ok(Ok(model)) => Box::into_raw(Box::new(CtTracker { model, state: None })),
        Ok(Err(e)) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic".to_string());
            std::ptr::null_mut()
        }
    }
}

/// Destroy a tracker handle. NULL is a no-op.
///
/// # Safety
/// `t` must come from `ct_tracker_new` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_free(t: *mut CtTracker) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

unsafe fn frame_from_raw(data: *const f64, width: u32, height: u32) -> Result<GrayImage, CoreError> {
    let n = width as usize * height as usize;
    let slice = std::slice::from_raw_parts(data, n);
    GrayImage::new(width as usize, height as usize, slice.to_vec())
}

/// Begin a sequence: extract both templates from `frame` at `init_box`.
///
/// # Safety
/// `t` must be a live tracker; `frame` must point to `width * height`
/// doubles that stay valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_init(
    t: *mut CtTracker,
    frame: *const f64,
    width: u32,
    height: u32,
    init_box: CtBox,
) -> CtStatus {
    if t.is_null() || frame.is_null() {
        set_error("NULL argument".to_string());
        return CtStatus::CtNullArgument;
    }
    let tracker = &mut *t;
    let img = match frame_from_raw(frame, width, height) {
        Ok(img) => img,
        Err(e) => return fail(e),
    };
    guard(|| {
        let b = match BBox::image_px(init_box.x, init_box.y, init_box.w, init_box.h) {
            Ok(b) => b,
            Err(e) => return fail(e),
        };
        match TrackerState::init(&img, &b, &tracker.model.cfg) {
            Ok(state) => {
                tracker.state = Some(state);
                CtStatus::CtOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Track one frame. Writes the predicted box and score when non-NULL.
///
/// # Safety
/// As for `ct_tracker_init`; `out_box`/`out_score` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ct_tracker_step(
    t: *mut CtTracker,
    frame: *const f64,
    width: u32,
    height: u32,
    out_box: *mut CtBox,
    out_score: *mut f64,
) -> CtStatus {
    if t.is_null() || frame.is_null() {
        set_error("NULL argument".to_string());
        return CtStatus::CtNullArgument;
    }
    let tracker = &mut *t;
    let img = match frame_from_raw(frame, width, height) {
        Ok(img) => img,
        Err(e) => return fail(e),
    };
    let Some(state) = tracker.state.as_mut() else {
        set_error("tracker not initialized; call ct_tracker_init first".to_string());
        return CtStatus::CtContract;
    };
    let model = &tracker.model;
    guard(|| match track_frame(state, model, &img, &model.cfg) {
        Ok((b, score)) => {
            if !out_box.is_null() {
                *out_box = CtBox { x: b.x, y: b.y, w: b.w, h: b.h };
            }
            if !out_score.is_null() {
                *out_score = score;
            }
            CtStatus::CtOk
        }
        Err(e) => fail(e),
    })
}

/// Success / precision / normalized precision over `n` box pairs in
/// image pixels.
///
/// # Safety
/// `pred` and `gt` must each point to `n` readable boxes.
#[no_mangle]
pub unsafe extern "C" fn ct_metrics(
    pred: *const CtBox,
    gt: *const CtBox,
    n: usize,
    out: *mut CtMetrics,
) -> CtStatus {
    if pred.is_null() || gt.is_null() || out.is_null() {
        set_error("NULL argument".to_string());
        return CtStatus::CtNullArgument;
    }
    let to_boxes = |ptr: *const CtBox| -> Result<Vec<BBox>, CoreError> {
        std::slice::from_raw_parts(ptr, n)
            .iter()
            .map(|b| BBox::image_px(b.x, b.y, b.w, b.h))
            .collect()
    };
    let pred_boxes = match to_boxes(pred) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let gt_boxes = match to_boxes(gt) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    match metrics::evaluate(&pred_boxes, &gt_boxes) {
        Ok(r) => {
            *out = CtMetrics { suc: r.suc, pre: r.pre, normp: r.normp };
            CtStatus::CtOk
        }
        Err(e) => fail(e),
    }
}
