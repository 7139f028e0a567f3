//! Exercises the C surface through the raw extern functions the way a
//! foreign caller would: weights from disk, frames as raw double buffers.

use std::ffi::{CStr, CString};

use coordtrack::config::ModelConfig;
use coordtrack::model::TrackModel;
use coordtrack::synth::{gen_sequence, sample_scene};
use coordtrack_ffi::*;

fn temp_weights(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("ct_ffi_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    let model = TrackModel::init(ModelConfig::toy(), 11).unwrap();
    model.save(&path).unwrap();
    path
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(ct_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn tracker_lifecycle_over_a_synthetic_sequence() {
    let weights = temp_weights("lifecycle.nlmw");
    let cpath = CString::new(weights.to_str().unwrap()).unwrap();
    let tracker = unsafe { ct_tracker_new(cpath.as_ptr()) };
    assert!(!tracker.is_null());

    let scene = sample_scene(3, 6);
    let (frames, gt) = gen_sequence(&scene).unwrap();
    let (w, h) = (frames[0].width() as u32, frames[0].height() as u32);
    let init = CtBox { x: gt[0].x, y: gt[0].y, w: gt[0].w, h: gt[0].h };

    let status = unsafe { ct_tracker_init(tracker, frames[0].data().as_ptr(), w, h, init) };
    assert_eq!(status, CtStatus::CtOk);

    for frame in &frames[1..] {
        let mut out = CtBox { x: 0.0, y: 0.0, w: 0.0, h: 0.0 };
        let mut score = -1.0;
        let status = unsafe {
            ct_tracker_step(tracker, frame.data().as_ptr(), w, h, &mut out, &mut score)
        };
        assert_eq!(status, CtStatus::CtOk);
        assert!(out.w >= 1.0 && out.h >= 1.0);
        assert!(out.x >= 0.0 && out.x + out.w <= w as f64 + 1e-9);
        assert!((0.0..=1.0).contains(&score));
    }
    unsafe { ct_tracker_free(tracker) };
}

#[test]
fn step_before_init_is_a_contract_error() {
    let weights = temp_weights("noinit.nlmw");
    let cpath = CString::new(weights.to_str().unwrap()).unwrap();
    let tracker = unsafe { ct_tracker_new(cpath.as_ptr()) };
    assert!(!tracker.is_null());
    let frame = vec![0.5f64; 64 * 48];
    let status = unsafe { ct_tracker_step(tracker, frame.as_ptr(), 64, 48, std::ptr::null_mut(), std::ptr::null_mut()) };
    assert_eq!(status, CtStatus::CtContract);
    let msg = ct_last_error_message();
    assert!(!msg.is_null());
    let text = unsafe { CStr::from_ptr(msg) }.to_str().unwrap().to_string();
    assert!(text.contains("ct_tracker_init"), "{text}");
    unsafe { ct_string_free(msg) };
    unsafe { ct_tracker_free(tracker) };
}

#[test]
fn bad_weights_paths_report_errors() {
    let missing = CString::new("/nonexistent/weights.nlmw").unwrap();
    let t = unsafe { ct_tracker_new(missing.as_ptr()) };
    assert!(t.is_null());
    let msg = ct_last_error_message();
    assert!(!msg.is_null());
    unsafe { ct_string_free(msg) };

    let t = unsafe { ct_tracker_new(std::ptr::null()) };
    assert!(t.is_null());

    // A file that exists but is not a weights container.
    let dir = std::env::temp_dir().join("ct_ffi_test");
    std::fs::create_dir_all(&dir).unwrap();
    let junk = dir.join("junk.nlmw");
    std::fs::write(&junk, b"not a weights file").unwrap();
    let cpath = CString::new(junk.to_str().unwrap()).unwrap();
    let t = unsafe { ct_tracker_new(cpath.as_ptr()) };
    assert!(t.is_null());
}

#[test]
fn null_arguments_are_rejected() {
    let weights = temp_weights("nulls.nlmw");
    let cpath = CString::new(weights.to_str().unwrap()).unwrap();
    let tracker = unsafe { ct_tracker_new(cpath.as_ptr()) };
    let init = CtBox { x: 1.0, y: 1.0, w: 5.0, h: 5.0 };
    let status = unsafe { ct_tracker_init(tracker, std::ptr::null(), 4, 4, init) };
    assert_eq!(status, CtStatus::CtNullArgument);
    let status = unsafe {
        ct_tracker_init(std::ptr::null_mut(), [0.0; 16].as_ptr(), 4, 4, init)
    };
    assert_eq!(status, CtStatus::CtNullArgument);
    unsafe { ct_tracker_free(tracker) };
    unsafe { ct_tracker_free(std::ptr::null_mut()) }; // no-op
}

#[test]
fn metrics_match_library_values() {
    let pred: Vec<CtBox> = (0..10)
        .map(|i| CtBox { x: 10.0 + i as f64, y: 20.0, w: 16.0, h: 12.0 })
        .collect();
    let gt: Vec<CtBox> = (0..10)
        .map(|i| CtBox { x: 11.0 + i as f64, y: 21.0, w: 16.0, h: 12.0 })
        .collect();
    let mut out = CtMetrics { suc: -1.0, pre: -1.0, normp: -1.0 };
    let status = unsafe { ct_metrics(pred.as_ptr(), gt.as_ptr(), 10, &mut out) };
    assert_eq!(status, CtStatus::CtOk);
    assert_eq!(out.pre, 1.0);
    assert!(out.suc > 0.5 && out.suc < 1.0);

    // Perfect predictions: the strict tau = 1.0 threshold fails only.
    let status = unsafe { ct_metrics(gt.as_ptr(), gt.as_ptr(), 10, &mut out) };
    assert_eq!(status, CtStatus::CtOk);
    assert!((out.suc - 20.0 / 21.0).abs() < 1e-12);
    assert_eq!(out.pre, 1.0);
    assert_eq!(out.normp, 1.0);

    let status = unsafe { ct_metrics(std::ptr::null(), gt.as_ptr(), 10, &mut out) };
    assert_eq!(status, CtStatus::CtNullArgument);
}
