//! C ABI for driving the pipeline from other languages: opaque handles,
//! integer status codes, and a thread-local last-error message. The header
//! is generated by cbindgen into `include/seglam.h` at build time.
//!
//! Ownership: every `*_from_*`/`*_generate`/`*_run` output is owned by the
//! caller and released with the matching `*_free`. Handles are not thread
//! safe; share them across threads only behind external synchronization.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use seglam::evaluation::{ate, miou};
use seglam::pipeline::{
    bundle_ground_truth, run_pipeline, run_relocalization, BundleSource, CorruptionParams, Mode,
    PipelineOutput, PipelineParams,
};
use seglam::segmentation::{FrameSegmentation, SimilarityWeights};
use seglam::simulator::{self, pose_to_tum_row, GroundTruthBundle, SceneSpec};
use seglam::tracking::TrackingConfig;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeglamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    IoError = 3,
    ParseError = 4,
    InvalidArgument = 5,
    PipelineError = 6,
    EvalError = 7,
    OutOfRange = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message.replace('\0', " ")).unwrap_or_default();
    });
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn seglam_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn seglam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque scene specification.
pub struct SeglamScene {
    spec: SceneSpec,
}

/// Opaque generated scene data (observations, masks, true poses).
pub struct SeglamBundle {
    bundle: GroundTruthBundle,
}

/// Opaque pipeline result: trajectory, segmentations, and maps.
pub struct SeglamResult {
    output: PipelineOutput,
}

/// Pipeline knobs, mirroring the CLI flags. Obtain defaults from
/// `seglam_run_options_default` and override fields as needed.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct SeglamRunOptions {
    /// 0 = full, 1 = trackonly, 2 = baseline.
    pub mode: i32,
    pub drop_rate: f64,
    pub dilate_rate: f64,
    pub corruption_seed: u64,
    pub keyframe_interval: u32,
    pub merge_radius: f64,
    pub match_dist_3d: f64,
    pub moving_fraction: f64,
    pub huber_delta: f64,
    pub max_iterations: u32,
    pub convergence_tol: f64,
    pub pixel_match_radius: f64,
    pub similarity_w1: f64,
    pub similarity_w2: f64,
    pub match_threshold: f64,
}

fn guard<F: FnOnce() -> SeglamStatus>(f: F) -> SeglamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SeglamStatus::Panic
        }
    }
}

unsafe fn cstr_to_str<'a>(ptr: *const c_char) -> Result<&'a str, SeglamStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(SeglamStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        SeglamStatus::InvalidUtf8
    })
}

fn options_to_params(options: &SeglamRunOptions) -> Result<PipelineParams, SeglamStatus> {
    let mode = match options.mode {
        0 => Mode::Full,
        1 => Mode::TrackOnly,
        2 => Mode::Baseline,
        other => {
            set_error(format!("unknown mode {other}"));
            return Err(SeglamStatus::InvalidArgument);
        }
    };
    let tracking = TrackingConfig {
        match_dist_3d: options.match_dist_3d,
        moving_fraction: options.moving_fraction,
        huber_delta: options.huber_delta,
        max_iterations: options.max_iterations as usize,
        convergence_tol: options.convergence_tol,
        pixel_match_radius: options.pixel_match_radius,
    };
    if let Err(e) = tracking.validate() {
        set_error(e.to_string());
        return Err(SeglamStatus::InvalidArgument);
    }
    let weights = SimilarityWeights::new(
        options.similarity_w1,
        options.similarity_w2,
        options.match_threshold,
    )
    .map_err(|e| {
        set_error(e.to_string());
        SeglamStatus::InvalidArgument
    })?;
    if options.keyframe_interval == 0 || options.merge_radius <= 0.0 {
        set_error("keyframe_interval must be >= 1 and merge_radius positive");
        return Err(SeglamStatus::InvalidArgument);
    }
    Ok(PipelineParams {
        mode,
        tracking,
        weights,
        keyframe_interval: options.keyframe_interval as usize,
        merge_radius: options.merge_radius,
        corruption: CorruptionParams {
            drop_rate: options.drop_rate,
            dilate_rate: options.dilate_rate,
            seed: options.corruption_seed,
        },
    })
}

/// Fills `options` with the library defaults.
///
/// # Safety
/// `options` must point to writable memory for one `SeglamRunOptions`.
#[no_mangle]
pub unsafe extern "C" fn seglam_run_options_default(
    options: *mut SeglamRunOptions,
) -> SeglamStatus {
    guard(|| {
        if options.is_null() {
            set_error("null options pointer");
            return SeglamStatus::NullPointer;
        }
        let tracking = TrackingConfig::default();
        let weights = SimilarityWeights::default();
        *options = SeglamRunOptions {
            mode: 0,
            drop_rate: 0.0,
            dilate_rate: 0.0,
            corruption_seed: 0,
            keyframe_interval: 5,
            merge_radius: seglam::mapping::DEFAULT_MERGE_RADIUS,
            match_dist_3d: tracking.match_dist_3d,
            moving_fraction: tracking.moving_fraction,
            huber_delta: tracking.huber_delta,
            max_iterations: tracking.max_iterations as u32,
            convergence_tol: tracking.convergence_tol,
            pixel_match_radius: tracking.pixel_match_radius,
            similarity_w1: weights.w1,
            similarity_w2: weights.w2,
            match_threshold: weights.match_threshold,
        };
        SeglamStatus::Ok
    })
}

/// Parses a scene spec from TOML text.
///
/// # Safety
/// `toml_text` must be a valid NUL-terminated string; `out` must be a valid
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn seglam_scene_from_toml(
    toml_text: *const c_char,
    out: *mut *mut SeglamScene,
) -> SeglamStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return SeglamStatus::NullPointer;
        }
        let text = match cstr_to_str(toml_text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match SceneSpec::from_toml_str(text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(SeglamScene { spec }));
                SeglamStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::ParseError
            }
        }
    })
}

/// Loads a scene spec from a TOML file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn seglam_scene_from_file(
    path: *const c_char,
    out: *mut *mut SeglamScene,
) -> SeglamStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return SeglamStatus::NullPointer;
        }
        let path = match cstr_to_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(Path::new(path)) {
            Ok(t) => t,
            Err(e) => {
                set_error(e.to_string());
                return SeglamStatus::IoError;
            }
        };
        match SceneSpec::from_toml_str(&text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(SeglamScene { spec }));
                SeglamStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::ParseError
            }
        }
    })
}

/// # Safety
/// `scene` must be null or a pointer from `seglam_scene_from_*`, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn seglam_scene_free(scene: *mut SeglamScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Generates scene data; `pass` 0 is the first visit, 1 the second
/// (relocated objects, offset trajectory).
///
/// # Safety
/// `scene` must be a live scene handle; `out` must be a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn seglam_bundle_generate(
    scene: *const SeglamScene,
    pass: u32,
    out: *mut *mut SeglamBundle,
) -> SeglamStatus {
    guard(|| {
        if scene.is_null() || out.is_null() {
            set_error("null pointer");
            return SeglamStatus::NullPointer;
        }
        let spec = &(*scene).spec;
        let result = match pass {
            0 => simulator::generate(spec),
            1 => simulator::second_pass(spec),
            other => {
                set_error(format!("pass must be 0 or 1, got {other}"));
                return SeglamStatus::InvalidArgument;
            }
        };
        match result {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(SeglamBundle { bundle }));
                SeglamStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::InvalidArgument
            }
        }
    })
}

/// # Safety
/// `bundle` must be null or a pointer from `seglam_bundle_generate`, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn seglam_bundle_free(bundle: *mut SeglamBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Number of frames in the bundle.
///
/// # Safety
/// `bundle` must be a live bundle handle.
#[no_mangle]
pub unsafe extern "C" fn seglam_bundle_frame_count(bundle: *const SeglamBundle) -> usize {
    if bundle.is_null() {
        return 0;
    }
    (*bundle).bundle.frames.len()
}

/// True camera pose of one frame as
/// `[timestamp, tx, ty, tz, qx, qy, qz, qw]` (camera-to-world).
///
/// # Safety
/// `bundle` must be a live bundle handle; `out_pose8` must point to 8
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn seglam_bundle_true_pose(
    bundle: *const SeglamBundle,
    frame: usize,
    out_pose8: *mut f64,
) -> SeglamStatus {
    guard(|| {
        if bundle.is_null() || out_pose8.is_null() {
            set_error("null pointer");
            return SeglamStatus::NullPointer;
        }
        let frames = &(*bundle).bundle.frames;
        if frame >= frames.len() {
            set_error(format!("frame {frame} out of range ({})", frames.len()));
            return SeglamStatus::OutOfRange;
        }
        let truth = &frames[frame];
        let row = pose_to_tum_row(&truth.pose);
        let slots = std::slice::from_raw_parts_mut(out_pose8, 8);
        slots[0] = truth.observation.timestamp;
        slots[1..].copy_from_slice(&row);
        SeglamStatus::Ok
    })
}

/// Runs the frame loop over a bundle.
///
/// # Safety
/// `bundle` must be a live bundle handle; `options` may be null (defaults);
/// `out` must be a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn seglam_pipeline_run(
    bundle: *const SeglamBundle,
    options: *const SeglamRunOptions,
    out: *mut *mut SeglamResult,
) -> SeglamStatus {
    guard(|| {
        if bundle.is_null() || out.is_null() {
            set_error("null pointer");
            return SeglamStatus::NullPointer;
        }
        let params = if options.is_null() {
            PipelineParams::default()
        } else {
            match options_to_params(&*options) {
                Ok(p) => p,
                Err(s) => return s,
            }
        };
        let source = BundleSource {
            bundle: &(*bundle).bundle,
        };
        match run_pipeline(&source, &params) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(SeglamResult { output }));
                SeglamStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::PipelineError
            }
        }
    })
}

/// # Safety
/// `result` must be null or a pointer from a run function, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seglam_result_free(result: *mut SeglamResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of tracked poses in the result.
///
/// # Safety
/// `result` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn seglam_result_pose_count(result: *const SeglamResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).output.trajectory.len()
}

/// Number of frames lost by tracking.
///
/// # Safety
/// `result` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn seglam_result_lost_count(result: *const SeglamResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).output.lost_frames.len()
}

/// Estimated pose `index` as `[timestamp, tx, ty, tz, qx, qy, qz, qw]`
/// (camera-to-world).
///
/// # Safety
/// `result` must be a live result handle; `out_pose8` must point to 8
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn seglam_result_pose(
    result: *const SeglamResult,
    index: usize,
    out_pose8: *mut f64,
) -> SeglamStatus {
    guard(|| {
        if result.is_null() || out_pose8.is_null() {
            set_error("null pointer");
            return SeglamStatus::NullPointer;
        }
        let samples = (*result).output.trajectory.samples();
        if index >= samples.len() {
            set_error(format!("pose {index} out of range ({})", samples.len()));
            return SeglamStatus::OutOfRange;
        }
        let (t, pose) = &samples[index];
        let row = pose_to_tum_row(pose);
        let slots = std::slice::from_raw_parts_mut(out_pose8, 8);
        slots[0] = *t;
        slots[1..].copy_from_slice(&row);
        SeglamStatus::Ok
    })
}

/// ATE of the result against the bundle's true trajectory (meters).
///
/// # Safety
/// `result` and `bundle` must be live handles; `out_rmse` must point to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn seglam_result_ate_rmse(
    result: *const SeglamResult,
    bundle: *const SeglamBundle,
    out_rmse: *mut f64,
) -> SeglamStatus {
    guard(|| {
        if result.is_null() || bundle.is_null() || out_rmse.is_null() {
            set_error("null pointer");
            return SeglamStatus::NullPointer;
        }
        let gt = match bundle_ground_truth(&(*bundle).bundle) {
            Ok(gt) => gt,
            Err(e) => {
                set_error(e.to_string());
                return SeglamStatus::EvalError;
            }
        };
        match ate(&(*result).output.trajectory, &gt) {
            Ok(report) => {
                *out_rmse = report.rmse;
                SeglamStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::EvalError
            }
        }
    })
}

/// Mean IoU of the result's segmentation against the bundle's perfect masks.
/// `refined` nonzero scores the refined output, zero the consumed input.
///
/// # Safety
/// `result` and `bundle` must be live handles; `out_miou` must point to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn seglam_result_miou(
    result: *const SeglamResult,
    bundle: *const SeglamBundle,
    refined: i32,
    out_miou: *mut f64,
) -> SeglamStatus {
    guard(|| {
        if result.is_null() || bundle.is_null() || out_miou.is_null() {
            set_error("null pointer");
            return SeglamStatus::NullPointer;
        }
        let gt: Vec<FrameSegmentation> = (*bundle)
            .bundle
            .frames
            .iter()
            .map(|f| f.segmentation.clone())
            .collect();
        let pred = if refined != 0 {
            &(*result).output.refined
        } else {
            &(*result).output.input_segs
        };
        match miou(pred, &gt) {
            Ok(v) => {
                *out_miou = v;
                SeglamStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::EvalError
            }
        }
    })
}

/// Writes one of the result's maps to a file: `which` 0 is the tracking map,
/// 1 the long-term map.
///
/// # Safety
/// `result` must be a live result handle; `path` must be a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn seglam_result_save_map(
    result: *const SeglamResult,
    which: i32,
    path: *const c_char,
) -> SeglamStatus {
    guard(|| {
        if result.is_null() {
            set_error("null result pointer");
            return SeglamStatus::NullPointer;
        }
        let path = match cstr_to_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let points = match which {
            0 => (*result).output.tracking_map.points(),
            1 => (*result).output.long_term_map.points(),
            other => {
                set_error(format!("map selector must be 0 or 1, got {other}"));
                return SeglamStatus::InvalidArgument;
            }
        };
        match seglam::mapping::save_map_points(Path::new(path), points) {
            Ok(()) => SeglamStatus::Ok,
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::IoError
            }
        }
    })
}

/// Relocalizes a bundle's frames against a map file, producing a result
/// whose trajectory holds the per-frame relocalized poses.
///
/// # Safety
/// `bundle` must be a live bundle handle; `map_path` must be a valid
/// NUL-terminated string; `options` may be null; `out` must be a valid
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn seglam_relocalize_against(
    bundle: *const SeglamBundle,
    map_path: *const c_char,
    options: *const SeglamRunOptions,
    out: *mut *mut SeglamResult,
) -> SeglamStatus {
    guard(|| {
        if bundle.is_null() || out.is_null() {
            set_error("null pointer");
            return SeglamStatus::NullPointer;
        }
        let path = match cstr_to_str(map_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let params = if options.is_null() {
            PipelineParams::default()
        } else {
            match options_to_params(&*options) {
                Ok(p) => p,
                Err(s) => return s,
            }
        };
        let points = match seglam::mapping::load_map_points(Path::new(path)) {
            Ok(p) => p,
            Err(e) => {
                set_error(e.to_string());
                return SeglamStatus::IoError;
            }
        };
        let source = BundleSource {
            bundle: &(*bundle).bundle,
        };
        match run_relocalization(&source, &points, &params) {
            Ok((trajectory, lost)) => {
                let merge_radius = params.merge_radius;
                let output = PipelineOutput {
                    trajectory,
                    refined: Vec::new(),
                    input_segs: Vec::new(),
                    tracking_map: seglam::mapping::TrackingMap::new(merge_radius),
                    long_term_map: seglam::mapping::LongTermMap::new(merge_radius),
                    lost_frames: lost,
                    timings: Default::default(),
                };
                *out = Box::into_raw(Box::new(SeglamResult { output }));
                SeglamStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SeglamStatus::PipelineError
            }
        }
    })
}
