//! C interface to `kronc`.
//!
//! Scenes live behind the opaque `KroncScene` handle. Every function
//! returns a `KroncStatus`; on failure a description is available from
//! `kronc_last_error()` on the same thread until the next call. Strings
//! handed out by the library must be released with `kronc_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kronc::eval::{perturb_poses, pose_errors, PerturbConfig};
use kronc::io::{DecodeOptions, SceneFile, DEFAULT_UNITS};
use kronc::objective::{total_loss, ObjectiveConfig};
use kronc::optimizer::{init_depths, run, OptimizerConfig};
use kronc::scenegen::{generate_scene, SceneGenConfig, VisibilityPolicy};
use kronc::{Error, Scene};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KroncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NoConstraints = 5,
    PosesRequired = 6,
    MissingDepths = 7,
    NonFiniteLoss = 8,
    Degenerate = 9,
    OutOfRange = 10,
    Panic = 11,
}

impl From<&Error> for KroncStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidIntrinsics(_) | Error::InvalidScene(_) => Self::InvalidArgument,
            Error::MismatchedViews { .. } => Self::InvalidArgument,
            Error::Io { .. } => Self::Io,
            Error::Json { .. } | Error::Format(_) | Error::NotARotation(_) => Self::Format,
            Error::NoConstraints | Error::InactiveKeypoint(_) | Error::ZeroScale => Self::NoConstraints,
            Error::PosesRequired => Self::PosesRequired,
            Error::MissingDepths => Self::MissingDepths,
            Error::NonFiniteLoss { .. } => Self::NonFiniteLoss,
            Error::DegenerateRotation | Error::DegenerateConfiguration(_) => Self::Degenerate,
        }
    }
}

/// Opaque scene handle.
pub struct KroncScene {
    scene: Scene,
    units: String,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KroncProfile {
    Synthetic = 0,
    Real = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KroncOptimizeOptions {
    pub steps: usize,
    pub learning_rate: f64,
    /// Negative selects the scene-scale default.
    pub lambda: f64,
    pub freeze_depths: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KroncRunReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub parameter_count: usize,
    pub unoptimized_views: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nulls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), (KroncStatus, String)>) -> KroncStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => KroncStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            KroncStatus::Panic
        }
    }
}

fn fail(e: Error) -> (KroncStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (KroncStatus, String) {
    (KroncStatus::NullPointer, format!("{what} is null"))
}

unsafe fn scene_ref<'a>(p: *const KroncScene) -> Result<&'a KroncScene, (KroncStatus, String)> {
    p.as_ref().ok_or_else(|| null("scene"))
}

unsafe fn scene_mut<'a>(p: *mut KroncScene) -> Result<&'a mut KroncScene, (KroncStatus, String)> {
    p.as_mut().ok_or_else(|| null("scene"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), (KroncStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn boxed(scene: Scene, units: String) -> *mut KroncScene {
    Box::into_raw(Box::new(KroncScene { scene, units }))
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library and valid until the next call.
#[no_mangle]
pub extern "C" fn kronc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fully visible synthetic scene at its ground-truth poses.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kronc_synth(
    n_views: usize,
    n_keypoints: usize,
    radius: f64,
    seed: u64,
    out: *mut *mut KroncScene,
) -> KroncStatus {
    guard(|| {
        let cfg = SceneGenConfig {
            n_views,
            n_keypoints,
            radius,
            visibility: VisibilityPolicy::RandomDropout,
            dropout_p: 0.0,
            seed,
            ..Default::default()
        };
        let gt = generate_scene(&cfg).map_err(fail)?;
        write_out(out, boxed(gt.scene, DEFAULT_UNITS.into()))
    })
}

/// Parses a scene document. Missing depths are drawn with `depth_seed`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be valid for
/// writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_from_json(
    json: *const c_char,
    depth_seed: u64,
    out: *mut *mut KroncScene,
) -> KroncStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (KroncStatus::Format, format!("json is not UTF-8: {e}")))?;
        let file = SceneFile::from_json(text).map_err(fail)?;
        let scene = file
            .to_scene(&DecodeOptions {
                fallback_poses: None,
                depth_seed: Some(depth_seed),
            })
            .map_err(fail)?;
        write_out(out, boxed(scene, file.units))
    })
}

/// Serializes a scene; free the result with `kronc_string_free`.
///
/// # Safety
/// `scene` must be a live handle; `out` must be valid for writing one
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_to_json(scene: *const KroncScene, out: *mut *mut c_char) -> KroncStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        let text = SceneFile::from_scene(&s.scene, &s.units).to_json();
        let c = CString::new(text).expect("JSON has no interior NUL");
        write_out(out, c.into_raw())
    })
}

/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn kronc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_clone(scene: *const KroncScene, out: *mut *mut KroncScene) -> KroncStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        write_out(out, boxed(s.scene.clone(), s.units.clone()))
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_free(scene: *mut KroncScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_counts(
    scene: *const KroncScene,
    n_views: *mut usize,
    n_keypoints: *mut usize,
) -> KroncStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        write_out(n_views, s.scene.n_views())?;
        write_out(n_keypoints, s.scene.n_keypoints())
    })
}

/// Camera-to-world rotation (row-major, 9 values) and translation (3
/// values) of view `view`.
///
/// # Safety
/// `scene` must be a live handle; `rotation` and `translation` must be
/// writable for 9 and 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_get_pose(
    scene: *const KroncScene,
    view: usize,
    rotation: *mut f64,
    translation: *mut f64,
) -> KroncStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        if rotation.is_null() || translation.is_null() {
            return Err(null("output pointer"));
        }
        let pose = s
            .scene
            .poses
            .get(view)
            .ok_or_else(|| (KroncStatus::OutOfRange, format!("view {view} of {}", s.scene.n_views())))?;
        let r = pose.rotation();
        for row in 0..3 {
            for col in 0..3 {
                rotation.add(3 * row + col).write(r[(row, col)]);
            }
        }
        for (k, t) in pose.translation().iter().enumerate() {
            translation.add(k).write(*t);
        }
        Ok(())
    })
}

/// Replaces the poses with noisy copies (degrees, scene units).
///
/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_perturb(
    scene: *mut KroncScene,
    sigma_rot: f64,
    sigma_trans: f64,
    seed: u64,
) -> KroncStatus {
    guard(|| {
        let s = scene_mut(scene)?;
        let cfg = PerturbConfig {
            sigma_rot,
            sigma_trans,
            seed,
        };
        s.scene.poses = perturb_poses(&s.scene.poses, &cfg).map_err(fail)?;
        Ok(())
    })
}

/// Redraws every live depth from `U[ω/2, ω]`.
///
/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_init_depths(scene: *mut KroncScene, seed: u64) -> KroncStatus {
    guard(|| {
        let s = scene_mut(scene)?;
        s.scene = init_depths(&s.scene, seed).map_err(fail)?;
        Ok(())
    })
}

fn objective(scene: &Scene, lambda: f64) -> ObjectiveConfig {
    if lambda < 0.0 {
        ObjectiveConfig::for_scene(scene)
    } else {
        ObjectiveConfig::with_lambda(lambda)
    }
}

/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kronc_scene_total_loss(scene: *const KroncScene, lambda: f64, out: *mut f64) -> KroncStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        let report = total_loss(&s.scene, &objective(&s.scene, lambda)).map_err(fail)?;
        write_out(out, report.total)
    })
}

#[no_mangle]
pub extern "C" fn kronc_optimize_options_default(profile: KroncProfile) -> KroncOptimizeOptions {
    let base = match profile {
        KroncProfile::Synthetic => OptimizerConfig::synthetic(),
        KroncProfile::Real => OptimizerConfig::real(),
    };
    KroncOptimizeOptions {
        steps: base.steps,
        learning_rate: base.learning_rate,
        lambda: -1.0,
        freeze_depths: false,
    }
}

/// Optimizes the scene in place. On failure the scene is left unchanged.
///
/// # Safety
/// `scene` must be a live handle; `options` must point to valid options;
/// `report` may be null.
#[no_mangle]
pub unsafe extern "C" fn kronc_optimize(
    scene: *mut KroncScene,
    options: *const KroncOptimizeOptions,
    report: *mut KroncRunReport,
) -> KroncStatus {
    guard(|| {
        let s = scene_mut(scene)?;
        let o = options.as_ref().ok_or_else(|| null("options"))?;
        let opt = OptimizerConfig {
            steps: o.steps,
            learning_rate: o.learning_rate,
            freeze_depths: o.freeze_depths,
            ..OptimizerConfig::synthetic()
        };
        let obj = objective(&s.scene, o.lambda);
        let out = run(&s.scene, &opt, &obj).map_err(|f| fail(f.error))?;
        if !report.is_null() {
            report.write(KroncRunReport {
                initial_loss: out.history.first().map_or(f64::NAN, |r| r.total),
                final_loss: out.final_loss.total,
                parameter_count: out.parameter_count,
                unoptimized_views: out.unoptimized_views.len(),
            });
        }
        s.scene = out.scene;
        Ok(())
    })
}

/// Mean rotation error (degrees) and camera-center error (reference
/// units) after similarity alignment of `estimated` onto `reference`.
///
/// # Safety
/// Both handles must be live; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn kronc_pose_errors(
    estimated: *const KroncScene,
    reference: *const KroncScene,
    eps_rot: *mut f64,
    eps_trans: *mut f64,
) -> KroncStatus {
    guard(|| {
        let est = scene_ref(estimated)?;
        let gt = scene_ref(reference)?;
        let rep = pose_errors(&est.scene.poses, &gt.scene.poses).map_err(fail)?;
        write_out(eps_rot, rep.eps_rot)?;
        write_out(eps_trans, rep.eps_trans)
    })
}
