//! C interface to the semsplat library.
//!
//! Objects are opaque handles created by `ssp_*_new`/`ssp_*_load` and
//! released with the matching `ssp_*_free`. Every fallible call returns an
//! [`SspStatus`]; on failure `ssp_last_error()` describes the problem for the
//! calling thread. Handles are not shared between threads by the library.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use semsplat::camera::{CameraPose, Intrinsics};
use semsplat::config::PipelineConfig;
use semsplat::dataset::synthetic::{generate_synthetic, SyntheticSpec};
use semsplat::editor::{apply_edit_script, parse_edit_script};
use semsplat::rasterizer::render;
use semsplat::runner::{run_dir, RunOptions};
use semsplat::scene::{load_checkpoint, save_checkpoint, GaussianMap, SemanticPalette};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SspStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad parameter value or configuration.
    InvalidArgument = 3,
    /// Missing, unreadable or malformed input data.
    DataError = 4,
    /// The pipeline produced non-finite values.
    NumericError = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let s = CString::new(msg.to_string().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

struct Fail(SspStatus, String);

impl Fail {
    fn data(e: impl std::fmt::Display) -> Self {
        Fail(SspStatus::DataError, e.to_string())
    }
    fn arg(e: impl std::fmt::Display) -> Self {
        Fail(SspStatus::InvalidArgument, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SspStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SspStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            SspStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SspStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(SspStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(SspStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(SspStatus::NullArgument, format!("`{name}` is null")))
}

/// Pipeline configuration.
pub struct SspConfig(PipelineConfig);

/// A Gaussian map together with its semantic palette.
pub struct SspMap {
    map: GaussianMap,
    palette: SemanticPalette,
}

/// Pinhole camera, image size in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SspIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Camera-to-world pose: camera center and rotation quaternion (x, y, z, w),
/// as in trajectory files.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SspPose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub qw: f64,
}

/// Caller-owned output buffers for one render, row-major. Color and semantic
/// hold `3 * width * height` values, depth and silhouette `width * height`.
/// Any pointer may be null to skip that channel.
#[repr(C)]
pub struct SspRenderBuffers {
    pub color: *mut f32,
    pub depth: *mut f32,
    pub semantic: *mut f32,
    pub silhouette: *mut f32,
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ssp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ssp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a configuration with default values.
#[no_mangle]
pub extern "C" fn ssp_config_new() -> *mut SspConfig {
    Box::into_raw(Box::new(SspConfig(PipelineConfig::default())))
}

/// Loads a key-value config file into a new handle.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssp_config_load(path: *const c_char, out: *mut *mut SspConfig) -> SspStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = mut_arg(out, "out")?;
        let cfg = PipelineConfig::load(path.as_ref()).map_err(Fail::data)?;
        *out = Box::into_raw(Box::new(SspConfig(cfg)));
        Ok(())
    })
}

/// Sets one config key from its text value.
///
/// # Safety
/// `cfg` must come from this library; strings must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ssp_config_set(cfg: *mut SspConfig, key: *const c_char, value: *const c_char) -> SspStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let mut next = cfg.0.clone();
        next.set(key, value).map_err(Fail::arg)?;
        next.validate().map_err(Fail::arg)?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssp_config_free(cfg: *mut SspConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs SLAM on the sequence in `input_dir`, writing all artifacts to
/// `output_dir`. A null `cfg` means defaults. `inject_gt_poses` nonzero
/// bypasses tracking with the sequence's ground-truth poses.
///
/// # Safety
/// Strings must be nul-terminated; `cfg` must be null or from this library.
#[no_mangle]
pub unsafe extern "C" fn ssp_run(
    input_dir: *const c_char,
    output_dir: *const c_char,
    cfg: *const SspConfig,
    seed: u64,
    inject_gt_poses: i32,
) -> SspStatus {
    guard(|| {
        let input = PathBuf::from(str_arg(input_dir, "input_dir")?);
        let output = PathBuf::from(str_arg(output_dir, "output_dir")?);
        let cfg = cfg.as_ref().map_or_else(PipelineConfig::default, |c| c.0.clone());
        let opts = RunOptions { seed, inject_gt_poses: inject_gt_poses != 0, ablations: Vec::new() };
        run_dir(&input, &output, &cfg, &opts).map(|_| ()).map_err(|e| {
            let code = if e.exit_code() == 3 { SspStatus::NumericError } else { SspStatus::DataError };
            Fail(code, e.to_string())
        })
    })
}

/// Generates a synthetic sequence into `out_dir`. `style` is "orbit",
/// "line" or "revisit"; images are 64x64.
///
/// # Safety
/// Strings must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ssp_synth(out_dir: *const c_char, seed: u64, frames: u32, style: *const c_char) -> SspStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let style = str_arg(style, "style")?.parse().map_err(Fail::arg)?;
        let spec = SyntheticSpec { seed, frame_count: frames as usize, style, ..SyntheticSpec::default() };
        let scene = generate_synthetic(&spec).map_err(Fail::arg)?;
        scene.export(&dir).map_err(Fail::data)
    })
}

/// Loads a map checkpoint.
///
/// # Safety
/// `path` must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssp_map_load(path: *const c_char, out: *mut *mut SspMap) -> SspStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = mut_arg(out, "out")?;
        let (map, palette) = load_checkpoint(path.as_ref()).map_err(Fail::data)?;
        *out = Box::into_raw(Box::new(SspMap { map, palette }));
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ssp_map_save(map: *const SspMap, path: *const c_char) -> SspStatus {
    guard(|| {
        let m = ref_arg(map, "map")?;
        let path = str_arg(path, "path")?;
        save_checkpoint(path.as_ref(), &m.map, &m.palette).map_err(Fail::data)
    })
}

/// Number of Gaussians, or 0 for a null handle.
///
/// # Safety
/// `map` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ssp_map_len(map: *const SspMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.len())
}

/// Applies an edit script (text, one command per line) in place.
///
/// # Safety
/// `map` must come from this library; `script` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ssp_map_edit(map: *mut SspMap, script: *const c_char) -> SspStatus {
    guard(|| {
        let m = mut_arg(map, "map")?;
        let script = str_arg(script, "script")?;
        let cmds = parse_edit_script(script, &m.palette).map_err(Fail::arg)?;
        let (edited, _) = apply_edit_script(&m.map, &m.palette, &cmds).map_err(Fail::data)?;
        m.map = edited;
        Ok(())
    })
}

/// Renders the map from `pose` into caller-owned buffers.
///
/// # Safety
/// `map` must come from this library. Non-null buffer pointers must be valid
/// for the sizes given in [`SspRenderBuffers`].
#[no_mangle]
pub unsafe extern "C" fn ssp_map_render(
    map: *const SspMap,
    pose: *const SspPose,
    intrinsics: *const SspIntrinsics,
    buffers: *const SspRenderBuffers,
) -> SspStatus {
    guard(|| {
        let m = ref_arg(map, "map")?;
        let p = ref_arg(pose, "pose")?;
        let k = ref_arg(intrinsics, "intrinsics")?;
        let b = ref_arg(buffers, "buffers")?;
        let intr = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width as usize, k.height as usize).map_err(Fail::arg)?;
        let q = Quaternion::new(p.qw, p.qx, p.qy, p.qz);
        let vals = [p.tx, p.ty, p.tz, p.qx, p.qy, p.qz, p.qw];
        if vals.iter().any(|v| !v.is_finite()) || q.norm() < 1e-12 {
            return Err(Fail::arg("pose must be finite with a nonzero quaternion"));
        }
        let pose = CameraPose::from_camera_to_world(UnitQuaternion::new_normalize(q), Vector3::new(p.tx, p.ty, p.tz));
        let out = render(&m.map, &pose, &intr).map_err(Fail::data)?;
        let n = intr.pixel_count();
        if !b.color.is_null() {
            let dst = std::slice::from_raw_parts_mut(b.color, 3 * n);
            for (d, s) in dst.iter_mut().zip(out.color.as_slice().iter().flatten()) {
                *d = *s as f32;
            }
        }
        if !b.semantic.is_null() {
            let dst = std::slice::from_raw_parts_mut(b.semantic, 3 * n);
            for (d, s) in dst.iter_mut().zip(out.semantic.as_slice().iter().flatten()) {
                *d = *s as f32;
            }
        }
        for (ptr, img) in [(b.depth, &out.depth), (b.silhouette, &out.silhouette)] {
            if !ptr.is_null() {
                let dst = std::slice::from_raw_parts_mut(ptr, n);
                for (d, s) in dst.iter_mut().zip(img.as_slice()) {
                    *d = *s as f32;
                }
            }
        }
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssp_map_free(map: *mut SspMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}
