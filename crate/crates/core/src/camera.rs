//! Pinhole intrinsics, world-to-camera poses, point splatting, and the pose
//! update used by tracking.
//!
//! Pixel `(u, v)` has its center at the continuous image coordinate `(u, v)`.
//! Camera axes follow the usual vision convention: x right, y down, z forward.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

use crate::optim::{OptimError, UpdateRule};

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("non-finite pose gradient")]
    NonFiniteGradient,
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("cannot access trajectory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trajectory {path} line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, CameraError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: String| Err(CameraError::InvalidIntrinsics(m));
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive, got {} {}", self.fx, self.fy));
        }
        if self.width < 1 || self.height < 1 {
            return bad(format!("image size must be at least 1x1, got {}x{}", self.width, self.height));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        Ok(())
    }

    /// Symmetric pinhole camera with the given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self, CameraError> {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }

    /// Camera-frame point at pixel `(u, v)` with z-depth `depth`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }

    /// Whether a continuous image coordinate lies on the image, i.e. inside
    /// the union of pixel footprints `[-0.5, W - 0.5) x [-0.5, H - 0.5)`.
    #[inline]
    pub fn contains(&self, uv: [f64; 2]) -> bool {
        uv[0] >= -0.5 && uv[0] < self.width as f64 - 0.5 && uv[1] >= -0.5 && uv[1] < self.height as f64 - 0.5
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// World-to-camera rigid transform `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds the world-to-camera pose from a camera-to-world rotation and camera center.
    pub fn from_camera_to_world(rotation: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        let inv = rotation.inverse();
        Self { rotation: inv, translation: -(inv * center) }
    }

    /// Pose of a camera at `eye` looking at `target`, image y-axis aligned with `down`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let c2w = Matrix3::from_columns(&[x, y, z]);
        let rot = UnitQuaternion::from_matrix(&c2w);
        Self::from_camera_to_world(rot, eye)
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self { rotation: inv, translation: -(inv * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Camera-to-world rotation.
    pub fn camera_to_world_rotation(&self) -> UnitQuaternion<f64> {
        self.rotation.inverse()
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn renormalized(mut self) -> Self {
        self.rotation = UnitQuaternion::new_normalize(self.rotation.into_inner());
        self
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Rotation angle (radians) between the two poses' rotations.
    pub fn rotation_angle_to(&self, other: &CameraPose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

/// A Gaussian center and radius splatted onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub center: [f64; 2],
    pub radius: f64,
    pub depth: f64,
    /// False when the point is at or behind the camera plane (`depth <= 0`).
    pub in_front: bool,
}

/// Projects a 3D center `mu` with radius `r`: `mu2d = K (E mu) / d`,
/// `r2d = fx r / d`, `d = (E mu)_z`.
pub fn splat_point(pose: &CameraPose, intr: &Intrinsics, mu: &Vector3<f64>, r: f64) -> Splat {
    let p = pose.transform_point(mu);
    let d = p.z;
    if d <= 0.0 {
        return Splat { center: [f64::NAN, f64::NAN], radius: f64::NAN, depth: d, in_front: false };
    }
    Splat { center: intr.project(&p), radius: intr.fx * r / d, depth: d, in_front: true }
}

/// Constant-velocity initialization: translation extrapolated linearly, and
/// the relative rotation from `prev2` to `prev` applied once more on top of `prev`.
pub fn predict_pose(prev: &CameraPose, prev2: &CameraPose) -> CameraPose {
    let relative = prev.rotation * prev2.rotation.inverse();
    CameraPose {
        rotation: relative * prev.rotation,
        translation: prev.translation * 2.0 - prev2.translation,
    }
    .renormalized()
}

/// One descent step on a pose: `t -= lr_t * dir_t`, `R = exp(-lr_r * dir_r) R`,
/// where the directions come from `rule`. `grad_rotation` is the gradient with
/// respect to a left-multiplied tangent perturbation `exp(w) R`.
pub fn apply_pose_step(
    pose: &CameraPose,
    grad_translation: &Vector3<f64>,
    grad_rotation: &Vector3<f64>,
    lr_t: f64,
    lr_r: f64,
    rule: &mut impl UpdateRule,
) -> Result<CameraPose, CameraError> {
    if grad_translation.iter().chain(grad_rotation.iter()).any(|v| !v.is_finite()) {
        return Err(CameraError::NonFiniteGradient);
    }
    let dirs = rule.directions(&[grad_translation.as_slice(), grad_rotation.as_slice()])?;
    let dt = Vector3::from_column_slice(&dirs[0]);
    let dr = Vector3::from_column_slice(&dirs[1]);
    let step = UnitQuaternion::from_scaled_axis(-lr_r * dr);
    Ok(CameraPose { rotation: step * pose.rotation, translation: pose.translation - lr_t * dt }.renormalized())
}

/// Homogeneous 4x4 projection used as a cross-check of [`splat_point`].
pub fn project_homogeneous(pose: &CameraPose, intr: &Intrinsics, mu: &Vector3<f64>) -> ([f64; 2], f64) {
    let ph = pose.matrix() * Vector4::new(mu.x, mu.y, mu.z, 1.0);
    let pc = intr.matrix() * Vector3::new(ph.x, ph.y, ph.z);
    ([pc.x / pc.z, pc.y / pc.z], ph.z)
}

/// One trajectory row: frame timestamp and world-to-camera pose.
pub type TrajectoryEntry = (f64, CameraPose);

/// Writes `timestamp tx ty tz qx qy qz qw` per line, where `t` is the camera
/// center and `q` the camera-to-world rotation.
pub fn write_trajectory(path: &Path, entries: &[TrajectoryEntry]) -> Result<(), CameraError> {
    let io = |source| CameraError::Io { path: path.display().to_string(), source };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "# timestamp tx ty tz qx qy qz qw (camera-to-world)").map_err(io)?;
    for (ts, pose) in entries {
        let c = pose.center();
        let q = pose.camera_to_world_rotation();
        writeln!(f, "{} {} {} {} {} {} {} {}", ts, c.x, c.y, c.z, q.i, q.j, q.k, q.w).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn parse_trajectory(text: &str, path: &str) -> Result<Vec<TrajectoryEntry>, CameraError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CameraError::Parse { path: path.into(), line: i + 1, msg: e.to_string() })?;
        if vals.len() != 8 || vals.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("expected 8 finite numbers, got {}", vals.len()),
            });
        }
        let q = nalgebra::Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if q.norm() < 1e-12 {
            return Err(CameraError::Parse { path: path.into(), line: i + 1, msg: "zero quaternion".into() });
        }
        let pose = CameraPose::from_camera_to_world(
            UnitQuaternion::new_normalize(q),
            Vector3::new(vals[1], vals[2], vals[3]),
        );
        out.push((vals[0], pose));
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>, CameraError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CameraError::Io { path: path.display().to_string(), source })?;
    parse_trajectory(&text, &path.display().to_string())
}
