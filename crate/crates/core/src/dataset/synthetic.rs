//! Procedural rooms of textured axis-aligned boxes, rendered along a smooth
//! trajectory with the crate's own rasterizer.
//!
//! World axes follow the camera convention (y points down), so the floor is
//! the room face with the largest y. After generation everything is
//! re-expressed in the frame of the first camera, whose pose is the identity.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{save_sequence, DatasetError, Frame, Sequence, DEFAULT_DEPTH_SCALE};
use crate::camera::{CameraPose, Intrinsics};
use crate::image::{quantize_u8, Image};
use crate::rasterizer::render;
use crate::scene::{logit, save_checkpoint, Gaussian, GaussianMap, PaletteEntry, SemanticPalette};

pub const WALL_LABEL: u32 = 1;
pub const FLOOR_LABEL: u32 = 2;
pub const CEILING_LABEL: u32 = 3;
/// Object labels start here, one per object.
pub const FIRST_OBJECT_LABEL: u32 = 4;

const OBJECT_NAMES: [&str; 12] =
    ["table", "jar", "chair", "box", "lamp", "plant", "bike", "guitar", "vase", "book", "shelf", "sofa"];

/// Opacity of every generated Gaussian.
const SURFACE_OPACITY: f64 = 0.98;
/// Gaussian spacing and radius, in pixels at the trajectory's median depth.
const FOOTPRINT_PX: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStyle {
    /// A 30 degree arc around the object cluster.
    Orbit,
    /// Sideways translation at a fixed viewing direction.
    Line,
    /// Pans away from the objects and back; frame t and N-1-t coincide.
    Revisit,
}

impl FromStr for TrajectoryStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "line" => Ok(Self::Line),
            "revisit" => Ok(Self::Revisit),
            _ => Err(format!("unknown trajectory style `{s}` (orbit, line, revisit)")),
        }
    }
}

impl std::fmt::Display for TrajectoryStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Orbit => "orbit",
            Self::Line => "line",
            Self::Revisit => "revisit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Room extent along x, y (height), z in meters.
    pub room_size: [f64; 3],
    pub object_count: usize,
    pub frame_count: usize,
    pub style: TrajectoryStyle,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    /// Standard deviation of additive depth noise in meters.
    pub depth_noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            room_size: [4.0, 2.5, 4.0],
            object_count: 4,
            frame_count: 60,
            style: TrajectoryStyle::Orbit,
            width: 64,
            height: 64,
            hfov_deg: 60.0,
            depth_noise_std: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.into()));
        if self.room_size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("room size must be positive in every axis");
        }
        if self.room_size[1] < 1.0 || self.room_size[0] < 2.0 || self.room_size[2] < 2.0 {
            return bad("room must be at least 2 x 1 x 2 m");
        }
        if self.object_count == 0 || self.frame_count == 0 {
            return bad("object and frame counts must be at least 1");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return bad("field of view must be in (0, 180) degrees");
        }
        if !(self.depth_noise_std >= 0.0 && self.depth_noise_std.is_finite()) {
            return bad("depth noise must be a finite non-negative stddev");
        }
        Ok(())
    }
}

/// An axis-aligned box with one label and a procedural texture.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub label: u32,
    pub base_color: [f64; 3],
    /// Wave vectors (cycles per meter) and phases of the two texture sinusoids.
    pub waves: [(Vector3<f64>, f64); 2],
}

impl SceneBox {
    pub fn texture(&self, p: &Vector3<f64>) -> [f64; 3] {
        let tau = std::f64::consts::TAU;
        let t = 0.5 + 0.25 * (tau * self.waves[0].0.dot(p) + self.waves[0].1).sin()
            + 0.25 * (tau * self.waves[1].0.dot(p) + self.waves[1].1).sin();
        let s = 0.55 + 0.45 * t;
        self.base_color.map(|c| (c * s).clamp(0.0, 1.0))
    }

    /// Ray parameters where the ray enters and leaves the box, if it hits.
    fn slab(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k] < self.min[k] || o[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let a = (self.min[k] - o[k]) / d[k];
            let b = (self.max[k] - o[k]) / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SyntheticSpec,
    pub map: GaussianMap,
    /// True label id of every Gaussian in `map`.
    pub labels: Vec<u32>,
    pub palette: SemanticPalette,
    /// Ground-truth world-to-camera poses; the first is the identity.
    pub trajectory: Vec<CameraPose>,
    pub intrinsics: Intrinsics,
    /// Room first, then objects. Boxes are axis aligned in the room frame.
    pub boxes: Vec<SceneBox>,
    /// Maps room-frame points to the anchored world frame.
    pub room_frame: CameraPose,
    /// Color quantized to 1/255, depth to one 16-bit unit, as on disk.
    pub frames: Vec<Frame>,
}

impl SyntheticScene {
    pub fn object_labels(&self) -> Vec<u32> {
        self.boxes.iter().skip(1).map(|b| b.label).collect()
    }

    pub fn to_sequence(&self) -> Sequence {
        Sequence {
            intrinsics: self.intrinsics,
            depth_scale: DEFAULT_DEPTH_SCALE,
            frames: self.frames.clone(),
            palette: self.palette.clone(),
            gt_poses: Some(self.trajectory.clone()),
            has_semantic: true,
        }
    }

    /// Writes the sequence directory plus `gt_map.ssgm`, the ground-truth map.
    pub fn export(&self, dir: &Path) -> Result<(), DatasetError> {
        save_sequence(dir, &self.to_sequence())?;
        save_checkpoint(&dir.join("gt_map.ssgm"), &self.map, &self.palette)?;
        Ok(())
    }

    /// Z-depth of the first box surface along pixel `(u, v)` of camera `pose`.
    pub fn raycast_depth(&self, pose: &CameraPose, u: f64, v: f64) -> Option<f64> {
        raycast(&self.boxes, &pose.compose(&self.room_frame), &self.intrinsics, u, v)
    }
}

fn raycast(boxes: &[SceneBox], pose: &CameraPose, k: &Intrinsics, u: f64, v: f64) -> Option<f64> {
    let o = pose.center();
    // direction with unit camera z, so the ray parameter is the z-depth
    let d = pose.camera_to_world_rotation() * Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let mut best = boxes.first().and_then(|room| room.slab(&o, &d)).map(|(_, t1)| t1).filter(|t| *t > 0.0);
    for b in boxes.iter().skip(1) {
        if let Some((t0, _)) = b.slab(&o, &d) {
            if t0 > 0.0 && best.is_none_or(|t| t0 < t) {
                best = Some(t0);
            }
        }
    }
    best
}

fn palette_color(i: usize) -> [f64; 3] {
    // distinct multiples of 1/255
    const FIXED: [[u8; 3]; 15] = [
        [200, 200, 200],
        [120, 80, 40],
        [60, 60, 160],
        [220, 40, 40],
        [40, 200, 60],
        [240, 200, 20],
        [160, 40, 200],
        [20, 200, 220],
        [250, 120, 20],
        [100, 160, 40],
        [240, 100, 180],
        [40, 100, 120],
        [180, 180, 80],
        [120, 20, 80],
        [80, 220, 160],
    ];
    let c = if i < FIXED.len() {
        FIXED[i]
    } else {
        let j = (i - FIXED.len()) as u32;
        [(37 + 53 * j) % 256, (91 + 97 * j) % 256, (13 + 29 * j) % 256].map(|v| v as u8)
    };
    c.map(|v| v as f64 / 255.0)
}

fn build_palette(object_count: usize) -> Result<SemanticPalette, DatasetError> {
    let mut entries = vec![
        PaletteEntry { id: 0, name: "background".into(), color: [0.0; 3] },
        PaletteEntry { id: WALL_LABEL, name: "wall".into(), color: palette_color(0) },
        PaletteEntry { id: FLOOR_LABEL, name: "floor".into(), color: palette_color(1) },
        PaletteEntry { id: CEILING_LABEL, name: "ceiling".into(), color: palette_color(2) },
    ];
    for i in 0..object_count {
        let name = OBJECT_NAMES.get(i).map_or_else(|| format!("object{i}"), |n| n.to_string());
        entries.push(PaletteEntry { id: FIRST_OBJECT_LABEL + i as u32, name, color: palette_color(3 + i) });
    }
    Ok(SemanticPalette::new(entries)?)
}

fn random_waves(rng: &mut ChaCha8Rng) -> [(Vector3<f64>, f64); 2] {
    std::array::from_fn(|_| {
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let dir = if dir.norm() < 1e-3 { Vector3::x() } else { dir.normalize() };
        let period: f64 = rng.random_range(0.3..0.6);
        (dir / period, rng.random_range(0.0..std::f64::consts::TAU))
    })
}

fn random_base(rng: &mut ChaCha8Rng) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(0.25..0.95))
}

/// Fixed points of the layout: where the cameras sit and what they look at.
struct Layout {
    eye_y: f64,
    /// Center of the object cluster on the floor.
    target: Vector3<f64>,
    /// Horizontal camera distance from the target.
    radius: f64,
    floor_y: f64,
}

fn layout(spec: &SyntheticSpec) -> Layout {
    let [_, sy, sz] = spec.room_size;
    let floor_y = sy / 2.0;
    Layout {
        eye_y: floor_y - (0.5 * sy).min(1.2),
        target: Vector3::new(0.0, floor_y, sz / 2.0 - 0.35 * sz),
        radius: 0.45 * sz,
        floor_y,
    }
}

fn place_objects(spec: &SyntheticSpec, lay: &Layout, rng: &mut ChaCha8Rng) -> Vec<SceneBox> {
    let [sx, sy, sz] = spec.room_size;
    let scale = (sx.min(sz) / 4.0).min(1.5);
    let mut placed: Vec<SceneBox> = Vec::new();
    for i in 0..spec.object_count {
        let w = rng.random_range(0.25..0.6) * scale;
        let dpt = rng.random_range(0.25..0.6) * scale;
        let h = rng.random_range(0.3..0.9) * (sy / 2.5).min(1.0);
        let mut candidate = None;
        for attempt in 0..200 {
            let spread = if attempt < 100 { 1.0 } else { 1.6 };
            let cx = lay.target.x + rng.random_range(-0.22..0.22) * sx * spread;
            let cz = lay.target.z + rng.random_range(-0.15..0.15) * sz * spread;
            let min = Vector3::new(cx - w / 2.0, lay.floor_y - h, cz - dpt / 2.0);
            let max = Vector3::new(cx + w / 2.0, lay.floor_y, cz + dpt / 2.0);
            let inside = min.x > -sx / 2.0 + 0.1 && max.x < sx / 2.0 - 0.1 && min.z > -sz / 2.0 + 0.1 && max.z < sz / 2.0 - 0.1;
            let clear = placed.iter().all(|o| {
                max.x + 0.08 < o.min.x || o.max.x + 0.08 < min.x || max.z + 0.08 < o.min.z || o.max.z + 0.08 < min.z
            });
            if inside && clear {
                candidate = Some((min, max));
                break;
            }
            if candidate.is_none() && inside {
                candidate = Some((min, max));
            }
        }
        // the target itself always fits; crowded rooms fall back to overlapping boxes
        let (min, max) = candidate.unwrap_or((
            Vector3::new(lay.target.x - w / 2.0, lay.floor_y - h, lay.target.z - dpt / 2.0),
            Vector3::new(lay.target.x + w / 2.0, lay.floor_y, lay.target.z + dpt / 2.0),
        ));
        placed.push(SceneBox {
            min,
            max,
            label: FIRST_OBJECT_LABEL + i as u32,
            base_color: random_base(rng),
            waves: random_waves(rng),
        });
    }
    placed
}

fn trajectory(spec: &SyntheticSpec, lay: &Layout) -> Vec<CameraPose> {
    let n = spec.frame_count;
    let down = Vector3::new(0.0, 1.0, 0.0);
    let look = Vector3::new(lay.target.x, lay.floor_y - 0.35, lay.target.z);
    let phase = |t: usize| if n > 1 { t as f64 / (n - 1) as f64 } else { 0.5 };
    (0..n)
        .map(|t| match spec.style {
            TrajectoryStyle::Orbit => {
                let theta = 15f64.to_radians() * (2.0 * phase(t) - 1.0);
                let eye = Vector3::new(
                    lay.target.x + lay.radius * theta.sin(),
                    lay.eye_y,
                    lay.target.z - lay.radius * theta.cos(),
                );
                CameraPose::look_at(eye, look, down)
            }
            TrajectoryStyle::Line => {
                let offset = 0.1 * spec.room_size[0] * (2.0 * phase(t) - 1.0);
                let base = Vector3::new(lay.target.x, lay.eye_y, lay.target.z - lay.radius);
                let eye = base + Vector3::new(offset, 0.0, 0.0);
                CameraPose::look_at(eye, look + Vector3::new(offset, 0.0, 0.0), down)
            }
            TrajectoryStyle::Revisit => {
                let s = t.min(n - 1 - t);
                let swing = if n > 1 { (std::f64::consts::PI * s as f64 / (n - 1) as f64).sin() } else { 0.0 };
                let yaw = UnitQuaternion::from_axis_angle(&-Vector3::y_axis(), 70f64.to_radians() * swing);
                let base = Vector3::new(lay.target.x, lay.eye_y, lay.target.z - lay.radius);
                let eye = base + Vector3::new(-0.2 * swing, 0.0, 0.0);
                CameraPose::look_at(eye, eye + yaw * (look - base), down)
            }
        })
        .collect()
}

/// Samples the visible faces of `b` on a grid of spacing about `spacing`.
/// Room faces point inward; the floor-touching face of objects is skipped.
fn sample_box(b: &SceneBox, spacing: f64, room: bool, opacity_logit: f64, semantic: [f64; 3], out: &mut Vec<(Gaussian, u32)>) {
    let log_radius = spacing.ln();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let nu = ((b.max[u] - b.min[u]) / spacing).ceil().max(1.0) as usize;
        let nv = ((b.max[v] - b.min[v]) / spacing).ceil().max(1.0) as usize;
        for side in [b.min[axis], b.max[axis]] {
            if !room && axis == 1 && side == b.max[1] {
                continue;
            }
            for i in 0..nu {
                for j in 0..nv {
                    let mut p = Vector3::zeros();
                    p[axis] = side;
                    p[u] = b.min[u] + (i as f64 + 0.5) * (b.max[u] - b.min[u]) / nu as f64;
                    p[v] = b.min[v] + (j as f64 + 0.5) * (b.max[v] - b.min[v]) / nv as f64;
                    out.push((
                        Gaussian {
                            position: p.into(),
                            log_radius,
                            opacity_logit,
                            color: b.texture(&p),
                            semantic_color: semantic,
                        },
                        b.label,
                    ));
                }
            }
        }
    }
}

fn room_label(b: &SceneBox, p: &Vector3<f64>) -> u32 {
    if p.y == b.max.y {
        FLOOR_LABEL
    } else if p.y == b.min.y {
        CEILING_LABEL
    } else {
        WALL_LABEL
    }
}

/// Builds the scene and renders every frame. Deterministic per spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScene, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let intr = Intrinsics::from_fov(spec.width, spec.height, spec.hfov_deg)?;
    let palette = build_palette(spec.object_count)?;
    let lay = layout(spec);
    let half = Vector3::from(spec.room_size) / 2.0;
    let room = SceneBox { min: -half, max: half, label: WALL_LABEL, base_color: random_base(&mut rng), waves: random_waves(&mut rng) };
    let mut boxes = vec![room];
    boxes.extend(place_objects(spec, &lay, &mut rng));
    let world_poses = trajectory(spec, &lay);

    // median surface depth over a coarse pixel grid of every frame
    let mut depths = Vec::new();
    for pose in &world_poses {
        for gy in 0..8 {
            for gx in 0..8 {
                let u = (gx as f64 + 0.5) * spec.width as f64 / 8.0 - 0.5;
                let v = (gy as f64 + 0.5) * spec.height as f64 / 8.0 - 0.5;
                depths.extend(raycast(&boxes, pose, &intr, u, v));
            }
        }
    }
    depths.sort_by(f64::total_cmp);
    let median = depths.get(depths.len() / 2).copied().unwrap_or(2.0);
    let spacing = FOOTPRINT_PX * median / intr.fx;

    let opacity_logit = logit(SURFACE_OPACITY);
    let mut samples = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        let start = samples.len();
        let sem = palette.color_of(b.label).expect("box label is in the palette");
        sample_box(b, spacing, i == 0, opacity_logit, sem, &mut samples);
        if i == 0 {
            for (g, label) in &mut samples[start..] {
                *label = room_label(b, &Vector3::from(g.position));
                g.semantic_color = palette.color_of(*label).expect("room labels are in the palette");
            }
        }
    }

    // anchor the world at the first camera
    let anchor = world_poses[0];
    let to_anchor = anchor.inverse();
    let labels: Vec<u32> = samples.iter().map(|(_, l)| *l).collect();
    let map = GaussianMap::from_gaussians(samples.into_iter().map(|(mut g, _)| {
        g.position = anchor.transform_point(&Vector3::from(g.position)).into();
        g
    }));
    let mut trajectory: Vec<CameraPose> = world_poses.iter().map(|p| p.compose(&to_anchor)).collect();
    trajectory[0] = CameraPose::identity();

    let noise_seed: u64 = rng.random();
    let mut frames: Vec<Frame> = trajectory
        .par_iter()
        .enumerate()
        .map(|(t, pose)| -> Result<Frame, DatasetError> {
            let out = render(&map, pose, &intr)?;
            let (w, h) = out.dims();
            let norm = |x: usize, y: usize| {
                let s = out.silhouette.get(x, y);
                if s > 1e-6 { 1.0 / s } else { 0.0 }
            };
            let color = Image::from_fn(w, h, |x, y| out.color.get(x, y).map(|c| quantize_u8(c * norm(x, y)) as f64 / 255.0));
            let depth = Image::from_fn(w, h, |x, y| {
                let d = out.depth.get(x, y) * norm(x, y);
                (d * DEFAULT_DEPTH_SCALE).round().min(65535.0) / DEFAULT_DEPTH_SCALE
            });
            let semantic = Image::from_fn(w, h, |x, y| {
                let s = out.semantic.get(x, y).map(|c| c * norm(x, y));
                palette.nearest(&s).color
            });
            Frame::new(color, depth, semantic, t)
        })
        .collect::<Result<_, _>>()?;

    if spec.depth_noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.depth_noise_std).expect("validated stddev");
        let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed);
        for f in &mut frames {
            for d in f.depth.as_mut_slice() {
                if *d > 0.0 {
                    let noisy = (*d + normal.sample(&mut nrng)).max(0.0);
                    *d = (noisy * DEFAULT_DEPTH_SCALE).round().min(65535.0) / DEFAULT_DEPTH_SCALE;
                }
            }
        }
    }

    Ok(SyntheticScene { spec: spec.clone(), map, labels, palette, trajectory, intrinsics: intr, boxes, room_frame: anchor, frames })
}
