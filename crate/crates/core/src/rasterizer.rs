//! Tile-based forward splatting of all four channels and the analytic
//! backward pass to Gaussian attributes and camera pose.
//!
//! Per pixel `p`, Gaussian `i` contributes the 2D influence
//! `f_i = sigma_i * k(q_i)` with `q_i = |p - mu2d_i|^2 / r2d_i^2`, composited
//! front to back by depth: `X = sum_i x_i f_i prod_{j<i} (1 - f_j)`.
//! The kernel is `k(q) = exp(-q/2) * s(q)` where `s` is 1 up to 2.5 radii and
//! fades smoothly to 0 at the 3-radius cutoff, so the footprint ends without
//! a step and finite differences see a differentiable function.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{CameraPose, Intrinsics};
use crate::image::{GrayImage, Image, Rgb3, RgbImage};
use crate::scene::{sigmoid, GaussianMap, SceneError};

pub const TILE: usize = 16;
pub const NEAR_PLANE: f64 = 0.01;
pub const MAX_INFLUENCE: f64 = 0.9999;
/// Footprint cutoff in units of the projected radius.
pub const CUTOFF_RADII: f64 = 3.0;
const CUTOFF_Q: f64 = CUTOFF_RADII * CUTOFF_RADII;
const TAPER_START_Q: f64 = 6.25;
/// Transmittance below which preview renders stop compositing.
pub const PREVIEW_MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("camera pose is not finite")]
    NonFinitePose,
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("all render channels are disabled")]
    NoChannels,
    #[error("render state does not match backward inputs: {0}")]
    AuxMismatch(String),
    #[error("pixel gradient image is {0}x{1}, render is {2}x{3}")]
    GradDims(usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderChannels {
    pub color: bool,
    pub depth: bool,
    pub semantic: bool,
    pub silhouette: bool,
}

impl RenderChannels {
    pub const ALL: Self = Self { color: true, depth: true, semantic: true, silhouette: true };

    pub fn any(&self) -> bool {
        self.color || self.depth || self.semantic || self.silhouette
    }
}

impl Default for RenderChannels {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RenderOptions {
    pub channels: RenderChannels,
    /// Stop compositing once transmittance drops below
    /// [`PREVIEW_MIN_TRANSMITTANCE`]. Such renders cannot be differentiated.
    pub preview: bool,
}

/// Kernel value and derivative with respect to `q`.
#[inline]
fn kernel(q: f64) -> (f64, f64) {
    let e = (-0.5 * q).exp();
    if q <= TAPER_START_Q {
        return (e, -0.5 * e);
    }
    let span = CUTOFF_Q - TAPER_START_Q;
    let u = (q - TAPER_START_Q) / span;
    let s = 1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
    let ds = -30.0 * u * u * (1.0 - u) * (1.0 - u) / span;
    (e * s, e * (ds - 0.5 * s))
}

/// Unclamped 2D influence of a splat with opacity `sigma`, center `m` and
/// radius `r2d` at pixel center `p`.
#[inline]
pub fn influence_2d(sigma: f64, m: [f64; 2], r2d: f64, p: [f64; 2]) -> f64 {
    let q = ((p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2)) / (r2d * r2d);
    if q >= CUTOFF_Q {
        0.0
    } else {
        sigma * kernel(q).0
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Projected {
    cam: [f64; 3],
    mean: [f64; 2],
    r2d: f64,
    opacity: f64,
    visible: bool,
    // inclusive pixel bounds of the footprint
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// One contributor of one pixel, in compositing order.
#[derive(Debug, Clone, Copy)]
struct Contrib {
    /// Position in the tile's depth-sorted list.
    local: u32,
    f: f64,
    /// Transmittance in front of this contributor.
    t: f64,
}

#[derive(Debug, Clone)]
struct TileAux {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    /// Global Gaussian indices sorted by (depth, index).
    sorted: Vec<u32>,
    /// Per-pixel ranges into `contribs`, row-major within the tile.
    offsets: Vec<u32>,
    contribs: Vec<Contrib>,
}

/// Compositing state retained for the backward pass.
#[derive(Debug, Clone)]
pub struct RenderAux {
    pose: CameraPose,
    intr: Intrinsics,
    map_len: usize,
    preview: bool,
    tiles_x: usize,
    projected: Vec<Projected>,
    tiles: Vec<TileAux>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: RgbImage,
    pub depth: GrayImage,
    pub semantic: RgbImage,
    pub silhouette: GrayImage,
    pub aux: RenderAux,
}

impl RenderOutput {
    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }

    /// Contributors of pixel `(x, y)` in compositing order as
    /// `(gaussian index, influence, transmittance in front)`.
    pub fn contributors(&self, x: usize, y: usize) -> Vec<(usize, f64, f64)> {
        let a = &self.aux;
        let tile = &a.tiles[(y / TILE) * a.tiles_x + x / TILE];
        let local = (y - tile.y0) * tile.w + (x - tile.x0);
        let (s, e) = (tile.offsets[local] as usize, tile.offsets[local + 1] as usize);
        tile.contribs[s..e].iter().map(|c| (tile.sorted[c.local as usize] as usize, c.f, c.t)).collect()
    }

    /// Transmittance remaining behind the last contributor of pixel `(x, y)`.
    pub fn final_transmittance(&self, x: usize, y: usize) -> f64 {
        self.contributors(x, y).last().map_or(1.0, |&(_, f, t)| t * (1.0 - f))
    }
}

fn project_all(map: &GaussianMap, pose: &CameraPose, intr: &Intrinsics) -> Vec<Projected> {
    let rot: Matrix3<f64> = *pose.rotation.to_rotation_matrix().matrix();
    let t = pose.translation;
    let (w, h) = (intr.width as f64, intr.height as f64);
    (0..map.len())
        .into_par_iter()
        .map(|i| {
            let p = rot * map.position(i) + t;
            if !(p.z > NEAR_PLANE) {
                return Projected::default();
            }
            let mean = [intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy];
            let r2d = intr.fx * map.log_radii()[i].exp() / p.z;
            let reach = CUTOFF_RADII * r2d;
            let (lx, hx) = ((mean[0] - reach).ceil(), (mean[0] + reach).floor());
            let (ly, hy) = ((mean[1] - reach).ceil(), (mean[1] + reach).floor());
            if !(r2d > 0.0 && r2d.is_finite()) || hx < 0.0 || hy < 0.0 || lx > w - 1.0 || ly > h - 1.0 || lx > hx || ly > hy {
                return Projected::default();
            }
            Projected {
                cam: p.into(),
                mean,
                r2d,
                opacity: sigmoid(map.opacity_logits()[i]),
                visible: true,
                x0: lx.max(0.0) as usize,
                x1: hx.min(w - 1.0) as usize,
                y0: ly.max(0.0) as usize,
                y1: hy.min(h - 1.0) as usize,
            }
        })
        .collect()
}

struct TileImages {
    color: Vec<Rgb3>,
    depth: Vec<f64>,
    semantic: Vec<Rgb3>,
    silhouette: Vec<f64>,
}

pub fn render(map: &GaussianMap, pose: &CameraPose, intr: &Intrinsics) -> Result<RenderOutput, RenderError> {
    render_with(map, pose, intr, &RenderOptions::default())
}

/// Renders only the enabled channels; disabled channels come back as zeros.
pub fn render_channel_toggled(
    map: &GaussianMap,
    pose: &CameraPose,
    intr: &Intrinsics,
    channels: RenderChannels,
) -> Result<RenderOutput, RenderError> {
    render_with(map, pose, intr, &RenderOptions { channels, preview: false })
}

pub fn render_with(
    map: &GaussianMap,
    pose: &CameraPose,
    intr: &Intrinsics,
    opts: &RenderOptions,
) -> Result<RenderOutput, RenderError> {
    let ch = opts.channels;
    if !ch.any() {
        return Err(RenderError::NoChannels);
    }
    intr.validate().map_err(|e| RenderError::Intrinsics(e.to_string()))?;
    if !pose.is_finite() {
        return Err(RenderError::NonFinitePose);
    }
    map.check_finite()?;

    let (w, h) = (intr.width, intr.height);
    let projected = project_all(map, pose, intr);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, p) in projected.iter().enumerate() {
        if !p.visible {
            continue;
        }
        for ty in p.y0 / TILE..=p.y1 / TILE {
            for tx in p.x0 / TILE..=p.x1 / TILE {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let colors = map.colors();
    let sems = map.semantic_colors();
    let results: Vec<(TileAux, TileImages)> = lists
        .into_par_iter()
        .enumerate()
        .map(|(ti, mut sorted)| {
            sorted.sort_by(|&a, &b| {
                projected[a as usize].cam[2].total_cmp(&projected[b as usize].cam[2]).then(a.cmp(&b))
            });
            let x0 = (ti % tiles_x) * TILE;
            let y0 = (ti / tiles_x) * TILE;
            let tw = TILE.min(w - x0);
            let th = TILE.min(h - y0);
            let np = tw * th;
            let mut img = TileImages {
                color: vec![[0.0; 3]; np],
                depth: vec![0.0; np],
                semantic: vec![[0.0; 3]; np],
                silhouette: vec![0.0; np],
            };
            let mut offsets = Vec::with_capacity(np + 1);
            let mut contribs = Vec::new();
            offsets.push(0u32);
            for ly in 0..th {
                let py = (y0 + ly) as f64;
                for lx in 0..tw {
                    let px = (x0 + lx) as f64;
                    let k = ly * tw + lx;
                    let mut t = 1.0;
                    let (mut c, mut d, mut s, mut sil) = ([0.0; 3], 0.0, [0.0; 3], 0.0);
                    for (local, &g) in sorted.iter().enumerate() {
                        let p = &projected[g as usize];
                        let dx = px - p.mean[0];
                        let dy = py - p.mean[1];
                        let q = (dx * dx + dy * dy) / (p.r2d * p.r2d);
                        if q >= CUTOFF_Q {
                            continue;
                        }
                        let f = (p.opacity * kernel(q).0).min(MAX_INFLUENCE);
                        if f <= 0.0 {
                            continue;
                        }
                        contribs.push(Contrib { local: local as u32, f, t });
                        let wgt = f * t;
                        if ch.color {
                            let x = &colors[g as usize];
                            for j in 0..3 {
                                c[j] += x[j] * wgt;
                            }
                        }
                        if ch.depth {
                            d += p.cam[2] * wgt;
                        }
                        if ch.semantic {
                            let x = &sems[g as usize];
                            for j in 0..3 {
                                s[j] += x[j] * wgt;
                            }
                        }
                        if ch.silhouette {
                            sil += wgt;
                        }
                        t *= 1.0 - f;
                        if opts.preview && t < PREVIEW_MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    offsets.push(contribs.len() as u32);
                    img.color[k] = c;
                    img.depth[k] = d;
                    img.semantic[k] = s;
                    img.silhouette[k] = sil;
                }
            }
            (TileAux { x0, y0, w: tw, h: th, sorted, offsets, contribs }, img)
        })
        .collect();

    let mut color = Image::filled(w, h, [0.0; 3]);
    let mut depth = Image::filled(w, h, 0.0);
    let mut semantic = Image::filled(w, h, [0.0; 3]);
    let mut silhouette = Image::filled(w, h, 0.0);
    let mut tiles = Vec::with_capacity(results.len());
    for (aux, img) in results {
        for ly in 0..aux.h {
            for lx in 0..aux.w {
                let k = ly * aux.w + lx;
                let (x, y) = (aux.x0 + lx, aux.y0 + ly);
                color.set(x, y, img.color[k]);
                depth.set(x, y, img.depth[k]);
                semantic.set(x, y, img.semantic[k]);
                silhouette.set(x, y, img.silhouette[k]);
            }
        }
        tiles.push(aux);
    }
    Ok(RenderOutput {
        color,
        depth,
        semantic,
        silhouette,
        aux: RenderAux { pose: *pose, intr: *intr, map_len: map.len(), preview: opts.preview, tiles_x, projected, tiles },
    })
}

/// Gradient of a scalar loss with respect to each rendered pixel value.
/// `None` means the loss does not depend on that channel.
#[derive(Debug, Clone, Default)]
pub struct PixelGrads {
    pub color: Option<RgbImage>,
    pub depth: Option<GrayImage>,
    pub semantic: Option<RgbImage>,
    pub silhouette: Option<GrayImage>,
}

impl PixelGrads {
    fn check(&self, w: usize, h: usize) -> Result<(), RenderError> {
        let dims = [
            self.color.as_ref().map(|i| i.dims()),
            self.depth.as_ref().map(|i| i.dims()),
            self.semantic.as_ref().map(|i| i.dims()),
            self.silhouette.as_ref().map(|i| i.dims()),
        ];
        for (gw, gh) in dims.into_iter().flatten() {
            if (gw, gh) != (w, h) {
                return Err(RenderError::GradDims(gw, gh, w, h));
            }
        }
        Ok(())
    }
}

/// Gradient with respect to a pose, using the left tangent perturbation
/// `exp(w) R` for rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGradient {
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

/// Loss gradients for every Gaussian attribute (raw, unconstrained
/// parameters) and for the camera pose.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    pub positions: Vec<[f64; 3]>,
    pub log_radii: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Rgb3>,
    pub semantic_colors: Vec<Rgb3>,
    pub pose: PoseGradient,
}

impl GradientSet {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            log_radii: vec![0.0; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            semantic_colors: vec![[0.0; 3]; n],
            pose: PoseGradient::default(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, s: f64) {
        fn add3(a: &mut [[f64; 3]], b: &[[f64; 3]], s: f64) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..3 {
                    x[k] += s * y[k];
                }
            }
        }
        fn add1(a: &mut [f64], b: &[f64], s: f64) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        add3(&mut self.positions, &other.positions, s);
        add1(&mut self.log_radii, &other.log_radii, s);
        add1(&mut self.opacity_logits, &other.opacity_logits, s);
        add3(&mut self.colors, &other.colors, s);
        add3(&mut self.semantic_colors, &other.semantic_colors, s);
        self.pose.translation += s * other.pose.translation;
        self.pose.rotation += s * other.pose.rotation;
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.log_radii.iter().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.colors.iter().flatten().all(|v| v.is_finite())
            && self.semantic_colors.iter().flatten().all(|v| v.is_finite())
            && self.pose.translation.iter().chain(self.pose.rotation.iter()).all(|v| v.is_finite())
    }
}

/// Per-Gaussian gradients with respect to the splat quantities.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    r2d: f64,
    depth: f64,
    opacity: f64,
    color: Rgb3,
    semantic: Rgb3,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        self.r2d += o.r2d;
        self.depth += o.depth;
        self.opacity += o.opacity;
        for k in 0..3 {
            self.color[k] += o.color[k];
            self.semantic[k] += o.semantic[k];
        }
    }
}

fn splat_grads(map: &GaussianMap, out: &RenderOutput, grads: &PixelGrads) -> Result<Vec<SplatGrad>, RenderError> {
    let a = &out.aux;
    if a.preview {
        return Err(RenderError::AuxMismatch("preview renders stop early and cannot be differentiated".into()));
    }
    if a.map_len != map.len() {
        return Err(RenderError::AuxMismatch(format!("rendered {} gaussians, map has {}", a.map_len, map.len())));
    }
    grads.check(a.intr.width, a.intr.height)?;
    let colors = map.colors();
    let sems = map.semantic_colors();
    let zero3 = [0.0; 3];

    let per_tile: Vec<Vec<SplatGrad>> = a
        .tiles
        .par_iter()
        .map(|tile| {
            let mut local = vec![SplatGrad::default(); tile.sorted.len()];
            for ly in 0..tile.h {
                for lx in 0..tile.w {
                    let (x, y) = (tile.x0 + lx, tile.y0 + ly);
                    let gc = grads.color.as_ref().map_or(zero3, |g| g.get(x, y));
                    let gd = grads.depth.as_ref().map_or(0.0, |g| g.get(x, y));
                    let gs = grads.semantic.as_ref().map_or(zero3, |g| g.get(x, y));
                    let gsil = grads.silhouette.as_ref().map_or(0.0, |g| g.get(x, y));
                    if gc == zero3 && gd == 0.0 && gs == zero3 && gsil == 0.0 {
                        continue;
                    }
                    let k = ly * tile.w + lx;
                    let range = tile.offsets[k] as usize..tile.offsets[k + 1] as usize;
                    // composited value of everything behind the current contributor
                    let (mut ac, mut ad, mut asem, mut asil) = ([0.0; 3], 0.0, [0.0; 3], 0.0);
                    for c in tile.contribs[range].iter().rev() {
                        let g = tile.sorted[c.local as usize] as usize;
                        let p = &a.projected[g];
                        let xc = &colors[g];
                        let xs = &sems[g];
                        let xd = p.cam[2];
                        let wgt = c.f * c.t;
                        let mut gf = gd * (xd - ad) + gsil * (1.0 - asil);
                        for j in 0..3 {
                            gf += gc[j] * (xc[j] - ac[j]) + gs[j] * (xs[j] - asem[j]);
                        }
                        gf *= c.t;
                        let sg = &mut local[c.local as usize];
                        for j in 0..3 {
                            sg.color[j] += gc[j] * wgt;
                            sg.semantic[j] += gs[j] * wgt;
                            ac[j] = xc[j] * c.f + (1.0 - c.f) * ac[j];
                            asem[j] = xs[j] * c.f + (1.0 - c.f) * asem[j];
                        }
                        sg.depth += gd * wgt;
                        ad = xd * c.f + (1.0 - c.f) * ad;
                        asil = c.f + (1.0 - c.f) * asil;

                        let dx = x as f64 - p.mean[0];
                        let dy = y as f64 - p.mean[1];
                        let r2 = p.r2d * p.r2d;
                        let q = (dx * dx + dy * dy) / r2;
                        let (kv, dk) = kernel(q);
                        if p.opacity * kv >= MAX_INFLUENCE {
                            continue;
                        }
                        sg.opacity += gf * kv;
                        let gq = gf * p.opacity * dk;
                        sg.mean[0] += gq * (-2.0 * dx / r2);
                        sg.mean[1] += gq * (-2.0 * dy / r2);
                        sg.r2d += gq * (-2.0 * q / p.r2d);
                    }
                }
            }
            local
        })
        .collect();

    let mut total = vec![SplatGrad::default(); map.len()];
    for (tile, local) in a.tiles.iter().zip(&per_tile) {
        for (&g, sg) in tile.sorted.iter().zip(local) {
            total[g as usize].add(sg);
        }
    }
    Ok(total)
}

fn check_inputs(map: &GaussianMap, pose: &CameraPose, intr: &Intrinsics, out: &RenderOutput) -> Result<(), RenderError> {
    if out.aux.pose != *pose {
        return Err(RenderError::AuxMismatch("pose differs from the rendered pose".into()));
    }
    if out.aux.intr != *intr {
        return Err(RenderError::AuxMismatch("intrinsics differ from the rendered intrinsics".into()));
    }
    if out.aux.map_len != map.len() {
        return Err(RenderError::AuxMismatch(format!("rendered {} gaussians, map has {}", out.aux.map_len, map.len())));
    }
    Ok(())
}

/// Gradient with respect to the camera-frame point `p` of one splat.
#[inline]
fn camera_point_grad(p: &Projected, sg: &SplatGrad, intr: &Intrinsics, radius: f64) -> Vector3<f64> {
    let [px, py, d] = p.cam;
    let id = 1.0 / d;
    let id2 = id * id;
    Vector3::new(
        sg.mean[0] * intr.fx * id,
        sg.mean[1] * intr.fy * id,
        -sg.mean[0] * intr.fx * px * id2 - sg.mean[1] * intr.fy * py * id2 - sg.r2d * intr.fx * radius * id2 + sg.depth,
    )
}

fn pose_grad_from(map: &GaussianMap, out: &RenderOutput, sgs: &[SplatGrad], intr: &Intrinsics) -> (Vec<Vector3<f64>>, PoseGradient) {
    let a = &out.aux;
    let gps: Vec<Vector3<f64>> = (0..map.len())
        .into_par_iter()
        .map(|i| {
            let p = &a.projected[i];
            if !p.visible {
                return Vector3::zeros();
            }
            camera_point_grad(p, &sgs[i], intr, map.log_radii()[i].exp())
        })
        .collect();
    let mut pg = PoseGradient::default();
    let t = a.pose.translation;
    for (p, gp) in a.projected.iter().zip(&gps) {
        if !p.visible {
            continue;
        }
        // rotated (untranslated) point R mu
        let rmu = Vector3::from(p.cam) - t;
        pg.translation += gp;
        pg.rotation += rmu.cross(gp);
    }
    (gps, pg)
}

/// Full analytic backward pass. Gradients are with respect to raw
/// parameters: positions, log radii, opacity logits, colors, semantic colors.
pub fn backward(
    map: &GaussianMap,
    pose: &CameraPose,
    intr: &Intrinsics,
    out: &RenderOutput,
    grads: &PixelGrads,
) -> Result<GradientSet, RenderError> {
    check_inputs(map, pose, intr, out)?;
    let sgs = splat_grads(map, out, grads)?;
    let (gps, pose_grad) = pose_grad_from(map, out, &sgs, intr);
    let rt = pose.rotation.to_rotation_matrix().matrix().transpose();
    let n = map.len();
    let mut gs = GradientSet::zeros(n);
    gs.pose = pose_grad;
    let a = &out.aux;
    for i in 0..n {
        let p = &a.projected[i];
        if !p.visible {
            continue;
        }
        let sg = &sgs[i];
        gs.positions[i] = (rt * gps[i]).into();
        gs.log_radii[i] = sg.r2d * p.r2d;
        gs.opacity_logits[i] = sg.opacity * p.opacity * (1.0 - p.opacity);
        gs.colors[i] = sg.color;
        gs.semantic_colors[i] = sg.semantic;
    }
    Ok(gs)
}

/// Pose-only backward pass for tracking; Gaussian gradients are not formed.
pub fn backward_pose(
    map: &GaussianMap,
    pose: &CameraPose,
    intr: &Intrinsics,
    out: &RenderOutput,
    grads: &PixelGrads,
) -> Result<PoseGradient, RenderError> {
    check_inputs(map, pose, intr, out)?;
    let sgs = splat_grads(map, out, grads)?;
    Ok(pose_grad_from(map, out, &sgs, intr).1)
}
