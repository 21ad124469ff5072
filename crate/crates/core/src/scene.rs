//! The Gaussian map: isotropic Gaussians stored as a structure of arrays,
//! plus the semantic label palette.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{CameraPose, Intrinsics};
use crate::dataset::Frame;
use crate::image::{Image, Rgb3};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("gaussian index {index} out of range (count {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("unknown label id {0}")]
    UnknownLabel(u32),
    #[error("unknown label name `{0}`")]
    UnknownLabelName(String),
    #[error("invalid palette: {0}")]
    InvalidPalette(String),
    #[error("mask is {0}x{1} but frame is {2}x{3}")]
    MaskDims(usize, usize, usize, usize),
    #[error("masked pixel ({x}, {y}) has invalid depth {depth}")]
    InvalidDepth { x: usize, y: usize, depth: f64 },
    #[error("gaussian {index} has a non-finite attribute")]
    NonFinite { index: usize },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("checkpoint io {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Attributes of one Gaussian in unconstrained form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub log_radius: f64,
    pub opacity_logit: f64,
    pub color: Rgb3,
    pub semantic_color: Rgb3,
}

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn radius(&self) -> f64 {
        self.log_radius.exp()
    }
}

/// Structure-of-arrays Gaussian storage. All arrays always share one length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianMap {
    positions: Vec<[f64; 3]>,
    log_radii: Vec<f64>,
    opacity_logits: Vec<f64>,
    colors: Vec<Rgb3>,
    semantic_colors: Vec<Rgb3>,
}

/// Mutable views of the five optimizable attribute groups.
pub struct MapParamsMut<'a> {
    pub positions: &'a mut [[f64; 3]],
    pub log_radii: &'a mut [f64],
    pub opacity_logits: &'a mut [f64],
    pub colors: &'a mut [Rgb3],
    pub semantic_colors: &'a mut [Rgb3],
}

impl GaussianMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            log_radii: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            semantic_colors: Vec::with_capacity(n),
        }
    }

    pub fn from_gaussians(gs: impl IntoIterator<Item = Gaussian>) -> Self {
        let mut m = Self::new();
        for g in gs {
            m.push(g);
        }
        m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.log_radii.push(g.log_radius);
        self.opacity_logits.push(g.opacity_logit);
        self.colors.push(g.color);
        self.semantic_colors.push(g.semantic_color);
    }

    pub fn append(&mut self, other: &GaussianMap) {
        self.positions.extend_from_slice(&other.positions);
        self.log_radii.extend_from_slice(&other.log_radii);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.colors.extend_from_slice(&other.colors);
        self.semantic_colors.extend_from_slice(&other.semantic_colors);
    }

    /// Keeps Gaussians whose flag is true, preserving relative order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        }
        filter(&mut self.positions, keep);
        filter(&mut self.log_radii, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.colors, keep);
        filter(&mut self.semantic_colors, keep);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            log_radius: self.log_radii[i],
            opacity_logit: self.opacity_logits[i],
            color: self.colors[i],
            semantic_color: self.semantic_colors[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.positions[i])
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn log_radii(&self) -> &[f64] {
        &self.log_radii
    }

    pub fn opacity_logits(&self) -> &[f64] {
        &self.opacity_logits
    }

    pub fn colors(&self) -> &[Rgb3] {
        &self.colors
    }

    pub fn semantic_colors(&self) -> &[Rgb3] {
        &self.semantic_colors
    }

    pub fn positions_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.positions
    }

    pub fn params_mut(&mut self) -> MapParamsMut<'_> {
        MapParamsMut {
            positions: &mut self.positions,
            log_radii: &mut self.log_radii,
            opacity_logits: &mut self.opacity_logits,
            colors: &mut self.colors,
            semantic_colors: &mut self.semantic_colors,
        }
    }

    pub fn check_finite(&self) -> Result<(), SceneError> {
        for i in 0..self.len() {
            let ok = self.positions[i].iter().all(|v| v.is_finite())
                && self.log_radii[i].is_finite()
                && self.opacity_logits[i].is_finite()
                && self.colors[i].iter().all(|v| v.is_finite())
                && self.semantic_colors[i].iter().all(|v| v.is_finite());
            if !ok {
                return Err(SceneError::NonFinite { index: i });
            }
        }
        Ok(())
    }

    /// Mean position of the given Gaussians.
    pub fn centroid(&self, indices: &[usize]) -> Option<Vector3<f64>> {
        if indices.is_empty() {
            return None;
        }
        let sum = indices.iter().fold(Vector3::zeros(), |acc, &i| acc + self.position(i));
        Some(sum / indices.len() as f64)
    }
}

/// 3D influence `sigma * exp(-|x - mu|^2 / (2 r^2))` of Gaussian `index` at `x`.
pub fn influence_3d(map: &GaussianMap, index: usize, x: &Vector3<f64>) -> Result<f64, SceneError> {
    if index >= map.len() {
        return Err(SceneError::IndexOutOfRange { index, count: map.len() });
    }
    let g = map.get(index);
    let r = g.radius();
    let d2 = (x - Vector3::from(g.position)).norm_squared();
    Ok(g.opacity() * (-d2 / (2.0 * r * r)).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaletteEntry {
    pub id: u32,
    pub name: String,
    pub color: Rgb3,
}

/// Ordered label palette; entry 0 is the background label with id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPalette {
    entries: Vec<PaletteEntry>,
}

pub const BACKGROUND_LABEL: u32 = 0;

impl SemanticPalette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self, SceneError> {
        let bad = |m: String| Err(SceneError::InvalidPalette(m));
        match entries.first() {
            Some(e) if e.id == BACKGROUND_LABEL => {}
            _ => return bad("first entry must be the background label with id 0".into()),
        }
        for (i, a) in entries.iter().enumerate() {
            if a.name.is_empty() || a.name.chars().any(char::is_whitespace) {
                return bad(format!("label {} has an empty or whitespace-containing name", a.id));
            }
            if a.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad(format!("label {} color outside [0, 1]", a.id));
            }
            for b in &entries[i + 1..] {
                if a.id == b.id {
                    return bad(format!("duplicate label id {}", a.id));
                }
                if a.color == b.color {
                    return bad(format!("labels {} and {} share a color", a.id, b.id));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    pub fn entry(&self, id: u32) -> Option<&PaletteEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn color_of(&self, id: u32) -> Option<Rgb3> {
        self.entry(id).map(|e| e.color)
    }

    pub fn id_by_name(&self, name: &str) -> Option<u32> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    /// Index into `entries()` of the color nearest to `c`; ties go to the
    /// earlier entry.
    #[inline]
    pub fn nearest_index(&self, c: &Rgb3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let d = (0..3).map(|k| (e.color[k] - c[k]).powi(2)).sum::<f64>();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    #[inline]
    pub fn nearest(&self, c: &Rgb3) -> &PaletteEntry {
        &self.entries[self.nearest_index(c)]
    }

    /// Snaps every pixel of a semantic color image to its nearest label id.
    pub fn labels_of(&self, semantic: &Image<Rgb3>) -> Image<u32> {
        semantic.map(|c| self.nearest(c).id)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id name r g b\n");
        for e in &self.entries {
            s.push_str(&format!("{} {} {} {} {}\n", e.id, e.name, e.color[0], e.color[1], e.color[2]));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let err = || SceneError::InvalidPalette(format!("line {}: expected `id name r g b`", i + 1));
            if parts.len() != 5 {
                return Err(err());
            }
            let id = parts[0].parse::<u32>().map_err(|_| err())?;
            let mut color = [0.0; 3];
            for k in 0..3 {
                color[k] = parts[2 + k].parse::<f64>().map_err(|_| err())?;
            }
            entries.push(PaletteEntry { id, name: parts[1].to_string(), color });
        }
        Self::new(entries)
    }
}

/// One new Gaussian per masked pixel, placed at the back-projected pixel
/// center. Radius `d / fx` gives a one-pixel footprint at that depth; opacity
/// starts at 0.5; the semantic color is snapped to the palette.
pub fn spawn_from_pixels(
    frame: &Frame,
    pose: &CameraPose,
    intr: &Intrinsics,
    mask: &Image<bool>,
    palette: &SemanticPalette,
) -> Result<GaussianMap, SceneError> {
    let (w, h) = frame.dims();
    if mask.dims() != (w, h) {
        return Err(SceneError::MaskDims(mask.width(), mask.height(), w, h));
    }
    let cam_to_world = pose.inverse();
    let count = mask.as_slice().iter().filter(|m| **m).count();
    let mut out = GaussianMap::with_capacity(count);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let d = frame.depth.get(x, y);
            if !(d.is_finite() && d > 0.0) {
                return Err(SceneError::InvalidDepth { x, y, depth: d });
            }
            let world = cam_to_world.transform_point(&intr.unproject(x as f64, y as f64, d));
            out.push(Gaussian {
                position: world.into(),
                log_radius: (d / intr.fx).ln(),
                opacity_logit: 0.0,
                color: frame.color.get(x, y),
                semantic_color: palette.nearest(&frame.semantic.get(x, y)).color,
            });
        }
    }
    Ok(out)
}

/// Indices of Gaussians whose semantic color snaps to one of `labels`.
pub fn select_by_labels(
    map: &GaussianMap,
    palette: &SemanticPalette,
    labels: &BTreeSet<u32>,
) -> Result<Vec<usize>, SceneError> {
    for &l in labels {
        if !palette.contains(l) {
            return Err(SceneError::UnknownLabel(l));
        }
    }
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    Ok((0..map.len())
        .filter(|&i| labels.contains(&palette.nearest(&map.semantic_colors[i]).id))
        .collect())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SSGM";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a map and its palette.
///
/// Little-endian layout:
/// ```text
/// magic "SSGM" | version u32 | count u64 | palette_len u32
/// palette_len x { id u32 | name_len u32 | name utf8 | r f64 | g f64 | b f64 }
/// positions     count x 3 f64
/// log_radii     count f64
/// opacity_logit count f64
/// colors        count x 3 f64
/// semantic      count x 3 f64
/// ```
pub fn checkpoint_bytes(map: &GaussianMap, palette: &SemanticPalette) -> Vec<u8> {
    let mut b = Vec::with_capacity(24 + map.len() * 11 * 8);
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&(map.len() as u64).to_le_bytes());
    b.extend_from_slice(&(palette.len() as u32).to_le_bytes());
    for e in palette.entries() {
        b.extend_from_slice(&e.id.to_le_bytes());
        b.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        b.extend_from_slice(e.name.as_bytes());
        for c in e.color {
            b.extend_from_slice(&c.to_le_bytes());
        }
    }
    let mut put = |v: f64| b.extend_from_slice(&v.to_le_bytes());
    map.positions.iter().flatten().for_each(|&v| put(v));
    map.log_radii.iter().for_each(|&v| put(v));
    map.opacity_logits.iter().for_each(|&v| put(v));
    map.colors.iter().flatten().for_each(|&v| put(v));
    map.semantic_colors.iter().flatten().for_each(|&v| put(v));
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SceneError> {
        if self.pos + n > self.buf.len() {
            return Err(SceneError::Checkpoint { path: self.path.into(), msg: "truncated".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, SceneError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SceneError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, SceneError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec3s(&mut self, n: usize) -> Result<Vec<[f64; 3]>, SceneError> {
        (0..n).map(|_| Ok([self.f64()?, self.f64()?, self.f64()?])).collect()
    }
    fn scalars(&mut self, n: usize) -> Result<Vec<f64>, SceneError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn parse_checkpoint(bytes: &[u8], path: &str) -> Result<(GaussianMap, SemanticPalette), SceneError> {
    let err = |msg: &str| SceneError::Checkpoint { path: path.into(), msg: msg.into() };
    let mut c = Cursor { buf: bytes, pos: 0, path };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(err("bad magic"));
    }
    if c.u32()? != CHECKPOINT_VERSION {
        return Err(err("unsupported version"));
    }
    let count = c.u64()? as usize;
    let npal = c.u32()? as usize;
    if count.saturating_mul(88) > bytes.len() {
        return Err(err("count exceeds file size"));
    }
    let mut entries = Vec::with_capacity(npal.min(1024));
    for _ in 0..npal {
        let id = c.u32()?;
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| err("label name is not utf-8"))?.to_string();
        let color = [c.f64()?, c.f64()?, c.f64()?];
        entries.push(PaletteEntry { id, name, color });
    }
    let palette = SemanticPalette::new(entries)?;
    let map = GaussianMap {
        positions: c.vec3s(count)?,
        log_radii: c.scalars(count)?,
        opacity_logits: c.scalars(count)?,
        colors: c.vec3s(count)?,
        semantic_colors: c.vec3s(count)?,
    };
    if c.pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok((map, palette))
}

pub fn save_checkpoint(path: &Path, map: &GaussianMap, palette: &SemanticPalette) -> Result<(), SceneError> {
    let io = |source| SceneError::Io { path: path.display().to_string(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&checkpoint_bytes(map, palette)).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(GaussianMap, SemanticPalette), SceneError> {
    let io = |source| SceneError::Io { path: path.display().to_string(), source };
    let mut buf = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut buf).map_err(io)?;
    parse_checkpoint(&buf, &path.display().to_string())
}
