//! Frames, the on-disk sequence format, and the synthetic sequence generator.
//!
//! A sequence directory holds:
//! ```text
//! intrinsics.txt   fx, fy, cx, cy, width, height, depth_scale as `key = value`
//! color/000000.png     8-bit RGB
//! depth/000000.png     16-bit gray, meters = value / depth_scale, 0 = invalid
//! semantic/000000.png  8-bit RGB, every pixel one palette color
//! palette.txt      `id name r g b` per label, colors in [0, 1]
//! gt_poses.txt     optional, trajectory format of the camera module
//! ```
//! Frames are ordered by the numeric file stem.

pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{read_trajectory, write_trajectory, CameraError, CameraPose, Intrinsics};
use crate::image::{read_gray16, read_rgb8, write_gray16, write_rgb8, GrayImage, Image, ImageError, RgbImage};
use crate::rasterizer::RenderError;
use crate::scene::{PaletteEntry, SceneError, SemanticPalette, BACKGROUND_LABEL};

/// Raw 16-bit depth units per meter unless a sequence says otherwise.
pub const DEFAULT_DEPTH_SCALE: f64 = 5000.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sequence has no `{0}` channel directory")]
    MissingChannel(&'static str),
    #[error("sequence is missing {0}")]
    MissingFile(String),
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("channel `{channel}` has frames {got:?}, expected {expected:?}")]
    FrameMismatch { channel: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("frame {index} channel `{channel}` is {w}x{h}, expected {ew}x{eh}")]
    FrameDims { index: usize, channel: &'static str, w: usize, h: usize, ew: usize, eh: usize },
    #[error("ground-truth trajectory has {0} poses for {1} frames")]
    PoseCount(usize, usize),
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

/// One RGB-D-semantic observation. Depth is in meters; values `<= 0` or
/// non-finite mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub color: RgbImage,
    pub depth: GrayImage,
    pub semantic: RgbImage,
    pub timestamp: usize,
}

impl Frame {
    pub fn new(color: RgbImage, depth: GrayImage, semantic: RgbImage, timestamp: usize) -> Result<Self, DatasetError> {
        color.check_dims(&depth)?;
        color.check_dims(&semantic)?;
        Ok(Self { color, depth, semantic, timestamp })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }

    #[inline]
    pub fn depth_valid(&self, x: usize, y: usize) -> bool {
        is_valid_depth(self.depth.get(x, y))
    }
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
    pub frames: Vec<Frame>,
    pub palette: SemanticPalette,
    pub gt_poses: Option<Vec<CameraPose>>,
    /// False when the directory had no semantic channel.
    pub has_semantic: bool,
}

pub fn background_palette() -> SemanticPalette {
    SemanticPalette::new(vec![PaletteEntry { id: BACKGROUND_LABEL, name: "background".into(), color: [0.0; 3] }])
        .expect("single background entry is a valid palette")
}

pub fn intrinsics_text(k: &Intrinsics, depth_scale: f64) -> String {
    let mut s = String::new();
    for (key, v) in [("fx", k.fx), ("fy", k.fy), ("cx", k.cx), ("cy", k.cy)] {
        let _ = writeln!(s, "{key} = {v}");
    }
    let _ = writeln!(s, "width = {}", k.width);
    let _ = writeln!(s, "height = {}", k.height);
    let _ = writeln!(s, "depth_scale = {depth_scale}");
    s
}

/// Parses `intrinsics.txt`; returns the intrinsics and the depth scale.
pub fn parse_intrinsics(text: &str, path: &str) -> Result<(Intrinsics, f64), DatasetError> {
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DatasetError::Format {
            path: path.into(),
            msg: format!("line {}: expected `key = value`", i + 1),
        })?;
        let v: f64 = v.trim().parse().map_err(|_| DatasetError::Format {
            path: path.into(),
            msg: format!("line {}: `{}` is not a number", i + 1, v.trim()),
        })?;
        kv.insert(k.trim().to_string(), v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| DatasetError::Format { path: path.into(), msg: format!("missing `{k}`") });
    let dim = |k: &str| -> Result<usize, DatasetError> {
        let v = get(k)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(DatasetError::Format { path: path.into(), msg: format!("`{k}` must be a positive integer") });
        }
        Ok(v as usize)
    };
    let k = Intrinsics::new(get("fx")?, get("fy")?, get("cx")?, get("cy")?, dim("width")?, dim("height")?)?;
    let scale = kv.get("depth_scale").copied().unwrap_or(DEFAULT_DEPTH_SCALE);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(DatasetError::Format { path: path.into(), msg: "`depth_scale` must be positive".into() });
    }
    Ok((k, scale))
}

/// Numbered PNG files of one channel directory, by index.
fn list_channel(dir: &Path) -> Result<BTreeMap<usize, PathBuf>, DatasetError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(idx) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        out.insert(idx, path);
    }
    Ok(out)
}

/// Loads a sequence directory. With `require_semantic`, a missing semantic
/// channel is an error; otherwise it is replaced by all-background images.
pub fn load_sequence(dir: &Path, require_semantic: bool) -> Result<Sequence, DatasetError> {
    let kpath = dir.join("intrinsics.txt");
    if !kpath.is_file() {
        return Err(DatasetError::MissingFile(kpath.display().to_string()));
    }
    let text = std::fs::read_to_string(&kpath).map_err(io_err(&kpath))?;
    let (intr, depth_scale) = parse_intrinsics(&text, &kpath.display().to_string())?;

    let channel = |name: &'static str| -> Result<Option<BTreeMap<usize, PathBuf>>, DatasetError> {
        let d = dir.join(name);
        if d.is_dir() {
            Ok(Some(list_channel(&d)?))
        } else {
            Ok(None)
        }
    };
    let color = channel("color")?.ok_or(DatasetError::MissingChannel("color"))?;
    let depth = channel("depth")?.ok_or(DatasetError::MissingChannel("depth"))?;
    let semantic = channel("semantic")?;
    if semantic.is_none() && require_semantic {
        return Err(DatasetError::MissingChannel("semantic"));
    }
    let indices: Vec<usize> = color.keys().copied().collect();
    let check = |name: &'static str, m: &BTreeMap<usize, PathBuf>| -> Result<(), DatasetError> {
        let got: Vec<usize> = m.keys().copied().collect();
        if got != indices {
            return Err(DatasetError::FrameMismatch { channel: name, expected: indices.clone(), got });
        }
        Ok(())
    };
    check("depth", &depth)?;
    if let Some(s) = &semantic {
        check("semantic", s)?;
    }

    let palette = if semantic.is_some() {
        let p = dir.join("palette.txt");
        if !p.is_file() {
            return Err(DatasetError::MissingFile(p.display().to_string()));
        }
        SemanticPalette::parse(&std::fs::read_to_string(&p).map_err(io_err(&p))?)?
    } else {
        background_palette()
    };

    let (w, h) = (intr.width, intr.height);
    let frames: Vec<Frame> = indices
        .par_iter()
        .enumerate()
        .map(|(t, idx)| {
            let dims = |channel: &'static str, (iw, ih): (usize, usize)| {
                if (iw, ih) != (w, h) {
                    Err(DatasetError::FrameDims { index: *idx, channel, w: iw, h: ih, ew: w, eh: h })
                } else {
                    Ok(())
                }
            };
            let c = read_rgb8(&color[idx])?;
            dims("color", c.dims())?;
            let d = read_gray16(&depth[idx], depth_scale)?;
            dims("depth", d.dims())?;
            let s = match &semantic {
                Some(s) => {
                    let s = read_rgb8(&s[idx])?;
                    dims("semantic", s.dims())?;
                    s
                }
                None => Image::filled(w, h, [0.0; 3]),
            };
            Frame::new(c, d, s, t)
        })
        .collect::<Result<_, _>>()?;

    let gpath = dir.join("gt_poses.txt");
    let gt_poses = if gpath.is_file() {
        let poses: Vec<CameraPose> = read_trajectory(&gpath)?.into_iter().map(|(_, p)| p).collect();
        if poses.len() != frames.len() {
            return Err(DatasetError::PoseCount(poses.len(), frames.len()));
        }
        Some(poses)
    } else {
        None
    };
    Ok(Sequence { intrinsics: intr, depth_scale, frames, palette, gt_poses, has_semantic: semantic.is_some() })
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Writes a sequence in the directory format, creating directories as needed.
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<(), DatasetError> {
    for sub in ["color", "depth", "semantic"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let kpath = dir.join("intrinsics.txt");
    std::fs::write(&kpath, intrinsics_text(&seq.intrinsics, seq.depth_scale)).map_err(io_err(&kpath))?;
    let ppath = dir.join("palette.txt");
    std::fs::write(&ppath, seq.palette.to_text()).map_err(io_err(&ppath))?;
    seq.frames.par_iter().enumerate().try_for_each(|(i, f)| -> Result<(), DatasetError> {
        let name = frame_file_name(i);
        write_rgb8(&f.color, &dir.join("color").join(&name))?;
        write_gray16(&f.depth, seq.depth_scale, &dir.join("depth").join(&name))?;
        write_rgb8(&f.semantic, &dir.join("semantic").join(&name))?;
        Ok(())
    })?;
    if let Some(poses) = &seq.gt_poses {
        let entries: Vec<_> = poses.iter().enumerate().map(|(i, p)| (i as f64, *p)).collect();
        write_trajectory(&dir.join("gt_poses.txt"), &entries)?;
    }
    Ok(())
}
