//! Keyframe capture, geometric and semantic keyframe filtering, and the
//! exponential uncertainty weight.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{CameraPose, Intrinsics};
use crate::config::PipelineConfig;
use crate::dataset::{is_valid_depth, Frame};
use crate::image::LabelImage;
use crate::metrics::miou;
use crate::rasterizer::{render_channel_toggled, RenderChannels, RenderError};
use crate::scene::{GaussianMap, SemanticPalette};

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("overlap ratio needs at least one sample point")]
    EmptySamples,
    #[error("keyframe timestamp {got} is not after {last}")]
    NotIncreasing { last: usize, got: usize },
    #[error("keyframe timestamp {0} is not a multiple of the capture interval {1}")]
    OffInterval(usize, usize),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// `U(t) = exp(-tau t)`.
#[inline]
pub fn uncertainty(t: usize, tau: f64) -> f64 {
    (-tau * t as f64).exp()
}

#[derive(Debug, Clone)]
pub struct KeyframeRecord {
    pub frame: Frame,
    pub pose: CameraPose,
    pub timestamp: usize,
    pub uncertainty: f64,
    /// Palette-snapped labels of `frame.semantic`.
    pub labels: LabelImage,
}

#[derive(Debug, Clone)]
pub struct KeyframeStore {
    records: Vec<KeyframeRecord>,
    interval: usize,
    tau: f64,
}

impl KeyframeStore {
    pub fn new(interval: usize, tau: f64) -> Self {
        Self { records: Vec::new(), interval: interval.max(1), tau }
    }

    pub fn records(&self) -> &[KeyframeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_capture_frame(&self, t: usize) -> bool {
        t % self.interval == 0
    }

    pub fn capture(
        &mut self,
        frame: &Frame,
        pose: CameraPose,
        palette: &SemanticPalette,
    ) -> Result<&KeyframeRecord, KeyframeError> {
        let t = frame.timestamp;
        if !self.is_capture_frame(t) {
            return Err(KeyframeError::OffInterval(t, self.interval));
        }
        if let Some(last) = self.records.last() {
            if t <= last.timestamp {
                return Err(KeyframeError::NotIncreasing { last: last.timestamp, got: t });
            }
        }
        self.records.push(KeyframeRecord {
            frame: frame.clone(),
            pose,
            timestamp: t,
            uncertainty: uncertainty(t, self.tau),
            labels: palette.labels_of(&frame.semantic),
        });
        Ok(self.records.last().unwrap())
    }
}

/// Fraction of `samples` that land in front of the camera and inside the
/// image footprint of the keyframe.
pub fn overlap_ratio(samples: &[Vector3<f64>], kf_pose: &CameraPose, intr: &Intrinsics) -> Result<f64, KeyframeError> {
    if samples.is_empty() {
        return Err(KeyframeError::EmptySamples);
    }
    let inside = samples
        .iter()
        .filter(|s| {
            let p = kf_pose.transform_point(s);
            p.z > 0.0 && intr.contains(intr.project(&p))
        })
        .count();
    Ok(inside as f64 / samples.len() as f64)
}

/// World points behind up to `count` random pixels of the current view.
/// Each uses the normalized rendered depth where the map covers the pixel,
/// the sensor depth elsewhere, and is dropped when neither is available.
pub fn sample_surface_points(
    map: &GaussianMap,
    frame: &Frame,
    pose: &CameraPose,
    intr: &Intrinsics,
    count: usize,
    rng: &mut ChaCha8Rng,
    t_sil: f64,
) -> Result<Vec<Vector3<f64>>, KeyframeError> {
    let out = render_channel_toggled(
        map,
        pose,
        intr,
        RenderChannels { color: false, depth: true, semantic: false, silhouette: true },
    )?;
    let (w, h) = frame.dims();
    let n = w * h;
    let to_world = pose.inverse();
    let mut pts = Vec::with_capacity(count.min(n));
    for idx in sample(rng, n, count.min(n)).into_iter() {
        let (x, y) = (idx % w, idx / w);
        let sil = out.silhouette.get(x, y);
        let d = if sil > t_sil {
            out.depth.get(x, y) / sil
        } else if frame.depth_valid(x, y) {
            frame.depth.get(x, y)
        } else {
            continue;
        };
        if !is_valid_depth(d) {
            continue;
        }
        pts.push(to_world.transform_point(&intr.unproject(x as f64, y as f64, d)));
    }
    Ok(pts)
}

#[inline]
pub fn passes_geometric(eta: f64, cfg: &PipelineConfig) -> bool {
    !cfg.keyframes.use_geo || eta >= cfg.t_geo
}

/// Rejects keyframes that are semantically too similar to the current view.
/// A keyframe without a comparable label (mIoU undefined) is kept.
#[inline]
pub fn passes_semantic(miou: Option<f64>, cfg: &PipelineConfig) -> bool {
    !cfg.keyframes.use_sem || miou.is_none_or(|m| m <= cfg.t_sem)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub store_index: usize,
    pub timestamp: usize,
    pub eta: f64,
    pub miou: Option<f64>,
    pub uncertainty: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    /// Indices into the store, chronological.
    pub selected: Vec<usize>,
    pub candidates: Vec<Candidate>,
}

impl Selection {
    pub fn csv_header() -> &'static str {
        "frame,keyframe,eta,miou,uncertainty,selected"
    }

    pub fn csv_rows(&self, frame: usize) -> String {
        let mut s = String::new();
        for c in &self.candidates {
            let m = c.miou.map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{frame},{},{:.6},{m},{:.6},{}", c.timestamp, c.eta, c.uncertainty, c.selected as u8);
        }
        s
    }
}

/// Chooses the keyframes that join the current frame in mapping.
#[allow(clippy::too_many_arguments)]
pub fn select_keyframes(
    store: &KeyframeStore,
    frame: &Frame,
    pose: &CameraPose,
    map: &GaussianMap,
    palette: &SemanticPalette,
    intr: &Intrinsics,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Selection, KeyframeError> {
    if store.is_empty() {
        return Ok(Selection::default());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = sample_surface_points(map, frame, pose, intr, cfg.keyframe_samples, &mut rng, cfg.t_sil_map)?;
    let current_labels = palette.labels_of(&frame.semantic);
    let mut candidates = Vec::with_capacity(store.len());
    for (i, kf) in store.records().iter().enumerate() {
        let eta = if samples.is_empty() { 0.0 } else { overlap_ratio(&samples, &kf.pose, intr)? };
        let m = miou(&kf.labels, &current_labels).ok().flatten();
        candidates.push(Candidate {
            store_index: i,
            timestamp: kf.timestamp,
            eta,
            miou: m,
            uncertainty: kf.uncertainty,
            selected: false,
        });
    }
    let survivors: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| passes_geometric(c.eta, cfg) && passes_semantic(c.miou, cfg))
        .map(|(i, _)| i)
        .collect();
    let mut chosen = if survivors.len() > cfg.max_keyframes {
        let mut picks: Vec<usize> = sample(&mut rng, survivors.len(), cfg.max_keyframes).into_iter().map(|k| survivors[k]).collect();
        picks.sort_unstable();
        picks
    } else {
        survivors
    };
    chosen.dedup();
    for &i in &chosen {
        candidates[i].selected = true;
    }
    Ok(Selection { selected: chosen.iter().map(|&i| candidates[i].store_index).collect(), candidates })
}
