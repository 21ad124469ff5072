//! The SLAM loop: strict alternation of tracking and mapping per frame, with
//! keyframe capture and selection in between.

use std::time::Instant;

use thiserror::Error;

use crate::camera::{CameraPose, Intrinsics};
use crate::config::PipelineConfig;
use crate::dataset::Frame;
use crate::keyframes::{select_keyframes, uncertainty, KeyframeError, KeyframeStore, Selection};
use crate::mapper::{map_frame, MapError, MapOptimizer, MapStats, MapView};
use crate::metrics::{ate, depth_l1, miou_semantic, psnr, ssim, EvalReport, FrameMetrics, MetricError};
use crate::rasterizer::{render, RenderError};
use crate::scene::{GaussianMap, SceneError, SemanticPalette};
use crate::tracker::{initial_pose, track_frame, TrackError, TrackResult};

#[derive(Debug, Error)]
pub enum StageError {
    #[error("tracking: {0}")]
    Track(#[from] TrackError),
    #[error("mapping: {0}")]
    Map(#[from] MapError),
    #[error("keyframes: {0}")]
    Keyframe(#[from] KeyframeError),
    #[error("map became non-finite: {0}")]
    NonFinite(#[from] SceneError),
    #[error("frame dims {got:?} do not match intrinsics {expected:?}")]
    FrameDims { got: (usize, usize), expected: (usize, usize) },
    #[error("expected frame {expected}, got timestamp {got}")]
    OutOfOrder { expected: usize, got: usize },
}

#[derive(Debug, Error)]
#[error("frame {frame}: {source}")]
pub struct PipelineError {
    pub frame: usize,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    /// True for failures caused by numerics rather than input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self.source, StageError::NonFinite(_))
    }
}

/// Derives an independent seed for a named random stream.
pub fn sub_seed(seed: u64, stream: &str, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let name = stream.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    mix(mix(seed ^ name) ^ index)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tracking {
    /// Frame 0, fixed at the identity.
    Anchor,
    /// Ground-truth pose supplied, tracker bypassed.
    Injected,
    Tracked(TrackResult),
    /// Mask too small; the constant-velocity prediction was kept.
    Failed { mask_fraction: f64 },
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame: usize,
    pub pose: CameraPose,
    pub tracking: Tracking,
    pub selection: Selection,
    pub mapping: MapStats,
    pub keyframe_captured: bool,
    pub track_ms: f64,
    pub map_ms: f64,
}

/// Incremental SLAM state. Feed frames in order with [`Slam::process`].
pub struct Slam {
    cfg: PipelineConfig,
    intr: Intrinsics,
    palette: SemanticPalette,
    seed: u64,
    map: GaussianMap,
    optimizer: MapOptimizer,
    store: KeyframeStore,
    poses: Vec<CameraPose>,
    tau: f64,
}

impl Slam {
    /// `frame_count` only sets the default uncertainty decay.
    pub fn new(cfg: PipelineConfig, intr: Intrinsics, palette: SemanticPalette, frame_count: usize, seed: u64) -> Self {
        let tau = if cfg.keyframes.use_uncertainty { cfg.resolved_tau(frame_count) } else { 0.0 };
        Self {
            optimizer: MapOptimizer::new(&cfg, 0),
            store: KeyframeStore::new(cfg.keyframe_interval, tau),
            cfg,
            intr,
            palette,
            seed,
            map: GaussianMap::new(),
            poses: Vec::new(),
            tau,
        }
    }

    pub fn map(&self) -> &GaussianMap {
        &self.map
    }

    pub fn palette(&self) -> &SemanticPalette {
        &self.palette
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn keyframes(&self) -> &KeyframeStore {
        &self.store
    }

    pub fn into_map(self) -> GaussianMap {
        self.map
    }

    /// Tracks (or takes `gt_pose`), selects keyframes, maps, and captures a
    /// keyframe when due. Frames must arrive with timestamps 0, 1, 2, ...
    pub fn process(&mut self, frame: &Frame, gt_pose: Option<CameraPose>) -> Result<FrameRecord, PipelineError> {
        let t = self.poses.len();
        let fail = |source: StageError| PipelineError { frame: t, source };
        if frame.timestamp != t {
            return Err(fail(StageError::OutOfOrder { expected: t, got: frame.timestamp }));
        }
        let expected = (self.intr.width, self.intr.height);
        if frame.dims() != expected {
            return Err(fail(StageError::FrameDims { got: frame.dims(), expected }));
        }

        let started = Instant::now();
        let (pose, tracking) = if t == 0 {
            (CameraPose::identity(), Tracking::Anchor)
        } else if let Some(p) = gt_pose {
            (p, Tracking::Injected)
        } else {
            let prev = &self.poses[t - 1];
            let prev2 = t.checked_sub(2).map(|i| &self.poses[i]);
            match track_frame(&self.map, frame, prev, prev2, &self.cfg, &self.intr) {
                Ok(r) => (r.pose, Tracking::Tracked(r)),
                Err(TrackError::InsufficientMask { fraction, predicted }) => {
                    (predicted, Tracking::Failed { mask_fraction: fraction })
                }
                Err(TrackError::EmptyMap) => (initial_pose(prev, prev2), Tracking::Failed { mask_fraction: 0.0 }),
                Err(e) => return Err(fail(e.into())),
            }
        };
        let track_ms = started.elapsed().as_secs_f64() * 1e3;

        let started = Instant::now();
        let selection = select_keyframes(
            &self.store,
            frame,
            &pose,
            &self.map,
            &self.palette,
            &self.intr,
            &self.cfg,
            sub_seed(self.seed, "keyframes", t as u64),
        )
        .map_err(|e| fail(e.into()))?;
        let records = self.store.records();
        let views: Vec<MapView> = selection
            .selected
            .iter()
            .map(|&i| MapView { frame: &records[i].frame, pose: &records[i].pose, uncertainty: records[i].uncertainty })
            .collect();
        let current = MapView { frame, pose: &pose, uncertainty: uncertainty(t, self.tau) };
        let mapping = if t == 0 {
            let first = PipelineConfig { iters_map: self.cfg.iters_map_first, ..self.cfg.clone() };
            map_frame(&mut self.map, &mut self.optimizer, current, &views, &self.palette, &self.intr, &first)
        } else {
            map_frame(&mut self.map, &mut self.optimizer, current, &views, &self.palette, &self.intr, &self.cfg)
        }
        .map_err(|e| fail(e.into()))?;
        self.map.check_finite().map_err(|e| fail(e.into()))?;
        let keyframe_captured = self.store.is_capture_frame(t);
        if keyframe_captured {
            self.store.capture(frame, pose, &self.palette).map_err(|e| fail(e.into()))?;
        }
        let map_ms = started.elapsed().as_secs_f64() * 1e3;

        self.poses.push(pose);
        Ok(FrameRecord { frame: t, pose, tracking, selection, mapping, keyframe_captured, track_ms, map_ms })
    }
}

/// Re-expresses a ground-truth trajectory relative to its first pose, the
/// frame the pipeline anchors at the identity.
pub fn anchor_trajectory(gt: &[CameraPose]) -> Vec<CameraPose> {
    let Some(first) = gt.first() else { return Vec::new() };
    let inv = first.inverse();
    let mut out: Vec<CameraPose> = gt.iter().map(|p| p.compose(&inv)).collect();
    out[0] = CameraPose::identity();
    out
}

/// Indices evaluated at cadence `every`: 0, every, 2 every, ... and the last frame.
pub fn eval_indices(count: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut idx: Vec<usize> = (0..count).step_by(every).collect();
    if count > 0 && idx.last() != Some(&(count - 1)) {
        idx.push(count - 1);
    }
    idx
}

/// Renders `map` at `poses[i]` for each evaluated frame and compares against
/// the frame's observations. ATE is computed without alignment when `gt` is given.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    map: &GaussianMap,
    palette: &SemanticPalette,
    frames: &[Frame],
    poses: &[CameraPose],
    gt: Option<&[CameraPose]>,
    intr: &Intrinsics,
    semantic_enabled: bool,
    every: usize,
) -> Result<EvalReport, EvalError> {
    if frames.len() != poses.len() {
        return Err(EvalError::Metric(MetricError::LengthMismatch(poses.len(), frames.len())));
    }
    let mut report = EvalReport { semantic_enabled, ..Default::default() };
    for t in eval_indices(frames.len(), every) {
        let out = render(map, &poses[t], intr)?;
        let f = &frames[t];
        let depth_l1_cm = match depth_l1(&out.depth, &f.depth) {
            Ok(v) => Some(v),
            Err(MetricError::NoValidDepth) => None,
            Err(e) => return Err(e.into()),
        };
        let miou = if semantic_enabled { miou_semantic(&out.semantic, &f.semantic, palette)? } else { None };
        report.frames.push(FrameMetrics { frame: t, psnr: psnr(&out.color, &f.color)?, ssim: ssim(&out.color, &f.color)?, depth_l1_cm, miou });
    }
    if let Some(gt) = gt {
        report.ate = Some(ate(poses, gt, false)?);
    }
    Ok(report)
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
