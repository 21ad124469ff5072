//! Per-frame camera pose estimation against a frozen map.

use thiserror::Error;

use crate::camera::{apply_pose_step, predict_pose, CameraError, CameraPose, Intrinsics};
use crate::config::PipelineConfig;
use crate::dataset::Frame;
use crate::losses::{tracking_loss, LossBreakdown, LossError};
use crate::optim::OptimizerState;
use crate::rasterizer::{backward_pose, render_channel_toggled, RenderChannels, RenderError, RenderOutput};
use crate::scene::GaussianMap;

/// Frames whose initial tracking mask covers less than this fraction of the
/// image are treated as tracking failures.
pub const MIN_MASK_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("tracking mask covers {fraction:.4} of the image at the initial pose")]
    InsufficientMask { fraction: f64, predicted: CameraPose },
    #[error("cannot track against an empty map")]
    EmptyMap,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub pose: CameraPose,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations_used: usize,
    pub masked_pixel_fraction: f64,
    pub converged: bool,
    /// Loss of every evaluated iterate, in order.
    pub loss_history: Vec<f64>,
}

fn channels(cfg: &PipelineConfig) -> RenderChannels {
    RenderChannels {
        color: cfg.channels.use_color,
        depth: cfg.channels.use_depth,
        semantic: cfg.channels.use_semantic,
        silhouette: true,
    }
}

fn evaluate(
    map: &GaussianMap,
    frame: &Frame,
    pose: &CameraPose,
    intr: &Intrinsics,
    cfg: &PipelineConfig,
) -> Result<(RenderOutput, Option<LossBreakdown>), TrackError> {
    let out = render_channel_toggled(map, pose, intr, channels(cfg))?;
    match tracking_loss(&out, frame, cfg) {
        Ok(l) => Ok((out, Some(l))),
        Err(LossError::EmptyMask) => Ok((out, None)),
        Err(e) => Err(e.into()),
    }
}

/// Initial pose for frame t from the two previous estimates.
pub fn initial_pose(prev: &CameraPose, prev2: Option<&CameraPose>) -> CameraPose {
    match prev2 {
        Some(p2) => predict_pose(prev, p2),
        None => *prev,
    }
}

/// Refines the pose of `frame` starting from `init` for `iters_track` steps
/// and returns the lowest-loss iterate.
pub fn track_from(
    map: &GaussianMap,
    frame: &Frame,
    init: CameraPose,
    cfg: &PipelineConfig,
    intr: &Intrinsics,
) -> Result<TrackResult, TrackError> {
    if map.is_empty() {
        return Err(TrackError::EmptyMap);
    }
    let pixels = intr.pixel_count() as f64;
    let (mut out, loss) = evaluate(map, frame, &init, intr, cfg)?;
    let loss = match loss {
        Some(l) if l.masked_pixel_count as f64 >= MIN_MASK_FRACTION * pixels => l,
        other => {
            let fraction = other.map_or(0.0, |l| l.masked_pixel_count as f64 / pixels);
            return Err(TrackError::InsufficientMask { fraction, predicted: init });
        }
    };
    let initial_loss = loss.total;
    let mut best = (init, loss.total, loss.masked_pixel_count);
    let mut history = vec![loss.total];
    let mut current = loss;
    let mut pose = init;
    let mut adam = OptimizerState::new(&[
        ("cam_translation", cfg.lr_cam_translation, 3),
        ("cam_rotation", cfg.lr_cam_rotation, 3),
    ]);
    let mut used = 0;
    for _ in 0..cfg.iters_track {
        let g = backward_pose(map, &pose, intr, &out, &current.pixel_grads)?;
        pose = match apply_pose_step(
            &pose,
            &g.translation,
            &g.rotation,
            cfg.lr_cam_translation,
            cfg.lr_cam_rotation,
            &mut adam,
        ) {
            Ok(p) => p,
            Err(CameraError::NonFiniteGradient) => break,
            Err(e) => return Err(e.into()),
        };
        used += 1;
        let (o, l) = evaluate(map, frame, &pose, intr, cfg)?;
        let Some(l) = l else { break };
        history.push(l.total);
        if l.total < best.1 {
            best = (pose, l.total, l.masked_pixel_count);
        }
        out = o;
        current = l;
    }
    Ok(TrackResult {
        pose: best.0,
        initial_loss,
        final_loss: best.1,
        iterations_used: used,
        masked_pixel_fraction: best.2 as f64 / pixels,
        converged: best.1 < initial_loss,
        loss_history: history,
    })
}

/// Constant-velocity initialization followed by [`track_from`].
pub fn track_frame(
    map: &GaussianMap,
    frame: &Frame,
    prev: &CameraPose,
    prev2: Option<&CameraPose>,
    cfg: &PipelineConfig,
    intr: &Intrinsics,
) -> Result<TrackResult, TrackError> {
    track_from(map, frame, initial_pose(prev, prev2), cfg, intr)
}
