//! Map reconstruction: densification of under-explained pixels, then joint
//! optimization of every Gaussian attribute over the current view and the
//! selected keyframes at fixed poses.

use thiserror::Error;

use crate::camera::{CameraPose, Intrinsics};
use crate::config::PipelineConfig;
use crate::dataset::Frame;
use crate::image::Image;
use crate::losses::{mapping_loss, LossBreakdown, LossError};
use crate::optim::{OptimError, OptimizerState};
use crate::rasterizer::{backward, render_channel_toggled, RenderChannels, RenderError, RenderOutput};
use crate::scene::{spawn_from_pixels, GaussianMap, SceneError, SemanticPalette};

#[derive(Debug, Error)]
pub enum MapError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensifyReason {
    #[default]
    None,
    LowSilhouette,
    NewGeometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyMask {
    pub mask: Image<bool>,
    pub reasons: Image<DensifyReason>,
}

impl DensifyMask {
    pub fn count(&self) -> usize {
        self.mask.as_slice().iter().filter(|m| **m).count()
    }

    pub fn count_reason(&self, r: DensifyReason) -> usize {
        self.reasons.as_slice().iter().filter(|x| **x == r).count()
    }
}

/// Pixels with valid depth whose silhouette is low, or whose observed depth
/// lies in front of the rendered depth by more than the relative margin.
pub fn densify_mask(out: &RenderOutput, frame: &Frame, cfg: &PipelineConfig) -> DensifyMask {
    let (w, h) = frame.dims();
    let reasons = Image::from_fn(w, h, |x, y| {
        if !frame.depth_valid(x, y) {
            return DensifyReason::None;
        }
        let gt = frame.depth.get(x, y);
        let rendered = out.depth.get(x, y);
        if out.silhouette.get(x, y) < cfg.t_sil_map {
            DensifyReason::LowSilhouette
        } else if gt < rendered && rendered - gt > cfg.depth_add_margin * gt {
            DensifyReason::NewGeometry
        } else {
            DensifyReason::None
        }
    });
    DensifyMask { mask: reasons.map(|r| *r != DensifyReason::None), reasons }
}

/// Optimizer state for the five attribute groups, kept across frames.
#[derive(Debug, Clone)]
pub struct MapOptimizer {
    state: OptimizerState,
}

const GROUPS: [&str; 5] = ["positions", "log_radii", "opacity_logits", "colors", "semantic_colors"];
const WIDTHS: [usize; 5] = [3, 1, 1, 3, 3];

impl MapOptimizer {
    pub fn new(cfg: &PipelineConfig, count: usize) -> Self {
        let lrs = [cfg.lr_pos, cfg.lr_logscale, cfg.lr_opacity_logit, cfg.lr_color, cfg.lr_semantic];
        let groups: Vec<(&str, f64, usize)> = (0..5).map(|g| (GROUPS[g], lrs[g], WIDTHS[g] * count)).collect();
        Self { state: OptimizerState::new(&groups) }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Adds zero moments for Gaussians appended to the map.
    pub fn grow_to(&mut self, count: usize) {
        for g in 0..5 {
            self.state.extend_group(g, WIDTHS[g] * count);
        }
    }

    pub fn step(&mut self, map: &mut GaussianMap, grads: &crate::rasterizer::GradientSet) -> Result<(), OptimError> {
        let p = map.params_mut();
        let mut params: [&mut [f64]; 5] = [
            p.positions.as_flattened_mut(),
            p.log_radii,
            p.opacity_logits,
            p.colors.as_flattened_mut(),
            p.semantic_colors.as_flattened_mut(),
        ];
        let g: [&[f64]; 5] = [
            grads.positions.as_flattened(),
            &grads.log_radii,
            &grads.opacity_logits,
            grads.colors.as_flattened(),
            grads.semantic_colors.as_flattened(),
        ];
        self.state.step(&mut params, &g)
    }
}

/// One supervising view for mapping.
#[derive(Debug, Clone, Copy)]
pub struct MapView<'a> {
    pub frame: &'a Frame,
    pub pose: &'a CameraPose,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapStats {
    pub gaussians_added: usize,
    pub low_silhouette_pixels: usize,
    pub new_geometry_pixels: usize,
    pub views: usize,
    pub skipped_steps: usize,
    /// Total loss per iteration, each on its own scheduled view.
    pub loss_history: Vec<f64>,
    /// Unweighted terms of the last iteration.
    pub final_depth_term: f64,
    pub final_color_term: f64,
    pub final_semantic_term: f64,
}

fn loss_channels(cfg: &PipelineConfig) -> RenderChannels {
    RenderChannels {
        color: cfg.channels.use_color,
        depth: cfg.channels.use_depth,
        semantic: cfg.channels.use_semantic,
        silhouette: false,
    }
}

/// Mapping loss and full gradient of one view.
pub fn view_gradient(
    map: &GaussianMap,
    view: &MapView,
    intr: &Intrinsics,
    cfg: &PipelineConfig,
) -> Result<(LossBreakdown, crate::rasterizer::GradientSet), MapError> {
    let out = render_channel_toggled(map, view.pose, intr, loss_channels(cfg))?;
    let loss = mapping_loss(&out, view.frame, view.uncertainty, cfg)?;
    let grads = backward(map, view.pose, intr, &out, &loss.pixel_grads)?;
    Ok((loss, grads))
}

/// Spawns Gaussians for the densify mask of the current view.
pub fn densify(
    map: &mut GaussianMap,
    current: &MapView,
    palette: &SemanticPalette,
    intr: &Intrinsics,
    cfg: &PipelineConfig,
) -> Result<DensifyMask, MapError> {
    let out = render_channel_toggled(
        map,
        current.pose,
        intr,
        RenderChannels { color: false, depth: true, semantic: false, silhouette: true },
    )?;
    let mask = densify_mask(&out, current.frame, cfg);
    let delta = spawn_from_pixels(current.frame, current.pose, intr, &mask.mask, palette)?;
    map.append(&delta);
    Ok(mask)
}

/// Densifies from the current view, then runs `iters_map` optimizer steps
/// cycling through `[current, keyframes...]`. Poses are never modified.
pub fn map_frame(
    map: &mut GaussianMap,
    optimizer: &mut MapOptimizer,
    current: MapView,
    keyframes: &[MapView],
    palette: &SemanticPalette,
    intr: &Intrinsics,
    cfg: &PipelineConfig,
) -> Result<MapStats, MapError> {
    let before = map.len();
    let mask = densify(map, &current, palette, intr, cfg)?;
    optimizer.grow_to(map.len());
    let mut views = Vec::with_capacity(1 + keyframes.len());
    views.push(current);
    views.extend_from_slice(keyframes);
    let mut stats = MapStats {
        gaussians_added: map.len() - before,
        low_silhouette_pixels: mask.count_reason(DensifyReason::LowSilhouette),
        new_geometry_pixels: mask.count_reason(DensifyReason::NewGeometry),
        views: views.len(),
        ..Default::default()
    };
    if map.is_empty() {
        return Ok(stats);
    }
    for it in 0..cfg.iters_map {
        let view = &views[it % views.len()];
        let (loss, grads) = view_gradient(map, view, intr, cfg)?;
        stats.loss_history.push(loss.total);
        stats.final_depth_term = loss.depth_term;
        stats.final_color_term = loss.color_term;
        stats.final_semantic_term = loss.semantic_term;
        match optimizer.step(map, &grads) {
            Ok(()) => {}
            Err(OptimError::NonFiniteGradient { .. }) => stats.skipped_steps += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::render;

    fn frame_with(depth: f64) -> Frame {
        Frame::new(Image::filled(1, 1, [0.0; 3]), Image::filled(1, 1, depth), Image::filled(1, 1, [0.0; 3]), 0).unwrap()
    }

    fn out_with(depth: f64, sil: f64) -> RenderOutput {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        let mut out = render(&GaussianMap::new(), &CameraPose::identity(), &k).unwrap();
        out.depth.set(0, 0, depth);
        out.silhouette.set(0, 0, sil);
        out
    }

    #[test]
    fn densify_clauses() {
        let cfg = PipelineConfig::default();
        let m = densify_mask(&out_with(2.0, 0.9), &frame_with(1.0), &cfg);
        assert_eq!(m.reasons.get(0, 0), DensifyReason::NewGeometry);
        let m = densify_mask(&out_with(0.0, 0.0), &frame_with(1.0), &cfg);
        assert_eq!(m.reasons.get(0, 0), DensifyReason::LowSilhouette);
        // both clauses: low silhouette wins
        let m = densify_mask(&out_with(2.0, 0.3), &frame_with(1.0), &cfg);
        assert_eq!(m.reasons.get(0, 0), DensifyReason::LowSilhouette);
        // within the 5% margin
        let m = densify_mask(&out_with(1.04, 0.9), &frame_with(1.0), &cfg);
        assert!(!m.mask.get(0, 0));
        let m = densify_mask(&out_with(0.0, 0.0), &frame_with(0.0), &cfg);
        assert!(!m.mask.get(0, 0));
    }
}
