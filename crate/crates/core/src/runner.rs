//! File-level drivers behind the command-line tool: a full SLAM run with its
//! artifacts, rendering a checkpoint along a trajectory, and evaluating a run
//! directory against a sequence.
//!
//! A run directory holds:
//! ```text
//! trajectory.txt        estimated poses, camera trajectory format
//! map.ssgm              final map checkpoint
//! checkpoints/          map_000010.ssgm ... when checkpoint_every > 0
//! loss_log.csv          per-frame tracking and mapping losses
//! mapping_stats.csv     densification counts per frame
//! keyframes.csv         keyframe candidates and selections per frame
//! eval.csv, summary.txt evaluation at the configured cadence
//! manifest.json         config snapshot, seed, input, timings, version
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{read_trajectory, write_trajectory, CameraError, CameraPose, Intrinsics};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{frame_file_name, intrinsics_text, load_sequence, DatasetError, Frame, Sequence};
use crate::image::{quantize_u8, write_gray16, write_gray8, write_rgb8, Image, ImageError};
use crate::keyframes::Selection;
use crate::metrics::{EvalReport, MetricError};
use crate::pipeline::{anchor_trajectory, evaluate, EvalError, PipelineError, Slam, Tracking};
use crate::rasterizer::{render, RenderError, RenderOutput};
use crate::scene::{load_checkpoint, save_checkpoint, GaussianMap, SceneError, SemanticPalette};

/// Depth units per meter in rendered exports (millimeters).
pub const EXPORT_DEPTH_SCALE: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ground-truth pose injection needs gt_poses.txt in the input sequence")]
    MissingGtPoses,
    #[error("trajectory has {0} poses but the sequence has {1} frames")]
    PoseCount(usize, usize),
    #[error("invalid manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
}

impl RunError {
    /// Process exit code: 3 for numeric failure, 2 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Pipeline(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

/// Single-switch ablations of the loss channels and keyframe criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    NoColor,
    NoDepth,
    NoSemantic,
    NoSilhouette,
    NoGeo,
    NoSem,
    NoUncertainty,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::NoColor,
        Ablation::NoDepth,
        Ablation::NoSemantic,
        Ablation::NoSilhouette,
        Ablation::NoGeo,
        Ablation::NoSem,
        Ablation::NoUncertainty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoColor => "no-color",
            Ablation::NoDepth => "no-depth",
            Ablation::NoSemantic => "no-semantic",
            Ablation::NoSilhouette => "no-silhouette",
            Ablation::NoGeo => "no-geo",
            Ablation::NoSem => "no-sem",
            Ablation::NoUncertainty => "no-uncertainty",
        }
    }

    pub fn apply(self, cfg: &mut PipelineConfig) {
        match self {
            Ablation::NoColor => cfg.channels.use_color = false,
            Ablation::NoDepth => cfg.channels.use_depth = false,
            Ablation::NoSemantic => cfg.channels.use_semantic = false,
            Ablation::NoSilhouette => cfg.channels.use_silhouette_mask = false,
            Ablation::NoGeo => cfg.keyframes.use_geo = false,
            Ablation::NoSem => cfg.keyframes.use_sem = false,
            Ablation::NoUncertainty => cfg.keyframes.use_uncertainty = false,
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
            format!("unknown ablation `{s}` (expected one of {})", names.join(", "))
        })
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Use the sequence's ground-truth poses instead of tracking.
    pub inject_gt_poses: bool,
    pub ablations: Vec<Ablation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame: usize,
    pub track_ms: f64,
    pub map_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub input: String,
    pub output: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub ablations: Vec<String>,
    pub gt_pose_injection: bool,
    pub frames: usize,
    pub timing: Vec<FrameTiming>,
    /// Frames per second of summed tracking time.
    pub track_fps: f64,
    pub map_fps: f64,
}

impl RunManifest {
    /// Rebuilds the effective configuration of the run.
    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Manifest { path: path.display().to_string(), msg: e.to_string() })
    }
}

fn fps(frames: usize, total_ms: f64) -> f64 {
    if total_ms > 0.0 {
        frames as f64 / (total_ms / 1e3)
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub poses: Vec<CameraPose>,
    pub map: GaussianMap,
    pub report: EvalReport,
    pub manifest: RunManifest,
}

/// The configuration a run actually uses: `cfg` with the ablations applied.
pub fn effective_config(cfg: &PipelineConfig, ablations: &[Ablation]) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = cfg.clone();
    for a in ablations {
        a.apply(&mut cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Logs {
    loss: String,
    stats: String,
    keyframes: String,
}

impl Logs {
    fn new(semantic: bool) -> Self {
        let mut loss = String::from("frame,tracking,track_initial,track_final,track_iters,map_first,map_last,map_depth,map_color");
        if semantic {
            loss.push_str(",map_semantic");
        }
        loss.push('\n');
        Self {
            loss,
            stats: "frame,gaussians,added,low_silhouette_px,new_geometry_px,views,skipped_steps\n".into(),
            keyframes: format!("{}\n", Selection::csv_header()),
        }
    }
}

/// Runs the pipeline over `seq` and writes every artifact into `out`.
pub fn run_sequence(
    seq: &Sequence,
    input: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    let cfg = effective_config(cfg, &opts.ablations)?;
    let gt = seq.gt_poses.as_deref().map(anchor_trajectory);
    if opts.inject_gt_poses && gt.is_none() {
        return Err(RunError::MissingGtPoses);
    }
    create_dir(out)?;
    let ckpt_dir = out.join("checkpoints");
    if cfg.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }

    let semantic = cfg.channels.use_semantic && seq.has_semantic;
    let mut slam = Slam::new(cfg.clone(), seq.intrinsics, seq.palette.clone(), seq.frames.len(), opts.seed);
    let mut logs = Logs::new(semantic);
    let mut timing = Vec::with_capacity(seq.frames.len());
    for (t, frame) in seq.frames.iter().enumerate() {
        let injected = if opts.inject_gt_poses { gt.as_ref().map(|g| g[t]) } else { None };
        let rec = slam.process(frame, injected)?;
        timing.push(FrameTiming { frame: t, track_ms: rec.track_ms, map_ms: rec.map_ms });

        let (status, ti, tf, it) = match &rec.tracking {
            Tracking::Anchor => ("anchor", String::new(), String::new(), 0),
            Tracking::Injected => ("injected", String::new(), String::new(), 0),
            Tracking::Tracked(r) => ("tracked", format!("{:.6}", r.initial_loss), format!("{:.6}", r.final_loss), r.iterations_used),
            Tracking::Failed { .. } => ("failed", String::new(), String::new(), 0),
        };
        let m = &rec.mapping;
        let first = m.loss_history.first().map_or(String::new(), |v| format!("{v:.6}"));
        let last = m.loss_history.last().map_or(String::new(), |v| format!("{v:.6}"));
        let _ = write!(logs.loss, "{t},{status},{ti},{tf},{it},{first},{last},{:.6},{:.6}", m.final_depth_term, m.final_color_term);
        if semantic {
            let _ = write!(logs.loss, ",{:.6}", m.final_semantic_term);
        }
        logs.loss.push('\n');
        let _ = writeln!(
            logs.stats,
            "{t},{},{},{},{},{},{}",
            slam.map().len(),
            m.gaussians_added,
            m.low_silhouette_pixels,
            m.new_geometry_pixels,
            m.views,
            m.skipped_steps
        );
        logs.keyframes.push_str(&rec.selection.csv_rows(t));

        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(&ckpt_dir.join(format!("map_{t:06}.ssgm")), slam.map(), slam.palette())?;
        }
    }

    let poses = slam.poses().to_vec();
    let entries: Vec<_> = poses.iter().enumerate().map(|(i, p)| (i as f64, *p)).collect();
    write_trajectory(&out.join("trajectory.txt"), &entries)?;
    save_checkpoint(&out.join("map.ssgm"), slam.map(), slam.palette())?;
    write_file(&out.join("loss_log.csv"), &logs.loss)?;
    write_file(&out.join("mapping_stats.csv"), &logs.stats)?;
    write_file(&out.join("keyframes.csv"), &logs.keyframes)?;

    let report = evaluate(slam.map(), &seq.palette, &seq.frames, &poses, gt.as_deref(), &seq.intrinsics, semantic, cfg.eval_every)?;
    report.write(&out.join("eval.csv"), &out.join("summary.txt"))?;

    let track_ms: f64 = timing.iter().map(|f| f.track_ms).sum();
    let map_ms: f64 = timing.iter().map(|f| f.map_ms).sum();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        input: input.display().to_string(),
        output: out.display().to_string(),
        seed: opts.seed,
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        ablations: opts.ablations.iter().map(|a| a.name().to_string()).collect(),
        gt_pose_injection: opts.inject_gt_poses,
        frames: seq.frames.len(),
        track_fps: fps(timing.len(), track_ms),
        map_fps: fps(timing.len(), map_ms),
        timing,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), &json)?;
    Ok(RunOutcome { poses, map: slam.into_map(), report, manifest })
}

/// Loads the sequence at `input` and runs it; see [`run_sequence`].
pub fn run_dir(input: &Path, out: &Path, cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let cfg_eff = effective_config(cfg, &opts.ablations)?;
    let seq = load_sequence(input, cfg_eff.channels.use_semantic)?;
    run_sequence(&seq, input, out, cfg, opts)
}

/// A render as it looks after export: color to 8 bits, depth to millimeters,
/// semantic snapped to the palette.
pub fn exported_frame(out: &RenderOutput, palette: &SemanticPalette, timestamp: usize) -> Result<Frame, DatasetError> {
    let q8 = |v: f64| quantize_u8(v) as f64 / 255.0;
    let color = out.color.map(|c| c.map(q8));
    let depth = out.depth.map(|&d| {
        if d.is_finite() && d > 0.0 {
            (d * EXPORT_DEPTH_SCALE).round().min(65535.0) / EXPORT_DEPTH_SCALE
        } else {
            0.0
        }
    });
    let semantic = out.semantic.map(|s| palette.nearest(s).color);
    Frame::new(color, depth, semantic, timestamp)
}

/// Renders `map` at every pose and writes color, depth, semantic and
/// silhouette images plus the files that make `dir` a loadable sequence.
/// An empty pose list writes nothing. Returns the number of rendered views.
pub fn render_trajectory(
    map: &GaussianMap,
    palette: &SemanticPalette,
    poses: &[(f64, CameraPose)],
    intr: &Intrinsics,
    dir: &Path,
) -> Result<usize, RunError> {
    if poses.is_empty() {
        return Ok(0);
    }
    for sub in ["color", "depth", "semantic", "silhouette"] {
        create_dir(&dir.join(sub))?;
    }
    for (i, (_, pose)) in poses.iter().enumerate() {
        let out = render(map, pose, intr)?;
        let name = frame_file_name(i);
        write_rgb8(&out.color, &dir.join("color").join(&name))?;
        write_gray16(&out.depth, EXPORT_DEPTH_SCALE, &dir.join("depth").join(&name))?;
        let semantic: Image<[f64; 3]> = out.semantic.map(|s| palette.nearest(s).color);
        write_rgb8(&semantic, &dir.join("semantic").join(&name))?;
        write_gray8(&out.silhouette, &dir.join("silhouette").join(&name))?;
    }
    write_file(&dir.join("intrinsics.txt"), &intrinsics_text(intr, EXPORT_DEPTH_SCALE))?;
    write_file(&dir.join("palette.txt"), &palette.to_text())?;
    write_trajectory(&dir.join("gt_poses.txt"), poses)?;
    Ok(poses.len())
}

pub fn render_checkpoint(checkpoint: &Path, poses: &Path, intrinsics: &Path, dir: &Path) -> Result<usize, RunError> {
    let (map, palette) = load_checkpoint(checkpoint)?;
    let poses = read_trajectory(poses)?;
    let text = std::fs::read_to_string(intrinsics).map_err(io_err(intrinsics))?;
    let (intr, _) = crate::dataset::parse_intrinsics(&text, &intrinsics.display().to_string())?;
    render_trajectory(&map, &palette, &poses, &intr, dir)
}

/// Renders the run's final map along its trajectory, quantized as on export,
/// and compares against the sequence in `gt_dir`. ATE is included when the
/// sequence has ground-truth poses.
pub fn evaluate_run(run_dir: &Path, gt_dir: &Path, every: usize) -> Result<EvalReport, RunError> {
    let (map, palette) = load_checkpoint(&run_dir.join("map.ssgm"))?;
    let poses: Vec<CameraPose> = read_trajectory(&run_dir.join("trajectory.txt"))?.into_iter().map(|(_, p)| p).collect();
    let seq = load_sequence(gt_dir, false)?;
    if poses.len() != seq.frames.len() {
        return Err(RunError::PoseCount(poses.len(), seq.frames.len()));
    }
    let exported: Vec<Frame> = poses
        .iter()
        .enumerate()
        .map(|(t, p)| -> Result<Frame, RunError> { Ok(exported_frame(&render(&map, p, &seq.intrinsics)?, &palette, t)?) })
        .collect::<Result<_, _>>()?;
    let gt = seq.gt_poses.as_deref().map(anchor_trajectory);
    let mut report = EvalReport { semantic_enabled: seq.has_semantic, ..Default::default() };
    for t in crate::pipeline::eval_indices(seq.frames.len(), every) {
        let (a, b) = (&exported[t], &seq.frames[t]);
        let depth_l1_cm = match crate::metrics::depth_l1(&a.depth, &b.depth) {
            Ok(v) => Some(v),
            Err(MetricError::NoValidDepth) => None,
            Err(e) => return Err(e.into()),
        };
        let miou = if seq.has_semantic { crate::metrics::miou_semantic(&a.semantic, &b.semantic, &seq.palette)? } else { None };
        report.frames.push(crate::metrics::FrameMetrics {
            frame: t,
            psnr: crate::metrics::psnr(&a.color, &b.color)?,
            ssim: crate::metrics::ssim(&a.color, &b.color)?,
            depth_l1_cm,
            miou,
        });
    }
    if let Some(gt) = gt {
        report.ate = Some(crate::metrics::ate(&poses, &gt, false)?);
    }
    Ok(report)
}

/// Paths of the per-frame checkpoints in a run directory, in frame order.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let dir = run_dir.join("checkpoints");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ssgm"))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("no-everything".parse::<Ablation>().is_err());
    }

    #[test]
    fn ablations_toggle_config() {
        let cfg = effective_config(&PipelineConfig::default(), &[Ablation::NoSemantic, Ablation::NoGeo]).unwrap();
        assert!(!cfg.channels.use_semantic && !cfg.keyframes.use_geo);
        assert!(cfg.channels.use_color && cfg.keyframes.use_sem);
    }

    #[test]
    fn fps_counts_frames_per_second() {
        assert_eq!(fps(10, 2000.0), 5.0);
        assert_eq!(fps(0, 0.0), 0.0);
    }
}
