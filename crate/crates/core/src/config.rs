//! Pipeline hyperparameters.
//!
//! The on-disk format is a flat `key = value` text file. `#` starts a
//! comment, blank lines are ignored, and any key not listed in [`KEYS`] is
//! rejected. Every key present in the file overrides the built-in default.
//!
//! Defaults follow the Replica profile: tracking/mapping iterations 40/60.
//! The ScanNet profile is `iters_track = 120`, `iters_map = 40`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` given more than once")]
    Duplicate { key: String },
    #[error("config key `{key}`: cannot parse `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("config key `{key}` = {value} is outside {range}")]
    OutOfRange { key: String, value: String, range: &'static str },
    #[error("at least one of use_color, use_depth, use_semantic must be enabled")]
    NoChannels,
}

/// Per-term weights of the tracking or mapping loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub depth: f64,
    pub color: f64,
    pub semantic: f64,
}

/// Which observation channels drive the losses (ablation axes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelToggles {
    pub use_color: bool,
    pub use_depth: bool,
    pub use_semantic: bool,
    pub use_silhouette_mask: bool,
}

impl Default for ChannelToggles {
    fn default() -> Self {
        Self { use_color: true, use_depth: true, use_semantic: true, use_silhouette_mask: true }
    }
}

/// Which keyframe selection criteria are active (ablation axes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeToggles {
    pub use_geo: bool,
    pub use_sem: bool,
    pub use_uncertainty: bool,
}

impl Default for KeyframeToggles {
    fn default() -> Self {
        Self { use_geo: true, use_sem: true, use_uncertainty: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Silhouette visibility threshold for the tracking mask.
    pub t_sil_track: f64,
    /// Silhouette threshold below which a pixel is densified.
    pub t_sil_map: f64,
    pub track_weights: LossWeights,
    pub map_weights: LossWeights,
    /// L1 share of the L1/SSIM image loss.
    pub alpha_ssim: f64,
    /// Minimum geometric overlap for a keyframe to stay a candidate.
    pub t_geo: f64,
    /// Keyframes whose label mIoU with the current frame exceeds this are dropped.
    pub t_sem: f64,
    pub keyframe_interval: usize,
    pub max_keyframes: usize,
    /// Uncertainty decay per frame. `None` resolves to `2 ln 2 / frame_count`,
    /// so the weight halves over half the sequence.
    pub tau: Option<f64>,
    pub iters_track: usize,
    pub iters_map: usize,
    /// Mapping iterations for frame 0, whose map every later frame is tracked against.
    pub iters_map_first: usize,
    pub lr_cam_translation: f64,
    pub lr_cam_rotation: f64,
    pub lr_pos: f64,
    pub lr_color: f64,
    pub lr_semantic: f64,
    pub lr_opacity_logit: f64,
    pub lr_logscale: f64,
    /// Relative depth margin for the new-geometry densification clause.
    pub depth_add_margin: f64,
    /// Pixels sampled from the current frame for the overlap test.
    pub keyframe_samples: usize,
    pub channels: ChannelToggles,
    pub keyframes: KeyframeToggles,
    /// Write a map checkpoint every N frames; 0 writes only the final map.
    pub checkpoint_every: usize,
    /// Evaluation cadence in frames.
    pub eval_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t_sil_track: 0.99,
            t_sil_map: 0.5,
            track_weights: LossWeights { depth: 1.0, color: 0.5, semantic: 0.05 },
            map_weights: LossWeights { depth: 1.0, color: 0.5, semantic: 0.1 },
            alpha_ssim: 0.8,
            t_geo: 0.05,
            t_sem: 0.7,
            keyframe_interval: 5,
            max_keyframes: 25,
            tau: None,
            iters_track: 40,
            iters_map: 60,
            iters_map_first: 500,
            lr_cam_translation: 2e-3,
            lr_cam_rotation: 2e-3,
            lr_pos: 1e-4,
            lr_color: 2.5e-3,
            lr_semantic: 2.5e-3,
            lr_opacity_logit: 0.05,
            lr_logscale: 1e-3,
            depth_add_margin: 0.05,
            keyframe_samples: 512,
            channels: ChannelToggles::default(),
            keyframes: KeyframeToggles::default(),
            checkpoint_every: 0,
            eval_every: 5,
        }
    }
}

/// Every recognised key, in serialization order.
pub const KEYS: &[&str] = &[
    "t_sil_track",
    "t_sil_map",
    "lambda_d_track",
    "lambda_c_track",
    "lambda_s_track",
    "lambda_d_map",
    "lambda_c_map",
    "lambda_s_map",
    "alpha_ssim",
    "t_geo",
    "t_sem",
    "keyframe_interval",
    "max_keyframes",
    "tau",
    "iters_track",
    "iters_map",
    "iters_map_first",
    "lr_cam_translation",
    "lr_cam_rotation",
    "lr_pos",
    "lr_color",
    "lr_semantic",
    "lr_opacity_logit",
    "lr_logscale",
    "depth_add_margin",
    "keyframe_samples",
    "use_color",
    "use_depth",
    "use_semantic",
    "use_silhouette_mask",
    "use_geo",
    "use_sem",
    "use_uncertainty",
    "checkpoint_every",
    "eval_every",
];

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ConfigError::InvalidValue { key: key.into(), value: value.into() })
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse::<usize>().map_err(|_| ConfigError::InvalidValue { key: key.into(), value: value.into() })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(ConfigError::InvalidValue { key: key.into(), value: value.into() }),
    }
}

impl PipelineConfig {
    /// Reads a config file on top of the defaults and validates the result.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { key: key.into() });
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its textual value. Does not validate ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "t_sil_track" => self.t_sil_track = parse_f64(key, value)?,
            "t_sil_map" => self.t_sil_map = parse_f64(key, value)?,
            "lambda_d_track" => self.track_weights.depth = parse_f64(key, value)?,
            "lambda_c_track" => self.track_weights.color = parse_f64(key, value)?,
            "lambda_s_track" => self.track_weights.semantic = parse_f64(key, value)?,
            "lambda_d_map" => self.map_weights.depth = parse_f64(key, value)?,
            "lambda_c_map" => self.map_weights.color = parse_f64(key, value)?,
            "lambda_s_map" => self.map_weights.semantic = parse_f64(key, value)?,
            "alpha_ssim" => self.alpha_ssim = parse_f64(key, value)?,
            "t_geo" => self.t_geo = parse_f64(key, value)?,
            "t_sem" => self.t_sem = parse_f64(key, value)?,
            "keyframe_interval" => self.keyframe_interval = parse_usize(key, value)?,
            "max_keyframes" => self.max_keyframes = parse_usize(key, value)?,
            "tau" => {
                self.tau = if value == "auto" { None } else { Some(parse_f64(key, value)?) };
            }
            "iters_track" => self.iters_track = parse_usize(key, value)?,
            "iters_map" => self.iters_map = parse_usize(key, value)?,
            "iters_map_first" => self.iters_map_first = parse_usize(key, value)?,
            "lr_cam_translation" => self.lr_cam_translation = parse_f64(key, value)?,
            "lr_cam_rotation" => self.lr_cam_rotation = parse_f64(key, value)?,
            "lr_pos" => self.lr_pos = parse_f64(key, value)?,
            "lr_color" => self.lr_color = parse_f64(key, value)?,
            "lr_semantic" => self.lr_semantic = parse_f64(key, value)?,
            "lr_opacity_logit" => self.lr_opacity_logit = parse_f64(key, value)?,
            "lr_logscale" => self.lr_logscale = parse_f64(key, value)?,
            "depth_add_margin" => self.depth_add_margin = parse_f64(key, value)?,
            "keyframe_samples" => self.keyframe_samples = parse_usize(key, value)?,
            "use_color" => self.channels.use_color = parse_bool(key, value)?,
            "use_depth" => self.channels.use_depth = parse_bool(key, value)?,
            "use_semantic" => self.channels.use_semantic = parse_bool(key, value)?,
            "use_silhouette_mask" => self.channels.use_silhouette_mask = parse_bool(key, value)?,
            "use_geo" => self.keyframes.use_geo = parse_bool(key, value)?,
            "use_sem" => self.keyframes.use_sem = parse_bool(key, value)?,
            "use_uncertainty" => self.keyframes.use_uncertainty = parse_bool(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_usize(key, value)?,
            "eval_every" => self.eval_every = parse_usize(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Textual value of every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = |v: bool| v.to_string();
        vec![
            ("t_sil_track", self.t_sil_track.to_string()),
            ("t_sil_map", self.t_sil_map.to_string()),
            ("lambda_d_track", self.track_weights.depth.to_string()),
            ("lambda_c_track", self.track_weights.color.to_string()),
            ("lambda_s_track", self.track_weights.semantic.to_string()),
            ("lambda_d_map", self.map_weights.depth.to_string()),
            ("lambda_c_map", self.map_weights.color.to_string()),
            ("lambda_s_map", self.map_weights.semantic.to_string()),
            ("alpha_ssim", self.alpha_ssim.to_string()),
            ("t_geo", self.t_geo.to_string()),
            ("t_sem", self.t_sem.to_string()),
            ("keyframe_interval", self.keyframe_interval.to_string()),
            ("max_keyframes", self.max_keyframes.to_string()),
            ("tau", self.tau.map_or_else(|| "auto".to_string(), |t| t.to_string())),
            ("iters_track", self.iters_track.to_string()),
            ("iters_map", self.iters_map.to_string()),
            ("iters_map_first", self.iters_map_first.to_string()),
            ("lr_cam_translation", self.lr_cam_translation.to_string()),
            ("lr_cam_rotation", self.lr_cam_rotation.to_string()),
            ("lr_pos", self.lr_pos.to_string()),
            ("lr_color", self.lr_color.to_string()),
            ("lr_semantic", self.lr_semantic.to_string()),
            ("lr_opacity_logit", self.lr_opacity_logit.to_string()),
            ("lr_logscale", self.lr_logscale.to_string()),
            ("depth_add_margin", self.depth_add_margin.to_string()),
            ("keyframe_samples", self.keyframe_samples.to_string()),
            ("use_color", b(self.channels.use_color)),
            ("use_depth", b(self.channels.use_depth)),
            ("use_semantic", b(self.channels.use_semantic)),
            ("use_silhouette_mask", b(self.channels.use_silhouette_mask)),
            ("use_geo", b(self.keyframes.use_geo)),
            ("use_sem", b(self.keyframes.use_sem)),
            ("use_uncertainty", b(self.keyframes.use_uncertainty)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(key: &str, v: f64, ok: bool, range: &'static str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange { key: key.into(), value: v.to_string(), range })
            }
        }
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        let closed01 = |v: f64| (0.0..=1.0).contains(&v);
        check("t_sil_track", self.t_sil_track, open01(self.t_sil_track), "(0, 1)")?;
        check("t_sil_map", self.t_sil_map, open01(self.t_sil_map), "(0, 1)")?;
        for (key, v) in [
            ("lambda_d_track", self.track_weights.depth),
            ("lambda_c_track", self.track_weights.color),
            ("lambda_s_track", self.track_weights.semantic),
            ("lambda_d_map", self.map_weights.depth),
            ("lambda_c_map", self.map_weights.color),
            ("lambda_s_map", self.map_weights.semantic),
            ("depth_add_margin", self.depth_add_margin),
        ] {
            check(key, v, v >= 0.0, "[0, inf)")?;
        }
        check("alpha_ssim", self.alpha_ssim, closed01(self.alpha_ssim), "[0, 1]")?;
        check("t_geo", self.t_geo, closed01(self.t_geo), "[0, 1]")?;
        check("t_sem", self.t_sem, closed01(self.t_sem), "[0, 1]")?;
        if let Some(tau) = self.tau {
            check("tau", tau, tau >= 0.0, "[0, inf)")?;
        }
        for (key, v) in [
            ("lr_cam_translation", self.lr_cam_translation),
            ("lr_cam_rotation", self.lr_cam_rotation),
            ("lr_pos", self.lr_pos),
            ("lr_color", self.lr_color),
            ("lr_semantic", self.lr_semantic),
            ("lr_opacity_logit", self.lr_opacity_logit),
            ("lr_logscale", self.lr_logscale),
        ] {
            check(key, v, v > 0.0, "(0, inf)")?;
        }
        for (key, v) in [
            ("keyframe_interval", self.keyframe_interval),
            ("iters_track", self.iters_track),
            ("iters_map", self.iters_map),
            ("iters_map_first", self.iters_map_first),
            ("keyframe_samples", self.keyframe_samples),
            ("eval_every", self.eval_every),
        ] {
            check(key, v as f64, v >= 1, "[1, inf)")?;
        }
        let c = self.channels;
        if !(c.use_color || c.use_depth || c.use_semantic) {
            return Err(ConfigError::NoChannels);
        }
        Ok(())
    }

    /// Uncertainty decay for a sequence of `frame_count` frames.
    pub fn resolved_tau(&self, frame_count: usize) -> f64 {
        if !self.keyframes.use_uncertainty {
            return 0.0;
        }
        match self.tau {
            Some(t) => t,
            None => 2.0 * std::f64::consts::LN_2 / frame_count.max(1) as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.t_sil_track, 0.99);
        assert_eq!(cfg.t_sil_map, 0.5);
        assert_eq!(cfg.t_geo, 0.05);
        assert_eq!(cfg.t_sem, 0.7);
        assert_eq!(cfg.track_weights, LossWeights { depth: 1.0, color: 0.5, semantic: 0.05 });
        assert_eq!(cfg.map_weights, LossWeights { depth: 1.0, color: 0.5, semantic: 0.1 });
        assert_eq!(cfg.lr_cam_translation, 2e-3);
        assert_eq!((cfg.keyframe_interval, cfg.max_keyframes), (5, 25));
        assert_eq!((cfg.lr_pos, cfg.lr_color, cfg.lr_opacity_logit, cfg.lr_logscale), (1e-4, 2.5e-3, 0.05, 1e-3));
        assert_eq!((cfg.iters_track, cfg.iters_map), (40, 60));
    }

    #[test]
    fn out_of_range_names_key() {
        let err = PipelineConfig::parse("t_geo = 1.5\n").unwrap_err();
        match err {
            ConfigError::OutOfRange { key, .. } => assert_eq!(key, "t_geo"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_key(PipelineConfig::parse("lr_pos = 0\n")).contains("lr_pos"));
        assert!(err_key(PipelineConfig::parse("iters_map = 0\n")).contains("iters_map"));
    }

    fn err_key(r: Result<PipelineConfig, ConfigError>) -> String {
        r.unwrap_err().to_string()
    }

    #[test]
    fn scannet_profile() {
        let cfg = PipelineConfig::parse("# scannet\niters_track = 120\niters_map = 40 # mapping\n").unwrap();
        assert_eq!((cfg.iters_track, cfg.iters_map), (120, 40));
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(matches!(PipelineConfig::parse("bogus = 1"), Err(ConfigError::UnknownKey(k)) if k == "bogus"));
        assert!(matches!(PipelineConfig::parse("t_geo 0.1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse("t_geo = x"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(PipelineConfig::parse("t_geo = 0.1\nt_geo = 0.2"), Err(ConfigError::Duplicate { .. })));
        assert!(matches!(
            PipelineConfig::parse("use_color = false\nuse_depth = false\nuse_semantic = false"),
            Err(ConfigError::NoChannels)
        ));
    }

    #[test]
    fn round_trip_default_and_modified() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let mut cfg = PipelineConfig::default();
        cfg.tau = Some(0.0123456789);
        cfg.lr_pos = 1.0 / 3.0;
        cfg.channels.use_semantic = false;
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_settable_and_serialized() {
        let entries = PipelineConfig::default().entries();
        assert_eq!(entries.iter().map(|e| e.0).collect::<Vec<_>>(), KEYS);
        for (k, v) in entries {
            PipelineConfig::default().set(k, &v).unwrap();
        }
    }

    #[test]
    fn auto_tau_halves_over_half_sequence() {
        let cfg = PipelineConfig::default();
        let tau = cfg.resolved_tau(60);
        assert!(((-tau * 30.0).exp() - 0.5).abs() < 1e-12);
        let mut off = cfg.clone();
        off.keyframes.use_uncertainty = false;
        assert_eq!(off.resolved_tau(60), 0.0);
    }
}
