//! Evaluation metrics: PSNR, SSIM, depth L1, trajectory error, and mIoU.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::camera::CameraPose;
use crate::dataset::is_valid_depth;
use crate::image::{GrayImage, ImageError, LabelImage, RgbImage};
use crate::losses;
use crate::scene::{SemanticPalette, BACKGROUND_LABEL};

/// Reported in place of an infinite PSNR for identical images.
pub const PSNR_SENTINEL_DB: f64 = 99.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Dims(#[from] ImageError),
    #[error("no pixel has valid depth in both images")]
    NoValidDepth,
    #[error("trajectory lengths differ: {0} estimated vs {1} ground truth")]
    LengthMismatch(usize, usize),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("cannot write report {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricError> {
    a.check_dims(b)?;
    let mut se = 0.0;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        for k in 0..3 {
            se += (x[k] - y[k]).powi(2);
        }
    }
    let mse = se / (a.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_SENTINEL_DB))
}

/// Mean SSIM over channels, using the same kernel as the mapping loss.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricError> {
    losses::ssim(a, b).map_err(|e| match e {
        losses::LossError::Dims(d) => MetricError::Dims(d),
        losses::LossError::EmptyMask => unreachable!("ssim has no mask"),
    })
}

/// Mean absolute depth difference in centimeters over jointly valid pixels.
pub fn depth_l1(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    a.check_dims(b)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        if is_valid_depth(x) && is_valid_depth(y) {
            sum += (x - y).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::NoValidDepth);
    }
    Ok(100.0 * sum / n as f64)
}

/// Rotation and translation minimizing `sum |R a_i + t - b_i|^2`.
pub fn rigid_align(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        cov += (q - cb) * (p - ca).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * vt;
    (r, cb - r * ca)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteResult {
    pub mean_cm: f64,
    pub rmse_cm: f64,
}

/// Translational error between camera centers, optionally after a rigid
/// least-squares alignment of the estimate onto the ground truth.
pub fn ate(est: &[CameraPose], gt: &[CameraPose], align: bool) -> Result<AteResult, MetricError> {
    if est.len() != gt.len() {
        return Err(MetricError::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Err(MetricError::EmptyTrajectory);
    }
    let mut e: Vec<Vector3<f64>> = est.iter().map(|p| p.center()).collect();
    let g: Vec<Vector3<f64>> = gt.iter().map(|p| p.center()).collect();
    if align {
        let (r, t) = rigid_align(&e, &g);
        e.iter_mut().for_each(|p| *p = r * *p + t);
    }
    let errs: Vec<f64> = e.iter().zip(&g).map(|(a, b)| (a - b).norm()).collect();
    let n = errs.len() as f64;
    Ok(AteResult {
        mean_cm: 100.0 * errs.iter().sum::<f64>() / n,
        rmse_cm: 100.0 * (errs.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
    })
}

/// Mean IoU over labels present in `gt`, excluding background. `None` when
/// `gt` holds no foreground label.
pub fn miou(pred: &LabelImage, gt: &LabelImage) -> Result<Option<f64>, MetricError> {
    pred.check_dims(gt)?;
    let labels: BTreeSet<u32> = gt.as_slice().iter().copied().filter(|&l| l != BACKGROUND_LABEL).collect();
    if labels.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &l in &labels {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            let (a, b) = (p == l, g == l);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        total += inter as f64 / union as f64;
    }
    Ok(Some(total / labels.len() as f64))
}

/// mIoU of two semantic color images after snapping both to the palette.
pub fn miou_semantic(pred: &RgbImage, gt: &RgbImage, palette: &SemanticPalette) -> Result<Option<f64>, MetricError> {
    miou(&palette.labels_of(pred), &palette.labels_of(gt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_l1_cm: Option<f64>,
    /// `None` when semantics are disabled or the frame has no foreground label.
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub ate: Option<AteResult>,
    /// False when the semantic channel was ablated; mIoU is then inapplicable.
    pub semantic_enabled: bool,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.frames.iter().map(|f| f.psnr))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.frames.iter().map(|f| f.ssim))
    }

    pub fn mean_depth_l1_cm(&self) -> Option<f64> {
        mean(self.frames.iter().filter_map(|f| f.depth_l1_cm))
    }

    pub fn mean_miou(&self) -> Option<f64> {
        if !self.semantic_enabled {
            return None;
        }
        mean(self.frames.iter().filter_map(|f| f.miou))
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("frame,psnr_db,ssim,depth_l1_cm,miou\n");
        for f in &self.frames {
            let miou = if self.semantic_enabled { opt(f.miou) } else { "n/a".into() };
            let _ = writeln!(s, "{},{:.6},{:.6},{},{}", f.frame, f.psnr, f.ssim, opt(f.depth_l1_cm), miou);
        }
        s
    }

    /// Fixed-width summary table of the aggregate metrics.
    pub fn summary(&self) -> String {
        let cell = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let miou = if self.semantic_enabled { cell(self.mean_miou().map(|m| m * 100.0), 2) } else { "n/a".into() };
        let (ate_mean, ate_rmse) = match self.ate {
            Some(a) => (format!("{:.3}", a.mean_cm), format!("{:.3}", a.rmse_cm)),
            None => ("-".into(), "-".into()),
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>8} {:>10} {:>8} {:>14} {:>9} {:>13} {:>13}",
            "frames", "PSNR[dB]", "SSIM", "Depth L1[cm]", "mIoU[%]", "ATE mean[cm]", "ATE RMSE[cm]"
        );
        let _ = writeln!(
            s,
            "{:>8} {:>10} {:>8} {:>14} {:>9} {:>13} {:>13}",
            self.frames.len(),
            cell(self.mean_psnr(), 2),
            cell(self.mean_ssim(), 4),
            cell(self.mean_depth_l1_cm(), 3),
            miou,
            ate_mean,
            ate_rmse
        );
        s
    }

    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> Result<(), MetricError> {
        for (p, text) in [(csv_path, self.to_csv()), (summary_path, self.summary())] {
            std::fs::write(p, text).map_err(|source| MetricError::Io { path: p.display().to_string(), source })?;
        }
        Ok(())
    }
}
