//! Tracking loss, mapping loss, and the L1 + SSIM image loss, each with
//! per-pixel gradients for the rasterizer's backward pass.

use thiserror::Error;

use crate::config::PipelineConfig;
use crate::dataset::{is_valid_depth, Frame};
use crate::image::{GrayImage, Image, ImageError, RgbImage};
use crate::rasterizer::{PixelGrads, RenderOutput};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Dims(#[from] ImageError),
    #[error("tracking mask is empty")]
    EmptyMask,
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// `scale * (w_depth * depth_term + w_color * color_term + w_semantic * semantic_term)`.
    pub total: f64,
    pub depth_term: f64,
    pub color_term: f64,
    pub semantic_term: f64,
    /// Uncertainty weight applied to the whole loss (1 for tracking).
    pub scale: f64,
    pub pixel_grads: PixelGrads,
    pub masked_pixel_count: usize,
}

/// Subgradient of `|r|`, taken as 0 at exactly zero.
#[inline]
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_dims(out: &RenderOutput, frame: &Frame) -> Result<(), LossError> {
    let (w, h) = out.dims();
    let (fw, fh) = frame.dims();
    if (w, h) != (fw, fh) {
        return Err(ImageError::DimMismatch(fw, fh, w, h).into());
    }
    Ok(())
}

/// Pixels used by the tracking loss: valid ground-truth depth and, unless
/// disabled, rendered silhouette above the tracking threshold.
pub fn tracking_mask(out: &RenderOutput, frame: &Frame, cfg: &PipelineConfig) -> Image<bool> {
    let (w, h) = out.dims();
    Image::from_fn(w, h, |x, y| {
        frame.depth_valid(x, y)
            && (!cfg.channels.use_silhouette_mask || out.silhouette.get(x, y) > cfg.t_sil_track)
    })
}

/// Summed L1 over the tracking mask on the enabled channels.
pub fn tracking_loss(out: &RenderOutput, frame: &Frame, cfg: &PipelineConfig) -> Result<LossBreakdown, LossError> {
    check_dims(out, frame)?;
    let (w, h) = out.dims();
    let mask = tracking_mask(out, frame, cfg);
    let count = mask.as_slice().iter().filter(|m| **m).count();
    if count == 0 {
        return Err(LossError::EmptyMask);
    }
    let ch = &cfg.channels;
    let lw = &cfg.track_weights;
    let (mut dt, mut ct, mut st) = (0.0, 0.0, 0.0);
    let mut gd = ch.use_depth.then(|| Image::filled(w, h, 0.0));
    let mut gc = ch.use_color.then(|| Image::filled(w, h, [0.0; 3]));
    let mut gs = ch.use_semantic.then(|| Image::filled(w, h, [0.0; 3]));
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            if let Some(g) = gd.as_mut() {
                let r = out.depth.get(x, y) - frame.depth.get(x, y);
                dt += r.abs();
                g.set(x, y, lw.depth * sign(r));
            }
            if let Some(g) = gc.as_mut() {
                let (a, b) = (out.color.get(x, y), frame.color.get(x, y));
                let mut gv = [0.0; 3];
                for k in 0..3 {
                    ct += (a[k] - b[k]).abs();
                    gv[k] = lw.color * sign(a[k] - b[k]);
                }
                g.set(x, y, gv);
            }
            if let Some(g) = gs.as_mut() {
                let (a, b) = (out.semantic.get(x, y), frame.semantic.get(x, y));
                let mut gv = [0.0; 3];
                for k in 0..3 {
                    st += (a[k] - b[k]).abs();
                    gv[k] = lw.semantic * sign(a[k] - b[k]);
                }
                g.set(x, y, gv);
            }
        }
    }
    Ok(LossBreakdown {
        total: lw.depth * dt + lw.color * ct + lw.semantic * st,
        depth_term: dt,
        color_term: ct,
        semantic_term: st,
        scale: 1.0,
        pixel_grads: PixelGrads { color: gc, depth: gd, semantic: gs, silhouette: None },
        masked_pixel_count: count,
    })
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian blur with zero padding, output the same size as the input.
fn blur(src: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += wk * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += wk * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean SSIM of one channel and, optionally, its gradient with respect to `x`.
fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let win = gaussian_window();
    let n = w * h;
    let mx = blur(x, w, h, &win);
    let my = blur(y, w, h, &win);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let exx = blur(&xx, w, h, &win);
    let eyy = blur(&yy, w, h, &win);
    let exy = blur(&xy, w, h, &win);
    let mut total = 0.0;
    let (mut d_mu, mut d_exx, mut d_exy) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let a1 = 2.0 * ux * uy + SSIM_C1;
        let a2 = 2.0 * (exy[i] - ux * uy) + SSIM_C2;
        let b1 = ux * ux + uy * uy + SSIM_C1;
        let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + SSIM_C2;
        let num = a1 * a2;
        let den = b1 * b2;
        let s = num / den;
        total += s;
        if want_grad {
            let dnum = 2.0 * uy * (a2 - a1);
            let dden = 2.0 * ux * (b2 - b1);
            d_mu[i] = (dnum * den - num * dden) / (den * den) / n as f64;
            d_exx[i] = -s / b2 / n as f64;
            d_exy[i] = 2.0 * a1 / den / n as f64;
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return (mean, None);
    }
    // The blur is self-adjoint (symmetric kernel, zero padding).
    let g_mu = blur(&d_mu, w, h, &win);
    let g_exx = blur(&d_exx, w, h, &win);
    let g_exy = blur(&d_exy, w, h, &win);
    let grad = (0..n).map(|i| g_mu[i] + 2.0 * x[i] * g_exx[i] + y[i] * g_exy[i]).collect();
    (mean, Some(grad))
}

/// Planar channels of an RGB image.
fn planes(img: &RgbImage) -> [Vec<f64>; 3] {
    let s = img.as_slice();
    [s.iter().map(|c| c[0]).collect(), s.iter().map(|c| c[1]).collect(), s.iter().map(|c| c[2]).collect()]
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, LossError> {
    a.check_dims(b)?;
    let (pa, pb) = (planes(a), planes(b));
    let (w, h) = a.dims();
    Ok((0..3).map(|k| ssim_plane(&pa[k], &pb[k], w, h, false).0).sum::<f64>() / 3.0)
}

/// Mean SSIM of single-channel images.
pub fn ssim_gray(a: &GrayImage, b: &GrayImage) -> Result<f64, LossError> {
    a.check_dims(b)?;
    let (w, h) = a.dims();
    Ok(ssim_plane(a.as_slice(), b.as_slice(), w, h, false).0)
}

/// `alpha * mean|r - t| + (1 - alpha) * (1 - SSIM(r, t))` with its gradient
/// with respect to `rendered`. The mean runs over pixels and channels.
pub fn weighted_ssim_l1(rendered: &RgbImage, target: &RgbImage, alpha: f64) -> Result<(f64, RgbImage), LossError> {
    rendered.check_dims(target)?;
    let (w, h) = rendered.dims();
    let n = (w * h * 3) as f64;
    let mut grad = Image::filled(w, h, [0.0; 3]);
    let mut l1 = 0.0;
    for (g, (a, b)) in grad.as_mut_slice().iter_mut().zip(rendered.as_slice().iter().zip(target.as_slice())) {
        for k in 0..3 {
            let r = a[k] - b[k];
            l1 += r.abs();
            g[k] = alpha * sign(r) / n;
        }
    }
    let mut value = alpha * l1 / n;
    if alpha < 1.0 {
        let (pr, pt) = (planes(rendered), planes(target));
        let mut s_mean = 0.0;
        for k in 0..3 {
            let (s, gk) = ssim_plane(&pr[k], &pt[k], w, h, true);
            s_mean += s / 3.0;
            let gk = gk.unwrap();
            for (g, v) in grad.as_mut_slice().iter_mut().zip(gk) {
                g[k] -= (1.0 - alpha) * v / 3.0;
            }
        }
        value += (1.0 - alpha) * (1.0 - s_mean);
    }
    Ok((value, grad))
}

fn scale_rgb(img: &mut RgbImage, s: f64) {
    for c in img.as_mut_slice() {
        for v in c.iter_mut() {
            *v *= s;
        }
    }
}

/// `U * (w_d * sum_valid |D - D_gt| + w_c * L(C) + w_s * L(S))` where `L` is
/// [`weighted_ssim_l1`].
pub fn mapping_loss(
    out: &RenderOutput,
    frame: &Frame,
    uncertainty: f64,
    cfg: &PipelineConfig,
) -> Result<LossBreakdown, LossError> {
    check_dims(out, frame)?;
    let (w, h) = out.dims();
    let ch = &cfg.channels;
    let lw = &cfg.map_weights;
    let mut count = 0;
    let mut depth_term = 0.0;
    let mut gd = ch.use_depth.then(|| Image::filled(w, h, 0.0));
    for y in 0..h {
        for x in 0..w {
            let gt = frame.depth.get(x, y);
            if !is_valid_depth(gt) {
                continue;
            }
            count += 1;
            if let Some(g) = gd.as_mut() {
                let r = out.depth.get(x, y) - gt;
                depth_term += r.abs();
                g.set(x, y, uncertainty * lw.depth * sign(r));
            }
        }
    }
    let image_term = |rendered: &RgbImage, target: &RgbImage, weight: f64| -> Result<(f64, RgbImage), LossError> {
        let (v, mut g) = weighted_ssim_l1(rendered, target, cfg.alpha_ssim)?;
        scale_rgb(&mut g, uncertainty * weight);
        Ok((v, g))
    };
    let (color_term, gc) = if ch.use_color {
        let (v, g) = image_term(&out.color, &frame.color, lw.color)?;
        (v, Some(g))
    } else {
        (0.0, None)
    };
    let (semantic_term, gs) = if ch.use_semantic {
        let (v, g) = image_term(&out.semantic, &frame.semantic, lw.semantic)?;
        (v, Some(g))
    } else {
        (0.0, None)
    };
    Ok(LossBreakdown {
        total: uncertainty * (lw.depth * depth_term + lw.color * color_term + lw.semantic * semantic_term),
        depth_term,
        color_term,
        semantic_term,
        scale: uncertainty,
        pixel_grads: PixelGrads { color: gc, depth: gd, semantic: gs, silhouette: None },
        masked_pixel_count: count,
    })
}

/// Per-pixel SSIM reference evaluated window by window, used by tests as an
/// independent check of the separable implementation.
#[doc(hidden)]
pub fn ssim_reference(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let win = gaussian_window();
    let r = (SSIM_WINDOW / 2) as isize;
    let mut total = 0.0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in -r..=r {
                for i in -r..=r {
                    let (xx, yy) = (x + i, y + j);
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let k = win[(i + r) as usize] * win[(j + r) as usize];
                    let (va, vb) = (a[yy as usize * w + xx as usize], b[yy as usize * w + xx as usize]);
                    ma += k * va;
                    mb += k * vb;
                    saa += k * va * va;
                    sbb += k * vb * vb;
                    sab += k * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    total / (w * h) as f64
}
