use ndarray::{s, Array2, Array3, Array4, Zip};

use crate::error::{ensure, Result};
use crate::synthworld::BBox;
use crate::temporal::{bilinear_warp, to_gray, video_flows};

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const MASK_THRESHOLD: f64 = 0.05;

fn check_dims(a: &Array4<f64>, b: &Array4<f64>) -> Result<()> {
    ensure!(a.dim() == b.dim(), "videos have shapes {:?} and {:?}", a.dim(), b.dim());
    ensure!(!a.is_empty(), "empty video");
    Ok(())
}

/// `10·log10(1/MSE)` for videos in `[0,1]`, optionally restricted to the
/// pixels where `mask` is set; capped at [`PSNR_CAP`].
pub fn psnr(a: &Array4<f64>, b: &Array4<f64>, mask: Option<&Array3<bool>>) -> Result<f64> {
    check_dims(a, b)?;
    let (t, h, w, c) = a.dim();
    let (mut acc, mut n) = (0.0, 0usize);
    match mask {
        None => {
            acc = Zip::from(a).and(b).fold(0.0, |s, x, y| s + (x - y) * (x - y));
            n = a.len();
        }
        Some(m) => {
            ensure!(m.dim() == (t, h, w), "mask {:?} does not match video {:?}", m.dim(), a.dim());
            for ((ti, y, x), &on) in m.indexed_iter() {
                if on {
                    for ch in 0..c {
                        let d = a[[ti, y, x, ch]] - b[[ti, y, x, ch]];
                        acc += d * d;
                    }
                    n += c;
                }
            }
        }
    }
    if n == 0 || acc == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (n as f64 / acc).log10()).min(PSNR_CAP))
}

/// Mean SSIM of the luma channel over every stride-1 `window×window` patch
/// of every frame, with population statistics.
pub fn ssim(a: &Array4<f64>, b: &Array4<f64>, window: usize) -> Result<f64> {
    check_dims(a, b)?;
    let (t_count, h, w, c) = a.dim();
    ensure!(c == 3, "ssim expects RGB frames");
    ensure!(window >= 1 && h >= window && w >= window, "frames {h}×{w} are smaller than the {window}×{window} window");
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..t_count {
        let ga = to_gray(a.slice(s![t, .., .., ..]));
        let gb = to_gray(b.slice(s![t, .., .., ..]));
        for y in 0..=h - window {
            for x in 0..=w - window {
                let pa = ga.slice(s![y..y + window, x..x + window]);
                let pb = gb.slice(s![y..y + window, x..x + window]);
                let ma = pa.sum() / n;
                let mb = pb.sum() / n;
                let va = pa.fold(0.0, |s, v| s + (v - ma) * (v - ma)) / n;
                let vb = pb.fold(0.0, |s, v| s + (v - mb) * (v - mb)) / n;
                let cov = Zip::from(&pa).and(&pb).fold(0.0, |s, p, q| s + (p - ma) * (q - mb)) / n;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Pixels whose largest per-channel difference from the clean background
/// exceeds `threshold`, cleaned by a 3×3 majority filter.
pub fn extract_object_mask(generated: &Array4<f64>, background: &Array4<f64>, threshold: f64) -> Result<Array3<bool>> {
    check_dims(generated, background)?;
    let (t_count, h, w, c) = generated.dim();
    let mut raw = Array3::from_elem((t_count, h, w), false);
    for ((t, y, x), r) in raw.indexed_iter_mut() {
        let m = (0..c).map(|ch| (generated[[t, y, x, ch]] - background[[t, y, x, ch]]).abs()).fold(0.0, f64::max);
        *r = m > threshold;
    }
    Ok(majority_filter(&raw))
}

/// Each pixel takes the majority value of its in-bounds 3×3 neighbourhood
/// (ties keep the pixel's own value).
pub fn majority_filter(mask: &Array3<bool>) -> Array3<bool> {
    let (t_count, h, w) = mask.dim();
    Array3::from_shape_fn((t_count, h, w), |(t, y, x)| {
        let (mut on, mut total) = (0, 0);
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                on += mask[[t, yy, xx]] as usize;
                total += 1;
            }
        }
        if 2 * on == total {
            mask[[t, y, x]]
        } else {
            2 * on > total
        }
    })
}

/// Intersection over union per frame, averaged; frames where both masks are
/// empty count as 1.
pub fn mask_iou(pred: &Array3<bool>, gt: &Array3<bool>) -> Result<f64> {
    ensure!(pred.dim() == gt.dim(), "masks have shapes {:?} and {:?}", pred.dim(), gt.dim());
    let t_count = pred.dim().0;
    ensure!(t_count > 0, "empty mask video");
    let mut total = 0.0;
    for t in 0..t_count {
        let (mut inter, mut union) = (0usize, 0usize);
        Zip::from(pred.slice(s![t, .., ..])).and(gt.slice(s![t, .., ..])).for_each(|&a, &b| {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        });
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(total / t_count as f64)
}

pub fn boxes_of(masks: &Array3<bool>) -> Vec<Option<BBox>> {
    (0..masks.dim().0).map(|t| BBox::of_mask(masks.slice(s![t, .., ..]))).collect()
}

/// Per-frame box IoU averaged over frames.
pub fn box_iou(pred: &[Option<BBox>], gt: &[Option<BBox>]) -> Result<f64> {
    ensure!(pred.len() == gt.len() && !pred.is_empty(), "box sequences have lengths {} and {}", pred.len(), gt.len());
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| match (a, b) {
            (None, None) => 1.0,
            (Some(a), Some(b)) => {
                let inter = a.intersection_area(b);
                inter as f64 / (a.area() + b.area() - inter) as f64
            }
            _ => 0.0,
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// `1 − mean` over adjacent pairs of the mean absolute flow-warped residual.
pub fn flicker_metric(video: &Array4<f64>, epsilon: f64) -> Result<f64> {
    let flows = video_flows(video, epsilon)?;
    let mut total = 0.0;
    for (t, f) in flows.iter().enumerate() {
        let warped = bilinear_warp(video.slice(s![t, .., .., ..]), f)?;
        let next = video.slice(s![t + 1, .., .., ..]);
        total += Zip::from(&warped).and(&next).fold(0.0, |s, a, b| s + (a - b).abs()) / warped.len() as f64;
    }
    Ok(1.0 - total / flows.len() as f64)
}

/// Mean absolute error inside and outside a mask: `(inside, outside)`.
pub fn masked_mae(a: &Array4<f64>, b: &Array4<f64>, mask: &Array3<bool>) -> Result<(f64, f64)> {
    check_dims(a, b)?;
    let (t, h, w, c) = a.dim();
    ensure!(mask.dim() == (t, h, w), "mask does not match video");
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for ((ti, y, x), &on) in mask.indexed_iter() {
        let k = if on { 0 } else { 1 };
        for ch in 0..c {
            sums[k] += (a[[ti, y, x, ch]] - b[[ti, y, x, ch]]).abs();
        }
        counts[k] += c;
    }
    let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    Ok((mean(0), mean(1)))
}

/// `T×H×W×3` video as a `(T·H·W)×3` matrix.
pub fn video_as_matrix(video: &Array4<f64>) -> Array2<f64> {
    let (t, h, w, c) = video.dim();
    video.as_standard_layout().to_owned().into_shape_with_order((t * h * w, c)).expect("contiguous video")
}
