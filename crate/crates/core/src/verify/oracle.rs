//! Brute-force reference implementations written with explicit loops and no
//! shared helpers, used to cross-check the vectorised kernels.

use ndarray::{Array2, Array3, Array4};

pub fn mv_attention_loop(
    x: &Array3<f64>,
    keys: &Array3<f64>,
    values: &Array3<f64>,
    alpha: f64,
    heads: usize,
    wq: &Array2<f64>,
) -> Array3<f64> {
    let (b, l, d) = x.dim();
    let (n, lv, _) = keys.dim();
    let hd = d / heads;
    let mut out = x.clone();
    for bi in 0..b {
        for i in 0..l {
            let mut q = vec![0.0; d];
            for (j, qj) in q.iter_mut().enumerate() {
                for k in 0..d {
                    *qj += x[[bi, i, k]] * wq[[k, j]];
                }
            }
            for h in 0..heads {
                let mut logits = Vec::new();
                for v in 0..n {
                    for t in 0..lv {
                        let mut dot = 0.0;
                        for c in h * hd..(h + 1) * hd {
                            dot += q[c] * keys[[v, t, c]];
                        }
                        logits.push(dot / (hd as f64).sqrt());
                    }
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|a| (a - m).exp()).sum();
                for c in h * hd..(h + 1) * hd {
                    let mut acc = 0.0;
                    let mut idx = 0;
                    for v in 0..n {
                        for t in 0..lv {
                            acc += (logits[idx] - m).exp() / z * values[[v, t, c]];
                            idx += 1;
                        }
                    }
                    out[[bi, i, c]] += alpha * acc;
                }
            }
        }
    }
    out
}

pub fn scale_bank_loop(keys: &Array3<f64>, values: &Array3<f64>, scores: &[f64]) -> (Array3<f64>, Array3<f64>) {
    let mut k = keys.clone();
    let mut v = values.clone();
    let (n, l, d) = keys.dim();
    for i in 0..n {
        for t in 0..l {
            for c in 0..d {
                k[[i, t, c]] = scores[i] * keys[[i, t, c]];
                v[[i, t, c]] = scores[i] * values[[i, t, c]];
            }
        }
    }
    (k, v)
}

/// `mean((pred − (ε − x₀))²)`.
pub fn velocity_mse_loop(pred: &Array2<f64>, x0: &Array2<f64>, noise: &Array2<f64>) -> f64 {
    let (r, c) = pred.dim();
    let mut acc = 0.0;
    for i in 0..r {
        for j in 0..c {
            let d = pred[[i, j]] - (noise[[i, j]] - x0[[i, j]]);
            acc += d * d;
        }
    }
    acc / (r * c) as f64
}

pub fn mean_abs_loop(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]).abs();
    }
    acc / a.len() as f64
}

pub fn mean_sq_loop(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    acc / a.len() as f64
}

pub fn gray_loop(frame: &Array3<f64>) -> Array2<f64> {
    let (h, w, _) = frame.dim();
    let mut g = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            g[[y, x]] = 0.299 * frame[[y, x, 0]] + 0.587 * frame[[y, x, 1]] + 0.114 * frame[[y, x, 2]];
        }
    }
    g
}

/// Normalised Sobel `(I_x, I_y)` with replicate padding.
pub fn sobel_loop(g: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = g.dim();
    let at = |y: i64, x: i64| g[[y.clamp(0, h as i64 - 1) as usize, x.clamp(0, w as i64 - 1) as usize]];
    let mut ix = Array2::zeros((h, w));
    let mut iy = Array2::zeros((h, w));
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            ix[[y as usize, x as usize]] = gx / 8.0;
            iy[[y as usize, x as usize]] = gy / 8.0;
        }
    }
    (ix, iy)
}

pub fn lk_flow_loop(g0: &Array2<f64>, g1: &Array2<f64>, eps: f64) -> (Array2<f64>, Array2<f64>) {
    let (ix, iy) = sobel_loop(g0);
    let (h, w) = g0.dim();
    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let it = g1[[y, x]] - g0[[y, x]];
            let den = ix[[y, x]] * ix[[y, x]] + iy[[y, x]] * iy[[y, x]] + eps;
            u[[y, x]] = -it * ix[[y, x]] / den;
            v[[y, x]] = -it * iy[[y, x]] / den;
        }
    }
    (u, v)
}

pub fn warp_loop(frame: &Array3<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Array3<f64> {
    let (h, w, c) = frame.dim();
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let sx = (x as f64 + u[[y, x]]).max(0.0).min((w - 1) as f64);
            let sy = (y as f64 + v[[y, x]]).max(0.0).min((h - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = if x0 + 1 < w { x0 + 1 } else { x0 };
            let y1 = if y0 + 1 < h { y0 + 1 } else { y0 };
            let ax = sx - x0 as f64;
            let ay = sy - y0 as f64;
            for ch in 0..c {
                out[[y, x, ch]] = (1.0 - ax) * (1.0 - ay) * frame[[y0, x0, ch]]
                    + ax * (1.0 - ay) * frame[[y0, x1, ch]]
                    + (1.0 - ax) * ay * frame[[y1, x0, ch]]
                    + ax * ay * frame[[y1, x1, ch]];
            }
        }
    }
    out
}

fn frame(video: &Array4<f64>, t: usize) -> Array3<f64> {
    let (_, h, w, c) = video.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| video[[t, y, x, ch]])
}

pub fn temporal_loss_loop(video: &Array4<f64>, eps: f64) -> f64 {
    let (t_count, h, w, c) = video.dim();
    let mut acc = 0.0;
    for t in 0..t_count - 1 {
        let a = frame(video, t);
        let b = frame(video, t + 1);
        let (u, v) = lk_flow_loop(&gray_loop(&a), &gray_loop(&b), eps);
        let warped = warp_loop(&a, &u, &v);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let d = warped[[y, x, ch]] - b[[y, x, ch]];
                    acc += d * d;
                }
            }
        }
    }
    acc / ((t_count - 1) * 3 * h * w) as f64
}

/// `1 − mean_t mean |W(I_t) − I_{t+1}|`.
pub fn flicker_loop(video: &Array4<f64>, eps: f64) -> f64 {
    let (t_count, h, w, c) = video.dim();
    let mut total = 0.0;
    for t in 0..t_count - 1 {
        let a = frame(video, t);
        let b = frame(video, t + 1);
        let (u, v) = lk_flow_loop(&gray_loop(&a), &gray_loop(&b), eps);
        let warped = warp_loop(&a, &u, &v);
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    acc += (warped[[y, x, ch]] - b[[y, x, ch]]).abs();
                }
            }
        }
        total += acc / (h * w * c) as f64;
    }
    1.0 - total / (t_count - 1) as f64
}

/// `x·W + b` row by row.
pub fn linear_loop(x: &Array2<f64>, w: &Array2<f64>, b: Option<&Array2<f64>>) -> Array2<f64> {
    let (r, k) = x.dim();
    let c = w.ncols();
    let mut out = Array2::zeros((r, c));
    for i in 0..r {
        for j in 0..c {
            let mut acc = b.map_or(0.0, |b| b[[0, j]]);
            for m in 0..k {
                acc += x[[i, m]] * w[[m, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Top-down pyramid sum of lateral projections followed by the fusion layer.
pub fn fpn_loop(levels: &[Array2<f64>], laterals: &[Array2<f64>], fuse_w: &Array2<f64>, fuse_b: &Array2<f64>) -> Array2<f64> {
    let mut acc = linear_loop(&levels[levels.len() - 1], &laterals[levels.len() - 1], None);
    for l in (0..levels.len() - 1).rev() {
        let p = linear_loop(&levels[l], &laterals[l], None);
        for i in 0..acc.nrows() {
            for j in 0..acc.ncols() {
                acc[[i, j]] += p[[i, j]];
            }
        }
    }
    linear_loop(&acc, fuse_w, Some(fuse_b))
}

pub fn psnr_loop(a: &[f64], b: &[f64]) -> f64 {
    let mse = mean_sq_loop(a, b);
    if mse == 0.0 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    }
}

/// Mean SSIM over all stride-1 8×8 windows of all frames, on luma.
pub fn ssim_loop(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    let (t_count, h, w, _) = a.dim();
    let win = 8;
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..t_count {
        let ga = gray_loop(&frame(a, t));
        let gb = gray_loop(&frame(b, t));
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let n = (win * win) as f64;
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        ma += ga[[y, x]];
                        mb += gb[[y, x]];
                    }
                }
                ma /= n;
                mb /= n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        va += (ga[[y, x]] - ma) * (ga[[y, x]] - ma);
                        vb += (gb[[y, x]] - mb) * (gb[[y, x]] - mb);
                        cov += (ga[[y, x]] - ma) * (gb[[y, x]] - mb);
                    }
                }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Per-frame IoU averaged over frames; empty unions count 1.
pub fn mask_iou_loop(a: &Array3<bool>, b: &Array3<bool>) -> f64 {
    let (t_count, h, w) = a.dim();
    let mut total = 0.0;
    for t in 0..t_count {
        let (mut inter, mut uni) = (0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                if a[[t, y, x]] && b[[t, y, x]] {
                    inter += 1;
                }
                if a[[t, y, x]] || b[[t, y, x]] {
                    uni += 1;
                }
            }
        }
        total += if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
    }
    total / t_count as f64
}

/// IoU of inclusive boxes given as `(x_min, y_min, x_max, y_max)`.
pub fn box_iou_loop(a: Option<(usize, usize, usize, usize)>, b: Option<(usize, usize, usize, usize)>) -> f64 {
    match (a, b) {
        (None, None) => 1.0,
        (None, _) | (_, None) => 0.0,
        (Some(a), Some(b)) => {
            let mut inter = 0usize;
            let mut uni = 0usize;
            let ymax = a.3.max(b.3);
            let xmax = a.2.max(b.2);
            for y in 0..=ymax {
                for x in 0..=xmax {
                    let ia = x >= a.0 && x <= a.2 && y >= a.1 && y <= a.3;
                    let ib = x >= b.0 && x <= b.2 && y >= b.1 && y <= b.3;
                    inter += (ia && ib) as usize;
                    uni += (ia || ib) as usize;
                }
            }
            inter as f64 / uni as f64
        }
    }
}
