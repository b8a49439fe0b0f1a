//! Flow-guided temporal consistency: luma, Sobel gradients, one-shot
//! Lucas–Kanade flow, bilinear warping and the warped-residual loss.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3};

use crate::error::{ensure, Result};
use crate::latent::TokenGrid;
use crate::tape::{SparseMap, Tape, Var};
use crate::toggles::{LossWeights, Toggles};

pub const EPSILON_FLOW: f64 = 1e-6;

/// Per-pixel displacement in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub epsilon: f64,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField { u: Array2::zeros((h, w)), v: Array2::zeros((h, w)), epsilon: EPSILON_FLOW }
    }
}

pub fn to_gray(frame: ArrayView3<f64>) -> Array2<f64> {
    let (h, w, _) = frame.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * frame[[y, x, 0]] + 0.587 * frame[[y, x, 1]] + 0.114 * frame[[y, x, 2]]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub ix: Array2<f64>,
    pub iy: Array2<f64>,
    pub it: Array2<f64>,
}

/// Sobel derivatives of `g0` (scaled by 1/8, replicate border) and the
/// forward difference `g1 − g0`.
pub fn sobel_gradients(g0: ArrayView2<f64>, g1: ArrayView2<f64>) -> Result<Gradients> {
    ensure!(g0.dim() == g1.dim(), "frame shapes {:?} and {:?} differ", g0.dim(), g1.dim());
    let (h, w) = g0.dim();
    ensure!(h > 0 && w > 0, "empty frame");
    let px = |y: isize, x: isize| g0[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]];
    // Positive and negative taps are summed separately so that a constant
    // neighbourhood yields an exact zero.
    const W: [f64; 3] = [1.0, 2.0, 1.0];
    let mut ix = Array2::zeros((h, w));
    let mut iy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (y, x) = (y as isize, x as isize);
            let (mut right, mut left, mut down, mut up) = (0.0, 0.0, 0.0, 0.0);
            for (k, &wk) in W.iter().enumerate() {
                let o = k as isize - 1;
                right += wk * px(y + o, x + 1);
                left += wk * px(y + o, x - 1);
                down += wk * px(y + 1, x + o);
                up += wk * px(y - 1, x + o);
            }
            ix[[y as usize, x as usize]] = (right - left) / 8.0;
            iy[[y as usize, x as usize]] = (down - up) / 8.0;
        }
    }
    Ok(Gradients { ix, iy, it: &g1 - &g0 })
}

pub fn lk_flow(g0: ArrayView2<f64>, g1: ArrayView2<f64>, epsilon: f64) -> Result<FlowField> {
    ensure!(epsilon > 0.0, "flow epsilon must be positive, got {epsilon}");
    let g = sobel_gradients(g0, g1)?;
    let den = &g.ix * &g.ix + &g.iy * &g.iy + epsilon;
    let u = -(&g.it * &g.ix) / &den;
    let v = -(&g.it * &g.iy) / &den;
    Ok(FlowField { u, v, epsilon })
}

/// The four taps `(y, x, weight)` of a border-clamped bilinear lookup.
pub fn bilinear_taps(x: f64, y: f64, h: usize, w: usize) -> [(usize, usize, f64); 4] {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    [
        (y0, x0, (1.0 - fx) * (1.0 - fy)),
        (y0, x1, fx * (1.0 - fy)),
        (y1, x0, (1.0 - fx) * fy),
        (y1, x1, fx * fy),
    ]
}

/// Samples `frame` at `(x + u, y + v)` for every pixel.
pub fn bilinear_warp(frame: ArrayView3<f64>, flow: &FlowField) -> Result<Array3<f64>> {
    let (h, w, c) = frame.dim();
    ensure!(flow.u.dim() == (h, w) && flow.v.dim() == (h, w), "flow {:?} does not match frame {h}×{w}", flow.u.dim());
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            if flow.u[[y, x]] == 0.0 && flow.v[[y, x]] == 0.0 {
                out.slice_mut(s![y, x, ..]).assign(&frame.slice(s![y, x, ..]));
                continue;
            }
            let taps = bilinear_taps(x as f64 + flow.u[[y, x]], y as f64 + flow.v[[y, x]], h, w);
            for ch in 0..c {
                out[[y, x, ch]] = taps.iter().map(|&(ty, tx, wt)| wt * frame[[ty, tx, ch]]).sum();
            }
        }
    }
    Ok(out)
}

/// Flow between each adjacent pair of frames of a `T×H×W×3` video.
pub fn video_flows(video: &Array4<f64>, epsilon: f64) -> Result<Vec<FlowField>> {
    let t_count = video.dim().0;
    ensure!(t_count >= 2, "temporal terms need at least two frames, got {t_count}");
    let grays: Vec<Array2<f64>> = (0..t_count).map(|t| to_gray(video.slice(s![t, .., .., ..]))).collect();
    grays.windows(2).map(|p| lk_flow(p[0].view(), p[1].view(), epsilon)).collect()
}

/// Mean squared warped residual `Σ‖W(I_t, F_t) − I_{t+1}‖² / ((T−1)·3HW)`.
pub fn temporal_loss(video: &Array4<f64>, epsilon: f64) -> Result<f64> {
    let flows = video_flows(video, epsilon)?;
    let (t_count, h, w, c) = video.dim();
    let mut acc = 0.0;
    for (t, f) in flows.iter().enumerate() {
        let warped = bilinear_warp(video.slice(s![t, .., .., ..]), f)?;
        acc += (&warped - &video.slice(s![t + 1, .., .., ..])).mapv(|d| d * d).sum();
    }
    Ok(acc / ((t_count - 1) * c * h * w) as f64)
}

/// Linear map from a flattened video (indexed by `index(t, y, x, ch)`) to
/// the `(T−1)·H·W × 3` matrix of `scale · (W(I_t, F_t) − I_{t+1})`.
pub fn residual_map(
    in_len: usize,
    frames: usize,
    size: (usize, usize),
    flows: &[FlowField],
    scale: f64,
    index: impl Fn(usize, usize, usize, usize) -> usize,
) -> Result<SparseMap> {
    let (h, w) = size;
    ensure!(flows.len() + 1 == frames, "{} flows for {frames} frames", flows.len());
    let mut b = SparseMap::builder(in_len, ((frames - 1) * h * w, 3));
    for (t, f) in flows.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let taps = bilinear_taps(x as f64 + f.u[[y, x]], y as f64 + f.v[[y, x]], h, w);
                for ch in 0..3 {
                    for &(ty, tx, wt) in &taps {
                        if wt != 0.0 {
                            b.term(index(t, ty, tx, ch), scale * wt);
                        }
                    }
                    b.term(index(t + 1, y, x, ch), -scale);
                    b.finish_row();
                }
            }
        }
    }
    b.build()
}

/// Residual map acting on a `T×H×W×3` video flattened as an `(T·H·W)×3` matrix.
pub fn pixel_residual_map(video_dim: (usize, usize, usize, usize), flows: &[FlowField]) -> Result<SparseMap> {
    let (t, h, w, c) = video_dim;
    ensure!(c == 3, "expected RGB frames");
    residual_map(t * h * w * 3, t, (h, w), flows, 1.0, |t, y, x, ch| ((t * h + y) * w + x) * 3 + ch)
}

/// Residual map acting directly on latent video tokens, composed with the
/// affine map `pixels = scale · tokens + offset` (the offset cancels).
pub fn latent_residual_map(grid: TokenGrid, flows: &[FlowField], scale: f64) -> Result<SparseMap> {
    ensure!(grid.channels == 3, "expected RGB latents");
    residual_map(grid.tokens() * grid.token_dim(), grid.frames, (grid.height, grid.width), flows, scale, |t, y, x, ch| {
        grid.flat_index(t, y, x, ch)
    })
}

/// `L_temp` on a tape: `sum(map(x)²) / rows·3`.
pub fn temporal_loss_on_tape(tape: &mut Tape, x: Var, map: Arc<SparseMap>) -> Result<Var> {
    let n = map.out_shape().0 * map.out_shape().1;
    let r = tape.sparse(x, map)?;
    let sq = tape.square(r);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// Individual loss terms of one training sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub diff: f64,
    pub depth: f64,
    pub seg: f64,
    pub temp: f64,
}

/// `L_diff + λ_d·L_depth + λ_s·L_seg + λ_t·L_temp`, skipping disabled terms.
pub fn total_loss(terms: LossTerms, weights: LossWeights, toggles: Toggles) -> f64 {
    let mut total = terms.diff;
    if toggles.dh {
        total += weights.lambda_d * terms.depth;
    }
    if toggles.ch {
        total += weights.lambda_s * terms.seg;
    }
    if toggles.tco {
        total += weights.lambda_t * terms.temp;
    }
    total
}

#[cfg(test)]
mod tests;
