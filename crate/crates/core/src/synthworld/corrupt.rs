//! Reconstruction-style artifacts applied to multi-view renders: over-smoothing,
//! texture warping and missing geometry.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::NEUTRAL_GRAY;
use super::MultiViewReferenceSet;
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub p_blur: f64,
    pub blur_sigma: f64,
    pub p_warp: f64,
    /// Peak displacement in pixels.
    pub warp_amplitude: f64,
    /// Sinusoid periods across the image.
    pub warp_frequency: f64,
    pub p_hole: f64,
    /// Hole side as a fraction of the image side.
    pub hole_fraction: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            p_blur: 0.3,
            blur_sigma: 1.0,
            p_warp: 0.3,
            warp_amplitude: 1.5,
            warp_frequency: 1.0,
            p_hole: 0.3,
            hole_fraction: 0.5,
        }
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        CorruptionConfig {
            p_blur: 0.0,
            p_warp: 0.0,
            p_hole: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_blur", self.p_blur), ("p_warp", self.p_warp), ("p_hole", self.p_hole)] {
            ensure!((0.0..=1.0).contains(&p), "{name} = {p} is not a probability");
        }
        ensure!(self.blur_sigma >= 0.0, "blur sigma must be non-negative");
        ensure!(self.warp_amplitude >= 0.0, "warp amplitude must be non-negative");
        ensure!(
            (0.0..=1.0).contains(&self.hole_fraction),
            "hole fraction must lie in [0,1]"
        );
        Ok(())
    }
}

/// Applies each corruption to each view independently with its configured
/// probability, in the order blur, warp, hole. Flags record modified views.
pub fn corrupt_views<R: Rng>(
    set: &MultiViewReferenceSet,
    config: &CorruptionConfig,
    rng: &mut R,
) -> Result<MultiViewReferenceSet> {
    config.validate()?;
    let mut out = set.clone();
    for v in 0..set.len() {
        let mut img = set.view(v);
        let mut touched = false;
        // Draws happen unconditionally so the stream does not depend on outcomes.
        let (rb, rw, rh): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let phases: [f64; 2] = [rng.gen::<f64>() * std::f64::consts::TAU, rng.gen::<f64>() * std::f64::consts::TAU];
        let hole_pos: [f64; 2] = [rng.gen(), rng.gen()];
        if rb < config.p_blur {
            img = gaussian_blur(&img, config.blur_sigma);
            touched = true;
        }
        if rw < config.p_warp {
            img = sinusoid_warp(&img, config.warp_amplitude, config.warp_frequency, phases);
            touched = true;
        }
        if rh < config.p_hole {
            let (h, w, _) = img.dim();
            let hh = ((h as f64) * config.hole_fraction).round() as usize;
            let hw = ((w as f64) * config.hole_fraction).round() as usize;
            let y0 = ((h - hh) as f64 * hole_pos[0]).floor() as usize;
            let x0 = ((w - hw) as f64 * hole_pos[1]).floor() as usize;
            fill_hole(&mut img, y0, x0, hh, hw);
            touched = true;
        }
        if touched {
            out.set_view(v, &img);
            out.corrupted_flags[v] = true;
        }
    }
    Ok(out)
}

/// Separable Gaussian blur with replicate borders; `sigma` below 1e-3 is the identity.
pub fn gaussian_blur(img: &Array3<f64>, sigma: f64) -> Array3<f64> {
    if sigma < 1e-3 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (h, w, c) = img.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * img[[y, clamp(x as isize + k as isize - radius, w), ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[[clamp(y as isize + k as isize - radius, h), x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

/// Resamples `img` at `(x + dx, y + dy)` where `dx` varies sinusoidally along
/// y and `dy` along x.
pub fn sinusoid_warp(img: &Array3<f64>, amplitude: f64, frequency: f64, phases: [f64; 2]) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let tau = std::f64::consts::TAU;
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let dx = amplitude * (tau * frequency * y as f64 / h as f64 + phases[0]).sin();
            let dy = amplitude * (tau * frequency * x as f64 / w as f64 + phases[1]).sin();
            for ch in 0..c {
                out[[y, x, ch]] = sample_bilinear(img, x as f64 + dx, y as f64 + dy, ch);
            }
        }
    }
    out
}

/// Bilinear lookup with coordinates clamped to the image border.
pub fn sample_bilinear(img: &Array3<f64>, x: f64, y: f64, ch: usize) -> f64 {
    let (h, w, _) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img[[y0, x0, ch]] * (1.0 - fx) + img[[y0, x1, ch]] * fx;
    let bot = img[[y1, x0, ch]] * (1.0 - fx) + img[[y1, x1, ch]] * fx;
    top * (1.0 - fy) + bot * fy
}

pub fn fill_hole(img: &mut Array3<f64>, y0: usize, x0: usize, hh: usize, hw: usize) {
    let (h, w, c) = img.dim();
    for y in y0..(y0 + hh).min(h) {
        for x in x0..(x0 + hw).min(w) {
            for ch in 0..c {
                img[[y, x, ch]] = NEUTRAL_GRAY;
            }
        }
    }
}
