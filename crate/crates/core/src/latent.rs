//! Lossless space-to-depth codec between pixel videos and the latent grid.
//!
//! A `p×p×c` pixel block becomes one latent vector of length `c·p²`. Within a
//! block, pixel `(dy, dx)` and channel `ch` land on latent channel
//! `(dy·p + dx)·c + ch`. There is no temporal compression.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::synthworld::BBox;

/// Default spatial patch size.
pub const DEFAULT_PATCH: usize = 4;

/// A video (or per-pixel map) in latent form: `T × C × H' × W'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVideo {
    pub data: Array4<f64>,
    pub patch_size: usize,
    /// `(T, H, W, channels)` of the pixel-space source.
    pub source_shape: (usize, usize, usize, usize),
}

/// Latent channel holding pixel `(dy, dx)`, channel `ch` of a block.
#[inline]
pub fn latent_channel(dy: usize, dx: usize, ch: usize, patch: usize, channels: usize) -> usize {
    (dy * patch + dx) * channels + ch
}

/// Encodes a `T×H×W×c` video.
pub fn encode(video: &Array4<f64>, patch_size: usize) -> Result<LatentVideo> {
    let (t, h, w, c) = video.dim();
    ensure!(patch_size >= 1, "patch size must be at least 1");
    ensure!(
        h % patch_size == 0 && w % patch_size == 0,
        "frame {h}x{w} is not divisible by patch size {patch_size}"
    );
    let p = patch_size;
    let (gh, gw) = (h / p, w / p);
    let mut data = Array4::zeros((t, c * p * p, gh, gw));
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[[ti, latent_channel(y % p, x % p, ch, p, c), y / p, x / p]] =
                        video[[ti, y, x, ch]];
                }
            }
        }
    }
    Ok(LatentVideo {
        data,
        patch_size,
        source_shape: (t, h, w, c),
    })
}

/// Exact inverse of [`encode`].
pub fn decode(latent: &LatentVideo) -> Result<Array4<f64>> {
    let p = latent.patch_size;
    let (t, cl, gh, gw) = latent.data.dim();
    let (st, sh, sw, sc) = latent.source_shape;
    ensure!(p >= 1, "patch size must be at least 1");
    if cl % (p * p) != 0 {
        return Err(Error::invalid(format!(
            "latent channel count {cl} is not divisible by p² = {}",
            p * p
        )));
    }
    let c = cl / (p * p);
    if (st, sh, sw, sc) != (t, gh * p, gw * p, c) {
        return Err(Error::invalid(format!(
            "source shape {:?} inconsistent with latent {:?} at patch {p}",
            latent.source_shape,
            latent.data.dim()
        )));
    }
    let mut out = Array4::zeros((t, sh, sw, c));
    for ti in 0..t {
        for y in 0..sh {
            for x in 0..sw {
                for ch in 0..c {
                    out[[ti, y, x, ch]] =
                        latent.data[[ti, latent_channel(y % p, x % p, ch, p, c), y / p, x / p]];
                }
            }
        }
    }
    Ok(out)
}

/// Encodes a single-channel `T×H×W` map (masks, depth) to `C = p²`.
pub fn encode_scalar_map(map: &Array3<f64>, patch_size: usize) -> Result<LatentVideo> {
    let (t, h, w) = map.dim();
    let video = map
        .clone()
        .into_shape_with_order((t, h, w, 1))
        .map_err(|e| Error::shape(e.to_string()))?;
    encode(&video, patch_size)
}

pub fn decode_scalar_map(latent: &LatentVideo) -> Result<Array3<f64>> {
    let v = decode(latent)?;
    let (t, h, w, c) = v.dim();
    ensure!(c == 1, "latent does not hold a scalar map (c = {c})");
    v.into_shape_with_order((t, h, w))
        .map_err(|e| Error::shape(e.to_string()))
}

impl LatentVideo {
    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn grid(&self) -> (usize, usize) {
        let (_, _, gh, gw) = self.data.dim();
        (gh, gw)
    }

    pub fn token_count(&self) -> usize {
        let (t, _, gh, gw) = self.data.dim();
        t * gh * gw
    }

    /// Token matrix `(T·H'·W') × C`, tokens ordered by frame, then row, then column.
    pub fn to_tokens(&self) -> Array2<f64> {
        let (t, c, gh, gw) = self.data.dim();
        let mut out = Array2::zeros((t * gh * gw, c));
        for ti in 0..t {
            for i in 0..gh {
                for j in 0..gw {
                    let row = (ti * gh + i) * gw + j;
                    for ch in 0..c {
                        out[[row, ch]] = self.data[[ti, ch, i, j]];
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`LatentVideo::to_tokens`]; `like` supplies grid, patch and source shape.
    pub fn from_tokens(tokens: &Array2<f64>, like: &LatentVideo) -> Result<LatentVideo> {
        let (t, c, gh, gw) = like.data.dim();
        if tokens.dim() != (t * gh * gw, c) {
            return Err(Error::shape(format!(
                "tokens {:?} do not fit latent {:?}",
                tokens.dim(),
                like.data.dim()
            )));
        }
        let mut data = Array4::zeros((t, c, gh, gw));
        for ti in 0..t {
            for i in 0..gh {
                for j in 0..gw {
                    let row = (ti * gh + i) * gw + j;
                    for ch in 0..c {
                        data[[ti, ch, i, j]] = tokens[[row, ch]];
                    }
                }
            }
        }
        Ok(LatentVideo {
            data,
            patch_size: like.patch_size,
            source_shape: like.source_shape,
        })
    }
}

/// Geometry of a token matrix produced by [`LatentVideo::to_tokens`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
}

impl TokenGrid {
    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        self.frames * gh * gw
    }

    pub fn token_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Flat row-major index into the token matrix of pixel `(t, y, x, ch)`.
    #[inline]
    pub fn flat_index(&self, t: usize, y: usize, x: usize, ch: usize) -> usize {
        let p = self.patch;
        let (gh, gw) = self.grid();
        let row = (t * gh + y / p) * gw + x / p;
        row * self.token_dim() + latent_channel(y % p, x % p, ch, p, self.channels)
    }

    /// Decodes a token matrix straight to pixels.
    pub fn decode_tokens(&self, tokens: &Array2<f64>) -> Result<Array4<f64>> {
        if tokens.dim() != (self.tokens(), self.token_dim()) {
            return Err(Error::shape(format!(
                "tokens {:?} do not fit grid {self:?}",
                tokens.dim()
            )));
        }
        let flat = tokens.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        Ok(Array4::from_shape_fn(
            (self.frames, self.height, self.width, self.channels),
            |(t, y, x, ch)| flat[self.flat_index(t, y, x, ch)],
        ))
    }
}

/// Rasterizes per-frame boxes (inclusive corners) into a binary `T×H×W` signal.
pub fn rasterize_box_signal(boxes: &[BBox], frame_size: (usize, usize)) -> Result<Array3<f64>> {
    let (h, w) = frame_size;
    let mut out = Array3::zeros((boxes.len(), h, w));
    for (t, b) in boxes.iter().enumerate() {
        ensure!(
            b.x_min <= b.x_max && b.y_min <= b.y_max && b.x_max < w && b.y_max < h,
            "box {b:?} lies outside a {h}x{w} frame"
        );
        for y in b.y_min..=b.y_max {
            for x in b.x_min..=b.x_max {
                out[[t, y, x]] = 1.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_shape_arithmetic() {
        let v = Array4::from_elem((1, 8, 8, 3), 0.25);
        let l = encode(&v, 4).unwrap();
        assert_eq!(l.data.dim(), (1, 48, 2, 2));
        assert_eq!(l.grid(), (2, 2));
    }

    #[test]
    fn identity_patching() {
        let v = Array4::from_shape_fn((2, 3, 5, 3), |(t, y, x, c)| (t * 100 + y * 10 + x) as f64 + c as f64 * 0.1);
        let l = encode(&v, 1).unwrap();
        for ((t, y, x, c), val) in v.indexed_iter() {
            assert_eq!(l.data[[t, c, y, x]], *val);
        }
    }

    #[test]
    fn constant_frame_stays_constant() {
        let v = Array4::from_elem((1, 8, 8, 3), 0.7);
        assert!(encode(&v, 4).unwrap().data.iter().all(|&x| x == 0.7));
    }

    #[test]
    fn non_divisible_is_rejected() {
        let v = Array4::<f64>::zeros((1, 6, 8, 3));
        assert!(matches!(encode(&v, 4), Err(Error::Invalid(_))));
    }

    #[test]
    fn checker_round_trip() {
        let cell = 2;
        let v = Array4::from_shape_fn((2, 8, 8, 3), |(_, y, x, _)| ((y / cell + x / cell) % 2) as f64);
        let back = decode(&encode(&v, cell).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn tampered_source_shape_is_rejected() {
        let v = Array4::<f64>::zeros((1, 8, 8, 3));
        let mut l = encode(&v, 4).unwrap();
        l.source_shape = (1, 8, 12, 3);
        assert!(decode(&l).is_err());
        let mut l = encode(&v, 4).unwrap();
        l.patch_size = 5;
        assert!(decode(&l).is_err());
    }

    #[test]
    fn single_pixel_lands_in_channel_zero() {
        let mut m = Array3::zeros((1, 4, 4));
        m[[0, 0, 0]] = 1.0;
        let l = encode_scalar_map(&m, 2).unwrap();
        assert_eq!(l.channels(), 4);
        for ((t, c, i, j), &val) in l.data.indexed_iter() {
            let expected = if (t, c, i, j) == (0, 0, 0, 0) { 1.0 } else { 0.0 };
            assert_eq!(val, expected);
        }
    }

    #[test]
    fn all_ones_mask_and_depth_round_trip() {
        let m = Array3::ones((2, 8, 8));
        assert!(encode_scalar_map(&m, 4).unwrap().data.iter().all(|&x| x == 1.0));
        let d = Array3::from_shape_fn((2, 8, 8), |(t, y, x)| (t + y * x) as f64 / 64.0);
        assert_eq!(decode_scalar_map(&encode_scalar_map(&d, 4).unwrap()).unwrap(), d);
    }

    #[test]
    fn box_signal() {
        let full = BBox { x_min: 0, y_min: 0, x_max: 7, y_max: 5 };
        assert!(rasterize_box_signal(&[full], (6, 8)).unwrap().iter().all(|&x| x == 1.0));
        let dot = BBox { x_min: 0, y_min: 0, x_max: 0, y_max: 0 };
        assert_eq!(rasterize_box_signal(&[dot], (6, 8)).unwrap().sum(), 1.0);
        let b = BBox { x_min: 2, y_min: 3, x_max: 5, y_max: 7 };
        let sig = rasterize_box_signal(&[b], (10, 10)).unwrap();
        let mut count = 0;
        for y in 0..10 {
            for x in 0..10 {
                if (2..=5).contains(&x) && (3..=7).contains(&y) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 20);
        assert_eq!(sig.sum(), count as f64);
        let outside = BBox { x_min: 0, y_min: 0, x_max: 10, y_max: 0 };
        assert!(rasterize_box_signal(&[outside], (10, 10)).is_err());
    }

    #[test]
    fn token_grid_matches_codec() {
        let v = Array4::from_shape_fn((2, 8, 8, 3), |(t, y, x, c)| (t * 1000 + y * 100 + x * 10 + c) as f64);
        let l = encode(&v, 4).unwrap();
        let grid = TokenGrid { frames: 2, height: 8, width: 8, channels: 3, patch: 4 };
        let toks = l.to_tokens();
        assert_eq!(grid.decode_tokens(&toks).unwrap(), v);
        assert_eq!(LatentVideo::from_tokens(&toks, &l).unwrap(), l);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(t in 1usize..3, gh in 1usize..3, gw in 1usize..3, p in 1usize..4, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v = Array4::from_shape_fn((t, gh * p, gw * p, 3), |_| rng.gen_range(-10.0..10.0));
            let back = decode(&encode(&v, p).unwrap()).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn encode_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Array4::from_shape_fn((2, 4, 4, 3), |_| rng.gen_range(-1.0..1.0));
            let y = Array4::from_shape_fn((2, 4, 4, 3), |_| rng.gen_range(-1.0..1.0));
            let lhs = encode(&(&x * a + &y * b), 2).unwrap().data;
            let rhs = &encode(&x, 2).unwrap().data * a + &encode(&y, 2).unwrap().data * b;
            // Space-to-depth only moves values, so each entry is the same expression.
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn mask_latents_stay_binary(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Array3::from_shape_fn((2, 8, 8), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            let l = encode_scalar_map(&m, 4).unwrap();
            prop_assert!(l.data.iter().all(|&x| x == 0.0 || x == 1.0));
        }
    }
}
