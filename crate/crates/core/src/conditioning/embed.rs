//! Deterministic stand-in for a joint text/image embedding model.

use ndarray::Array3;
use sha2::{Digest, Sha256};

use crate::synthworld::{CHECKER_SHADE, NEUTRAL_GRAY, PALETTE};

/// Maps prompts and images to unit vectors of a shared dimension.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed_text(&self, prompt: &str) -> Vec<f64>;
    fn embed_image(&self, image: &Array3<f64>) -> Vec<f64>;
}

/// Palette-histogram image embedding and a color-word text embedding.
///
/// Coordinate `k` holds palette color `k`; the last coordinate is a constant
/// presence term, so an all-gray image maps to that axis alone. Image pixels
/// vote for their nearest palette color (plain or checker-shaded) unless
/// they are closer to the neutral gray. Text weights each named color by
/// its rank, spreads object nouns over every color, and hashes the remaining
/// words into small pseudo-random offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEmbedder {
    pub seed: u64,
    /// Weight of the presence coordinate relative to a full-image histogram.
    pub presence: f64,
    /// Amplitude of hashed word offsets in text embeddings.
    pub word_noise: f64,
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        ToyEmbedder { seed: 0, presence: 0.02, word_noise: 0.02 }
    }
}

/// Object nouns; each adds a uniform weight over every palette color.
const OBJECT_WORDS: [&str; 3] = ["cube", "box", "ball"];
const OBJECT_WEIGHT: f64 = 0.6;

/// Text weight of the `rank`-th color word.
const RANK_WEIGHTS: [f64; 2] = [1.0, 0.5];
const LATER_RANK_WEIGHT: f64 = 0.25;

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        let last = v.len() - 1;
        v[last] = 1.0;
    }
    v
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

/// Palette bin of a pixel, `None` for background gray.
fn palette_bin(px: [f64; 3]) -> Option<usize> {
    let gray = dist2(px, [NEUTRAL_GRAY; 3]);
    let (bin, d) = PALETTE
        .iter()
        .enumerate()
        .map(|(k, (_, rgb))| (k, dist2(px, *rgb).min(dist2(px, rgb.map(|c| c * CHECKER_SHADE)))))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("palette is non-empty");
    (d < gray).then_some(bin)
}

impl ToyEmbedder {
    fn word_offsets(&self, word: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(word.as_bytes());
        let digest = h.finalize();
        (0..PALETTE.len()).map(|i| (digest[i] as f64 / 255.0 - 0.5) * 2.0 * self.word_noise).collect()
    }
}

impl EmbeddingProvider for ToyEmbedder {
    fn dim(&self) -> usize {
        PALETTE.len() + 1
    }

    fn embed_text(&self, prompt: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        let mut rank = 0;
        for word in prompt.split_whitespace() {
            let word = word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            if let Some(k) = PALETTE.iter().position(|(n, _)| *n == word) {
                v[k] += RANK_WEIGHTS.get(rank).copied().unwrap_or(LATER_RANK_WEIGHT);
                rank += 1;
            } else if OBJECT_WORDS.contains(&word.as_str()) {
                v[..PALETTE.len()].iter_mut().for_each(|x| *x += OBJECT_WEIGHT);
            } else {
                for (i, o) in self.word_offsets(&word).into_iter().enumerate() {
                    v[i] += o;
                }
            }
        }
        normalize(v)
    }

    fn embed_image(&self, image: &Array3<f64>) -> Vec<f64> {
        let (h, w, _) = image.dim();
        let mut v = vec![0.0; self.dim()];
        for y in 0..h {
            for x in 0..w {
                if let Some(k) = palette_bin([image[[y, x, 0]], image[[y, x, 1]], image[[y, x, 2]]]) {
                    v[k] += 1.0;
                }
            }
        }
        let last = v.len() - 1;
        v[last] = self.presence * (h * w) as f64;
        normalize(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn square(rgb: [f64; 3]) -> Array3<f64> {
        let mut img = Array3::from_elem((16, 16, 3), NEUTRAL_GRAY);
        for y in 4..12 {
            for x in 4..12 {
                for c in 0..3 {
                    img[[y, x, c]] = rgb[c];
                }
            }
        }
        img
    }

    #[test]
    fn outputs_are_unit_vectors() {
        let e = ToyEmbedder::default();
        for p in ["a red cube", "", "a blue ball with green sides and a plain surface"] {
            assert!((norm(&e.embed_text(p)) - 1.0).abs() < 1e-12);
        }
        let img = Array3::from_shape_fn((16, 16, 3), |(y, x, c)| ((y * 7 + x * 3 + c) % 11) as f64 / 10.0);
        assert!((norm(&e.embed_image(&img)) - 1.0).abs() < 1e-12);
        let gray = Array3::from_elem((16, 16, 3), NEUTRAL_GRAY);
        let g = e.embed_image(&gray);
        assert_eq!(g[g.len() - 1], 1.0);
    }

    #[test]
    fn matching_color_scores_higher() {
        let e = ToyEmbedder::default();
        let iv = e.embed_image(&square(PALETTE[0].1));
        assert!(dot(&iv, &e.embed_text("a red cube")) > dot(&iv, &e.embed_text("a blue cube")) + 0.3);
    }

    #[test]
    fn shaded_pixels_count_for_their_color() {
        let e = ToyEmbedder::default();
        let plain = e.embed_image(&square(PALETTE[2].1));
        let shaded = e.embed_image(&square(PALETTE[2].1.map(|c| c * CHECKER_SHADE)));
        assert_eq!(plain, shaded);
    }

    #[test]
    fn gray_image_is_orthogonal_to_color_words() {
        let e = ToyEmbedder { word_noise: 0.0, ..Default::default() };
        let g = e.embed_image(&Array3::from_elem((8, 8, 3), NEUTRAL_GRAY));
        assert_eq!(dot(&g, &e.embed_text("a green ball with red sides")), 0.0);
    }
}
