use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::Rgb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Gradient { from: Rgb, to: Rgb, vertical: bool },
    Stripes { a: Rgb, b: Rgb, period: usize, vertical: bool },
    /// Bilinearly interpolated value noise on a `cell`-pixel lattice.
    NoiseTexture { seed: u64, base: Rgb, amplitude: f64, cell: usize },
}

impl Background {
    pub fn render(&self, size: (usize, usize)) -> Array3<f64> {
        let (h, w) = size;
        match self {
            Background::Gradient { from, to, vertical } => Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                let s = if *vertical {
                    y as f64 / (h.max(2) - 1) as f64
                } else {
                    x as f64 / (w.max(2) - 1) as f64
                };
                from[c] + (to[c] - from[c]) * s
            }),
            Background::Stripes { a, b, period, vertical } => {
                let period = (*period).max(1);
                Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                    let k = if *vertical { x } else { y } / period;
                    if k % 2 == 0 {
                        a[c]
                    } else {
                        b[c]
                    }
                })
            }
            Background::NoiseTexture { seed, base, amplitude, cell } => {
                let cell = (*cell).max(1);
                let (gh, gw) = (h / cell + 2, w / cell + 2);
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let lattice = Array3::from_shape_fn((gh, gw, 3), |_| rng.gen::<f64>());
                Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                    let fy = y as f64 / cell as f64;
                    let fx = x as f64 / cell as f64;
                    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                    let v = lattice[[y0, x0, c]] * (1.0 - ty) * (1.0 - tx)
                        + lattice[[y0, x0 + 1, c]] * (1.0 - ty) * tx
                        + lattice[[y0 + 1, x0, c]] * ty * (1.0 - tx)
                        + lattice[[y0 + 1, x0 + 1, c]] * ty * tx;
                    (base[c] + amplitude * (v - 0.5)).clamp(0.0, 1.0)
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_endpoints() {
        let bg = Background::Gradient { from: [0.0, 0.2, 0.4], to: [1.0, 0.2, 0.0], vertical: false };
        let img = bg.render((8, 10));
        assert_eq!(img[[3, 0, 0]], 0.0);
        assert_eq!(img[[3, 9, 0]], 1.0);
        assert_eq!(img[[5, 4, 1]], 0.2);
    }

    #[test]
    fn stripes_alternate() {
        let bg = Background::Stripes { a: [0.0; 3], b: [1.0; 3], period: 2, vertical: true };
        let img = bg.render((8, 8));
        assert_eq!(img[[0, 1, 0]], 0.0);
        assert_eq!(img[[0, 2, 0]], 1.0);
    }

    #[test]
    fn noise_is_seeded_and_bounded() {
        let bg = Background::NoiseTexture { seed: 3, base: [0.5; 3], amplitude: 0.6, cell: 4 };
        let a = bg.render((16, 16));
        assert_eq!(a, bg.render((16, 16)));
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
