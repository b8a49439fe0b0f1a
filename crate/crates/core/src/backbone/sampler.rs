use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::forward::{dit_forward, Conditioning};
use super::{ModelConfig, ModelParams};
use crate::error::{ensure, Result};
use crate::toggles::Toggles;

pub const DEFAULT_STEPS: usize = 50;

/// Integrates `dx/dt = v(x, t)` from `t = 1` to `t = 0` with `steps`
/// uniform Euler steps.
pub fn euler_integrate(
    x1: Array2<f64>,
    steps: usize,
    mut velocity: impl FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    ensure!(steps >= 1, "sampling needs at least one step");
    let dt = 1.0 / steps as f64;
    let mut x = x1;
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let v = velocity(&x, t)?;
        x = x - v * dt;
    }
    Ok(x)
}

/// Initial noise for a sampling run.
pub fn sampling_noise(seed: u64, shape: (usize, usize)) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// Generates the video tokens (model space) for `cond` from seeded noise.
pub fn sample(
    params: &ModelParams,
    cfg: &ModelConfig,
    cond: &Conditioning,
    toggles: &Toggles,
    steps: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    ensure!(steps >= 1, "sampling needs at least one step");
    let shape = (cond.injected.layout.video_tokens(), cfg.latent_channels());
    euler_integrate(sampling_noise(seed, shape), steps, |x, t| {
        dit_forward(params, cfg, x, t, cond, toggles).map(|(v, _)| v)
    })
}
