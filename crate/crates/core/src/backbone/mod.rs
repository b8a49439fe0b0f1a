//! The denoising transformer, its rectified-flow objective and sampler.

mod config;
mod flops;
mod forward;
mod objective;
mod params;
mod sampler;

pub use config::ModelConfig;
pub use flops::{forward_flops, training_step_flops};
pub use forward::{dit_forward, dit_forward_on_tape, timestep_features, Conditioning, ForwardOutput, ParamVars};
pub use objective::{
    diffusion_loss, training_loss, velocity_loss_on_tape, LossGraph, LossOptions, NoiseDraw, Targets,
};
pub use params::ModelParams;
pub use sampler::{euler_integrate, sample, sampling_noise, DEFAULT_STEPS};

use ndarray::Array2;

/// Maps `[0,1]` pixel latents to the `[-1,1]` range the model works in.
pub fn to_model_space(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| 2.0 * v - 1.0)
}

pub fn from_model_space(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| 0.5 * (v + 1.0))
}

#[cfg(test)]
mod tests;
