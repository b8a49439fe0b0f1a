use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::forward::{dit_forward_on_tape, Conditioning, ParamVars};
use super::{from_model_space, ModelConfig, ModelParams};
use crate::error::{ensure, Result};
use crate::grounding::{depth_loss_on_tape, fpn_on_tape, seg_loss_on_tape};
use crate::latent::TokenGrid;
use crate::nn;
use crate::tape::{Tape, Var};
use crate::temporal::{latent_residual_map, temporal_loss_on_tape, video_flows, FlowField, LossTerms};
use crate::toggles::{LossWeights, Toggles};

/// Supervision for one clip, all as video-token matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// Clean latent in model space, `L_video×C`.
    pub x0: Array2<f64>,
    /// Encoded depth, `L_video×p²`.
    pub depth: Array2<f64>,
    /// Encoded object mask, `L_video×p²`.
    pub seg: Array2<f64>,
    pub grid: TokenGrid,
}

/// The random part of one rectified-flow sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: f64,
    pub noise: Array2<f64>,
}

impl NoiseDraw {
    pub fn sample<R: Rng>(rng: &mut R, shape: (usize, usize)) -> Self {
        let t = rng.gen::<f64>();
        let noise = Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal));
        NoiseDraw { t, noise }
    }

    /// `x_t = (1−t)·x₀ + t·ε`.
    pub fn interpolate(&self, x0: &Array2<f64>) -> Array2<f64> {
        x0 * (1.0 - self.t) + &self.noise * self.t
    }

    /// `ε − x₀`.
    pub fn target_velocity(&self, x0: &Array2<f64>) -> Array2<f64> {
        &self.noise - x0
    }
}

#[derive(Clone, Debug)]
pub struct LossOptions {
    pub toggles: Toggles,
    pub weights: LossWeights,
    pub epsilon_flow: f64,
    /// Flows to use for the temporal term instead of estimating them from
    /// the current prediction.
    pub flow_override: Option<Vec<FlowField>>,
}

pub struct LossGraph {
    pub tape: Tape,
    pub params: ParamVars,
    pub total: Var,
    pub terms: LossTerms,
    /// `[L_diff, L_depth, L_seg, L_temp]` nodes.
    pub term_vars: [Var; 4],
    pub total_value: f64,
    /// Flows used by the temporal term.
    pub flows: Vec<FlowField>,
}

/// `mean((pred − target)²)` on a tape.
pub fn velocity_loss_on_tape(tape: &mut Tape, pred: Var, target: &Array2<f64>) -> Result<Var> {
    let tgt = tape.leaf(target.clone());
    let d = tape.sub(pred, tgt)?;
    let s = tape.square(d);
    Ok(tape.mean(s))
}

/// Records the full objective for one sample.
pub fn training_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    cond: &Conditioning,
    targets: &Targets,
    draw: &NoiseDraw,
    opts: &LossOptions,
) -> Result<LossGraph> {
    ensure!(draw.noise.dim() == targets.x0.dim(), "noise {:?} does not match latent {:?}", draw.noise.dim(), targets.x0.dim());
    let mut tape = Tape::new();
    let p = ParamVars::new(&mut tape, params);
    let x_t_value = draw.interpolate(&targets.x0);
    let x_t = tape.leaf(x_t_value);
    let out = dit_forward_on_tape(&mut tape, cfg, &p, x_t, draw.t, cond, &opts.toggles)?;
    let l_diff = velocity_loss_on_tape(&mut tape, out.velocity, &draw.target_velocity(&targets.x0))?;

    let laterals: Vec<Var> = (0..cfg.n_blocks)
        .map(|i| p.get(&format!("fpn.lateral.{i}.weight")))
        .collect::<Result<_>>()?;
    let fused = fpn_on_tape(&mut tape, &out.features, &laterals, [p.get("fpn.fuse.weight")?, p.get("fpn.fuse.bias")?])?;
    let depth = nn::linear(&mut tape, fused, p.get("depth_head.weight")?, Some(p.get("depth_head.bias")?))?;
    let depth_gt = tape.leaf(targets.depth.clone());
    let l_depth = depth_loss_on_tape(&mut tape, depth, depth_gt)?;
    let seg = nn::linear(&mut tape, fused, p.get("contour_head.weight")?, Some(p.get("contour_head.bias")?))?;
    let seg_gt = tape.leaf(targets.seg.clone());
    let l_seg = seg_loss_on_tape(&mut tape, seg, seg_gt)?;

    // One-step clean estimate x̂₀ = x_t − t·v̂, decoded to pixels.
    let tv = tape.scale(out.velocity, draw.t);
    let x0_hat = tape.sub(x_t, tv)?;
    let flows = match &opts.flow_override {
        Some(f) => f.clone(),
        None => {
            let pixels = targets.grid.decode_tokens(&from_model_space(tape.value(x0_hat)))?;
            video_flows(&pixels, opts.epsilon_flow)?
        }
    };
    let map = Arc::new(latent_residual_map(targets.grid, &flows, 0.5)?);
    let l_temp = temporal_loss_on_tape(&mut tape, x0_hat, map)?;

    let terms = LossTerms {
        diff: tape.scalar_value(l_diff),
        depth: tape.scalar_value(l_depth),
        seg: tape.scalar_value(l_seg),
        temp: tape.scalar_value(l_temp),
    };
    let mut total = l_diff;
    for (on, lambda, term) in [
        (opts.toggles.dh, opts.weights.lambda_d, l_depth),
        (opts.toggles.ch, opts.weights.lambda_s, l_seg),
        (opts.toggles.tco, opts.weights.lambda_t, l_temp),
    ] {
        if on {
            let w = tape.scale(term, lambda);
            total = tape.add(total, w)?;
        }
    }
    let total_value = tape.scalar_value(total);
    Ok(LossGraph { tape, params: p, total, terms, term_vars: [l_diff, l_depth, l_seg, l_temp], total_value, flows })
}

/// Rectified-flow velocity loss: draws `t ~ U(0,1)` and `ε ~ N(0, I)` from
/// `rng` and scores the denoiser on the video tokens.
pub fn diffusion_loss<R: Rng>(
    params: &ModelParams,
    cfg: &ModelConfig,
    x0: &Array2<f64>,
    cond: &Conditioning,
    toggles: &Toggles,
    rng: &mut R,
) -> Result<f64> {
    let draw = NoiseDraw::sample(rng, x0.dim());
    let (v, _) = super::dit_forward(params, cfg, &draw.interpolate(x0), draw.t, cond, toggles)?;
    let target = draw.target_velocity(x0);
    Ok((&v - &target).mapv(|d| d * d).mean().unwrap_or(0.0))
}
