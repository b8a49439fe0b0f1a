use std::collections::BTreeMap;

use ndarray::Array2;

use super::{ModelConfig, ModelParams};
use crate::conditioning::{bank_on_tape, mv_attention_on_tape, ConsistencyReport, InjectedSequence};
use crate::error::{ensure, Error, Result};
use crate::nn;
use crate::tape::{Tape, Var};
use crate::toggles::Toggles;

/// Everything the denoiser needs besides the noisy latent and the timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    /// Background/control tokens with the reference segment appended when
    /// latent injection is on.
    pub injected: InjectedSequence,
    /// Stacked `N·L_v×C` reference tokens for the feature bank.
    pub bank_tokens: Option<Array2<f64>>,
    /// Azimuth in degrees of each injected reference view.
    pub view_azimuths: Vec<f64>,
    pub report: ConsistencyReport,
    pub alpha_ref: f64,
}

/// Parameters recorded as tape leaves.
pub struct ParamVars {
    pub vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn new(tape: &mut Tape, params: &ModelParams) -> Self {
        ParamVars { vars: params.arrays.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }
}

pub struct ForwardOutput {
    /// `L_video×C` predicted velocity.
    pub velocity: Var,
    /// Video-token rows of each block's output, shallowest first.
    pub features: Vec<Var>,
}

/// Sinusoidal timestep features `[sin(1000·t·f_i), cos(1000·t·f_i)]`.
pub fn timestep_features(t: f64, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    Array2::from_shape_fn((1, dim), |(_, j)| {
        let i = j % half;
        let f = (-(1000f64.ln()) * i as f64 / half as f64).exp();
        let a = 1000.0 * t * f;
        if j < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Records one denoiser evaluation. `x_t` holds the noisy video tokens.
pub fn dit_forward_on_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ParamVars,
    x_t: Var,
    t: f64,
    cond: &Conditioning,
    toggles: &Toggles,
) -> Result<ForwardOutput> {
    ensure!((0.0..=1.0).contains(&t), "timestep {t} outside [0,1]");
    let layout = &cond.injected.layout;
    let c = cfg.latent_channels();
    ensure!(layout.grid == cfg.grid, "layout grid {:?} differs from model grid {:?}", layout.grid, cfg.grid);
    ensure!(layout.frames <= cfg.max_frames, "{} frames exceed max_frames {}", layout.frames, cfg.max_frames);
    ensure!(
        layout.background_channels == c && layout.control_channels == cfg.scalar_channels(),
        "layout channels ({}, {}) do not match the model",
        layout.background_channels,
        layout.control_channels
    );
    ensure!(cond.injected.tokens.dim() == (layout.total_tokens(), layout.width()), "injected tokens do not match their layout");
    let n_video = layout.video_tokens();
    ensure!(tape.shape(x_t) == (n_video, c), "noisy latent {:?} is not {n_video}×{c}", tape.shape(x_t));
    ensure!(cond.view_azimuths.len() == layout.n_views, "{} azimuths for {} views", cond.view_azimuths.len(), layout.n_views);
    let total = layout.total_tokens();
    let g = cfg.tokens_per_frame();
    let d = cfg.d_model;

    // Input embedding.
    let x_full = if total > n_video {
        let pad = tape.leaf(Array2::zeros((total - n_video, c)));
        tape.concat_rows(&[x_t, pad])?
    } else {
        x_t
    };
    let ctx = tape.leaf(cond.injected.tokens.clone());
    let input = tape.concat_cols(&[x_full, ctx])?;
    let mut h = nn::linear(tape, input, p.get("embed.in.weight")?, Some(p.get("embed.in.bias")?))?;

    // Positions: spatial cell for every token, frame index for video tokens,
    // camera azimuth for reference tokens.
    let sel_spatial = tape.leaf(Array2::from_shape_fn((total, g), |(r, k)| ((r % g) == k) as u8 as f64));
    let sel_frame = tape.leaf(Array2::from_shape_fn((total, cfg.max_frames), |(r, k)| {
        (r < n_video && r / g == k) as u8 as f64
    }));
    let azimuth_feats = tape.leaf(Array2::from_shape_fn((total, 2), |(r, k)| {
        if r < n_video {
            return 0.0;
        }
        let a = cond.view_azimuths[(r - n_video) / g].to_radians();
        if k == 0 {
            a.cos()
        } else {
            a.sin()
        }
    }));
    for (sel, table) in [(sel_spatial, "embed.pos.spatial"), (sel_frame, "embed.pos.frame"), (azimuth_feats, "embed.azimuth")] {
        let e = tape.matmul(sel, p.get(table)?)?;
        h = tape.add(h, e)?;
    }

    let tf = tape.leaf(timestep_features(t, cfg.time_dim));
    let te = nn::linear(tape, tf, p.get("time.fc1.weight")?, Some(p.get("time.fc1.bias")?))?;
    let te = tape.silu(te);
    let te = nn::linear(tape, te, p.get("time.fc2.weight")?, Some(p.get("time.fc2.bias")?))?;
    h = tape.add_row(h, te)?;
    let cond_t = tape.silu(te);
    let ones = tape.leaf(Array2::ones((1, d)));
    // Norm output modulated by the timestep: `x·(1 + scale) + shift`.
    let modulate = |tape: &mut Tape, x: Var, ada: Var, k: usize| -> Result<Var> {
        let shift = tape.slice_cols(ada, 2 * k * d, d)?;
        let scale = tape.slice_cols(ada, (2 * k + 1) * d, d)?;
        let gain = tape.add(scale, ones)?;
        let x = tape.mul_row(x, gain)?;
        tape.add_row(x, shift)
    };

    let bank = match (&cond.bank_tokens, toggles.mvfb && cond.alpha_ref != 0.0) {
        (Some(tokens), true) => {
            ensure!(tokens.ncols() == c, "bank tokens have {} channels, expected {c}", tokens.ncols());
            let v = tape.leaf(tokens.clone());
            let proj = [
                p.get("bank.key.weight")?,
                p.get("bank.key.bias")?,
                p.get("bank.value.weight")?,
                p.get("bank.value.bias")?,
            ];
            Some(bank_on_tape(tape, v, proj, &cond.report.per_view_scores)?)
        }
        _ => None,
    };

    let mut features = Vec::with_capacity(cfg.n_blocks);
    for i in 0..cfg.n_blocks {
        let name = |n: &str| format!("blocks.{i}.{n}");
        let ada = nn::linear(tape, cond_t, p.get(&name("ada.weight"))?, Some(p.get(&name("ada.bias"))?))?;
        let n1 = nn::rms_norm(tape, h, p.get(&name("norm1.gain"))?)?;
        let n1 = modulate(tape, n1, ada, 0)?;
        let qkv = nn::linear(tape, n1, p.get(&name("attn.qkv.weight"))?, Some(p.get(&name("attn.qkv.bias"))?))?;
        let q = tape.slice_cols(qkv, 0, d)?;
        let k = tape.slice_cols(qkv, d, d)?;
        let v = tape.slice_cols(qkv, 2 * d, d)?;
        let a = nn::attention(tape, q, k, v, cfg.n_heads)?;
        let a = nn::linear(tape, a, p.get(&name("attn.out.weight"))?, Some(p.get(&name("attn.out.bias"))?))?;
        h = tape.add(h, a)?;

        if let Some((bk, bv)) = bank {
            h = mv_attention_on_tape(tape, h, p.get(&name("mv.query.weight"))?, bk, bv, cond.alpha_ref, cfg.n_heads)?;
        }

        let n2 = nn::rms_norm(tape, h, p.get(&name("norm2.gain"))?)?;
        let n2 = modulate(tape, n2, ada, 1)?;
        let m = nn::linear(tape, n2, p.get(&name("mlp.fc1.weight"))?, Some(p.get(&name("mlp.fc1.bias"))?))?;
        let m = tape.silu(m);
        let m = nn::linear(tape, m, p.get(&name("mlp.fc2.weight"))?, Some(p.get(&name("mlp.fc2.bias"))?))?;
        h = tape.add(h, m)?;
        features.push(if total > n_video { tape.slice_rows(h, 0, n_video)? } else { h });
    }

    let video = *features.last().expect("at least two blocks");
    let ada = nn::linear(tape, cond_t, p.get("head.ada.weight")?, Some(p.get("head.ada.bias")?))?;
    let o = nn::rms_norm(tape, video, p.get("head.norm.gain")?)?;
    let o = modulate(tape, o, ada, 0)?;
    let velocity = nn::linear(tape, o, p.get("head.out.weight")?, Some(p.get("head.out.bias")?))?;
    Ok(ForwardOutput { velocity, features })
}

/// Evaluates the denoiser, returning the velocity and per-block video features.
pub fn dit_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    x_t: &Array2<f64>,
    t: f64,
    cond: &Conditioning,
    toggles: &Toggles,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let p = ParamVars::new(&mut tape, params);
    let x = tape.leaf(x_t.clone());
    let out = dit_forward_on_tape(&mut tape, cfg, &p, x, t, cond, toggles)?;
    let feats = out.features.iter().map(|&f| tape.value(f).clone()).collect();
    Ok((tape.value(out.velocity).clone(), feats))
}
