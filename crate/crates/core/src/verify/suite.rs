//! Randomized equivalence runs of every kernel against its loop oracle.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle;
use crate::backbone::{diffusion_loss, dit_forward, Conditioning, ModelConfig, ModelParams, NoiseDraw};
use crate::conditioning::{identity_latent_inject, mv_cross_attention, stack_view_tokens, ConsistencyReport, FeatureBank};
use crate::error::Result;
use crate::eval::{box_iou, boxes_of, mask_iou, psnr, ssim};
use crate::grounding::{depth_loss, fpn_aggregate, seg_loss, FpnParams};
use crate::latent::{encode, encode_scalar_map, LatentVideo};
use crate::seed::derive_seed;
use crate::tape::Tape;
use crate::temporal::{
    bilinear_warp, lk_flow, pixel_residual_map, temporal_loss, temporal_loss_on_tape, to_gray, video_flows,
    FlowField, EPSILON_FLOW,
};
use crate::toggles::Toggles;

pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub kernel: String,
    pub instances: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Largest per-entry `min(abs, rel)` error.
    pub max_error: f64,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.max_error <= TOLERANCE
    }
}

#[derive(Default)]
struct Acc {
    abs: f64,
    rel: f64,
    err: f64,
}

impl Acc {
    fn add(&mut self, got: f64, want: f64) {
        let abs = (got - want).abs();
        let rel = if want == 0.0 { abs } else { abs / want.abs() };
        let abs = if got == want { 0.0 } else { abs };
        let rel = if got == want { 0.0 } else { rel };
        self.abs = self.abs.max(abs);
        self.rel = self.rel.max(rel);
        // NaN on either side never passes.
        self.err = if got.is_nan() || want.is_nan() { f64::INFINITY } else { self.err.max(abs.min(rel)) };
    }

    fn add_all<'a>(&mut self, got: impl IntoIterator<Item = &'a f64>, want: impl IntoIterator<Item = &'a f64>) {
        for (g, w) in got.into_iter().zip(want) {
            self.add(*g, *w);
        }
    }
}

fn uniform2(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

fn uniform3(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0))
}

fn video(rng: &mut ChaCha8Rng, d: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_fn(d, |_| rng.gen::<f64>())
}

fn mask(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<bool> {
    let p = rng.gen_range(0.1..0.7);
    Array3::from_shape_fn(d, |_| rng.gen::<f64>() < p)
}

type Kernel = fn(&mut ChaCha8Rng, &mut Acc) -> Result<()>;

fn k_attention(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let heads = rng.gen_range(1..3);
    let d = heads * rng.gen_range(1..4);
    let (b, l, n, lv) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..4));
    let x = uniform3(rng, (b, l, d));
    let bank = FeatureBank {
        keys: uniform3(rng, (n, lv, d)),
        values: uniform3(rng, (n, lv, d)),
        per_view_scores: vec![1.0; n],
    };
    let wq = uniform2(rng, d, d);
    let alpha = rng.gen_range(0.0..1.0);
    let got = mv_cross_attention(&x, &bank, alpha, heads, &wq)?;
    let want = oracle::mv_attention_loop(&x, &bank.keys, &bank.values, alpha, heads, &wq);
    acc.add_all(got.iter(), want.iter());
    Ok(())
}

fn tiny_conditioning(rng: &mut ChaCha8Rng, cfg: &ModelConfig, frames: usize, n_views: usize) -> Result<Conditioning> {
    let (h, w) = cfg.frame_size();
    let p = cfg.patch_size;
    let bg = encode(&Array4::from_shape_fn((frames, h, w, 3), |_| rng.gen_range(-1.0..1.0)), p)?;
    let ctrl = encode_scalar_map(&Array3::from_shape_fn((frames, h, w), |_| rng.gen::<f64>()), p)?;
    let views: Vec<_> = (0..n_views)
        .map(|_| encode(&Array4::from_shape_fn((1, h, w, 3), |_| rng.gen_range(-1.0..1.0)), p))
        .collect::<Result<_>>()?;
    let mut report = ConsistencyReport::neutral(n_views);
    report.per_view_scores = (0..n_views).map(|_| rng.gen_range(0.2..1.0)).collect();
    Ok(Conditioning {
        injected: identity_latent_inject(&bg, &ctrl, &views)?,
        bank_tokens: Some(stack_view_tokens(&views)?),
        view_azimuths: (0..n_views).map(|k| k as f64 * 360.0 / n_views as f64).collect(),
        report,
        alpha_ref: rng.gen_range(0.0..0.2),
    })
}

fn k_diffusion(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let cfg = ModelConfig::tiny();
    let frames = rng.gen_range(2..4);
    let params = ModelParams::init(&cfg, rng.gen())?.perturbed(rng.gen(), 0.1);
    let n_views = rng.gen_range(1..3);
    let cond = tiny_conditioning(rng, &cfg, frames, n_views)?;
    let x0 = uniform2(rng, frames * cfg.tokens_per_frame(), cfg.latent_channels());
    let seed = rng.gen();
    let got = diffusion_loss(&params, &cfg, &x0, &cond, &Toggles::default(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let draw = NoiseDraw::sample(&mut ChaCha8Rng::seed_from_u64(seed), x0.dim());
    let (pred, _) = dit_forward(&params, &cfg, &draw.interpolate(&x0), draw.t, &cond, &Toggles::default())?;
    acc.add(got, oracle::velocity_mse_loop(&pred, &x0, &draw.noise));
    Ok(())
}

fn latent_pair(rng: &mut ChaCha8Rng) -> Result<(LatentVideo, LatentVideo)> {
    let (t, h, w) = (rng.gen_range(1..4), 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4));
    let a = encode_scalar_map(&Array3::from_shape_fn((t, h, w), |_| rng.gen::<f64>()), 2)?;
    let b = encode_scalar_map(&Array3::from_shape_fn((t, h, w), |_| rng.gen::<f64>()), 2)?;
    Ok((a, b))
}

fn flat(l: &LatentVideo) -> Vec<f64> {
    l.data.iter().copied().collect()
}

fn k_depth(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let (a, b) = latent_pair(rng)?;
    acc.add(depth_loss(&a, &b)?, oracle::mean_abs_loop(&flat(&a), &flat(&b)));
    Ok(())
}

fn k_seg(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let (a, b) = latent_pair(rng)?;
    acc.add(seg_loss(&a, &b)?, oracle::mean_sq_loop(&flat(&a), &flat(&b)));
    Ok(())
}

fn k_temporal(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let d = (rng.gen_range(2..5), rng.gen_range(3..7), rng.gen_range(3..7), 3);
    let v = video(rng, d);
    let want = oracle::temporal_loss_loop(&v, EPSILON_FLOW);
    acc.add(temporal_loss(&v, EPSILON_FLOW)?, want);
    // The differentiable form used in training.
    let map = Arc::new(pixel_residual_map(v.dim(), &video_flows(&v, EPSILON_FLOW)?)?);
    let mut tape = Tape::new();
    let x = tape.leaf(crate::eval::video_as_matrix(&v));
    let l = temporal_loss_on_tape(&mut tape, x, map)?;
    acc.add(tape.scalar_value(l), want);
    Ok(())
}

fn k_warp(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let (h, w) = (rng.gen_range(2..8), rng.gen_range(2..8));
    let frame = uniform3(rng, (h, w, 3));
    let span = rng.gen_range(0.0..4.0);
    let u = Array2::from_shape_fn((h, w), |_| rng.gen_range(-span..=span));
    let v = Array2::from_shape_fn((h, w), |_| rng.gen_range(-span..=span));
    let got = bilinear_warp(frame.view(), &FlowField { u: u.clone(), v: v.clone(), epsilon: EPSILON_FLOW })?;
    acc.add_all(got.iter(), oracle::warp_loop(&frame, &u, &v).iter());
    Ok(())
}

fn k_flow(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let d = (2, rng.gen_range(3..8), rng.gen_range(3..8), 3);
    let v = video(rng, d);
    let g0 = to_gray(v.slice(s![0, .., .., ..]));
    let g1 = to_gray(v.slice(s![1, .., .., ..]));
    let got = lk_flow(g0.view(), g1.view(), EPSILON_FLOW)?;
    let (u, w) = oracle::lk_flow_loop(&g0, &g1, EPSILON_FLOW);
    acc.add_all(got.u.iter(), u.iter());
    acc.add_all(got.v.iter(), w.iter());
    Ok(())
}

fn k_fpn(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let (n, l, d, e) = (rng.gen_range(2..5), rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..5));
    let levels: Vec<_> = (0..n).map(|_| uniform2(rng, l, d)).collect();
    let p = FpnParams {
        laterals: (0..n).map(|_| uniform2(rng, d, e)).collect(),
        fuse_weight: uniform2(rng, e, e),
        fuse_bias: uniform2(rng, 1, e),
    };
    let got = fpn_aggregate(&levels, &p)?;
    acc.add_all(got.iter(), oracle::fpn_loop(&levels, &p.laterals, &p.fuse_weight, &p.fuse_bias).iter());
    Ok(())
}

fn k_iou(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let d = (rng.gen_range(1..4), rng.gen_range(2..8), rng.gen_range(2..8));
    let (a, b) = (mask(rng, d), mask(rng, d));
    acc.add(mask_iou(&a, &b)?, oracle::mask_iou_loop(&a, &b));
    let (ba, bb) = (boxes_of(&a), boxes_of(&b));
    let tup = |b: &Option<crate::synthworld::BBox>| b.map(|b| (b.x_min, b.y_min, b.x_max, b.y_max));
    let want = ba.iter().zip(&bb).map(|(x, y)| oracle::box_iou_loop(tup(x), tup(y))).sum::<f64>() / d.0 as f64;
    acc.add(box_iou(&ba, &bb)?, want);
    Ok(())
}

fn k_psnr(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let d = (rng.gen_range(1..3), rng.gen_range(1..6), rng.gen_range(1..6), 3);
    let a = video(rng, d);
    let b = video(rng, d);
    acc.add(psnr(&a, &b, None)?, oracle::psnr_loop(a.as_slice().expect("standard"), b.as_slice().expect("standard")));
    Ok(())
}

fn k_ssim(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let d = (rng.gen_range(1..3), rng.gen_range(8..11), rng.gen_range(8..11), 3);
    let a = video(rng, d);
    let mut b = video(rng, d);
    // Mix in correlated pairs so the structure term is exercised.
    let mix = rng.gen::<f64>();
    b.zip_mut_with(&a, |bv, av| *bv = mix * av + (1.0 - mix) * *bv);
    acc.add(ssim(&a, &b, 8)?, oracle::ssim_loop(&a, &b));
    Ok(())
}

const KERNELS: [(&str, Kernel); 12] = [
    ("mv_cross_attention", k_attention),
    ("diffusion_loss", k_diffusion),
    ("depth_loss", k_depth),
    ("seg_loss", k_seg),
    ("temporal_loss", k_temporal),
    ("bilinear_warp", k_warp),
    ("lk_flow", k_flow),
    ("fpn_aggregate", k_fpn),
    ("iou", k_iou),
    ("psnr", k_psnr),
    ("ssim", k_ssim),
    ("scale_bank", k_scale_bank),
];

fn k_scale_bank(rng: &mut ChaCha8Rng, acc: &mut Acc) -> Result<()> {
    let (n, l, d) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..5));
    let bank = FeatureBank { keys: uniform3(rng, (n, l, d)), values: uniform3(rng, (n, l, d)), per_view_scores: vec![1.0; n] };
    let mut report = ConsistencyReport::neutral(n);
    report.per_view_scores = (0..n).map(|_| rng.gen::<f64>()).collect();
    let got = crate::conditioning::scale_bank(&bank, &report)?;
    let (k, v) = oracle::scale_bank_loop(&bank.keys, &bank.values, &report.per_view_scores);
    acc.add_all(got.keys.iter(), k.iter());
    acc.add_all(got.values.iter(), v.iter());
    Ok(())
}

pub fn kernel_names() -> Vec<&'static str> {
    KERNELS.iter().map(|(n, _)| *n).collect()
}

/// Runs `instances` random cases of every kernel.
pub fn run_oracle_suite(instances: usize, seed: u64) -> Result<Vec<OracleResult>> {
    KERNELS
        .iter()
        .enumerate()
        .map(|(k, (name, f))| {
            let mut acc = Acc::default();
            for i in 0..instances {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k as u64, i as u64]));
                f(&mut rng, &mut acc)?;
            }
            Ok(OracleResult {
                kernel: name.to_string(),
                instances,
                max_abs_error: acc.abs,
                max_rel_error: acc.rel,
                max_error: acc.err,
            })
        })
        .collect()
}
