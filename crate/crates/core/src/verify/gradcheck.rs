//! Central finite-difference checks of the tape gradients.

use std::sync::Arc;

use ndarray::{Array2, Array3, Array4};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{training_loss, Conditioning, LossOptions, ModelConfig, ModelParams, NoiseDraw, Targets};
use crate::conditioning::{identity_latent_inject, stack_view_tokens, ConsistencyReport};
use crate::error::{ensure, Result};
use crate::latent::{encode, encode_scalar_map, TokenGrid};
use crate::tape::Tape;
use crate::temporal::{pixel_residual_map, temporal_loss_on_tape, video_flows, FlowField, EPSILON_FLOW};
use crate::toggles::{LossWeights, Toggles};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub frames: usize,
    pub n_views: usize,
    pub seed: u64,
    /// Entries sampled per parameter array.
    pub entries: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Noise added to the initialization so no head sits at zero.
    pub perturbation: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: ModelConfig::tiny(),
            frames: 3,
            n_views: 2,
            seed: 0,
            entries: 3,
            step: 1e-5,
            tolerance: 1e-4,
            perturbation: 0.1,
        }
    }
}

/// Worst relative error of one loss over every parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub max_rel_error: f64,
    /// Array with the worst error.
    pub worst: String,
    pub per_array: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Denominator floor for [`relative_error`]: gradients below it are
/// round-off and compare in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `‖a − n‖ / max(‖a‖ + ‖n‖, GRAD_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(GRAD_FLOOR)
}

struct Problem {
    cfg: ModelConfig,
    params: ModelParams,
    cond: Conditioning,
    targets: Targets,
    draw: NoiseDraw,
    opts: LossOptions,
}

fn problem(gc: &GradCheckConfig) -> Result<Problem> {
    let cfg = gc.model.clone();
    cfg.validate()?;
    ensure!(gc.frames >= 2 && gc.frames <= cfg.max_frames, "frames must lie in [2, {}]", cfg.max_frames);
    ensure!(gc.n_views >= 1, "n_views must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let (h, w) = cfg.frame_size();
    let p = cfg.patch_size;
    let t = gc.frames;
    let mut video = |n: usize| Array4::from_shape_fn((n, h, w, 3), |_| rng.gen_range(-1.0..1.0));
    let bg = encode(&video(t), p)?;
    let views: Vec<_> = (0..gc.n_views).map(|_| encode(&video(1), p)).collect::<Result<_>>()?;
    let x0 = encode(&video(t), p)?.to_tokens();
    let ctrl = encode_scalar_map(&Array3::from_shape_fn((t, h, w), |_| rng.gen_range(0.0..1.0)), p)?;
    let depth = encode_scalar_map(&Array3::from_shape_fn((t, h, w), |_| rng.gen_range(0.0..1.0)), p)?.to_tokens();
    let seg = encode_scalar_map(&Array3::from_shape_fn((t, h, w), |_| rng.gen_range(0.0..1.0)), p)?.to_tokens();
    let mut report = ConsistencyReport::neutral(gc.n_views);
    report.per_view_scores = (0..gc.n_views).map(|_| rng.gen_range(0.2..1.0)).collect();
    let cond = Conditioning {
        injected: identity_latent_inject(&bg, &ctrl, &views)?,
        bank_tokens: Some(stack_view_tokens(&views)?),
        view_azimuths: (0..gc.n_views).map(|k| k as f64 * 360.0 / gc.n_views as f64).collect(),
        report,
        alpha_ref: 0.15,
    };
    let targets = Targets { x0, depth, seg, grid: TokenGrid { frames: t, height: h, width: w, channels: 3, patch: p } };
    let draw = NoiseDraw::sample(&mut rng, targets.x0.dim());
    let params = ModelParams::init(&cfg, gc.seed)?.perturbed(gc.seed.wrapping_add(1), gc.perturbation);
    let mut opts = LossOptions {
        toggles: Toggles::default(),
        weights: LossWeights::default(),
        epsilon_flow: EPSILON_FLOW,
        flow_override: None,
    };
    // Hold the flow at the value estimated from the unperturbed prediction.
    let flows: Vec<FlowField> = training_loss(&params, &cfg, &cond, &targets, &draw, &opts)?.flows;
    opts.flow_override = Some(flows);
    Ok(Problem { cfg, params, cond, targets, draw, opts })
}

pub const LOSS_NAMES: [&str; 5] = ["L_diff", "L_depth", "L_seg", "L_temp", "L_total"];

fn loss_value(pb: &Problem, params: &ModelParams, which: usize) -> Result<f64> {
    let g = training_loss(params, &pb.cfg, &pb.cond, &pb.targets, &pb.draw, &pb.opts)?;
    Ok(match which {
        0 => g.terms.diff,
        1 => g.terms.depth,
        2 => g.terms.seg,
        3 => g.terms.temp,
        _ => g.total_value,
    })
}

/// Checks every loss against every parameter array.
pub fn grad_check(gc: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    ensure!(gc.step > 0.0 && gc.entries >= 1, "step must be positive and at least one entry sampled");
    let pb = problem(gc)?;
    let mut reports = Vec::new();
    for (which, name) in LOSS_NAMES.iter().enumerate() {
        let graph = training_loss(&pb.params, &pb.cfg, &pb.cond, &pb.targets, &pb.draw, &pb.opts)?;
        let root = if which < 4 { graph.term_vars[which] } else { graph.total };
        let grads = graph.tape.backward(root)?;
        let mut rng = ChaCha8Rng::seed_from_u64(gc.seed.wrapping_add(100 + which as u64));
        let mut per_array = Vec::new();
        for (pname, value) in &pb.params.arrays {
            let var = graph.params.get(pname)?;
            let zeros = Array2::zeros(value.dim());
            let analytic_full = grads.get(var).unwrap_or(&zeros);
            let n = value.len();
            let idx = sample(&mut rng, n, gc.entries.min(n)).into_vec();
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            for i in idx {
                let (r, c) = (i / value.ncols(), i % value.ncols());
                let mut p = pb.params.clone();
                let base = value[[r, c]];
                p.arrays.get_mut(pname).expect("present")[[r, c]] = base + gc.step;
                let up = loss_value(&pb, &p, which)?;
                p.arrays.get_mut(pname).expect("present")[[r, c]] = base - gc.step;
                let down = loss_value(&pb, &p, which)?;
                numeric.push((up - down) / (2.0 * gc.step));
                analytic.push(analytic_full[[r, c]]);
            }
            per_array.push((pname.clone(), relative_error(&analytic, &numeric)));
        }
        let (worst, max_rel_error) =
            per_array.iter().fold((String::new(), 0.0f64), |m, (n, e)| if *e > m.1 { (n.clone(), *e) } else { m });
        reports.push(GradCheckReport { loss: name.to_string(), max_rel_error, worst, per_array });
    }
    reports.push(pixel_temporal_check(gc)?);
    Ok(reports)
}

/// `L_temp` with respect to the pixels of a random video, flow held fixed.
pub fn pixel_temporal_check(gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let (h, w) = gc.model.frame_size();
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed.wrapping_add(7));
    let video = Array4::from_shape_fn((gc.frames, h, w, 3), |_| rng.gen::<f64>());
    let flows = video_flows(&video, EPSILON_FLOW)?;
    let map = Arc::new(pixel_residual_map(video.dim(), &flows)?);
    let x = crate::eval::video_as_matrix(&video);
    let value = |x: &Array2<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let l = temporal_loss_on_tape(&mut tape, v, map.clone())?;
        Ok(tape.scalar_value(l))
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let l = temporal_loss_on_tape(&mut tape, v, map.clone())?;
    let grads = tape.backward(l)?;
    let g = grads.get(v).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for i in sample(&mut rng, x.len(), (4 * gc.entries).min(x.len())).into_vec() {
        let (r, c) = (i / 3, i % 3);
        let mut xp = x.clone();
        xp[[r, c]] += gc.step;
        let up = value(&xp)?;
        xp[[r, c]] -= 2.0 * gc.step;
        let down = value(&xp)?;
        numeric.push((up - down) / (2.0 * gc.step));
        analytic.push(g[[r, c]]);
    }
    let e = relative_error(&analytic, &numeric);
    Ok(GradCheckReport { loss: "L_temp(pixels)".into(), max_rel_error: e, worst: "pixels".into(), per_array: vec![("pixels".into(), e)] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0], &[1.0]), 0.0);
        assert_eq!(relative_error(&[1.0], &[-1.0]), 1.0);
        assert!(relative_error(&[4e-17], &[0.0]) < 1e-8);
    }

    #[test]
    fn tiny_config_passes() {
        let gc = GradCheckConfig { entries: 2, ..Default::default() };
        let reports = grad_check(&gc).unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            assert!(r.passed(gc.tolerance), "{} worst {} = {:e}", r.loss, r.worst, r.max_rel_error);
        }
    }
}
