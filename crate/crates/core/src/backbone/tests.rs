use super::*;
use crate::conditioning::{identity_latent_inject, stack_view_tokens, ConsistencyReport};
use crate::latent::{encode, encode_scalar_map, LatentVideo};
use crate::toggles::Toggles;
use crate::verify::oracle;
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rgb_latent(rng: &mut ChaCha8Rng, t: usize, cfg: &ModelConfig) -> LatentVideo {
    let (h, w) = cfg.frame_size();
    encode(&Array4::from_shape_fn((t, h, w, 3), |_| rng.gen_range(-1.0..1.0)), cfg.patch_size).unwrap()
}

fn cond(rng: &mut ChaCha8Rng, cfg: &ModelConfig, frames: usize, n_views: usize, alpha: f64) -> Conditioning {
    let (h, w) = cfg.frame_size();
    let bg = rgb_latent(rng, frames, cfg);
    let ctrl = encode_scalar_map(&Array3::from_shape_fn((frames, h, w), |_| rng.gen_range(0.0..1.0)), cfg.patch_size).unwrap();
    let views: Vec<_> = (0..n_views).map(|_| rgb_latent(rng, 1, cfg)).collect();
    let mut report = ConsistencyReport::neutral(n_views);
    report.per_view_scores = (0..n_views).map(|_| rng.gen_range(0.2..1.0)).collect();
    Conditioning {
        injected: identity_latent_inject(&bg, &ctrl, &views).unwrap(),
        bank_tokens: Some(stack_view_tokens(&views).unwrap()),
        view_azimuths: (0..n_views).map(|k| k as f64 * 360.0 / n_views as f64).collect(),
        report,
        alpha_ref: alpha,
    }
}

fn noisy(rng: &mut ChaCha8Rng, cfg: &ModelConfig, frames: usize) -> Array2<f64> {
    Array2::from_shape_fn((frames * cfg.tokens_per_frame(), cfg.latent_channels()), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn init_matches_expected_shapes() {
    let cfg = ModelConfig::default();
    let p = ModelParams::init(&cfg, 0).unwrap();
    p.validate(&cfg).unwrap();
    assert_eq!(p.arrays.len(), ModelParams::expected_shapes(&cfg).len());
    let mut bad = p.clone();
    bad.arrays.insert("head.out.bias".into(), Array2::zeros((1, 3)));
    assert!(bad.validate(&cfg).is_err());
    let mut bad = p.clone();
    bad.arrays.remove("bank.key.weight");
    assert!(bad.validate(&cfg).is_err());
    assert!(ModelParams::init(&ModelConfig { n_blocks: 1, ..cfg.clone() }, 0).is_err());
    assert!(ModelParams::init(&ModelConfig { n_heads: 5, ..cfg }, 0).is_err());
}

#[test]
fn zero_head_predicts_zero_velocity() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = cond(&mut rng, &cfg, 3, 2, 0.2);
    let (v, feats) = dit_forward(&params, &cfg, &noisy(&mut rng, &cfg, 3), 0.4, &c, &Toggles::all_off()).unwrap();
    assert!(v.iter().all(|&x| x == 0.0));
    assert_eq!(v.dim(), (12, 12));
    assert_eq!(feats.len(), 2);
    assert_eq!(feats[0].dim(), (12, 16));
}

#[test]
fn disabled_bank_equals_zero_alpha() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, 2).unwrap().perturbed(3, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = cond(&mut rng, &cfg, 2, 3, 0.0);
    let x = noisy(&mut rng, &cfg, 2);
    let off = Toggles { mvfb: false, scc: false, ..Default::default() };
    let a = dit_forward(&params, &cfg, &x, 0.7, &c, &off).unwrap();
    let b = dit_forward(&params, &cfg, &x, 0.7, &c, &Toggles::default()).unwrap();
    assert_eq!(a, b);
    let c2 = Conditioning { alpha_ref: 0.3, ..c };
    let with = dit_forward(&params, &cfg, &x, 0.7, &c2, &Toggles::default()).unwrap();
    assert_ne!(with.0, a.0);
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig { d_model: 16, n_blocks: 2, ..ModelConfig::tiny() };
    let params = ModelParams::init(&cfg, 4).unwrap().perturbed(5, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = cond(&mut rng, &cfg, 2, 2, 0.2);
    let x = noisy(&mut rng, &cfg, 2);
    let a = dit_forward(&params, &cfg, &x, 0.5, &c, &Toggles::default()).unwrap();
    let b = dit_forward(&params, &cfg, &x, 0.5, &c, &Toggles::default()).unwrap();
    assert_eq!(a, b);
    assert!(dit_forward(&params, &cfg, &x, 1.5, &c, &Toggles::default()).is_err());
    assert!(dit_forward(&params, &cfg, &noisy(&mut rng, &cfg, 3), 0.5, &c, &Toggles::default()).is_err());
}

#[test]
fn zero_prediction_loss_matches_oracle() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = cond(&mut rng, &cfg, 2, 1, 0.2);
    let x0 = noisy(&mut rng, &cfg, 2);
    let got = diffusion_loss(&params, &cfg, &x0, &c, &Toggles::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let draw = NoiseDraw::sample(&mut ChaCha8Rng::seed_from_u64(9), x0.dim());
    let zero = Array2::zeros(x0.dim());
    assert!((got - oracle::velocity_mse_loop(&zero, &x0, &draw.noise)).abs() < 1e-12);
    assert!(got > 0.0);
}

#[test]
fn exact_prediction_has_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = Array2::from_shape_fn((4, 3), |_| rng.gen::<f64>());
    let mut tape = crate::tape::Tape::new();
    let p = tape.leaf(target.clone());
    let l = velocity_loss_on_tape(&mut tape, p, &target).unwrap();
    assert_eq!(tape.scalar_value(l), 0.0);
}

#[test]
fn one_euler_step_with_exact_velocity_recovers_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x0 = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0));
    let eps = sampling_noise(1, (5, 4));
    let v = &eps - &x0;
    let out = euler_integrate(eps.clone(), 1, |_, _| Ok(v.clone())).unwrap();
    assert!(out.iter().zip(&x0).all(|(a, b)| (a - b).abs() <= 1e-15));
    assert!(euler_integrate(eps, 0, |_, _| Ok(v.clone())).is_err());
}

#[test]
fn sampling_is_seeded() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, 7).unwrap().perturbed(8, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = cond(&mut rng, &cfg, 2, 2, 0.2);
    let a = sample(&params, &cfg, &c, &Toggles::default(), 3, 11).unwrap();
    let b = sample(&params, &cfg, &c, &Toggles::default(), 3, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sample(&params, &cfg, &c, &Toggles::default(), 3, 12).unwrap());
    assert!(sample(&params, &cfg, &c, &Toggles::default(), 0, 11).is_err());
    assert_eq!(DEFAULT_STEPS, 50);
}

#[test]
fn flops_grow_with_views() {
    let cfg = ModelConfig::default();
    let t = Toggles::default();
    let f: Vec<u64> = [1, 2, 3, 4, 8].iter().map(|&n| training_step_flops(&cfg, 9, n, &t)).collect();
    assert!(f.windows(2).all(|w| w[0] < w[1]), "{f:?}");
}
