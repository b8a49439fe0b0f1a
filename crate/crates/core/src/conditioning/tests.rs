use super::*;
use crate::latent::encode;
use crate::verify::oracle;
use ndarray::Array4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn random_bank(rng: &mut ChaCha8Rng, n: usize, l: usize, d: usize) -> FeatureBank {
    FeatureBank {
        keys: random3(rng, (n, l, d)),
        values: random3(rng, (n, l, d)),
        per_view_scores: vec![1.0; n],
    }
}

fn max_abs(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn identical_embeddings_give_sigmoid_one() {
    let e = unit(vec![1.0, 2.0, 3.0]);
    let r = consistency_scores(&e, &vec![e.clone(); 4], 1.0).unwrap();
    for &l in &r.logits {
        assert!((l - 1.0).abs() < 1e-12);
    }
    assert!((r.mean_score - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!((r.mean_score - 0.731059).abs() < 1e-6);
}

#[test]
fn orthogonal_and_opposite_embeddings() {
    let r = consistency_scores(&[1.0, 0.0], &[vec![0.0, 1.0]], 1.0).unwrap();
    assert_eq!(r.logits, vec![0.0]);
    assert_eq!(r.per_view_scores, vec![0.5]);
    assert_eq!(r.mean_score, 0.5);
    let r = consistency_scores(&[1.0, 0.0], &vec![vec![-1.0, 0.0]; 3], 0.5).unwrap();
    assert_eq!(r.logits, vec![-2.0; 3]);
    assert!((r.per_view_scores[0] - 0.119203).abs() < 1e-6);
}

#[test]
fn scoring_rejects_bad_inputs() {
    assert!(consistency_scores(&[1.0, 0.0], &[vec![1.0, 0.0]], 0.0).is_err());
    assert!(consistency_scores(&[1.0, 0.0], &[vec![1.0, 0.1]], 1.0).is_err());
    assert!(consistency_scores(&[0.9, 0.0], &[vec![1.0, 0.0]], 1.0).is_err());
}

#[test]
fn scale_modulation() {
    assert!((modulate_scale(0.2, 0.5).unwrap() - 0.1).abs() < 1e-15);
    assert!((modulate_scale(0.2, sigmoid(1.0)).unwrap() - 0.146212).abs() < 1e-6);
    assert_eq!(modulate_scale(0.0, 0.7).unwrap(), 0.0);
    assert!(modulate_scale(-0.1, 0.5).is_err());
}

fn view_latents(n: usize, rng: &mut ChaCha8Rng) -> Vec<LatentVideo> {
    (0..n)
        .map(|_| encode(&Array4::from_shape_fn((1, 8, 8, 3), |_| rng.gen()), 4).unwrap())
        .collect()
}

fn projection(c: usize, d: usize, rng: &mut ChaCha8Rng) -> BankProjection {
    BankProjection {
        key_weight: Array2::from_shape_fn((c, d), |_| rng.gen_range(-1.0..1.0)),
        key_bias: Array2::from_shape_fn((1, d), |_| rng.gen_range(-1.0..1.0)),
        value_weight: Array2::from_shape_fn((c, d), |_| rng.gen_range(-1.0..1.0)),
        value_bias: Array2::from_shape_fn((1, d), |_| rng.gen_range(-1.0..1.0)),
    }
}

#[test]
fn bank_shapes_and_zero_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let views = view_latents(4, &mut rng);
    let mut proj = projection(48, 32, &mut rng);
    let bank = build_feature_bank(&views, &proj).unwrap();
    assert_eq!(bank.keys.dim(), (4, 4, 32));
    assert_eq!(bank.values.dim(), (4, 4, 32));
    assert_eq!(bank.per_view_scores, vec![1.0; 4]);
    proj.key_weight.fill(0.0);
    proj.key_bias.fill(0.0);
    proj.value_weight.fill(0.0);
    proj.value_bias.fill(0.0);
    let bank = build_feature_bank(&views, &proj).unwrap();
    assert!(bank.keys.iter().chain(bank.values.iter()).all(|&v| v == 0.0));
}

#[test]
fn one_hot_projection_copies_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let views = view_latents(2, &mut rng);
    let picks = [5usize, 0, 47, 12];
    let mut proj = projection(48, 4, &mut rng);
    proj.key_weight.fill(0.0);
    proj.key_bias.fill(0.0);
    proj.value_weight.fill(0.0);
    proj.value_bias.fill(0.0);
    for (j, &c) in picks.iter().enumerate() {
        proj.key_weight[[c, j]] = 1.0;
        proj.value_weight[[c, 3 - j]] = 1.0;
    }
    let bank = build_feature_bank(&views, &proj).unwrap();
    for (n, v) in views.iter().enumerate() {
        for tok in 0..4 {
            let (gy, gx) = (tok / 2, tok % 2);
            for (j, &c) in picks.iter().enumerate() {
                assert_eq!(bank.keys[[n, tok, j]], v.data[[0, c, gy, gx]]);
                assert_eq!(bank.values[[n, tok, 3 - j]], v.data[[0, c, gy, gx]]);
            }
        }
    }
}

#[test]
fn bank_rejects_mismatched_views() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut views = view_latents(2, &mut rng);
    views.push(encode(&Array4::zeros((1, 4, 4, 3)), 4).unwrap());
    assert!(build_feature_bank(&views, &projection(48, 8, &mut rng)).is_err());
}

#[test]
fn scaling_the_bank() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = random_bank(&mut rng, 3, 2, 4);
    assert_eq!(scale_bank(&bank, &ConsistencyReport::neutral(3)).unwrap().keys, bank.keys);
    let mut r = ConsistencyReport::neutral(3);
    r.per_view_scores[1] = 0.5;
    let s = scale_bank(&bank, &r).unwrap();
    for n in 0..3 {
        let f = if n == 1 { 0.5 } else { 1.0 };
        for l in 0..2 {
            for d in 0..4 {
                assert_eq!(s.keys[[n, l, d]], f * bank.keys[[n, l, d]]);
                assert_eq!(s.values[[n, l, d]], f * bank.values[[n, l, d]]);
            }
        }
    }
    assert!(scale_bank(&bank, &ConsistencyReport::neutral(2)).is_err());
}

#[test]
fn scaling_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let bank = random_bank(&mut rng, 4, 3, 5);
        let mut r = ConsistencyReport::neutral(4);
        r.per_view_scores = (0..4).map(|_| rng.gen()).collect();
        let s = scale_bank(&bank, &r).unwrap();
        let (k, v) = oracle::scale_bank_loop(&bank.keys, &bank.values, &r.per_view_scores);
        assert_eq!(s.keys, k);
        assert_eq!(s.values, v);
    }
}

#[test]
fn single_token_bank_returns_projected_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random3(&mut rng, (1, 3, 4));
    let bank = random_bank(&mut rng, 1, 1, 4);
    let wq = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
    let out = mv_cross_attention(&x, &bank, 0.3, 2, &wq).unwrap();
    for l in 0..3 {
        for d in 0..4 {
            let want = x[[0, l, d]] + 0.3 * bank.values[[0, 0, d]];
            assert!((out[[0, l, d]] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_alpha_is_exact_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random3(&mut rng, (2, 3, 4));
    let bank = random_bank(&mut rng, 2, 2, 4);
    let wq = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
    assert_eq!(mv_cross_attention(&x, &bank, 0.0, 2, &wq).unwrap(), x);
}

#[test]
fn attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random3(&mut rng, (1, 3, 4));
    let bank = random_bank(&mut rng, 2, 2, 4);
    let wq = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
    let got = mv_cross_attention(&x, &bank, 0.7, 2, &wq).unwrap();
    let want = oracle::mv_attention_loop(&x, &bank.keys, &bank.values, 0.7, 2, &wq);
    assert!(max_abs(&got, &want) <= 1e-6);
}

#[test]
fn attention_rejects_bad_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random3(&mut rng, (1, 3, 4));
    let bank = random_bank(&mut rng, 1, 2, 4);
    let wq = Array2::zeros((4, 4));
    assert!(mv_cross_attention(&x, &bank, 0.1, 3, &wq).is_err());
    assert!(mv_cross_attention(&x, &random_bank(&mut rng, 1, 2, 6), 0.1, 2, &wq).is_err());
}

#[test]
fn injection_layout_counts_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bg = encode(&Array4::from_shape_fn((2, 8, 8, 3), |_| rng.gen()), 4).unwrap();
    let ctrl = encode(&Array4::from_shape_fn((2, 8, 8, 1), |_| rng.gen()), 4).unwrap();
    let views = view_latents(4, &mut rng);
    let seq = identity_latent_inject(&bg, &ctrl, &views).unwrap();
    assert_eq!(seq.tokens.nrows(), 24);
    assert_eq!(seq.layout.video_range(), 0..8);
    assert_eq!(seq.layout.reference_range(), 8..24);
    let video = seq.layout.extract_video(&seq.tokens).unwrap();
    let bt = bg.to_tokens();
    let ct = ctrl.to_tokens();
    for r in 0..8 {
        for c in 0..48 {
            assert_eq!(video[[r, c]], bt[[r, c]]);
        }
        for c in 0..16 {
            assert_eq!(video[[r, 48 + c]], ct[[r, c]]);
        }
        assert_eq!(seq.tokens[[r, 112]], 0.0);
    }
    for r in 8..24 {
        assert_eq!(seq.tokens[[r, 112]], 1.0);
        assert!(seq.layout.is_reference(r));
    }
    let seq = identity_latent_inject(&bg, &ctrl, &[]).unwrap();
    assert_eq!(seq.tokens.nrows(), 8);
    let bad = encode(&Array4::zeros((3, 8, 8, 1)), 4).unwrap();
    assert!(identity_latent_inject(&bg, &bad, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scores_are_monotone_in_each_logit(seed in 0u64..1000, view in 0usize..3, bump in 0.05f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = unit((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut views: Vec<Vec<f64>> = (0..3).map(|_| unit((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
        let base = consistency_scores(&p, &views, 1.0).unwrap();
        // Tilting a view towards the prompt raises its cosine.
        views[view] = unit(views[view].iter().zip(&p).map(|(v, q)| v + bump * q).collect());
        let moved = consistency_scores(&p, &views, 1.0).unwrap();
        prop_assert!(moved.logits[view] > base.logits[view]);
        prop_assert!(moved.per_view_scores[view] > base.per_view_scores[view]);
        prop_assert!(moved.mean_score > base.mean_score);
    }

    #[test]
    fn alpha_stays_inside_open_range(mean_logit in -30.0f64..30.0, alpha0 in 0.01f64..2.0) {
        let a = modulate_scale(alpha0, sigmoid(mean_logit)).unwrap();
        prop_assert!(a > 0.0 && a < alpha0);
    }

    #[test]
    fn view_permutation_invariance(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random3(&mut rng, (1, 5, 8));
        let bank = random_bank(&mut rng, 3, 2, 8);
        let mut r = ConsistencyReport::neutral(3);
        r.per_view_scores = (0..3).map(|_| rng.gen()).collect();
        let wq = Array2::from_shape_fn((8, 8), |_| rng.gen_range(-1.0..1.0));
        let a = mv_cross_attention(&x, &scale_bank(&bank, &r).unwrap(), 0.4, 2, &wq).unwrap();
        let perm = [2usize, 0, 1];
        let mut pb = bank.clone();
        let mut pr = r.clone();
        for (i, &j) in perm.iter().enumerate() {
            pb.keys.slice_mut(s![i, .., ..]).assign(&bank.keys.slice(s![j, .., ..]));
            pb.values.slice_mut(s![i, .., ..]).assign(&bank.values.slice(s![j, .., ..]));
            pr.per_view_scores[i] = r.per_view_scores[j];
        }
        let b = mv_cross_attention(&x, &scale_bank(&pb, &pr).unwrap(), 0.4, 2, &wq).unwrap();
        prop_assert!(max_abs(&a, &b) <= 1e-6);
    }

    #[test]
    fn vanishing_scores_collapse_to_context(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random3(&mut rng, (1, 4, 4));
        let bank = random_bank(&mut rng, 2, 3, 4);
        let mut r = ConsistencyReport::neutral(2);
        r.per_view_scores = vec![1e-12; 2];
        let wq = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        let out = mv_cross_attention(&x, &scale_bank(&bank, &r).unwrap(), 0.2, 2, &wq).unwrap();
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(max_abs(&out, &x) <= 1e-6 * xn);
    }

    #[test]
    fn update_is_linear_in_alpha(seed in 0u64..1000, alpha in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random3(&mut rng, (1, 4, 4));
        let bank = random_bank(&mut rng, 2, 2, 4);
        let wq = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        let one = &mv_cross_attention(&x, &bank, 1.0, 2, &wq).unwrap() - &x;
        let a = &mv_cross_attention(&x, &bank, alpha, 2, &wq).unwrap() - &x;
        prop_assert!(max_abs(&a, &(&one * alpha)) <= 1e-12);
    }
}
