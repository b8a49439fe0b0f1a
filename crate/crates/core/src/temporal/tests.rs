use super::*;
use crate::verify::oracle;
use ndarray::{Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_video(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_fn(dim, |_| rng.gen())
}

#[test]
fn gray_of_white_and_green() {
    let white = Array3::from_elem((2, 2, 3), 1.0);
    assert!(to_gray(white.view()).iter().all(|&g| (g - 1.0).abs() < 1e-15));
    let mut green = Array3::zeros((2, 2, 3));
    green.slice_mut(s![.., .., 1]).fill(1.0);
    assert!(to_gray(green.view()).iter().all(|&g| g == 0.587));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = random_video(&mut rng, (1, 5, 7, 3)).slice(s![0, .., .., ..]).to_owned();
    assert_eq!(to_gray(f.view()), oracle::gray_loop(&f));
}

#[test]
fn sobel_cases() {
    let c = Array2::from_elem((6, 6), 0.4);
    let g = sobel_gradients(c.view(), c.view()).unwrap();
    assert!(g.ix.iter().chain(g.iy.iter()).chain(g.it.iter()).all(|&v| v == 0.0));
    let w = 10.0;
    let ramp = Array2::from_shape_fn((6, 10), |(_, x)| x as f64 / w);
    let g = sobel_gradients(ramp.view(), ramp.view()).unwrap();
    for y in 0..6 {
        for x in 1..9 {
            assert!((g.ix[[y, x]] - 1.0 / w).abs() < 1e-12);
            assert_eq!(g.iy[[y, x]], 0.0);
        }
    }
    assert!(sobel_gradients(ramp.view(), c.view()).is_err());
}

#[test]
fn lk_flow_cases() {
    let c = Array2::from_elem((5, 5), 0.2);
    let d = Array2::from_elem((5, 5), 0.9);
    let f = lk_flow(c.view(), d.view(), EPSILON_FLOW).unwrap();
    assert!(f.u.iter().chain(f.v.iter()).all(|&v| v == 0.0));
    let f = lk_flow(c.view(), c.view(), EPSILON_FLOW).unwrap();
    assert!(f.u.iter().all(|&v| v == 0.0));
    assert!(lk_flow(c.view(), c.view(), 0.0).is_err());
    // Shifted ramp g1 = g0 − a·s.
    let (a, s_) = (0.1, 0.7);
    let g0 = Array2::from_shape_fn((6, 8), |(_, x)| a * x as f64);
    let g1 = g0.mapv(|v| v - a * s_);
    let f = lk_flow(g0.view(), g1.view(), EPSILON_FLOW).unwrap();
    for y in 0..6 {
        for x in 1..7 {
            let want = a * a * s_ / (a * a + EPSILON_FLOW);
            assert!((f.u[[y, x]] - want).abs() < 1e-12);
            assert_eq!(f.v[[y, x]], 0.0);
        }
    }
}

#[test]
fn warp_cases() {
    let img = Array3::from_shape_vec((2, 2, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let mut flow = FlowField::zeros(2, 2);
    flow.u[[0, 0]] = 0.5;
    assert_eq!(bilinear_warp(img.view(), &flow).unwrap()[[0, 0, 0]], 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_video(&mut rng, (1, 6, 5, 3)).slice(s![0, .., .., ..]).to_owned();
    assert_eq!(bilinear_warp(f.view(), &FlowField::zeros(6, 5)).unwrap(), f);
    let constant = Array3::from_elem((6, 5, 3), 0.3);
    let flow = FlowField {
        u: Array2::from_shape_fn((6, 5), |_| rng.gen_range(-9.0..9.0)),
        v: Array2::from_shape_fn((6, 5), |_| rng.gen_range(-9.0..9.0)),
        epsilon: EPSILON_FLOW,
    };
    assert!(bilinear_warp(constant.view(), &flow).unwrap().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    assert!(bilinear_warp(f.view(), &FlowField::zeros(5, 5)).is_err());
}

#[test]
fn temporal_loss_cases() {
    let frame = Array3::from_shape_fn((4, 4, 3), |(y, x, c)| ((y + 2 * x + c) % 5) as f64 / 4.0);
    let mut stat = Array4::zeros((3, 4, 4, 3));
    for t in 0..3 {
        stat.slice_mut(s![t, .., .., ..]).assign(&frame);
    }
    assert_eq!(temporal_loss(&stat, EPSILON_FLOW).unwrap(), 0.0);
    let hand = Array4::from_shape_vec(
        (2, 2, 2, 3),
        vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.7, 0.5, 0.5, 0.5, 0.0, 0.1, 0.2, 0.3, 0.3, 0.3, 0.6, 0.1, 0.9, 0.4, 0.2, 0.8, 1.0, 0.0, 0.5],
    )
    .unwrap();
    let got = temporal_loss(&hand, EPSILON_FLOW).unwrap();
    assert!((got - oracle::temporal_loss_loop(&hand, EPSILON_FLOW)).abs() <= 1e-10);
    assert!(temporal_loss(&hand.slice(s![..1, .., .., ..]).to_owned(), EPSILON_FLOW).is_err());
}

#[test]
fn temporal_loss_on_tiled_sizes_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = Array3::from_shape_fn((4, 4, 3), |_| rng.gen::<f64>());
    for tiles in [1usize, 2] {
        let video = Array4::from_shape_fn((3, 4 * tiles, 4 * tiles, 3), |(t, y, x, c)| {
            base[[y % 4, x % 4, c]] + if t == 2 { 0.05 * ((x + y) % 3) as f64 } else { 0.0 }
        });
        let got = temporal_loss(&video, EPSILON_FLOW).unwrap();
        assert!((got - oracle::temporal_loss_loop(&video, EPSILON_FLOW)).abs() <= 1e-10);
    }
}

#[test]
fn sparse_residual_matches_direct_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let video = random_video(&mut rng, (3, 5, 6, 3));
    let flows = video_flows(&video, EPSILON_FLOW).unwrap();
    let map = Arc::new(pixel_residual_map(video.dim(), &flows).unwrap());
    let mut tape = Tape::new();
    let x = tape.leaf(video.clone().into_shape_with_order((90, 3)).unwrap());
    let l = temporal_loss_on_tape(&mut tape, x, map).unwrap();
    assert!((tape.scalar_value(l) - temporal_loss(&video, EPSILON_FLOW).unwrap()).abs() < 1e-12);
}

#[test]
fn total_loss_arithmetic() {
    let terms = LossTerms { diff: 1.0, depth: 2.0, seg: 3.0, temp: 4.0 };
    let w = LossWeights::default();
    assert_eq!((w.lambda_d, w.lambda_s, w.lambda_t), (1e-3, 1e-3, 5e-2));
    assert!((total_loss(terms, w, Toggles::default()) - 1.205).abs() < 1e-12);
    let off = Toggles { ch: false, dh: false, tco: false, ..Default::default() };
    assert_eq!(total_loss(terms, w, off), 1.0);
    let no_t = Toggles { tco: false, ..Default::default() };
    let w2 = LossWeights { lambda_t: 7.0, ..w };
    assert_eq!(total_loss(terms, w, no_t), total_loss(terms, w2, no_t));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_is_finite_for_finite_input(seed in 0u64..10_000, constant in proptest::bool::ANY) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g0 = if constant { Array2::from_elem((5, 6), rng.gen()) } else { Array2::from_shape_fn((5, 6), |_| rng.gen_range(-1e3..1e3)) };
        let g1 = Array2::from_shape_fn((5, 6), |_| rng.gen_range(-1e3..1e3));
        let f = lk_flow(g0.view(), g1.view(), EPSILON_FLOW).unwrap();
        prop_assert!(f.u.iter().chain(f.v.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn integer_flow_is_a_clamped_shift(seed in 0u64..10_000, du in -3i64..4, dv in -3i64..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Array3::from_shape_fn((5, 6, 3), |_| rng.gen::<f64>());
        let flow = FlowField { u: Array2::from_elem((5, 6), du as f64), v: Array2::from_elem((5, 6), dv as f64), epsilon: EPSILON_FLOW };
        let w = bilinear_warp(f.view(), &flow).unwrap();
        for y in 0..5i64 {
            for x in 0..6i64 {
                let (sy, sx) = ((y + dv).clamp(0, 4) as usize, (x + du).clamp(0, 5) as usize);
                for c in 0..3 {
                    prop_assert_eq!(w[[y as usize, x as usize, c]], f[[sy, sx, c]]);
                }
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_matches_oracle(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_video(&mut rng, (3, 4, 5, 3));
        let l = temporal_loss(&v, EPSILON_FLOW).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - oracle::temporal_loss_loop(&v, EPSILON_FLOW)).abs() <= 1e-10);
    }

    #[test]
    fn appending_last_frame_only_changes_normaliser(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_video(&mut rng, (3, 4, 4, 3));
        let mut ext = Array4::zeros((4, 4, 4, 3));
        ext.slice_mut(s![..3, .., .., ..]).assign(&v);
        ext.slice_mut(s![3, .., .., ..]).assign(&v.slice(s![2, .., .., ..]));
        let a = temporal_loss(&v, EPSILON_FLOW).unwrap();
        let b = temporal_loss(&ext, EPSILON_FLOW).unwrap();
        prop_assert!((b - oracle::temporal_loss_loop(&ext, EPSILON_FLOW)).abs() <= 1e-10);
        prop_assert!((b * 3.0 - a * 2.0).abs() <= 1e-10);
    }
}
