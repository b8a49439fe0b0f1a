use super::*;
use crate::backbone::ModelConfig;
use crate::conditioning::sigmoid;
use ndarray::Array3;

fn tiny_world() -> WorldConfig {
    WorldConfig { clips: 3, frames: 3, frame_size: (8, 8), n_views: 2, ..Default::default() }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        world: tiny_world(),
        steps: 3,
        lr: 1e-3,
        model: ModelConfig { grid: (4, 4), ..ModelConfig::tiny() },
        n_views: 2,
        eval_clips: 1,
        ..Default::default()
    }
}

fn dataset() -> Dataset {
    Dataset::generate(&tiny_world()).unwrap()
}

struct Constant;

impl EmbeddingProvider for Constant {
    fn dim(&self) -> usize {
        2
    }
    fn embed_text(&self, _: &str) -> Vec<f64> {
        vec![0.6, 0.8]
    }
    fn embed_image(&self, _: &Array3<f64>) -> Vec<f64> {
        vec![0.6, 0.8]
    }
}

#[test]
fn zero_steps_returns_initialization() {
    let cfg = TrainConfig { steps: 0, ..tiny_config() };
    let (ckpt, log) = train_on(&cfg, dataset()).unwrap();
    assert!(log.is_empty());
    assert_eq!(ckpt.params, ModelParams::init(&cfg.model, cfg.seed).unwrap());
    assert_eq!(ckpt.step, 0);
}

#[test]
fn same_seed_same_log() {
    let cfg = tiny_config();
    let (a, la) = train_on(&cfg, dataset()).unwrap();
    let (b, lb) = train_on(&cfg, dataset()).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a, b);
    let (_, lc) = train_on(&TrainConfig { seed: 1, ..cfg }, dataset()).unwrap();
    assert_ne!(la, lc);
}

#[test]
fn training_moves_parameters() {
    let cfg = tiny_config();
    let (ckpt, log) = train_on(&cfg, dataset()).unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_ne!(ckpt.params, ModelParams::init(&cfg.model, cfg.seed).unwrap());
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = dataset();
    assert!(Trainer::new(TrainConfig { lr: 0.0, ..tiny_config() }, ds.clone()).is_err());
    let bad = Toggles { mvfb: false, ..Toggles::default() };
    assert!(Trainer::new(TrainConfig { toggles: bad, ..tiny_config() }, ds.clone()).is_err());
    assert!(Trainer::new(TrainConfig { n_views: 3, ..tiny_config() }, ds.clone()).is_err());
    assert!(Trainer::new(TrainConfig { eval_clips: 3, ..tiny_config() }, ds).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (ckpt, _) = train_on(&tiny_config(), dataset()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    assert_eq!(Checkpoint::load(dir.path()).unwrap(), ckpt);
}

#[test]
fn corrupted_manifest_is_rejected() {
    let (ckpt, _) = train_on(&TrainConfig { steps: 1, ..tiny_config() }, dataset()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"lr\": 0.001", "\"lr\": 0.002")).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
    std::fs::write(&path, "{ not json").unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}

#[test]
fn mismatched_model_shape_is_rejected() {
    let (ckpt, _) = train_on(&TrainConfig { steps: 0, ..tiny_config() }, dataset()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut m: Manifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m.config.model.d_model = 32;
    m.config.model.n_heads = 2;
    m.config_hash = content_hash(&m.config).unwrap();
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}

#[test]
fn missing_checkpoint_is_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Checkpoint::load(&dir.path().join("absent")).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let full_cfg = TrainConfig { steps: 4, ..tiny_config() };
    let (full, full_log) = train_on(&full_cfg, dataset()).unwrap();
    let (half, _) = train_on(&TrainConfig { steps: 2, ..full_cfg.clone() }, dataset()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    half.save(dir.path()).unwrap();
    let mut t = Trainer::resume(Checkpoint::load(dir.path()).unwrap(), dataset()).unwrap();
    t.config_mut().steps = 4;
    let tail = t.run(|_| {}).unwrap();
    assert_eq!(tail, full_log[2..]);
    assert_eq!(t.params(), &full.params);
}

#[test]
fn scc_scales_alpha_by_sigmoid_one() {
    let ds = dataset();
    let cfg = TrainConfig { steps: 2, ..tiny_config() };
    let mut on = Trainer::new(cfg.clone(), ds.clone()).unwrap().with_embedder(Box::new(Constant));
    let log_on = on.run(|_| {}).unwrap();
    let off_toggles = Toggles { scc: false, ..cfg.toggles };
    let mut off = Trainer::new(TrainConfig { toggles: off_toggles, ..cfg }, ds).unwrap().with_embedder(Box::new(Constant));
    let log_off = off.run(|_| {}).unwrap();
    for (a, b) in log_on.iter().zip(&log_off) {
        assert_eq!(b.alpha_ref, 0.2);
        assert!((a.alpha_ref - 0.2 * sigmoid(1.0)).abs() < 1e-15);
        assert!((a.alpha_ref / b.alpha_ref - sigmoid(1.0)).abs() < 1e-15);
    }
}

#[test]
fn tco_off_ignores_lambda_t() {
    let toggles = Toggles { tco: false, ..Toggles::default() };
    let a = TrainConfig { toggles, ..tiny_config() };
    let mut b = a.clone();
    b.weights.lambda_t = 10.0;
    let (ca, la) = train_on(&a, dataset()).unwrap();
    let (cb, lb) = train_on(&b, dataset()).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ca.params, cb.params);
}

#[test]
fn nan_input_aborts_with_diagnostic() {
    let mut ds = dataset();
    for item in &mut ds.items {
        item.background[[0, 0, 0, 0]] = f64::NAN;
    }
    let mut t = Trainer::new(tiny_config(), ds).unwrap();
    match t.step() {
        Err(Error::NonFinite { step, detail }) => {
            assert_eq!(step, 0);
            assert!(detail.contains("clip"));
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn accumulation_averages_gradients() {
    let cfg = TrainConfig { steps: 1, grad_accum: 2, ..tiny_config() };
    let (_, log) = train_on(&cfg, dataset()).unwrap();
    assert_eq!(log.len(), 1);
    assert!(log[0].loss_diff.is_finite());
}

#[test]
fn log_csv_has_header() {
    let (_, log) = train_on(&TrainConfig { steps: 1, ..tiny_config() }, dataset()).unwrap();
    let csv = log_csv(&log).unwrap();
    assert_eq!(csv.lines().next().unwrap(), LogRow::HEADER.join(","));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn ablation_grid_counts() {
    let ds = dataset();
    let base = TrainConfig { steps: 1, ..tiny_config() };
    let eval = EvalConfig { steps: 2, ..Default::default() };
    assert!(ablation_matrix(&base, &[], &[0, 1], &eval, &ds, |_, _| {}).unwrap().is_empty());
    let rows = vec![
        AblationRow::new("full", Toggles::default()),
        AblationRow::new("w/o tco", Toggles { tco: false, ..Toggles::default() }),
    ];
    let res = ablation_matrix(&base, &rows, &[0, 1], &eval, &ds, |_, _| {}).unwrap();
    assert_eq!(res.len(), 4);
    assert_eq!(crate::eval::summarize(&res).len(), 2);
    assert!(res.iter().all(|r| !r.metrics.has_nan()));
}

#[test]
fn one_off_grid_is_valid() {
    for row in AblationRow::one_off_grid() {
        row.toggles.validate().unwrap();
    }
}
