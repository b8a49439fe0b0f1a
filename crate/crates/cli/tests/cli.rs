use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn movi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_movi")).args(args).env_remove("MOVI_SEED").output().expect("spawn movi")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const WORLD: &str = r#"{"clips": 3, "frames": 3, "frame_size": [8, 8], "n_views": 2}"#;

fn train_json(dataset: &Path) -> String {
    format!(
        r#"{{"dataset": "{}", "steps": 2, "lr": 0.001, "n_views": 2, "eval_clips": 1,
            "model": {{"d_model": 16, "n_heads": 2, "n_blocks": 2, "mlp_ratio": 2, "patch_size": 2,
                       "grid": [4, 4], "max_frames": 4, "time_dim": 8, "pyramid_dim": 8}}}}"#,
        dataset.display()
    )
}

#[test]
fn every_subcommand_has_help() {
    for cmd in ["gen-data", "render-views", "train", "sample", "eval", "ablate", "grad-check", "oracle-check"] {
        let out = movi(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help failed");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(movi(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(movi(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn oracle_check_passes() {
    let out = movi(&["oracle-check", "--instances", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 10);
    assert!(!text.contains("FAIL"));
}

#[test]
fn grad_check_passes_on_tiny_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("tiny.json");
    fs::write(&cfg, r#"{"entries": 1}"#).unwrap();
    let out = movi(&["grad-check", "--config", p(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    for loss in ["L_diff", "L_depth", "L_seg", "L_temp", "L_total"] {
        assert!(text.contains(loss));
    }
}

#[test]
fn invalid_config_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.json");
    fs::write(&cfg, r#"{"lr": 0.0}"#).unwrap();
    let out = movi(&["train", "--config", p(&cfg), "--out", p(&d.path().join("ck"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning rate"));
}

#[test]
fn pipeline_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let world = d.path().join("world.json");
    fs::write(&world, WORLD).unwrap();
    let data = d.path().join("data");
    let out = movi(&["gen-data", "--config", p(&world), "--out", p(&data), "--patch-size", "2", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("run.json").exists());
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 4);

    let train = d.path().join("train.json");
    fs::write(&train, train_json(&data)).unwrap();
    let ck = d.path().join("ck");
    let out = movi(&["train", "--config", p(&train), "--out", p(&ck)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(ck.join("log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,loss_diff,loss_depth,loss_seg,loss_temp,alpha_ref");
    assert_eq!(log.lines().count(), 3);
    assert!(ck.join("run.json").exists());

    let ck2 = d.path().join("ck2");
    let out = movi(&["train", "--resume", p(&ck), "--steps", "3", "--out", p(&ck2)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(ck2.join("log.csv")).unwrap().lines().count(), 2);

    let report = d.path().join("eval").join("report.csv");
    let out = movi(&["eval", "--ckpt", p(&ck), "--dataset", p(&data), "--out", p(&report), "--steps", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("config,seed,PSNR,SSIM,M_IoU,B_IoU,flicker"));
    assert!(report.with_extension("json").exists());

    let scene = d.path().join("scene.json");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("clip_0000").join("meta.json")).unwrap()).unwrap();
    fs::write(&scene, meta["scene"].to_string()).unwrap();
    let frames = d.path().join("frames");
    let out = movi(&["sample", "--ckpt", p(&ck), "--scene", p(&scene), "--steps", "3", "--out", p(&frames), "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pngs = fs::read_dir(&frames).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 3);
    // Same inputs and seed give the same bytes.
    let frames2 = d.path().join("frames2");
    movi(&["sample", "--ckpt", p(&ck), "--scene", p(&scene), "--steps", "3", "--out", p(&frames2), "--seed", "1"]);
    assert_eq!(fs::read(frames.join("0002.png")).unwrap(), fs::read(frames2.join("0002.png")).unwrap());

    let views = d.path().join("views");
    let out = movi(&["render-views", "--scene", p(&scene), "--views", "3", "--out", p(&views)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let az: Vec<f64> = serde_json::from_str(&fs::read_to_string(views.join("azimuths.json")).unwrap()).unwrap();
    assert_eq!(az, vec![0.0, 120.0, 240.0]);
}

#[test]
fn gen_data_is_idempotent_and_reads_env_seed() {
    let d = tempfile::tempdir().unwrap();
    let world = d.path().join("world.json");
    fs::write(&world, WORLD).unwrap();
    let run = |dir: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_movi"))
            .args(["gen-data", "--config", p(&world), "--out", p(&d.path().join(dir))])
            .env("MOVI_SEED", "9")
            .output()
            .unwrap();
        assert!(out.status.success());
    };
    run("a");
    run("b");
    for f in ["clip_0001/meta.json", "clip_0002/frames/0001.png", "dataset.json"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap());
    }
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("a/run.json")).unwrap()).unwrap();
    assert_eq!(rec["seed"], 9);
}

#[test]
fn ablate_writes_report() {
    let d = tempfile::tempdir().unwrap();
    let world = d.path().join("world.json");
    fs::write(&world, WORLD).unwrap();
    let data = d.path().join("data");
    assert!(movi(&["gen-data", "--config", p(&world), "--out", p(&data)]).status.success());
    let base = train_json(&data);
    let cfg = d.path().join("ablate.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"base": {base}, "eval": {{"steps": 2}},
                 "rows": [{{"name": "full", "toggles": {{}}}},
                          {{"name": "w/o tco", "toggles": {{"tco": false}}}}]}}"#
        ),
    )
    .unwrap();
    let out_dir = d.path().join("abl");
    let out = movi(&["ablate", "--config", p(&cfg), "--seeds", "2", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    // Header, four runs, two summary rows.
    assert_eq!(csv.lines().count(), 7);
}
