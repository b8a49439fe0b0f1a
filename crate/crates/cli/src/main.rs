use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use movi::conditioning::ToyEmbedder;
use movi::eval::{evaluate, generate_video, report_csv, report_json, EvalConfig, RunResult};
use movi::record::{hash_inputs, RunRecord};
use movi::synthworld::{
    make_object, render_multiview_from, write_frames, Dataset, DatasetItem, SceneConfig, WorldConfig, CAMERA_DISTANCE,
};
use movi::trainer::{ablation_matrix, content_hash, log_csv, AblationRow, Checkpoint, TrainConfig, Trainer};
use movi::verify::{grad_check, run_oracle_suite, GradCheckConfig};

#[derive(Parser)]
#[command(name = "movi", version, about = "Synthetic video object insertion with a multi-view prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SeedArg {
    /// Random seed; falls back to MOVI_SEED, then to the config's seed.
    #[arg(long, env = "MOVI_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// World configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clips: Option<usize>,
        /// Patch size recorded in clip metadata.
        #[arg(long, default_value_t = 4)]
        patch_size: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Render the panoramic reference views of a scene's object.
    RenderViews {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 4)]
        views: usize,
        /// Azimuth the views are measured from, in degrees.
        #[arg(long, default_value_t = 0.0)]
        base_azimuth: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate one clip for a scene and write its frames.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate the last N clips (default: the checkpoint's held-out count).
        #[arg(long)]
        clips: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train and evaluate a grid of toggle sets over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tape gradients with central finite differences.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run every kernel against its explicit-loop oracle.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(serde::Deserialize, Serialize, Default)]
#[serde(default)]
struct AblateConfig {
    base: TrainConfig,
    rows: Option<Vec<AblationRow>>,
    eval: EvalConfig,
}

fn read_json<T: DeserializeOwned>(p: &Path) -> Result<T> {
    let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", p.display()))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn record<C: Serialize>(command: &str, seed: u64, config: &C, inputs: &[&Path], dir: &Path) -> Result<()> {
    let rec = RunRecord {
        command: command.into(),
        args: std::env::args().skip(1).collect(),
        seed,
        config_hash: content_hash(config)?,
        config: serde_json::to_value(config)?,
        inputs_hash: hash_inputs(inputs)?,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    rec.write(dir)?;
    Ok(())
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { config, out, clips, patch_size, seed } => {
            let mut world: WorldConfig = read_config(config.as_deref())?;
            if let Some(n) = clips {
                world.clips = n;
            }
            if let Some(s) = seed.seed {
                world.seed = s;
            }
            let ds = Dataset::generate(&world)?;
            ds.save(&out, patch_size)?;
            let inputs: Vec<&Path> = config.iter().map(PathBuf::as_path).collect();
            record("gen-data", world.seed, &world, &inputs, &out)?;
            println!("wrote {} clips to {}", ds.items.len(), out.display());
        }
        Command::RenderViews { scene, views, base_azimuth, out } => {
            let sc: SceneConfig = read_json(&scene)?;
            sc.validate()?;
            let mesh = make_object(&sc.object, sc.mesh_seed)?;
            let set = render_multiview_from(&mesh, base_azimuth, views, sc.elevation, CAMERA_DISTANCE, sc.frame_size)?;
            write_frames(&out, &set.images)?;
            write_text(&out.join("azimuths.json"), &serde_json::to_string_pretty(&set.azimuths)?)?;
            record("render-views", sc.mesh_seed, &(views, base_azimuth), &[scene.as_path()], &out)?;
            println!("rendered {views} views to {}", out.display());
        }
        Command::Train { config, out, resume, dataset, steps, lr, seed } => {
            let mut trainer = match &resume {
                Some(ck) => {
                    let c = Checkpoint::load(ck)?;
                    let ds = c.config.load_dataset()?;
                    Trainer::resume(c, ds)?
                }
                None => {
                    let mut cfg: TrainConfig = read_config(config.as_deref())?;
                    if let Some(d) = dataset {
                        cfg.dataset = Some(d);
                    }
                    if let Some(s) = seed.seed {
                        cfg.seed = s;
                    }
                    if let Some(lr) = lr {
                        cfg.lr = lr;
                    }
                    cfg.validate()?;
                    let ds = cfg.load_dataset()?;
                    Trainer::new(cfg, ds)?
                }
            };
            if let Some(s) = steps {
                trainer.config_mut().steps = s;
            }
            let total = trainer.config().steps;
            let rows = trainer.run(|r| {
                if r.step % 100 == 0 || r.step + 1 == total {
                    eprintln!("step {:>5}  diff {:.5}  temp {:.5}  alpha {:.4}", r.step, r.loss_diff, r.loss_temp, r.alpha_ref);
                }
            })?;
            let ckpt = trainer.checkpoint();
            ckpt.save(&out)?;
            write_text(&out.join("log.csv"), &log_csv(&rows)?)?;
            let mut inputs: Vec<&Path> = config.iter().chain(resume.iter()).map(PathBuf::as_path).collect();
            if let Some(d) = &ckpt.config.dataset {
                inputs.push(d);
            }
            record("train", ckpt.config.seed, &ckpt.config, &inputs, &out)?;
            println!("trained to step {} -> {}", ckpt.step, out.display());
        }
        Command::Sample { ckpt, scene, steps, out, seed } => {
            let c = Checkpoint::load(&ckpt)?;
            let sc: SceneConfig = read_json(&scene)?;
            let seed = seed.seed.unwrap_or(c.config.seed);
            let item = DatasetItem::from_scene(sc, seed)?;
            let refs = movi::pipeline::clean_reference_views(&item, &c.config.toggles)?;
            let g = generate_video(&c.params, &c.config, &item, &refs, steps, seed, &ToyEmbedder::default())?;
            write_frames(&out, &g.video)?;
            record("sample", seed, &(steps, &c.config), &[ckpt.as_path(), scene.as_path()], &out)?;
            println!("wrote {} frames to {} (alpha_ref {:.4})", g.video.dim().0, out.display(), g.conditioning.alpha_ref);
        }
        Command::Eval { ckpt, dataset, out, clips, steps, seed } => {
            let c = Checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&dataset)?;
            let n = clips.unwrap_or(c.config.eval_clips).min(ds.items.len());
            if n == 0 {
                bail!("no clips to evaluate");
            }
            let mut eval = EvalConfig::default();
            if let Some(s) = steps {
                eval.steps = s;
            }
            if let Some(s) = seed.seed {
                eval.seed = s;
            }
            let items = &ds.items[ds.items.len() - n..];
            let metrics = evaluate(&c.params, &c.config, items, &eval)?;
            let runs = [RunResult { config: c.config.toggles.label(), seed: c.config.seed, metrics }];
            write_text(&out, &report_csv(&runs)?)?;
            write_text(&out.with_extension("json"), &report_json(&runs)?)?;
            record("eval", eval.seed, &eval, &[ckpt.as_path(), dataset.as_path()], &dir_of(&out))?;
            print!("{}", report_csv(&runs)?);
            if metrics.has_nan() {
                eprintln!("error: a metric is NaN");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Ablate { config, seeds, out } => {
            let cfg: AblateConfig = read_config(config.as_deref())?;
            let rows = cfg.rows.clone().unwrap_or_else(AblationRow::one_off_grid);
            let seed_list: Vec<u64> = (0..seeds).map(|s| cfg.base.seed + s).collect();
            let ds = cfg.base.load_dataset()?;
            fs::create_dir_all(&out)?;
            let mut save_err = None;
            let results = ablation_matrix(&cfg.base, &rows, &seed_list, &cfg.eval, &ds, |r, ckpt| {
                eprintln!("{} seed {}: {:?}", r.config, r.seed, r.metrics.columns());
                let name: String = r.config.chars().map(|c| if c.is_alphanumeric() { c } else { '_' }).collect();
                if let Err(e) = ckpt.save(&out.join("runs").join(format!("{name}_seed{}", r.seed))) {
                    save_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = save_err {
                return Err(e.into());
            }
            write_text(&out.join("report.csv"), &report_csv(&results)?)?;
            write_text(&out.join("report.json"), &report_json(&results)?)?;
            let inputs: Vec<&Path> = config.iter().map(PathBuf::as_path).collect();
            record("ablate", cfg.base.seed, &cfg, &inputs, &out)?;
            print!("{}", report_csv(&results)?);
            if results.iter().any(|r| r.metrics.has_nan()) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::GradCheck { config, seed } => {
            let mut gc: GradCheckConfig = read_config(config.as_deref())?;
            if let Some(s) = seed.seed {
                gc.seed = s;
            }
            let reports = grad_check(&gc)?;
            let mut ok = true;
            for r in &reports {
                let pass = r.passed(gc.tolerance);
                ok &= pass;
                println!("{:<16} max rel error {:.3e} ({}) {}", r.loss, r.max_rel_error, r.worst, if pass { "ok" } else { "FAIL" });
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::OracleCheck { instances, seed } => {
            let results = run_oracle_suite(instances, seed.seed.unwrap_or(0))?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed();
                println!(
                    "{:<20} n={:<4} max abs {:.3e} max rel {:.3e} {}",
                    r.kernel,
                    r.instances,
                    r.max_abs_error,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
