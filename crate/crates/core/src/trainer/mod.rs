//! Training loop, optimizer, checkpoints and the ablation grid.

mod adam;
mod checkpoint;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{content_hash, Checkpoint, Manifest, RngState, FORMAT, MANIFEST_FILE, TENSOR_FILE};

use crate::backbone::{training_loss, LossOptions, ModelConfig, ModelParams, NoiseDraw};
use crate::conditioning::{EmbeddingProvider, ToyEmbedder};
use crate::error::{ensure, Error, Result};
use crate::eval::{evaluate, EvalConfig, RunResult};
use crate::pipeline::{build_conditioning, clip_inputs, reference_views, ClipInputs, ControlMode, ReferenceConfig};
use crate::seed::derive_seed;
use crate::synthworld::{CorruptionConfig, Dataset, WorldConfig};
use crate::temporal::{LossTerms, EPSILON_FLOW};
use crate::toggles::{LossWeights, Toggles};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Dataset directory; when absent the dataset is generated from `world`.
    pub dataset: Option<PathBuf>,
    pub world: WorldConfig,
    pub steps: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub toggles: Toggles,
    pub corruption: CorruptionConfig,
    pub weights: LossWeights,
    pub reference: ReferenceConfig,
    pub n_views: usize,
    pub control: ControlMode,
    pub epsilon_flow: f64,
    /// Clips at the end of the dataset held out for evaluation.
    pub eval_clips: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: None,
            world: WorldConfig::default(),
            steps: 2000,
            lr: 1e-3,
            batch_size: 1,
            grad_accum: 1,
            seed: 0,
            model: ModelConfig::default(),
            toggles: Toggles::default(),
            corruption: CorruptionConfig::default(),
            weights: LossWeights::default(),
            reference: ReferenceConfig::default(),
            n_views: 4,
            control: ControlMode::Mask,
            epsilon_flow: EPSILON_FLOW,
            eval_clips: 32,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "learning rate must be positive, got {}", self.lr);
        ensure!(self.batch_size >= 1 && self.grad_accum >= 1, "batch size and accumulation must be at least 1");
        ensure!(self.n_views >= 1, "n_views must be at least 1");
        ensure!(self.epsilon_flow > 0.0, "flow epsilon must be positive");
        ensure!(self.reference.tau > 0.0, "temperature must be positive");
        ensure!(
            (0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2),
            "Adam betas must lie in [0,1)"
        );
        self.toggles.validate()?;
        self.model.validate()?;
        self.corruption.validate()?;
        if self.dataset.is_none() {
            self.world.validate()?;
        }
        Ok(())
    }

    /// The dataset named by the config, loaded or generated.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            Some(dir) => Dataset::load(dir),
            None => Dataset::generate(&self.world),
        }
    }
}

/// One row of the per-step log; losses are averaged over the step's samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss_diff: f64,
    pub loss_depth: f64,
    pub loss_seg: f64,
    pub loss_temp: f64,
    pub alpha_ref: f64,
}

impl LogRow {
    pub const HEADER: [&'static str; 6] = ["step", "loss_diff", "loss_depth", "loss_seg", "loss_temp", "alpha_ref"];
}

pub fn log_csv(rows: &[LogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// A training run in progress.
pub struct Trainer {
    config: TrainConfig,
    dataset: Dataset,
    params: ModelParams,
    adam: AdamState,
    step: u64,
    inputs: Vec<Option<ClipInputs>>,
    embedder: Box<dyn EmbeddingProvider>,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: Dataset) -> Result<Self> {
        let params = ModelParams::init(&config.model, config.seed)?;
        let adam = AdamState::zeros_like(&params);
        Self::assemble(config, dataset, params, adam, 0)
    }

    /// Continues from a checkpoint; `config.steps` may be raised beforehand.
    pub fn resume(checkpoint: Checkpoint, dataset: Dataset) -> Result<Self> {
        let Checkpoint { params, adam, step, config } = checkpoint;
        Self::assemble(config, dataset, params, adam, step)
    }

    fn assemble(config: TrainConfig, dataset: Dataset, params: ModelParams, adam: AdamState, step: u64) -> Result<Self> {
        config.validate()?;
        ensure!(
            dataset.world.n_views == config.n_views,
            "dataset holds {} views per clip, config asks for {}",
            dataset.world.n_views,
            config.n_views
        );
        ensure!(
            dataset.items.len() > config.eval_clips,
            "dataset has {} clips, {} are held out for evaluation",
            dataset.items.len(),
            config.eval_clips
        );
        params.validate(&config.model)?;
        let inputs = vec![None; dataset.items.len()];
        Ok(Trainer { config, dataset, params, adam, step, inputs, embedder: Box::new(ToyEmbedder::default()) })
    }

    /// Replaces the embedding provider used for consistency scores.
    pub fn with_embedder(mut self, embedder: Box<dyn EmbeddingProvider>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn train_clips(&self) -> usize {
        self.dataset.items.len() - self.config.eval_clips
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { params: self.params.clone(), adam: self.adam.clone(), step: self.step, config: self.config.clone() }
    }

    fn clip(&mut self, idx: usize) -> Result<&ClipInputs> {
        if self.inputs[idx].is_none() {
            self.inputs[idx] = Some(clip_inputs(&self.dataset.items[idx], &self.config.model, self.config.control)?);
        }
        Ok(self.inputs[idx].as_ref().expect("filled above"))
    }

    /// One optimizer step over `batch_size · grad_accum` samples.
    pub fn step(&mut self) -> Result<LogRow> {
        let cfg = self.config.clone();
        let samples = cfg.batch_size * cfg.grad_accum;
        let mut grads: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        let mut terms = LossTerms::default();
        let mut alpha = 0.0;
        for micro in 0..samples {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[self.step, micro as u64]));
            let idx = rng.gen_range(0..self.train_clips());
            let refs = reference_views(&self.dataset.items[idx], &cfg.toggles, Some((&cfg.corruption, &mut rng)))?;
            let inputs = self.clip(idx)?.clone();
            let cond = build_conditioning(&inputs, &refs, &cfg.model, &cfg.toggles, &cfg.reference, self.embedder.as_ref())?;
            let draw = NoiseDraw::sample(&mut rng, inputs.targets.x0.dim());
            let opts = LossOptions {
                toggles: cfg.toggles,
                weights: cfg.weights,
                epsilon_flow: cfg.epsilon_flow,
                flow_override: None,
            };
            let graph = training_loss(&self.params, &cfg.model, &cond, &inputs.targets, &draw, &opts)?;
            let t = graph.terms;
            if ![graph.total_value, t.diff, t.depth, t.seg, t.temp].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    step: self.step,
                    detail: format!(
                        "clip {idx}, t = {:.6}, alpha_ref = {:.6}, terms {:?}, total {}",
                        draw.t, cond.alpha_ref, t, graph.total_value
                    ),
                });
            }
            let mut g = graph.tape.backward(graph.total)?;
            for (name, var) in &graph.params.vars {
                if let Some(gv) = g.take(*var) {
                    match grads.get_mut(name) {
                        Some(acc) => *acc += &gv,
                        None => {
                            grads.insert(name.clone(), gv);
                        }
                    }
                }
            }
            terms.diff += t.diff;
            terms.depth += t.depth;
            terms.seg += t.seg;
            terms.temp += t.temp;
            alpha += cond.alpha_ref;
        }
        let n = samples as f64;
        if samples > 1 {
            grads.values_mut().for_each(|g| *g /= n);
        }
        self.step += 1;
        self.adam.update(&mut self.params, &grads, cfg.lr, self.step, &cfg.adam);
        Ok(LogRow {
            step: self.step - 1,
            loss_diff: terms.diff / n,
            loss_depth: terms.depth / n,
            loss_seg: terms.seg / n,
            loss_temp: terms.temp / n,
            alpha_ref: alpha / n,
        })
    }

    /// Steps until `config.steps` is reached, reporting each row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        while self.step < self.config.steps {
            let row = self.step()?;
            on_row(&row);
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Trains from scratch on the dataset named by `config`.
pub fn train(config: &TrainConfig) -> Result<(Checkpoint, Vec<LogRow>)> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    train_on(config, dataset)
}

pub fn train_on(config: &TrainConfig, dataset: Dataset) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    let log = trainer.run(|_| {})?;
    Ok((trainer.checkpoint(), log))
}

/// A named toggle set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
}

impl AblationRow {
    pub fn new(name: impl Into<String>, toggles: Toggles) -> Self {
        AblationRow { name: name.into(), toggles }
    }

    /// The full model followed by one row per component switched off.
    pub fn one_off_grid() -> Vec<AblationRow> {
        let full = Toggles::default();
        let mut rows = vec![AblationRow::new("full", full)];
        rows.push(AblationRow::new("w/o mvp", Toggles { mvp: false, ..full }));
        rows.push(AblationRow::new("w/o scc", Toggles { scc: false, ..full }));
        rows.push(AblationRow::new("w/o ch", Toggles { ch: false, ..full }));
        rows.push(AblationRow::new("w/o dh", Toggles { dh: false, ..full }));
        rows.push(AblationRow::new("w/o tco", Toggles { tco: false, ..full }));
        rows
    }
}

/// Trains every row under every seed on `dataset` and evaluates each run on
/// the held-out clips. `on_run` sees each result with its trained checkpoint.
pub fn ablation_matrix(
    base: &TrainConfig,
    rows: &[AblationRow],
    seeds: &[u64],
    eval: &EvalConfig,
    dataset: &Dataset,
    mut on_run: impl FnMut(&RunResult, &Checkpoint),
) -> Result<Vec<RunResult>> {
    let mut out = Vec::with_capacity(rows.len() * seeds.len());
    for row in rows {
        for &seed in seeds {
            let cfg = TrainConfig { toggles: row.toggles, seed, ..base.clone() };
            let (ckpt, _) = train_on(&cfg, dataset.clone())?;
            let held_out = &dataset.items[dataset.items.len() - cfg.eval_clips..];
            let metrics = evaluate(&ckpt.params, &cfg, held_out, eval)?;
            let r = RunResult { config: row.name.clone(), seed, metrics };
            on_run(&r, &ckpt);
            out.push(r);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
