//! Metric kernels, clip evaluation and run reports.

mod metrics;
mod report;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{
    box_iou, boxes_of, extract_object_mask, flicker_metric, majority_filter, mask_iou, masked_mae, psnr, ssim,
    video_as_matrix, MASK_THRESHOLD, PSNR_CAP, SSIM_WINDOW,
};
pub use report::{report_csv, report_json, summarize, Metrics, RunResult, Stat, SummaryRow, COLUMNS};

use crate::backbone::{from_model_space, sample, Conditioning, ModelParams, DEFAULT_STEPS};
use crate::conditioning::{EmbeddingProvider, ToyEmbedder};
use crate::error::{ensure, Result};
use crate::pipeline::{build_conditioning, clean_reference_views, clip_inputs, reference_views};
use crate::seed::derive_seed;
use crate::synthworld::{CorruptionConfig, DatasetItem, MultiViewReferenceSet};
use crate::temporal::EPSILON_FLOW;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Sampling steps per clip.
    pub steps: usize,
    pub seed: u64,
    pub threshold: f64,
    pub epsilon_flow: f64,
    /// Corruption applied to the reference views before conditioning.
    pub corruption: Option<CorruptionConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { steps: DEFAULT_STEPS, seed: 0, threshold: MASK_THRESHOLD, epsilon_flow: EPSILON_FLOW, corruption: None }
    }
}

/// A generated clip and the conditioning it was sampled under.
pub struct Generation {
    /// `T×H×W×3` in `[0,1]`.
    pub video: Array4<f64>,
    pub conditioning: Conditioning,
}

/// Samples the clip for `item` under `refs`.
pub fn generate_video(
    params: &ModelParams,
    config: &TrainConfig,
    item: &DatasetItem,
    refs: &MultiViewReferenceSet,
    steps: usize,
    seed: u64,
    embedder: &dyn EmbeddingProvider,
) -> Result<Generation> {
    let inputs = clip_inputs(item, &config.model, config.control)?;
    let cond = build_conditioning(&inputs, refs, &config.model, &config.toggles, &config.reference, embedder)?;
    let tokens = sample(params, &config.model, &cond, &config.toggles, steps, seed)?;
    let video = inputs.targets.grid.decode_tokens(&from_model_space(&tokens))?.mapv(|v| v.clamp(0.0, 1.0));
    Ok(Generation { video, conditioning: cond })
}

/// Scores a generated clip against the item's ground truth.
pub fn score_clip(video: &Array4<f64>, item: &DatasetItem, eval: &EvalConfig) -> Result<Metrics> {
    let clip = &item.clip;
    let pred_mask = extract_object_mask(video, &item.background, eval.threshold)?;
    let (inside, outside) = masked_mae(video, &clip.frames, &clip.masks)?;
    Ok(Metrics {
        psnr: Some(psnr(video, &clip.frames, None)?),
        ssim: Some(ssim(video, &clip.frames, SSIM_WINDOW)?),
        mask_iou: Some(mask_iou(&pred_mask, &clip.masks)?),
        box_iou: Some(box_iou(&boxes_of(&pred_mask), &boxes_of(&clip.masks))?),
        flicker: Some(flicker_metric(video, eval.epsilon_flow)?),
        mae_inside: Some(inside),
        mae_outside: Some(outside),
    })
}

/// Mean metrics over `items`; clip `i` samples with seed `derive(eval.seed, i)`.
pub fn evaluate(params: &ModelParams, config: &TrainConfig, items: &[DatasetItem], eval: &EvalConfig) -> Result<Metrics> {
    ensure!(!items.is_empty(), "nothing to evaluate");
    let embedder = ToyEmbedder::default();
    let per_clip: Vec<Metrics> = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let seed = derive_seed(eval.seed, &[i as u64]);
            let refs = match &eval.corruption {
                Some(c) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
                    reference_views(item, &config.toggles, Some((c, &mut rng)))?
                }
                None => clean_reference_views(item, &config.toggles)?,
            };
            let g = generate_video(params, config, item, &refs, eval.steps, seed, &embedder)?;
            score_clip(&g.video, item, eval)
        })
        .collect::<Result<_>>()?;
    Ok(Metrics::mean(&per_clip))
}
