//! Turns a dataset clip into denoiser conditioning and supervision targets.

use ndarray::s;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{to_model_space, Conditioning, ModelConfig, Targets};
use crate::conditioning::{
    consistency_scores, identity_latent_inject, modulate_scale, stack_view_tokens, ConsistencyReport,
    EmbeddingProvider,
};
use crate::error::{ensure, Result};
use crate::latent::{encode, encode_scalar_map, rasterize_box_signal, LatentVideo, TokenGrid};
use crate::synthworld::{corrupt_views, CorruptionConfig, DatasetItem, MultiViewReferenceSet};
use crate::toggles::Toggles;

/// Spatial control signal handed to the denoiser.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    #[default]
    Mask,
    Bbox,
}

/// Reference-scaling settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub alpha0: f64,
    pub tau: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig { alpha0: crate::conditioning::ALPHA0, tau: crate::conditioning::TAU }
    }
}

/// Per-clip tensors that do not depend on the reference views.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipInputs {
    /// Object-free video, model space.
    pub background: LatentVideo,
    pub control: LatentVideo,
    pub targets: Targets,
    pub prompt: String,
}

fn model_space(mut l: LatentVideo) -> LatentVideo {
    l.data.mapv_inplace(|v| 2.0 * v - 1.0);
    l
}

pub fn clip_inputs(item: &DatasetItem, cfg: &ModelConfig, mode: ControlMode) -> Result<ClipInputs> {
    let clip = &item.clip;
    let (t, h, w, _) = clip.frames.dim();
    ensure!((h, w) == cfg.frame_size(), "clip frames {h}×{w} do not match the model's {:?}", cfg.frame_size());
    let p = cfg.patch_size;
    let background = model_space(encode(&item.background, p)?);
    let control_map = match mode {
        ControlMode::Mask => clip.masks_f64(),
        ControlMode::Bbox => rasterize_box_signal(&clip.boxes, (h, w))?,
    };
    let control = encode_scalar_map(&control_map, p)?;
    let targets = Targets {
        x0: to_model_space(&encode(&clip.frames, p)?.to_tokens()),
        depth: encode_scalar_map(&clip.depth, p)?.to_tokens(),
        seg: encode_scalar_map(&clip.masks_f64(), p)?.to_tokens(),
        grid: TokenGrid { frames: t, height: h, width: w, channels: 3, patch: p },
    };
    Ok(ClipInputs { background, control, targets, prompt: clip.prompt.clone() })
}

/// The reference set seen by the model: the panoramic set (optionally
/// corrupted) with the multi-view prior on, otherwise the single clean view
/// rendered from the reference frame's orientation.
pub fn reference_views<R: Rng>(
    item: &DatasetItem,
    toggles: &Toggles,
    corruption: Option<(&CorruptionConfig, &mut R)>,
) -> Result<MultiViewReferenceSet> {
    if toggles.mvp {
        match corruption {
            Some((cfg, rng)) => corrupt_views(&item.references, cfg, rng),
            None => Ok(item.references.clone()),
        }
    } else {
        let r = &item.references;
        Ok(MultiViewReferenceSet {
            images: r.images.slice(s![..1, .., .., ..]).to_owned(),
            azimuths: vec![r.azimuths[0]],
            corrupted_flags: vec![false],
        })
    }
}

/// [`reference_views`] without corruption.
pub fn clean_reference_views(item: &DatasetItem, toggles: &Toggles) -> Result<MultiViewReferenceSet> {
    reference_views::<rand::rngs::mock::StepRng>(item, toggles, None)
}

/// Scores `refs` against the prompt (or returns the neutral report).
pub fn score_views(
    prompt: &str,
    refs: &MultiViewReferenceSet,
    scc: bool,
    tau: f64,
    embedder: &dyn EmbeddingProvider,
) -> Result<ConsistencyReport> {
    if !scc {
        return Ok(ConsistencyReport::neutral(refs.len()));
    }
    let e_p = embedder.embed_text(prompt);
    let views: Vec<Vec<f64>> = (0..refs.len()).map(|i| embedder.embed_image(&refs.view(i))).collect();
    consistency_scores(&e_p, &views, tau)
}

pub fn build_conditioning(
    inputs: &ClipInputs,
    refs: &MultiViewReferenceSet,
    cfg: &ModelConfig,
    toggles: &Toggles,
    reference: &ReferenceConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Conditioning> {
    toggles.validate()?;
    refs.validate()?;
    let views: Vec<LatentVideo> = (0..refs.len())
        .map(|i| encode(&refs.images.slice(s![i..i + 1, .., .., ..]).to_owned(), cfg.patch_size).map(model_space))
        .collect::<Result<_>>()?;
    let injected = if toggles.ipli {
        identity_latent_inject(&inputs.background, &inputs.control, &views)?
    } else {
        identity_latent_inject(&inputs.background, &inputs.control, &[])?
    };
    let report = score_views(&inputs.prompt, refs, toggles.scc, reference.tau, embedder)?;
    let alpha_ref = if toggles.mvfb { modulate_scale(reference.alpha0, report.mean_score)? } else { 0.0 };
    Ok(Conditioning {
        injected,
        bank_tokens: if toggles.mvfb { Some(stack_view_tokens(&views)?) } else { None },
        view_azimuths: if toggles.ipli { refs.azimuths.clone() } else { Vec::new() },
        report,
        alpha_ref,
    })
}
