//! Reference conditioning: prompt/view consistency scoring, the multi-view
//! feature bank with its retrieval cross-attention, and latent injection of
//! the reference views into the token stream.

mod embed;

pub use embed::{EmbeddingProvider, ToyEmbedder};

use std::ops::Range;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::latent::LatentVideo;
use crate::nn;
use crate::tape::{Tape, Var};

/// Default base reference scale.
pub const ALPHA0: f64 = 0.2;
/// Default similarity temperature.
pub const TAU: f64 = 1.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub logits: Vec<f64>,
    pub per_view_scores: Vec<f64>,
    pub mean_score: f64,
    pub temperature: f64,
}

impl ConsistencyReport {
    /// The report used when scoring is disabled: every score is exactly 1
    /// (the limit of infinite logits).
    pub fn neutral(n_views: usize) -> Self {
        ConsistencyReport {
            logits: vec![f64::INFINITY; n_views],
            per_view_scores: vec![1.0; n_views],
            mean_score: 1.0,
            temperature: TAU,
        }
    }

    pub fn len(&self) -> usize {
        self.per_view_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_view_scores.is_empty()
    }
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    ensure!((n - 1.0).abs() <= 1e-6, "{what} has norm {n}, expected a unit vector");
    Ok(())
}

/// Temperature-scaled cosine logits of each view against the prompt, their
/// sigmoids, and the sigmoid of the mean logit.
pub fn consistency_scores(prompt: &[f64], views: &[Vec<f64>], tau: f64) -> Result<ConsistencyReport> {
    ensure!(tau > 0.0, "temperature must be positive, got {tau}");
    ensure!(!views.is_empty(), "at least one view embedding is required");
    check_unit(prompt, "prompt embedding")?;
    let mut logits = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        ensure!(v.len() == prompt.len(), "view {i} embedding has dim {} not {}", v.len(), prompt.len());
        check_unit(v, &format!("view {i} embedding"))?;
        logits.push(prompt.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / tau);
    }
    let mean = logits.iter().sum::<f64>() / logits.len() as f64;
    Ok(ConsistencyReport {
        per_view_scores: logits.iter().map(|&l| sigmoid(l)).collect(),
        mean_score: sigmoid(mean),
        logits,
        temperature: tau,
    })
}

/// `α_ref = α₀ · S̄`.
pub fn modulate_scale(alpha0: f64, mean_score: f64) -> Result<f64> {
    ensure!(alpha0 >= 0.0, "alpha0 must be non-negative, got {alpha0}");
    ensure!((0.0..=1.0).contains(&mean_score), "mean score {mean_score} outside [0,1]");
    Ok(alpha0 * mean_score)
}

/// Per-view key/value tokens for the retrieval cross-attention.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    /// `N×L_v×d`
    pub keys: Array3<f64>,
    /// `N×L_v×d`
    pub values: Array3<f64>,
    pub per_view_scores: Vec<f64>,
}

impl FeatureBank {
    pub fn n_views(&self) -> usize {
        self.keys.dim().0
    }

    pub fn token_length(&self) -> usize {
        self.keys.dim().1
    }

    pub fn model_dim(&self) -> usize {
        self.keys.dim().2
    }

    fn flat(a: &Array3<f64>) -> Array2<f64> {
        let (n, l, d) = a.dim();
        a.to_owned().into_shape_with_order((n * l, d)).expect("contiguous bank")
    }

    /// Keys of all views stacked along the token axis.
    pub fn flat_keys(&self) -> Array2<f64> {
        Self::flat(&self.keys)
    }

    pub fn flat_values(&self) -> Array2<f64> {
        Self::flat(&self.values)
    }
}

/// Linear maps from view-latent tokens to bank keys and values.
#[derive(Clone, Debug, PartialEq)]
pub struct BankProjection {
    pub key_weight: Array2<f64>,
    /// `1×d`
    pub key_bias: Array2<f64>,
    pub value_weight: Array2<f64>,
    pub value_bias: Array2<f64>,
}

/// Stacks the token matrices of `views` (each `L_v×C`).
pub fn stack_view_tokens(views: &[LatentVideo]) -> Result<Array2<f64>> {
    ensure!(!views.is_empty(), "at least one view is required");
    let first = views[0].data.dim();
    for (i, v) in views.iter().enumerate() {
        if v.data.dim() != first {
            return Err(Error::invalid(format!("view {i} latent {:?} differs from view 0 {first:?}", v.data.dim())));
        }
    }
    let parts: Vec<Array2<f64>> = views.iter().map(|v| v.to_tokens()).collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
}

/// Records the bank projection on a tape. `views` is the stacked `N·L_v×C`
/// token matrix; each row block is scaled by its view's score.
pub fn bank_on_tape(
    tape: &mut Tape,
    views: Var,
    proj: [Var; 4],
    scores: &[f64],
) -> Result<(Var, Var)> {
    let (rows, _) = tape.shape(views);
    ensure!(!scores.is_empty() && rows % scores.len() == 0, "{rows} bank tokens do not split into {} views", scores.len());
    let k = nn::linear(tape, views, proj[0], Some(proj[1]))?;
    let v = nn::linear(tape, views, proj[2], Some(proj[3]))?;
    if scores.iter().all(|&s| s == 1.0) {
        return Ok((k, v));
    }
    let per_view = rows / scores.len();
    let d = tape.shape(k).1;
    let m = Array2::from_shape_fn((rows, d), |(r, _)| scores[r / per_view]);
    let m = tape.leaf(m);
    Ok((tape.mul(k, m)?, tape.mul(v, m)?))
}

/// Projects each view's latent tokens to keys and values; scores start at 1.
pub fn build_feature_bank(views: &[LatentVideo], proj: &BankProjection) -> Result<FeatureBank> {
    let stacked = stack_view_tokens(views)?;
    let (n, l_v) = (views.len(), views[0].token_count());
    ensure!(
        proj.key_weight.nrows() == stacked.ncols() && proj.value_weight.nrows() == stacked.ncols(),
        "projection expects {} channels, views have {}",
        proj.key_weight.nrows(),
        stacked.ncols()
    );
    let mut tape = Tape::new();
    let x = tape.leaf(stacked);
    let p = [&proj.key_weight, &proj.key_bias, &proj.value_weight, &proj.value_bias].map(|a| tape.leaf(a.clone()));
    let (k, v) = bank_on_tape(&mut tape, x, p, &vec![1.0; n])?;
    let d = tape.shape(k).1;
    let shape = |a: &Array2<f64>| a.clone().into_shape_with_order((n, l_v, d)).expect("bank shape");
    Ok(FeatureBank {
        keys: shape(tape.value(k)),
        values: shape(tape.value(v)),
        per_view_scores: vec![1.0; n],
    })
}

/// Multiplies each view's keys and values by its consistency score.
pub fn scale_bank(bank: &FeatureBank, report: &ConsistencyReport) -> Result<FeatureBank> {
    ensure!(
        bank.n_views() == report.len(),
        "bank has {} views, report has {}",
        bank.n_views(),
        report.len()
    );
    let mut out = bank.clone();
    for (i, &s) in report.per_view_scores.iter().enumerate() {
        out.keys.slice_mut(s![i, .., ..]).mapv_inplace(|k| k * s);
        out.values.slice_mut(s![i, .., ..]).mapv_inplace(|v| v * s);
    }
    out.per_view_scores = report.per_view_scores.clone();
    Ok(out)
}

/// Records `x + α·Attn(x·W_q, K, V)` on a tape.
pub fn mv_attention_on_tape(
    tape: &mut Tape,
    x: Var,
    query_weight: Var,
    keys: Var,
    values: Var,
    alpha: f64,
    heads: usize,
) -> Result<Var> {
    let q = tape.matmul(x, query_weight)?;
    let a = nn::attention(tape, q, keys, values, heads)?;
    let a = tape.scale(a, alpha);
    tape.add(x, a)
}

/// Retrieval cross-attention of `x` (`B×L×D`) over every token of the bank.
pub fn mv_cross_attention(
    x: &Array3<f64>,
    bank: &FeatureBank,
    alpha: f64,
    heads: usize,
    query_weight: &Array2<f64>,
) -> Result<Array3<f64>> {
    let (b, l, d) = x.dim();
    ensure!(bank.model_dim() == d, "bank dim {} differs from model dim {d}", bank.model_dim());
    ensure!(query_weight.dim() == (d, d), "query weight {:?} is not {d}×{d}", query_weight.dim());
    let (k, v) = (bank.flat_keys(), bank.flat_values());
    let mut out = Array3::zeros((b, l, d));
    for bi in 0..b {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.slice(s![bi, .., ..]).to_owned());
        let wq = tape.leaf(query_weight.clone());
        let kv = tape.leaf(k.clone());
        let vv = tape.leaf(v.clone());
        let y = mv_attention_on_tape(&mut tape, xv, wq, kv, vv, alpha, heads)?;
        out.slice_mut(s![bi, .., ..]).assign(tape.value(y));
    }
    Ok(out)
}

/// Where inside a block the retrieval update is added.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MvSite {
    AfterSelfAttention,
}

/// Row and column layout of an injected token sequence.
///
/// Columns are `[background | control | view | segment flag]`; video rows
/// fill the first two blocks, reference rows the third, and the flag is 1 on
/// reference rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionLayout {
    pub frames: usize,
    pub grid: (usize, usize),
    pub n_views: usize,
    pub background_channels: usize,
    pub control_channels: usize,
    pub view_channels: usize,
    pub mv_site: MvSite,
}

impl InjectionLayout {
    pub fn video_tokens(&self) -> usize {
        self.frames * self.grid.0 * self.grid.1
    }

    pub fn tokens_per_view(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn total_tokens(&self) -> usize {
        self.video_tokens() + self.n_views * self.tokens_per_view()
    }

    pub fn video_range(&self) -> Range<usize> {
        0..self.video_tokens()
    }

    pub fn reference_range(&self) -> Range<usize> {
        self.video_tokens()..self.total_tokens()
    }

    pub fn width(&self) -> usize {
        self.background_channels + self.control_channels + self.view_channels + 1
    }

    pub fn is_reference(&self, token: usize) -> bool {
        self.reference_range().contains(&token)
    }

    /// The fused background/control columns of the video rows.
    pub fn extract_video(&self, tokens: &Array2<f64>) -> Result<Array2<f64>> {
        ensure!(
            tokens.dim() == (self.total_tokens(), self.width()),
            "tokens {:?} do not match layout ({}, {})",
            tokens.dim(),
            self.total_tokens(),
            self.width()
        );
        Ok(tokens
            .slice(s![self.video_range(), ..self.background_channels + self.control_channels])
            .to_owned())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InjectedSequence {
    pub tokens: Array2<f64>,
    pub layout: InjectionLayout,
}

/// Fuses background and control latents per video token and appends the
/// reference view tokens as a flagged segment.
pub fn identity_latent_inject(
    background: &LatentVideo,
    control: &LatentVideo,
    views: &[LatentVideo],
) -> Result<InjectedSequence> {
    let (t, cb, gh, gw) = background.data.dim();
    let (tc, cc, ch, cw) = control.data.dim();
    ensure!(
        (tc, ch, cw) == (t, gh, gw),
        "control latent {:?} does not share the background grid {:?}",
        control.data.dim(),
        background.data.dim()
    );
    for (i, v) in views.iter().enumerate() {
        let (vt, vc, vh, vw) = v.data.dim();
        ensure!(
            vt == 1 && vc == cb && (vh, vw) == (gh, gw),
            "view {i} latent {:?} must be 1×{cb}×{gh}×{gw}",
            v.data.dim()
        );
    }
    let layout = InjectionLayout {
        frames: t,
        grid: (gh, gw),
        n_views: views.len(),
        background_channels: cb,
        control_channels: cc,
        view_channels: cb,
        mv_site: MvSite::AfterSelfAttention,
    };
    let mut tokens = Array2::zeros((layout.total_tokens(), layout.width()));
    let nv = layout.video_tokens();
    tokens.slice_mut(s![..nv, ..cb]).assign(&background.to_tokens());
    tokens.slice_mut(s![..nv, cb..cb + cc]).assign(&control.to_tokens());
    let per = layout.tokens_per_view();
    let vc0 = cb + cc;
    for (i, v) in views.iter().enumerate() {
        let rows = nv + i * per..nv + (i + 1) * per;
        tokens.slice_mut(s![rows.clone(), vc0..vc0 + cb]).assign(&v.to_tokens());
        tokens.slice_mut(s![rows, vc0 + cb]).fill(1.0);
    }
    Ok(InjectedSequence { tokens, layout })
}

#[cfg(test)]
mod tests;
