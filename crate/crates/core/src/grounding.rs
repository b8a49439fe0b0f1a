//! Latent geometric grounding: a feature pyramid over the denoiser's block
//! outputs feeding linear depth and contour heads.

use ndarray::Array2;

use crate::error::{ensure, Result};
use crate::latent::LatentVideo;
use crate::nn;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct FpnParams {
    /// One `D×P` projection per level, shallowest first.
    pub laterals: Vec<Array2<f64>>,
    pub fuse_weight: Array2<f64>,
    pub fuse_bias: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundingOutput {
    pub latent_depth: LatentVideo,
    pub latent_seg: LatentVideo,
}

/// Records the pyramid: lateral projections summed from the deepest level
/// upward, then the fusion layer.
pub fn fpn_on_tape(tape: &mut Tape, levels: &[Var], laterals: &[Var], fuse: [Var; 2]) -> Result<Var> {
    ensure!(levels.len() >= 2, "the pyramid needs at least two levels, got {}", levels.len());
    ensure!(levels.len() == laterals.len(), "{} levels but {} lateral projections", levels.len(), laterals.len());
    let shape = tape.shape(levels[0]);
    for (i, &l) in levels.iter().enumerate() {
        ensure!(tape.shape(l) == shape, "level {i} has shape {:?}, level 0 {:?}", tape.shape(l), shape);
    }
    let last = levels.len() - 1;
    let mut acc = tape.matmul(levels[last], laterals[last])?;
    for i in (0..last).rev() {
        let p = tape.matmul(levels[i], laterals[i])?;
        acc = tape.add(acc, p)?;
    }
    nn::linear(tape, acc, fuse[0], Some(fuse[1]))
}

pub fn fpn_aggregate(block_features: &[Array2<f64>], params: &FpnParams) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let levels: Vec<Var> = block_features.iter().map(|f| tape.leaf(f.clone())).collect();
    let laterals: Vec<Var> = params.laterals.iter().map(|w| tape.leaf(w.clone())).collect();
    let fuse = [tape.leaf(params.fuse_weight.clone()), tape.leaf(params.fuse_bias.clone())];
    let out = fpn_on_tape(&mut tape, &levels, &laterals, fuse)?;
    Ok(tape.value(out).clone())
}

fn apply_head(fused: &Array2<f64>, head: &HeadParams, like: &LatentVideo) -> Result<LatentVideo> {
    ensure!(
        head.weight.nrows() == fused.ncols(),
        "head expects {} features, got {}",
        head.weight.nrows(),
        fused.ncols()
    );
    let mut tape = Tape::new();
    let x = tape.leaf(fused.clone());
    let w = tape.leaf(head.weight.clone());
    let b = tape.leaf(head.bias.clone());
    let y = nn::linear(&mut tape, x, w, Some(b))?;
    LatentVideo::from_tokens(tape.value(y), like)
}

/// Linear head to the latent depth channels; `like` fixes the output grid.
pub fn depth_head(fused: &Array2<f64>, head: &HeadParams, like: &LatentVideo) -> Result<LatentVideo> {
    apply_head(fused, head, like)
}

/// Linear head to the latent mask channels.
pub fn contour_head(fused: &Array2<f64>, head: &HeadParams, like: &LatentVideo) -> Result<LatentVideo> {
    apply_head(fused, head, like)
}

fn check_same(pred: &LatentVideo, gt: &LatentVideo) -> Result<()> {
    ensure!(
        pred.data.dim() == gt.data.dim(),
        "prediction {:?} and target {:?} differ in shape",
        pred.data.dim(),
        gt.data.dim()
    );
    Ok(())
}

/// Mean absolute difference.
pub fn depth_loss(pred: &LatentVideo, gt: &LatentVideo) -> Result<f64> {
    check_same(pred, gt)?;
    Ok((&pred.data - &gt.data).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// Mean squared difference.
pub fn seg_loss(pred: &LatentVideo, gt: &LatentVideo) -> Result<f64> {
    check_same(pred, gt)?;
    Ok((&pred.data - &gt.data).mapv(|d| d * d).mean().unwrap_or(0.0))
}

pub fn depth_loss_on_tape(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let d = tape.sub(pred, gt)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

pub fn seg_loss_on_tape(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let d = tape.sub(pred, gt)?;
    let a = tape.square(d);
    Ok(tape.mean(a))
}
