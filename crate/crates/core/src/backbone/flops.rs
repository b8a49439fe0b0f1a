use super::ModelConfig;
use crate::toggles::Toggles;

/// Analytic floating-point operation count of one denoiser forward pass
/// (two per multiply-add; elementwise ops and softmax counted once per entry).
pub fn forward_flops(cfg: &ModelConfig, frames: usize, n_views: usize, toggles: &Toggles) -> u64 {
    let d = cfg.d_model as u64;
    let c = cfg.latent_channels() as u64;
    let g = cfg.tokens_per_frame() as u64;
    let m = (cfg.mlp_ratio * cfg.d_model) as u64;
    let video = frames as u64 * g;
    let refs = if toggles.ipli { n_views as u64 * g } else { 0 };
    let bank = if toggles.mvfb { n_views as u64 * g } else { 0 };
    let l = video + refs;
    let mm = |a: u64, b: u64, k: u64| 2 * a * b * k;

    let mut f = mm(l, cfg.input_width() as u64, d);
    f += mm(l, g + cfg.max_frames as u64 + 2, d) + 3 * l * d;
    f += mm(1, cfg.time_dim as u64, d) + mm(1, d, d) + l * d;
    f += (cfg.n_blocks as u64 * 4 + 2) * (2 * d * d + d);
    if bank > 0 {
        f += 2 * mm(bank, c, d);
    }
    let per_block = {
        let mut b = 8 * l * d; // two modulated norms
        b += mm(l, d, 3 * d) + 2 * mm(l, l, d) + 3 * l * l + mm(l, d, d) + l * d;
        if bank > 0 {
            b += mm(l, d, d) + 2 * mm(l, bank, d) + 3 * l * bank + 2 * l * d;
        }
        b += mm(l, d, m) + 4 * l * m + mm(l, m, d) + l * d;
        b
    };
    f += cfg.n_blocks as u64 * per_block;
    f += 4 * video * d + mm(video, d, c);
    f
}

/// Forward plus backward, with the backward pass taken as twice the forward.
pub fn training_step_flops(cfg: &ModelConfig, frames: usize, n_views: usize, toggles: &Toggles) -> u64 {
    let p = cfg.pyramid_dim as u64;
    let video = (frames * cfg.tokens_per_frame()) as u64;
    let heads = 2 * (cfg.n_blocks as u64 * 2 * video * cfg.d_model as u64 * p + 2 * video * p * p)
        + 2 * (2 * video * p * cfg.scalar_channels() as u64);
    3 * (forward_flops(cfg, frames, n_views, toggles) + heads)
}
