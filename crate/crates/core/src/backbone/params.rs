use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::conditioning::BankProjection;
use crate::error::{Error, Result};
use crate::grounding::{FpnParams, HeadParams};

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug)]
enum Init {
    /// `N(0, 1/fan_in)`
    Fan,
    Normal(f64),
    Zeros,
    Ones,
}

/// Every trainable array, keyed by a dotted name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arrays: BTreeMap<String, Array2<f64>>,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize), Init)> {
    let d = cfg.d_model;
    let c = cfg.latent_channels();
    let m = cfg.mlp_ratio * d;
    let p = cfg.pyramid_dim;
    let s = cfg.scalar_channels();
    let mut v: Vec<(String, (usize, usize), Init)> = vec![
        ("embed.in.weight".into(), (cfg.input_width(), d), Init::Fan),
        ("embed.in.bias".into(), (1, d), Init::Zeros),
        ("embed.pos.spatial".into(), (cfg.tokens_per_frame(), d), Init::Normal(0.1)),
        ("embed.pos.frame".into(), (cfg.max_frames, d), Init::Normal(0.1)),
        ("embed.azimuth".into(), (2, d), Init::Normal(0.1)),
        ("time.fc1.weight".into(), (cfg.time_dim, d), Init::Fan),
        ("time.fc1.bias".into(), (1, d), Init::Zeros),
        ("time.fc2.weight".into(), (d, d), Init::Fan),
        ("time.fc2.bias".into(), (1, d), Init::Zeros),
    ];
    for i in 0..cfg.n_blocks {
        let b = |n: &str| format!("blocks.{i}.{n}");
        v.extend([
            (b("norm1.gain"), (1, d), Init::Ones),
            (b("ada.weight"), (d, 4 * d), Init::Zeros),
            (b("ada.bias"), (1, 4 * d), Init::Zeros),
            (b("attn.qkv.weight"), (d, 3 * d), Init::Fan),
            (b("attn.qkv.bias"), (1, 3 * d), Init::Zeros),
            (b("attn.out.weight"), (d, d), Init::Fan),
            (b("attn.out.bias"), (1, d), Init::Zeros),
            (b("mv.query.weight"), (d, d), Init::Fan),
            (b("norm2.gain"), (1, d), Init::Ones),
            (b("mlp.fc1.weight"), (d, m), Init::Fan),
            (b("mlp.fc1.bias"), (1, m), Init::Zeros),
            (b("mlp.fc2.weight"), (m, d), Init::Fan),
            (b("mlp.fc2.bias"), (1, d), Init::Zeros),
        ]);
    }
    v.extend([
        ("bank.key.weight".into(), (c, d), Init::Fan),
        ("bank.key.bias".into(), (1, d), Init::Zeros),
        ("bank.value.weight".into(), (c, d), Init::Fan),
        ("bank.value.bias".into(), (1, d), Init::Zeros),
        ("head.norm.gain".into(), (1, d), Init::Ones),
        ("head.ada.weight".into(), (d, 2 * d), Init::Zeros),
        ("head.ada.bias".into(), (1, 2 * d), Init::Zeros),
        ("head.out.weight".into(), (d, c), Init::Zeros),
        ("head.out.bias".into(), (1, c), Init::Zeros),
    ]);
    for i in 0..cfg.n_blocks {
        v.push((format!("fpn.lateral.{i}.weight"), (d, p), Init::Fan));
    }
    v.extend([
        ("fpn.fuse.weight".into(), (p, p), Init::Fan),
        ("fpn.fuse.bias".into(), (1, p), Init::Zeros),
        ("depth_head.weight".into(), (p, s), Init::Fan),
        ("depth_head.bias".into(), (1, s), Init::Zeros),
        ("contour_head.weight".into(), (p, s), Init::Fan),
        ("contour_head.bias".into(), (1, s), Init::Zeros),
    ]);
    v
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrays = BTreeMap::new();
        for (name, (r, c), init) in layout(cfg) {
            let a = match init {
                Init::Zeros => Array2::zeros((r, c)),
                Init::Ones => Array2::ones((r, c)),
                Init::Fan | Init::Normal(_) => {
                    let std = match init {
                        Init::Normal(s) => s,
                        _ => 1.0 / (r as f64).sqrt(),
                    };
                    let n = Normal::new(0.0, std).expect("positive std");
                    Array2::from_shape_simple_fn((r, c), || n.sample(&mut rng))
                }
            };
            arrays.insert(name, a);
        }
        Ok(ModelParams { arrays })
    }

    /// Adds `N(0, std²)` noise to every entry, so that no parameter sits at
    /// a degenerate point such as an all-zero output head.
    pub fn perturbed(&self, seed: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, std).expect("positive std");
        let mut out = self.clone();
        for a in out.arrays.values_mut() {
            a.mapv_inplace(|v| v + n.sample(&mut rng));
        }
        out
    }

    pub fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, (usize, usize)> {
        layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// Checks names and shapes against `cfg` and that every entry is finite.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Self::expected_shapes(cfg);
        for (name, shape) in &want {
            match self.arrays.get(name) {
                None => return Err(Error::invalid(format!("missing parameter {name}"))),
                Some(a) if a.dim() != *shape => {
                    return Err(Error::shape(format!("parameter {name} is {:?}, expected {shape:?}", a.dim())))
                }
                Some(a) if !a.iter().all(|v| v.is_finite()) => {
                    return Err(Error::invalid(format!("parameter {name} has non-finite entries")))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.arrays.keys().find(|k| !want.contains_key(*k)) {
            return Err(Error::invalid(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.arrays.get(name).ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn num_parameters(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn bank_projection(&self) -> Result<BankProjection> {
        Ok(BankProjection {
            key_weight: self.get("bank.key.weight")?.clone(),
            key_bias: self.get("bank.key.bias")?.clone(),
            value_weight: self.get("bank.value.weight")?.clone(),
            value_bias: self.get("bank.value.bias")?.clone(),
        })
    }

    pub fn fpn(&self, cfg: &ModelConfig) -> Result<FpnParams> {
        Ok(FpnParams {
            laterals: (0..cfg.n_blocks)
                .map(|i| self.get(&format!("fpn.lateral.{i}.weight")).cloned())
                .collect::<Result<_>>()?,
            fuse_weight: self.get("fpn.fuse.weight")?.clone(),
            fuse_bias: self.get("fpn.fuse.bias")?.clone(),
        })
    }

    pub fn head(&self, prefix: &str) -> Result<HeadParams> {
        Ok(HeadParams {
            weight: self.get(&format!("{prefix}.weight"))?.clone(),
            bias: self.get(&format!("{prefix}.bias"))?.clone(),
        })
    }
}
