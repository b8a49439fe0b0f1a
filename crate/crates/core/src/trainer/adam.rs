use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::backbone::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

impl AdamState {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z: BTreeMap<_, _> = params.arrays.iter().map(|(k, a)| (k.clone(), Array2::zeros(a.dim()))).collect();
        AdamState { m: z.clone(), v: z }
    }

    /// One bias-corrected update; `step` counts from 1.
    pub fn update(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
        step: u64,
        cfg: &AdamConfig,
    ) {
        let c1 = 1.0 - cfg.beta1.powi(step as i32);
        let c2 = 1.0 - cfg.beta2.powi(step as i32);
        for (name, p) in params.arrays.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.get_mut(name).expect("moment for every parameter");
            let v = self.v.get_mut(name).expect("moment for every parameter");
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * *p);
            });
        }
    }
}
