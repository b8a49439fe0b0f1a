use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use safetensors::tensor::{Dtype, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamState, TrainConfig};
use crate::backbone::ModelParams;
use crate::error::{Error, Result};

pub const FORMAT: &str = "movi-checkpoint/1";
pub const TENSOR_FILE: &str = "params.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Model, optimizer state and the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Optimizer steps taken.
    pub step: u64,
    pub config: TrainConfig,
}

/// Random state: every step reseeds from `(seed, step)`, so the next step
/// index is the whole state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub kind: String,
    pub seed: u64,
    pub next_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub step: u64,
    pub rng: RngState,
    pub toggles: crate::toggles::Toggles,
    pub config: TrainConfig,
    pub config_hash: String,
    pub tensors: BTreeMap<String, (usize, usize)>,
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    let s = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&s)))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    fn named_arrays(&self) -> Vec<(String, &Array2<f64>)> {
        let mut v = Vec::new();
        for (prefix, map) in [("param", &self.params.arrays), ("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            for (k, a) in map {
                v.push((format!("{prefix}/{k}"), a));
            }
        }
        v
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let arrays = self.named_arrays();
        let bytes: Vec<(String, Vec<u8>, (usize, usize))> = arrays
            .iter()
            .map(|(n, a)| {
                let b: Vec<u8> = a.iter().flat_map(|v| v.to_le_bytes()).collect();
                (n.clone(), b, a.dim())
            })
            .collect();
        let views: Vec<(String, TensorView)> = bytes
            .iter()
            .map(|(n, b, (r, c))| {
                let view = TensorView::new(Dtype::F64, vec![*r, *c], b).map_err(|e| bad(e.to_string()))?;
                Ok((n.clone(), view))
            })
            .collect::<Result<_>>()?;
        let path = dir.join(TENSOR_FILE);
        safetensors::serialize_to_file(views, &None, &path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let manifest = Manifest {
            format: FORMAT.into(),
            step: self.step,
            rng: RngState { kind: "chacha8-per-step".into(), seed: self.config.seed, next_step: self.step },
            toggles: self.config.toggles,
            config: self.config.clone(),
            config_hash: content_hash(&self.config)?,
            tensors: arrays.iter().map(|(n, a)| (n.clone(), a.dim())).collect(),
        };
        crate::synthworld::write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let manifest: Manifest = crate::synthworld::read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.format != FORMAT {
            return Err(bad(format!("unknown checkpoint format {:?}", manifest.format)));
        }
        if content_hash(&manifest.config)? != manifest.config_hash {
            return Err(bad("config hash does not match the stored config"));
        }
        manifest.config.validate()?;
        let cfg = &manifest.config;
        let expected = ModelParams::expected_shapes(&cfg.model);
        let mut want: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for prefix in ["param", "adam.m", "adam.v"] {
            for (k, s) in &expected {
                want.insert(format!("{prefix}/{k}"), *s);
            }
        }
        if want != manifest.tensors {
            return Err(bad("manifest tensor list does not match the model configuration"));
        }
        let path = dir.join(TENSOR_FILE);
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let st = safetensors::SafeTensors::deserialize(&raw).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut maps: [BTreeMap<String, Array2<f64>>; 3] = Default::default();
        for (name, shape) in &want {
            let t = st.tensor(name).map_err(|e| bad(format!("tensor {name}: {e}")))?;
            if t.dtype() != Dtype::F64 || t.shape() != [shape.0, shape.1] {
                return Err(bad(format!("tensor {name} has dtype {:?} shape {:?}, expected F64 {shape:?}", t.dtype(), t.shape())));
            }
            let vals: Vec<f64> = t.data().chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let a = Array2::from_shape_vec(*shape, vals).map_err(|e| bad(e.to_string()))?;
            let (prefix, key) = name.split_once('/').expect("prefixed name");
            let slot = ["param", "adam.m", "adam.v"].iter().position(|p| *p == prefix).expect("known prefix");
            maps[slot].insert(key.to_string(), a);
        }
        if st.names().len() != want.len() {
            return Err(bad("tensor file holds unexpected entries"));
        }
        let [p, m, v] = maps;
        let params = ModelParams { arrays: p };
        params.validate(&cfg.model)?;
        Ok(Checkpoint { params, adam: AdamState { m, v }, step: manifest.step, config: manifest.config })
    }
}
