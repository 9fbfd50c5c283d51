//! Model checkpoints: `model.json` (layer specs, freeze flags, seed, λ and a
//! digest of the parameters) next to `params.bin` (one weight and one bias
//! tensor per parameterized layer, trunk then head then domain branch).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{specs_param_count, LayerSpec};
use super::model::{Model, Sequential};
use crate::dataset::sha256_hex;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor, TensorData};

pub const MODEL_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub trunk: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
    pub domain: Option<Vec<LayerSpec>>,
    pub params_sha256: String,
}

pub fn encode_params(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    for section in sections(model) {
        for layer in &section.layers {
            if let (Some((w, b)), Some(dims)) = (layer.params(), layer.weight_dims()) {
                let wt = Tensor::new(dims, TensorData::F64(w.to_vec())).expect("weight dims");
                tensor::encode(&wt, &mut out);
                let bt = Tensor::new(vec![b.len() as u64], TensorData::F64(b.to_vec())).expect("bias dims");
                tensor::encode(&bt, &mut out);
            }
        }
    }
    out
}

fn sections(model: &Model) -> Vec<&Sequential> {
    let mut v = vec![&model.trunk, &model.head];
    if let Some(d) = &model.domain {
        v.push(d);
    }
    v
}

pub fn model_file(model: &Model, params: &[u8]) -> ModelFile {
    ModelFile {
        version: CHECKPOINT_VERSION,
        seed: model.seed,
        lambda: model.lambda(),
        trunk: model.trunk.specs(),
        head: model.head.specs(),
        domain: model.domain.as_ref().map(Sequential::specs),
        params_sha256: sha256_hex(params),
    }
}

pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let params = encode_params(model);
    let meta = model_file(model, &params);
    fs::write(dir.join(PARAMS_FILE), &params)?;
    fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn parse_model_file(text: &str) -> Result<ModelFile> {
    let m: ModelFile = serde_json::from_str(text)?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!("unsupported checkpoint version {}", m.version)));
    }
    Ok(m)
}

/// Rebuilds a model from its description and parameter bytes.
pub fn decode_checkpoint(meta: &ModelFile, params: &[u8]) -> Result<Model> {
    // Every parameter takes 8 bytes, so the file bounds the model size.
    let limit = params.len() / 8;
    let declared = [Some(&meta.trunk), Some(&meta.head), meta.domain.as_ref()]
        .into_iter()
        .flatten()
        .try_fold(0usize, |acc, specs| Ok::<_, Error>(acc.saturating_add(specs_param_count(specs, limit)?)))
        .map_err(|e| Error::integrity(MODEL_FILE, e.to_string()))?;
    if declared > limit {
        return Err(Error::integrity(PARAMS_FILE, "file too short for the declared layers"));
    }
    let mut model = Model {
        trunk: Sequential::from_specs(&meta.trunk)?,
        head: Sequential::from_specs(&meta.head)?,
        domain: meta.domain.as_deref().map(Sequential::from_specs).transpose()?,
        seed: meta.seed,
    };
    let mut tensors = tensor::decode_all(params)
        .map_err(|e| Error::integrity(PARAMS_FILE, e.to_string()))?
        .into_iter();
    let mut failure = None;
    model.for_each_param_layer_mut(|si, li, layer| {
        if failure.is_some() {
            return;
        }
        let dims = layer.weight_dims().expect("parameterized layer");
        let (w, b) = layer.params_mut().expect("parameterized layer");
        let (Some(wt), Some(bt)) = (tensors.next(), tensors.next()) else {
            failure = Some(format!("missing tensors for section {si} layer {li}"));
            return;
        };
        if wt.dims != dims || bt.dims != [b.len() as u64] {
            failure = Some(format!("tensor shape mismatch at section {si} layer {li}"));
            return;
        }
        match (wt.into_f64(), bt.into_f64()) {
            (Some(wv), Some(bv)) => {
                *w = wv;
                *b = bv;
            }
            _ => failure = Some("parameters must be f64".into()),
        }
    });
    if let Some(f) = failure {
        return Err(Error::integrity(PARAMS_FILE, f));
    }
    if tensors.next().is_some() {
        return Err(Error::integrity(PARAMS_FILE, "more tensors than parameterized layers"));
    }
    if model.lambda() != meta.lambda {
        return Err(Error::integrity(MODEL_FILE, "lambda disagrees with the domain branch"));
    }
    Ok(model)
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let meta_path = dir.join(MODEL_FILE);
    let params_path = dir.join(PARAMS_FILE);
    let missing: Vec<_> = [&meta_path, &params_path].into_iter().filter(|p| !p.exists()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let text = fs::read(&meta_path)?;
    let meta = std::str::from_utf8(&text)
        .map_err(|e| Error::integrity(meta_path.display().to_string(), e.to_string()))
        .and_then(|t| parse_model_file(t).map_err(|e| Error::integrity(meta_path.display().to_string(), e.to_string())))?;
    let params = fs::read(&params_path)?;
    if sha256_hex(&params) != meta.params_sha256 {
        return Err(Error::integrity(params_path.display().to_string(), "digest mismatch"));
    }
    decode_checkpoint(&meta, &params)
}
