//! Model and adapter fixtures: binary matrices plus a JSON manifest that
//! lists the layer, head and factor files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lora_serve_core::lora::{Activation, AdapterId, Adapters, BaseModel, LoraAdapter, LoraError, LoraLayer, ModelDims};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix_file::{read_matrix, write_matrix};
use super::{read_json, write_json, IoError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFiles {
    pub down: PathBuf,
    pub up: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub id: u32,
    pub rank: usize,
    pub layers: Vec<LayerFiles>,
    #[serde(default)]
    pub task_head: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub activation: String,
    pub layers: Vec<PathBuf>,
    pub lm_head: PathBuf,
    pub adapters: Vec<AdapterManifest>,
}

pub fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Identity => "identity",
        Activation::Relu => "relu",
        Activation::Softsign => "softsign",
    }
}

pub fn parse_activation(s: &str) -> Option<Activation> {
    match s {
        "identity" => Some(Activation::Identity),
        "relu" => Some(Activation::Relu),
        "softsign" => Some(Activation::Softsign),
        _ => None,
    }
}

/// Random base model plus `n_adapters` adapters whose ranks cycle through
/// `ranks`. Every adapter gets a task head when `task_classes` is set.
pub fn synthetic_model(
    dims: ModelDims,
    ranks: &[usize],
    n_adapters: u32,
    task_classes: Option<usize>,
    seed: u64,
) -> Result<(BaseModel<f32>, Adapters<f32>), LoraError> {
    if ranks.is_empty() {
        return Err(LoraError::InvalidModel("at least one adapter rank is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = BaseModel::random(dims, Activation::default(), &mut rng)?;
    let mut adapters = Adapters::new();
    for i in 0..n_adapters {
        let rank = ranks[i as usize % ranks.len()];
        let a = LoraAdapter::random(AdapterId(i), dims.num_layers, dims.hidden_dim, rank, task_classes, &mut rng)?;
        adapters.insert(AdapterId(i), Arc::new(a));
    }
    Ok((model, adapters))
}

/// Writes every matrix under `dir` and a manifest with relative paths.
pub fn save_fixtures(dir: &Path, model: &BaseModel<f32>, adapters: &Adapters<f32>) -> Result<PathBuf, IoError> {
    let dims = model.dims();
    let mut layers = Vec::new();
    for (i, w) in model.layers().iter().enumerate() {
        let rel = PathBuf::from(format!("base/layer{i}.bin"));
        write_matrix(&dir.join(&rel), w)?;
        layers.push(rel);
    }
    let lm_head = PathBuf::from("base/lm_head.bin");
    write_matrix(&dir.join(&lm_head), model.lm_head())?;
    let mut entries = Vec::new();
    for (id, a) in adapters {
        let mut files = Vec::new();
        for (i, l) in a.layers().iter().enumerate() {
            let down = PathBuf::from(format!("adapters/{}/down{i}.bin", id.0));
            let up = PathBuf::from(format!("adapters/{}/up{i}.bin", id.0));
            write_matrix(&dir.join(&down), &l.down)?;
            write_matrix(&dir.join(&up), &l.up)?;
            files.push(LayerFiles { down, up });
        }
        let task_head = match a.task_head() {
            Some(h) => {
                let rel = PathBuf::from(format!("adapters/{}/task_head.bin", id.0));
                write_matrix(&dir.join(&rel), h)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(AdapterManifest { id: id.0, rank: a.rank(), layers: files, task_head });
    }
    let manifest = Manifest {
        num_layers: dims.num_layers,
        hidden_dim: dims.hidden_dim,
        vocab_size: dims.vocab_size,
        activation: activation_name(model.activation()).into(),
        layers,
        lm_head,
        adapters: entries,
    };
    let path = dir.join(MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a model and its adapters; relative paths resolve against the
/// manifest's directory.
pub fn load_fixtures(manifest_path: &Path) -> Result<(BaseModel<f32>, Adapters<f32>), IoError> {
    let m: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let bad = |msg: String| IoError::format(manifest_path, msg);
    let activation =
        parse_activation(&m.activation).ok_or_else(|| bad(format!("unknown activation {:?}", m.activation)))?;
    if m.layers.len() != m.num_layers {
        return Err(bad(format!("{} layer files for {} layers", m.layers.len(), m.num_layers)));
    }
    let layers = m.layers.iter().map(|p| read_matrix(&base.join(p))).collect::<Result<Vec<_>, _>>()?;
    let lm_head = read_matrix(&base.join(&m.lm_head))?;
    let model = BaseModel::new(layers, lm_head, activation).map_err(|e| bad(e.to_string()))?;
    if model.hidden_dim() != m.hidden_dim || model.dims().vocab_size != m.vocab_size {
        return Err(bad("manifest dimensions disagree with the matrix files".into()));
    }
    let mut adapters = Adapters::new();
    for a in &m.adapters {
        let mut ls = Vec::new();
        for f in &a.layers {
            ls.push(LoraLayer { down: read_matrix(&base.join(&f.down))?, up: read_matrix(&base.join(&f.up))? });
        }
        let head = a.task_head.as_ref().map(|p| read_matrix(&base.join(p))).transpose()?;
        let adapter = LoraAdapter::new(AdapterId(a.id), ls, head).map_err(|e| bad(e.to_string()))?;
        if adapter.rank() != a.rank || adapter.num_layers() != m.num_layers {
            return Err(bad(format!("adapter {} does not match its manifest entry", a.id)));
        }
        if adapters.insert(AdapterId(a.id), Arc::new(adapter)).is_some() {
            return Err(bad(format!("duplicate adapter id {}", a.id)));
        }
    }
    Ok((model, adapters))
}
