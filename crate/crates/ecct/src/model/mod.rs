//! The decoder model family: a conventional single-mask transformer decoder,
//! a systematic-mask (SM) variant, and the double-masked (DM) variant with
//! two parallel attention streams fused in the output head.

mod forward;
mod train;

pub use forward::{batch_loss, forward_batch, forward_logits, mask_tensor, variant_masks};
pub use train::{train, trajectory_csv, LrDecay, TrainResult, TrainSchedule};

use crate::autodiff::{AdError, Scalar, Tensor};
use crate::channel::ChannelError;
use crate::codes::{build_named, CodesError, LinearCode};
use crate::gf2::Gf2Error;
use crate::rng::{purpose, RngStream};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("variant expects {expected} input stream(s), got {got}")]
    VariantArityMismatch { expected: usize, got: usize },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Codes(#[from] CodesError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Conventional,
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "DM")]
    Dm,
}

impl Variant {
    pub fn streams(self) -> usize {
        match self {
            Variant::Conventional | Variant::Sm => 1,
            Variant::Dm => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Conventional => "conventional",
            Variant::Sm => "sm",
            Variant::Dm => "dm",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conventional" | "conv" | "ecct" => Ok(Variant::Conventional),
            "sm" | "systematic" => Ok(Variant::Sm),
            "dm" | "double" | "double-masked" => Ok(Variant::Dm),
            other => Err(format!("unknown variant {other:?} (conventional | sm | dm)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcctConfig {
    pub code: String,
    pub variant: Variant,
    pub n_layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default)]
    pub share_streams: bool,
    #[serde(default)]
    pub per_stream_output_norm: bool,
    #[serde(default = "default_true")]
    pub syndrome_bipolar: bool,
}

fn default_ffn_mult() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl EcctConfig {
    pub fn new(code: &str, variant: Variant, n_layers: usize, embed_dim: usize, heads: usize) -> Self {
        EcctConfig {
            code: code.to_string(),
            variant,
            n_layers,
            embed_dim,
            heads,
            ffn_mult: 4,
            share_streams: false,
            per_stream_output_norm: false,
            syndrome_bipolar: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_layers == 0 {
            return Err(ModelError::ConfigMismatch("n_layers must be >= 1".into()));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(ModelError::ConfigMismatch(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.ffn_mult == 0 {
            return Err(ModelError::ConfigMismatch("ffn_mult must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of independently parameterized stream groups.
    pub fn param_groups(&self) -> usize {
        if self.variant == Variant::Dm && !self.share_streams {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    /// Normal(0, 0.02).
    Embedding,
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

/// The full declared shape table, in a fixed deterministic order. `n` and
/// `seq = 2n - k` come from the code the config names.
pub fn param_specs(cfg: &EcctConfig, n: usize, seq: usize) -> Vec<ParamSpec> {
    let d = cfg.embed_dim;
    let hid = cfg.ffn_mult * d;
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(ParamSpec { name, shape, init });
    };
    for g in 0..cfg.param_groups() {
        push(format!("s{g}.embed"), vec![seq, d], Init::Embedding);
        for l in 0..cfg.n_layers {
            let p = format!("s{g}.l{l}");
            push(format!("{p}.ln1.gain"), vec![d], Init::Ones);
            push(format!("{p}.ln1.bias"), vec![d], Init::Zeros);
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("{p}.{w}"), vec![d, d], Init::Xavier { fan_in: d, fan_out: d });
            }
            push(format!("{p}.ln2.gain"), vec![d], Init::Ones);
            push(format!("{p}.ln2.bias"), vec![d], Init::Zeros);
            push(format!("{p}.ffn.w1"), vec![d, hid], Init::Xavier { fan_in: d, fan_out: hid });
            push(format!("{p}.ffn.w2"), vec![hid, d], Init::Xavier { fan_in: hid, fan_out: d });
        }
    }
    if cfg.variant == Variant::Dm && cfg.per_stream_output_norm {
        for s in 0..2 {
            push(format!("head.ln{s}.gain"), vec![d], Init::Ones);
            push(format!("head.ln{s}.bias"), vec![d], Init::Zeros);
        }
    } else {
        push("head.ln.gain".into(), vec![d], Init::Ones);
        push("head.ln.bias".into(), vec![d], Init::Zeros);
    }
    if cfg.variant == Variant::Dm {
        push(
            "head.fuse".into(),
            vec![seq, 2 * seq],
            Init::Xavier { fan_in: 2 * seq, fan_out: seq },
        );
    }
    push("head.proj".into(), vec![d, 1], Init::Xavier { fan_in: d, fan_out: 1 });
    push("head.final".into(), vec![seq, n], Init::Xavier { fan_in: seq, fan_out: n });
    specs
}

/// Model weights, ordered exactly as [`param_specs`].
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn convert<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            tensors: self.tensors.iter().map(|t| t.map(|v| U::of_f64(v.as_f64()))).collect(),
        }
    }
}

/// Name -> tensor index lookup for a spec list.
pub fn param_index(specs: &[ParamSpec]) -> HashMap<String, usize> {
    specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect()
}

/// Deterministic initialization from a keyed stream family: tensor `i` is
/// drawn from stream `(seed, INIT, i)` independent of all others.
pub fn init_params<T: Scalar>(cfg: &EcctConfig, n: usize, seq: usize, seed: u64) -> ParameterSet<T> {
    let specs = param_specs(cfg, n, seq);
    let tensors = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut rng = RngStream::new(seed, [purpose::INIT, i as u64, 0, 0]);
            let count: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Xavier { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..count).map(|_| T::of_f64(rng.next_uniform_sym(a))).collect()
                }
                Init::Embedding => {
                    (0..count).map(|_| T::of_f64(0.02 * rng.next_gaussian())).collect()
                }
                Init::Ones => vec![T::one(); count],
                Init::Zeros => vec![T::zero(); count],
            };
            Tensor::from_vec(&spec.shape, data)
        })
        .collect();
    ParameterSet { tensors }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_BLOB: &str = "params.bin";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: EcctConfig,
    entries: Vec<ManifestEntry>,
}

/// Write `manifest.json` + `params.bin` (little-endian f32) into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    cfg: &EcctConfig,
    params: &ParameterSet<f32>,
) -> Result<(), ModelError> {
    let code = build_named(&cfg.code)?;
    let specs = param_specs(cfg, code.n, 2 * code.n - code.k);
    if specs.len() != params.tensors.len() {
        return Err(ModelError::ConfigMismatch(format!(
            "{} tensors for a config declaring {}",
            params.tensors.len(),
            specs.len()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    for (spec, tensor) in specs.iter().zip(&params.tensors) {
        if spec.shape != tensor.shape() {
            return Err(ModelError::ConfigMismatch(format!(
                "tensor {} has shape {:?}, config declares {:?}",
                spec.name,
                tensor.shape(),
                spec.shape
            )));
        }
        let offset = blob.len();
        for &v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            dtype: "f32le".into(),
            offset,
            length: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: cfg.clone(),
        entries,
    };
    std::fs::write(dir.join(CHECKPOINT_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(dir.join(CHECKPOINT_BLOB), blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(EcctConfig, ParameterSet<f32>), ModelError> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(CHECKPOINT_MANIFEST))?)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::ManifestMismatch(format!(
            "format_version {} unsupported (expected {})",
            manifest.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let cfg = manifest.config;
    cfg.validate()?;
    let code = build_named(&cfg.code)?;
    let specs = param_specs(&cfg, code.n, 2 * code.n - code.k);
    if specs.len() != manifest.entries.len() {
        return Err(ModelError::ManifestMismatch(format!(
            "{} entries for a config declaring {}",
            manifest.entries.len(),
            specs.len()
        )));
    }
    let blob = std::fs::read(dir.join(CHECKPOINT_BLOB))?;
    let mut tensors = Vec::with_capacity(specs.len());
    for (spec, entry) in specs.iter().zip(&manifest.entries) {
        if entry.name != spec.name || entry.shape != spec.shape || entry.dtype != "f32le" {
            return Err(ModelError::ManifestMismatch(format!(
                "entry {} ({:?}, {}) does not match declared {} {:?}",
                entry.name, entry.shape, entry.dtype, spec.name, spec.shape
            )));
        }
        let count: usize = spec.shape.iter().product();
        if entry.length != count * 4 || entry.offset + entry.length > blob.len() {
            return Err(ModelError::ManifestMismatch(format!(
                "entry {} spans [{}, {}) of a {}-byte blob",
                entry.name,
                entry.offset,
                entry.offset + entry.length,
                blob.len()
            )));
        }
        let data: Vec<f32> = blob[entry.offset..entry.offset + entry.length]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::from_vec(&spec.shape, data));
    }
    Ok((cfg, ParameterSet { tensors }))
}

/// Build the code a config names and sanity-check the pairing.
pub fn code_for(cfg: &EcctConfig) -> Result<LinearCode, ModelError> {
    cfg.validate()?;
    Ok(build_named(&cfg.code)?)
}
