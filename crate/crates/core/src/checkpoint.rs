//! Model files: a human-readable JSON manifest followed by a little-endian
//! `f32` payload guarded by a CRC-32.
//!
//! ```text
//! SKELSIGN-CHECKPOINT manifest_bytes=<N>\n
//! <N bytes of JSON manifest>\n
//! <payload: every tensor in manifest order, f32 little-endian>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::{ClassVocabulary, LandmarkLayout, Sampler};
use crate::model::{ModelConfig, ModelParams, ModelTensors};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "SKELSIGN-CHECKPOINT";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocabulary: ClassVocabulary,
    pub layout: LandmarkLayout,
    pub sampler: Sampler,
    pub recenter: bool,
    pub seed: u64,
    /// Free-form scalar summary, e.g. validation accuracy at save time.
    pub metrics: BTreeMap<String, f64>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_config: ModelConfig,
    classes: Vec<String>,
    keypoints: Vec<String>,
    sampler: Sampler,
    #[serde(default)]
    recenter: bool,
    seed: u64,
    metrics: BTreeMap<String, f64>,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
    payload_crc32: u32,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let named = self.params.named();
        let mut payload = Vec::with_capacity(4 * self.params.parameter_count());
        for (_, t) in &named {
            for v in t.values() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model_config: self.config.clone(),
            classes: self.vocabulary.names().to_vec(),
            keypoints: self.layout.keypoint_names().to_vec(),
            sampler: self.sampler,
            recenter: self.recenter,
            seed: self.seed,
            metrics: self.metrics.clone(),
            tensors: named.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
            payload_bytes: payload.len(),
            payload_crc32: crc32fast::hash(&payload),
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        let mut out = format!("{MAGIC} manifest_bytes={}\n", json.len()).into_bytes();
        out.extend_from_slice(&json);
        out.push(b'\n');
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::TruncatedFile("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::BadManifest("header is not UTF-8".into()))?;
        let manifest_len: usize = header
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("manifest_bytes="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::BadManifest(format!("unrecognized header {header:?}")))?;
        let start = newline + 1;
        let end = start.checked_add(manifest_len).filter(|&e| e < bytes.len()).ok_or_else(|| {
            Error::TruncatedFile(format!("manifest needs {manifest_len} bytes, file has {}", bytes.len() - start))
        })?;
        if bytes[end] != b'\n' {
            return Err(Error::BadManifest("manifest is not newline-terminated".into()));
        }
        let manifest: Manifest =
            serde_json::from_slice(&bytes[start..end]).map_err(|e| Error::BadManifest(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: manifest.format_version, expected: FORMAT_VERSION });
        }
        let payload = &bytes[end + 1..];
        if payload.len() < manifest.payload_bytes {
            return Err(Error::TruncatedFile(format!(
                "payload has {} of {} bytes",
                payload.len(),
                manifest.payload_bytes
            )));
        }
        if payload.len() > manifest.payload_bytes {
            return Err(Error::BadManifest(format!("{} trailing bytes after payload", payload.len() - manifest.payload_bytes)));
        }
        let computed = crc32fast::hash(payload);
        if computed != manifest.payload_crc32 {
            return Err(Error::CorruptPayload { stored: manifest.payload_crc32, computed });
        }

        let config = manifest.model_config;
        config.validate()?;
        let expected = ModelTensors::shapes(&config).named().into_iter().map(|(n, s)| (n, s.clone())).collect::<Vec<_>>();
        if expected.len() != manifest.tensors.len()
            || expected.iter().zip(&manifest.tensors).any(|((n, s), e)| *n != e.name || *s != e.shape)
        {
            return Err(Error::BadManifest("tensor list does not match the model configuration".into()));
        }
        let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if total * 4 != manifest.payload_bytes {
            return Err(Error::BadManifest(format!("{total} parameters need {} payload bytes", total * 4)));
        }
        let mut cursor = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let tensors = manifest
            .tensors
            .iter()
            .map(|e| {
                let len = e.shape.iter().product();
                Tensor::new(e.shape.clone(), cursor.by_ref().take(len).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ModelTensors::from_ordered(config.num_layers, tensors)
            .ok_or_else(|| Error::BadManifest("tensor count does not match layer count".into()))?;
        let vocabulary = ClassVocabulary::new(manifest.classes)?;
        if vocabulary.len() != config.num_classes {
            return Err(Error::BadManifest(format!(
                "{} class names for {} classes",
                vocabulary.len(),
                config.num_classes
            )));
        }
        let layout = LandmarkLayout::new(manifest.keypoints)?;
        if layout.feature_count() != config.input_dim {
            return Err(Error::BadManifest("keypoint layout does not match input_dim".into()));
        }
        Ok(Self {
            config,
            vocabulary,
            layout,
            sampler: manifest.sampler,
            recenter: manifest.recenter,
            seed: manifest.seed,
            metrics: manifest.metrics,
            params,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.encode()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn tiny() -> Checkpoint {
        let config = ModelConfig {
            input_dim: 6,
            hidden_dim: 8,
            num_heads: 2,
            num_layers: 1,
            ffn_dim: 8,
            num_classes: 2,
            max_seq_len: 5,
            ..ModelConfig::default()
        };
        Checkpoint {
            params: init_params(&config, 4).unwrap(),
            config,
            vocabulary: ClassVocabulary::new(vec!["el".into(), "su".into()]).unwrap(),
            layout: LandmarkLayout::numbered(2).unwrap(),
            sampler: Sampler::Fixed(4),
            recenter: false,
            seed: 4,
            metrics: BTreeMap::from([("val_accuracy".to_owned(), 0.5)]),
        }
    }

    fn bits(p: &ModelParams) -> Vec<u32> {
        p.named().iter().flat_map(|(_, t)| t.values().iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ckpt = tiny();
        let back = Checkpoint::decode(&ckpt.encode().unwrap()).unwrap();
        assert_eq!(bits(&back.params), bits(&ckpt.params));
        assert_eq!(back, ckpt);
    }

    #[test]
    fn manifest_is_readable_text() {
        let bytes = tiny().encode().unwrap();
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.starts_with("SKELSIGN-CHECKPOINT manifest_bytes="));
        assert!(text.contains("\"format_version\": 1"));
    }

    #[test]
    fn detects_truncation_and_corruption() {
        let bytes = tiny().encode().unwrap();
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(Checkpoint::decode(cut), Err(Error::TruncatedFile(_))));
        assert!(matches!(Checkpoint::decode(&bytes[..30]), Err(Error::TruncatedFile(_))));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&flipped), Err(Error::CorruptPayload { .. })));

    }

    #[test]
    fn version_is_checked() {
        let bytes = tiny().encode().unwrap();
        let split = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = std::str::from_utf8(&bytes[..split]).unwrap();
        let len: usize = header.rsplit('=').next().unwrap().parse().unwrap();
        let manifest = std::str::from_utf8(&bytes[split + 1..split + 1 + len]).unwrap();
        let bumped = manifest.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        let mut out = format!("{MAGIC} manifest_bytes={}\n", bumped.len()).into_bytes();
        out.extend_from_slice(bumped.as_bytes());
        out.extend_from_slice(&bytes[split + 1 + len..]);
        assert!(matches!(Checkpoint::decode(&out), Err(Error::VersionMismatch { found: 2, expected: 1 })));
    }
}
