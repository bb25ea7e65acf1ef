//! Checkpoint serialization: a human-readable text manifest next to a flat
//! binary payload.
//!
//! A checkpoint with stem `run/model` is two files:
//!
//! * `run/model.manifest` — text. First line is the magic
//!   `diffstyle-checkpoint v1`, then `meta <key> <value>` lines (value may
//!   contain spaces), then one `tensor <name> f32 <shape> <offset> <len>`
//!   line per tensor, where `<shape>` is `x`-joined dims (`57x128`, `128`)
//!   and `<offset>`/`<len>` count f32 elements into the payload.
//! * `run/model.bin` — the payload: every tensor's elements back to back,
//!   little-endian f32, in manifest order.
//!
//! Values are stored as f32 bit patterns and restored exactly, so an f32
//! model round-trips bitwise. Optimizer state is stored as ordinary tensors
//! under an `opt.` prefix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::denoiser::{DenoiserParams, TensorMut, TensorRef};
use crate::scalar::Scalar;

pub const MAGIC: &str = "diffstyle-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: first line is {found:?}, expected {MAGIC:?}")]
    BadMagic { path: PathBuf, found: String },
    #[error("{path}:{line}: cannot parse manifest line {content:?}")]
    BadLine {
        path: PathBuf,
        line: usize,
        content: String,
    },
    #[error("tensor name {0:?} repeated")]
    DuplicateTensor(String),
    #[error("tensor or meta token {0:?} contains whitespace")]
    BadToken(String),
    #[error("tensor {name}: shape {shape:?} disagrees with element count {len}")]
    ShapeLenMismatch {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("tensor {name}: payload range {offset}..{end} outside payload of {payload} elements")]
    PayloadRange {
        name: String,
        offset: usize,
        end: usize,
        payload: usize,
    },
    #[error("payload {path} holds {got} bytes, not a whole number of f32s")]
    RaggedPayload { path: PathBuf, got: usize },
    #[error("checkpoint has no tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name}: checkpoint shape {got:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint has no meta key {0:?}")]
    MissingMeta(String),
    #[error("meta {key} = {value:?} does not parse")]
    BadMetaValue { key: String, value: String },
}

/// An in-memory checkpoint: ordered named tensors plus string metadata.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    meta: BTreeMap<String, String>,
    order: Vec<String>,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

fn check_token(tok: &str) -> Result<(), CheckpointError> {
    if tok.is_empty() || tok.chars().any(char::is_whitespace) {
        return Err(CheckpointError::BadToken(tok.to_string()));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<(), CheckpointError> {
        check_token(key)?;
        self.meta.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn meta_parsed<T: FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        let raw = self
            .meta(key)
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))?;
        raw.parse().map_err(|_| CheckpointError::BadMetaValue {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    pub fn meta_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn add_tensor(
        &mut self,
        name: &str,
        shape: &[usize],
        data: Vec<f32>,
    ) -> Result<(), CheckpointError> {
        check_token(name)?;
        if self.tensors.contains_key(name) {
            return Err(CheckpointError::DuplicateTensor(name.to_string()));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(CheckpointError::ShapeLenMismatch {
                name: name.to_string(),
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        self.order.push(name.to_string());
        self.tensors
            .insert(name.to_string(), (shape.to_vec(), data));
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .get(name)
            .map(|(shape, data)| (shape.as_slice(), data.as_slice()))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    /// Add every tensor of a parameter struct under `prefix` (empty for the
    /// model itself, `"opt.m."` / `"opt.v."` for optimizer moments).
    pub fn add_params<F: Scalar>(
        &mut self,
        prefix: &str,
        params: &DenoiserParams<F>,
    ) -> Result<(), CheckpointError> {
        for (name, tensor) in params.tensors() {
            let data: Vec<f32> = match &tensor {
                TensorRef::A1(a) => a.iter().map(|v| v.into_f32()).collect(),
                TensorRef::A2(a) => a.iter().map(|v| v.into_f32()).collect(),
            };
            self.add_tensor(&format!("{prefix}{name}"), &tensor.shape(), data)?;
        }
        Ok(())
    }

    /// Copy tensors under `prefix` into an existing parameter struct, with
    /// exact shape checks. The struct supplies the expected architecture.
    pub fn load_params_into<F: Scalar>(
        &self,
        prefix: &str,
        params: &mut DenoiserParams<F>,
    ) -> Result<(), CheckpointError> {
        for (name, mut tensor) in params.tensors_mut() {
            let full = format!("{prefix}{name}");
            let (shape, data) = self
                .tensor(&full)
                .ok_or_else(|| CheckpointError::MissingTensor(full.clone()))?;
            if shape != tensor.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: full,
                    expected: tensor.shape(),
                    got: shape.to_vec(),
                });
            }
            match &mut tensor {
                TensorMut::A1(a) => {
                    for (dst, src) in a.iter_mut().zip(data) {
                        *dst = F::from_f32(*src);
                    }
                }
                TensorMut::A2(a) => {
                    for (dst, src) in a.iter_mut().zip(data) {
                        *dst = F::from_f32(*src);
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether tensors under `prefix` exist (used to detect optimizer state).
    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.order.iter().any(|n| n.starts_with(prefix))
    }

    fn manifest_path(stem: &Path) -> PathBuf {
        stem.with_extension("manifest")
    }

    fn payload_path(stem: &Path) -> PathBuf {
        stem.with_extension("bin")
    }

    /// Write `<stem>.manifest` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<(), CheckpointError> {
        let mut manifest = String::new();
        let mut payload: Vec<u8> = Vec::new();
        writeln!(manifest, "{MAGIC}").unwrap();
        for (k, v) in &self.meta {
            writeln!(manifest, "meta {k} {v}").unwrap();
        }
        let mut offset = 0usize;
        for name in &self.order {
            let (shape, data) = &self.tensors[name];
            let dims = shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            writeln!(manifest, "tensor {name} f32 {dims} {offset} {}", data.len()).unwrap();
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            offset += data.len();
        }
        let mpath = Self::manifest_path(stem);
        let ppath = Self::payload_path(stem);
        if let Some(dir) = stem.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
        }
        fs::write(&mpath, manifest).map_err(|source| CheckpointError::Io {
            path: mpath.clone(),
            source,
        })?;
        fs::write(&ppath, payload).map_err(|source| CheckpointError::Io {
            path: ppath.clone(),
            source,
        })?;
        Ok(())
    }

    /// Read a checkpoint back from `<stem>.manifest` + `<stem>.bin`.
    pub fn load(stem: &Path) -> Result<Self, CheckpointError> {
        let mpath = Self::manifest_path(stem);
        let ppath = Self::payload_path(stem);
        let manifest = fs::read_to_string(&mpath).map_err(|source| CheckpointError::Io {
            path: mpath.clone(),
            source,
        })?;
        let payload = fs::read(&ppath).map_err(|source| CheckpointError::Io {
            path: ppath.clone(),
            source,
        })?;
        if payload.len() % 4 != 0 {
            return Err(CheckpointError::RaggedPayload {
                path: ppath,
                got: payload.len(),
            });
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let mut lines = manifest.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| CheckpointError::BadMagic {
            path: mpath.clone(),
            found: String::new(),
        })?;
        if first != MAGIC {
            return Err(CheckpointError::BadMagic {
                path: mpath.clone(),
                found: first.to_string(),
            });
        }
        let mut out = Checkpoint::new();
        for (idx, line) in lines {
            let bad = || CheckpointError::BadLine {
                path: mpath.clone(),
                line: idx + 1,
                content: line.to_string(),
            };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (key, value) = rest.split_once(' ').ok_or_else(bad)?;
                out.set_meta(key, value).map_err(|_| bad())?;
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let fields: Vec<&str> = rest.split(' ').collect();
                let [name, dtype, dims, offset, len] = fields.as_slice() else {
                    return Err(bad());
                };
                if *dtype != "f32" {
                    return Err(bad());
                }
                let shape: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                let offset: usize = offset.parse().map_err(|_| bad())?;
                let len: usize = len.parse().map_err(|_| bad())?;
                let end = offset.checked_add(len).ok_or_else(bad)?;
                if end > values.len() {
                    return Err(CheckpointError::PayloadRange {
                        name: name.to_string(),
                        offset,
                        end,
                        payload: values.len(),
                    });
                }
                out.add_tensor(name, &shape, values[offset..end].to_vec())?;
            } else {
                return Err(bad());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::rng::derive_rng;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            max_cond_len: 3,
            max_target_len: 3,
            dropout: 0.0,
            mask_cond_pad: false,
        }
    }

    #[test]
    fn tensor_values_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let mut ck = Checkpoint::new();
        let tricky = vec![
            0.0f32,
            -0.0,
            1.0 / 3.0,
            f32::MIN_POSITIVE,
            1e-45, // subnormal
            3.402_823_5e38,
            -2.5e-7,
            42.125,
        ];
        ck.add_tensor("weird", &[2, 4], tricky.clone()).unwrap();
        ck.set_meta("note", "has spaces in the value").unwrap();
        ck.save(&stem).unwrap();
        let back = Checkpoint::load(&stem).unwrap();
        let (shape, data) = back.tensor("weird").unwrap();
        assert_eq!(shape, &[2, 4]);
        for (a, b) in tricky.iter().zip(data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.meta("note"), Some("has spaces in the value"));
    }

    #[test]
    fn model_params_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let cfg = tiny_cfg();
        let params: DenoiserParams<f32> =
            DenoiserParams::init(&cfg, 11, &mut derive_rng(3, "ck", 0)).unwrap();
        let mut ck = Checkpoint::new();
        ck.add_params("", &params).unwrap();
        ck.set_meta("step", 17u64).unwrap();
        ck.save(&stem).unwrap();

        let back = Checkpoint::load(&stem).unwrap();
        assert_eq!(back.meta_parsed::<u64>("step").unwrap(), 17);
        let mut restored: DenoiserParams<f32> = DenoiserParams::zeros(&cfg, 11).unwrap();
        back.load_params_into("", &mut restored).unwrap();
        for ((name, a), (_, b)) in params.tensors().iter().zip(restored.tensors().iter()) {
            let (a, b) = (a.as_slice(), b.as_slice());
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits(), "mismatch in {name}");
            }
        }
    }

    #[test]
    fn manifest_is_plain_text_with_shapes_and_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let mut ck = Checkpoint::new();
        ck.add_tensor("a", &[2, 3], vec![1.0; 6]).unwrap();
        ck.add_tensor("b", &[4], vec![2.0; 4]).unwrap();
        ck.set_meta("kind", "unit-test").unwrap();
        ck.save(&stem).unwrap();
        let text = std::fs::read_to_string(stem.with_extension("manifest")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MAGIC);
        assert!(lines.contains(&"meta kind unit-test"));
        assert!(lines.contains(&"tensor a f32 2x3 0 6"));
        assert!(lines.contains(&"tensor b f32 4 6 4"));
        let payload = std::fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(payload.len(), 10 * 4);
    }

    #[test]
    fn loading_catches_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("c");
        let mut ck = Checkpoint::new();
        ck.add_tensor("a", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        ck.save(&stem).unwrap();

        // Wrong magic.
        let mpath = stem.with_extension("manifest");
        let good = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, good.replace("v1", "v9")).unwrap();
        assert!(matches!(
            Checkpoint::load(&stem),
            Err(CheckpointError::BadMagic { .. })
        ));
        std::fs::write(&mpath, &good).unwrap();

        // Truncated payload.
        std::fs::write(stem.with_extension("bin"), [0u8; 8]).unwrap();
        assert!(matches!(
            Checkpoint::load(&stem),
            Err(CheckpointError::PayloadRange { .. })
        ));

        // Ragged payload.
        std::fs::write(stem.with_extension("bin"), [0u8; 7]).unwrap();
        assert!(matches!(
            Checkpoint::load(&stem),
            Err(CheckpointError::RaggedPayload { .. })
        ));

        // Unparseable line (with a healthy payload back in place).
        std::fs::write(stem.with_extension("bin"), [0u8; 12]).unwrap();
        std::fs::write(&mpath, format!("{MAGIC}\ngarbage line\n")).unwrap();
        assert!(matches!(
            Checkpoint::load(&stem),
            Err(CheckpointError::BadLine { line: 2, .. })
        ));
    }

    #[test]
    fn loading_into_wrong_architecture_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("arch");
        let cfg = tiny_cfg();
        let params: DenoiserParams<f32> =
            DenoiserParams::init(&cfg, 11, &mut derive_rng(4, "ck", 0)).unwrap();
        let mut ck = Checkpoint::new();
        ck.add_params("", &params).unwrap();
        ck.save(&stem).unwrap();
        let back = Checkpoint::load(&stem).unwrap();

        // Different vocab: shape mismatch on the embedding.
        let mut wrong: DenoiserParams<f32> = DenoiserParams::zeros(&cfg, 13).unwrap();
        assert!(matches!(
            back.load_params_into("", &mut wrong),
            Err(CheckpointError::ShapeMismatch { .. })
        ));

        // More layers: a tensor is missing outright.
        let mut deeper_cfg = cfg.clone();
        deeper_cfg.layers = 2;
        let mut deeper: DenoiserParams<f32> = DenoiserParams::zeros(&deeper_cfg, 11).unwrap();
        assert!(matches!(
            back.load_params_into("", &mut deeper),
            Err(CheckpointError::MissingTensor(_))
        ));
    }

    #[test]
    fn duplicates_and_bad_names_are_rejected() {
        let mut ck = Checkpoint::new();
        ck.add_tensor("a", &[1], vec![0.0]).unwrap();
        assert!(matches!(
            ck.add_tensor("a", &[1], vec![0.0]),
            Err(CheckpointError::DuplicateTensor(_))
        ));
        assert!(matches!(
            ck.add_tensor("with space", &[1], vec![0.0]),
            Err(CheckpointError::BadToken(_))
        ));
        assert!(matches!(
            ck.add_tensor("short", &[2], vec![0.0]),
            Err(CheckpointError::ShapeLenMismatch { .. })
        ));
    }
}
