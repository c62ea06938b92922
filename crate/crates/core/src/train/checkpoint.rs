//! Checkpoint directory format.
//!
//! `checkpoint.json` carries the model/schedule configs, epoch, RNG states,
//! optimizer step count, and a tensor index (name, shape, dtype, byte offset,
//! file). Tensor data lives in raw little-endian f32 blobs: `params.bin` for
//! parameters and `adam_m.bin` / `adam_v.bin` for the optimizer moments, all
//! in registration order. Round-trips are bitwise.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{param_layout, ModelConfig, ParamStore};
use crate::optim::{AdamState, Schedule};
use crate::tensor::{DType, Tensor};

pub const FORMAT_VERSION: u32 = 1;

const PARAMS_FILE: &str = "params.bin";
const ADAM_M_FILE: &str = "adam_m.bin";
const ADAM_V_FILE: &str = "adam_v.bin";

/// RNG streams captured so a run can resume bit-reproducibly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RngStates {
    pub shuffle: ChaCha8Rng,
    pub crop: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub dtype: DType,
    pub file: String,
    pub offset: u64,
    pub byte_len: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub epoch: usize,
    pub adam_step: u64,
    pub rng: RngStates,
    pub tensors: Vec<TensorEntry>,
}

fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()
}

/// Writes a complete checkpoint directory; creates it if needed.
pub fn save_checkpoint(
    dir: &Path,
    params: &ParamStore<f32>,
    adam: &AdamState<f32>,
    model: &ModelConfig,
    schedule: &Schedule,
    epoch: usize,
    rng: &RngStates,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(params.len());
    let mut blob = Vec::new();
    for (name, t) in params.iter() {
        let bytes = f32s_to_bytes(t.data());
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().as_array(),
            dtype: DType::F32,
            file: PARAMS_FILE.to_string(),
            offset: blob.len() as u64,
            byte_len: bytes.len() as u64,
        });
        blob.extend_from_slice(&bytes);
    }
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, &blob).map_err(|e| Error::io(&params_path, e))?;

    let (m, v) = adam.moments();
    for (file, buffers) in [(ADAM_M_FILE, m), (ADAM_V_FILE, v)] {
        let mut blob = Vec::new();
        for buf in buffers {
            blob.extend_from_slice(&f32s_to_bytes(buf));
        }
        let path = dir.join(file);
        fs::write(&path, &blob).map_err(|e| Error::io(&path, e))?;
    }

    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        model: model.clone(),
        schedule: schedule.clone(),
        epoch,
        adam_step: adam.step_count(),
        rng: rng.clone(),
        tensors: entries,
    };
    let meta_path = dir.join("checkpoint.json");
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::checkpoint(format!("meta serialization failed: {e}")))?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(dir.to_path_buf())
}

/// Loads and fully validates a checkpoint directory: version, one index entry
/// per expected parameter (shape and dtype included), no strays.
pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore<f32>, AdamState<f32>, CheckpointMeta)> {
    let meta_path = dir.join("checkpoint.json");
    let json = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&json)
        .map_err(|e| Error::checkpoint(format!("malformed checkpoint.json: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::checkpoint(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    meta.model.validate()?;

    let params_path = dir.join(PARAMS_FILE);
    let blob = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;

    let mut store = ParamStore::<f32>::new();
    for (name, zero) in param_layout(&meta.model)?.iter() {
        let entry = meta
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::checkpoint(format!("missing tensor '{name}'")))?;
        if entry.shape != zero.shape().as_array() {
            return Err(Error::checkpoint(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                entry.shape,
                zero.shape().as_array()
            )));
        }
        if entry.dtype != DType::F32 || entry.file != PARAMS_FILE {
            return Err(Error::checkpoint(format!("tensor '{name}' has unsupported storage")));
        }
        let start = entry.offset as usize;
        let end = start + entry.byte_len as usize;
        if entry.byte_len as usize != zero.numel() * 4 || end > blob.len() {
            return Err(Error::checkpoint(format!("tensor '{name}' blob range out of bounds")));
        }
        let tensor = Tensor::new(zero.shape(), bytes_to_f32s(&blob[start..end]))
            .map_err(|_| Error::checkpoint(format!("tensor '{name}' byte length mismatch")))?;
        store.register(name, tensor);
    }
    if meta.tensors.len() != store.len() {
        return Err(Error::checkpoint(format!(
            "index has {} tensors, model expects {}",
            meta.tensors.len(),
            store.len()
        )));
    }

    let mut adam = AdamState::new(&store);
    let mut moments = Vec::new();
    for file in [ADAM_M_FILE, ADAM_V_FILE] {
        let path = dir.join(file);
        let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut bufs = Vec::with_capacity(store.len());
        let mut cursor = 0usize;
        for (_, t) in store.iter() {
            let bytes = t.numel() * 4;
            if cursor + bytes > blob.len() {
                return Err(Error::checkpoint(format!("{file} is truncated")));
            }
            bufs.push(bytes_to_f32s(&blob[cursor..cursor + bytes]));
            cursor += bytes;
        }
        if cursor != blob.len() {
            return Err(Error::checkpoint(format!("{file} has trailing bytes")));
        }
        moments.push(bufs);
    }
    let m_v = moments.pop().expect("two blobs read");
    let m_m = moments.pop().expect("two blobs read");
    adam.restore(m_m, m_v, meta.adam_step)?;
    Ok((store, adam, meta))
}

/// Loads a checkpoint and rejects it loudly when its embedded model config
/// differs from the one the caller is running under.
pub fn load_checkpoint_checked(
    dir: &Path,
    expected: &ModelConfig,
) -> Result<(ParamStore<f32>, AdamState<f32>, CheckpointMeta)> {
    let (params, adam, meta) = load_checkpoint(dir)?;
    if &meta.model != expected {
        return Err(Error::checkpoint(format!(
            "config mismatch: checkpoint was saved with {:?}, run expects {:?}",
            meta.model, expected
        )));
    }
    Ok((params, adam, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use rand::SeedableRng;

    fn fresh_rng_states() -> RngStates {
        RngStates {
            shuffle: ChaCha8Rng::seed_from_u64(1),
            crop: ChaCha8Rng::seed_from_u64(2),
            dropout: ChaCha8Rng::seed_from_u64(3),
        }
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig { channels: 4, n_fe: 1, num_igaf: 1, ca_reduction: 4, ..Default::default() }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let params = init_params::<f32>(&cfg, 7).unwrap();
        let adam = AdamState::new(&params);
        save_checkpoint(
            dir.path(),
            &params,
            &adam,
            &cfg,
            &Schedule::default(),
            3,
            &fresh_rng_states(),
        )
        .unwrap();
        let (loaded, adam2, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta.epoch, 3);
        assert_eq!(adam2.step_count(), 0);
        assert_eq!(loaded.len(), params.len());
        for ((n1, t1), (n2, t2)) in params.iter().zip(loaded.iter()) {
            assert_eq!(n1, n2);
            let a: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "parameter {n1} not bitwise identical");
        }
    }

    #[test]
    fn tampered_index_names_the_missing_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let params = init_params::<f32>(&cfg, 7).unwrap();
        let adam = AdamState::new(&params);
        save_checkpoint(
            dir.path(),
            &params,
            &adam,
            &cfg,
            &Schedule::default(),
            0,
            &fresh_rng_states(),
        )
        .unwrap();
        // Remove one tensor from the index.
        let meta_path = dir.path().join("checkpoint.json");
        let mut meta: CheckpointMeta =
            serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
        let removed = meta.tensors.remove(5).name;
        fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains(&removed), "error should name '{removed}': {err}");
    }

    #[test]
    fn config_mismatch_is_loud() {
        let dir = tempfile::tempdir().unwrap();
        let cfg16 = ModelConfig { channels: 16, ..small_cfg() };
        let params = init_params::<f32>(&cfg16, 0).unwrap();
        let adam = AdamState::new(&params);
        save_checkpoint(
            dir.path(),
            &params,
            &adam,
            &cfg16,
            &Schedule::default(),
            0,
            &fresh_rng_states(),
        )
        .unwrap();
        let cfg32 = ModelConfig { channels: 32, ..small_cfg() };
        let err = load_checkpoint_checked(dir.path(), &cfg32).unwrap_err();
        assert!(err.to_string().contains("config mismatch"), "{err}");
        assert!(load_checkpoint_checked(dir.path(), &cfg16).is_ok());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let params = init_params::<f32>(&cfg, 7).unwrap();
        let adam = AdamState::new(&params);
        save_checkpoint(
            dir.path(),
            &params,
            &adam,
            &cfg,
            &Schedule::default(),
            0,
            &fresh_rng_states(),
        )
        .unwrap();
        let meta_path = dir.path().join("checkpoint.json");
        let json = fs::read_to_string(&meta_path).unwrap().replacen(
            "\"format_version\": 1",
            "\"format_version\": 99",
            1,
        );
        fs::write(&meta_path, json).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");
    }
}
