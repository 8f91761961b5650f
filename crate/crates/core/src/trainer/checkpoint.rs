//! Binary checkpoints: a JSON header followed by parameters and Adam moments.
//!
//! Layout: `WRCKPT01`, header length (u64 LE), header JSON, then three f64 LE arrays
//! of `num_params` values each (parameters, first moments, second moments).

use super::optim::{Adam, AdamParams};
use super::step::{RunningLoss, TrainState};
use crate::data::dataset_hex as hex;
use crate::field::{EncodingSpec, FieldArch, FieldParams};
use crate::renderer::RadianceModel;
use crate::{Error, Result, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"WRCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub step: usize,
    pub config_hash: String,
    pub arch: FieldArch,
    pub encoding: EncodingSpec,
    pub has_fine: bool,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub background: [f64; 3],
    pub adam: AdamParams,
    pub adam_t: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128 portably.
    pub rng_word_pos: String,
    pub running: RunningLoss,
    pub num_params: usize,
}

/// `ckpt_{step:08}` inside `dir`.
pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step:08}"))
}

/// Highest-step checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(step) = name.to_str().and_then(|n| n.strip_prefix("ckpt_")).and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| step > *b) {
            best = Some((step, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// SHA-256 over the parameters widened to f64.
pub fn param_hash<T: Scalar>(model: &RadianceModel<T>) -> String {
    let mut h = Sha256::new();
    for p in model.flat_params() {
        h.update(p.as_f64().to_le_bytes());
    }
    hex(&h.finalize())
}

fn push_f64s<T: Scalar>(buf: &mut Vec<u8>, values: &[T]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, state: &TrainState<T>, config_hash: &str) -> Result<()> {
    let m = &state.model;
    let header = CheckpointHeader {
        step: state.step,
        config_hash: config_hash.to_string(),
        arch: m.arch(),
        encoding: m.encoding.clone(),
        has_fine: m.fine.is_some(),
        n_coarse: m.n_coarse,
        n_fine: m.n_fine,
        background: m.background.map(|b| b.as_f64()),
        adam: state.optimizer.params,
        adam_t: state.optimizer.t,
        rng_seed: state.rng.get_seed(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        running: state.running.clone(),
        num_params: m.num_params(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 24 * header.num_params);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    push_f64s(&mut buf, &m.flat_params());
    push_f64s(&mut buf, &state.optimizer.m);
    push_f64s(&mut buf, &state.optimizer.v);
    // write-then-rename so an interrupted save never leaves a truncated checkpoint
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = read_bytes(path)?;
    Ok(split(&bytes)?.0)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let bad = |d: &str| Error::format("checkpoint", d.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let rest = &bytes[16 + len..];
    if rest.len() != 24 * header.num_params {
        return Err(bad(&format!("expected {} payload bytes, found {}", 24 * header.num_params, rest.len())));
    }
    Ok((header, rest))
}

fn read_f64s<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect()
}

/// Restores a full training state. The model architecture comes from the header.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(TrainState<T>, CheckpointHeader)> {
    let bytes = read_bytes(path)?;
    let (h, payload) = split(&bytes)?;
    let n = h.num_params;
    let params: Vec<T> = read_f64s(&payload[..8 * n]);
    let per_level = if h.has_fine { n / 2 } else { n };
    let coarse = FieldParams::from_flat(h.arch, params[..per_level].to_vec())?;
    let fine = if h.has_fine { Some(FieldParams::from_flat(h.arch, params[per_level..].to_vec())?) } else { None };
    let model = RadianceModel {
        encoding: h.encoding.clone(),
        coarse,
        fine,
        n_coarse: h.n_coarse,
        n_fine: h.n_fine,
        background: h.background.map(T::of),
    };
    let optimizer = Adam { params: h.adam, m: read_f64s(&payload[8 * n..16 * n]), v: read_f64s(&payload[16 * n..]), t: h.adam_t };
    let mut rng = ChaCha8Rng::from_seed(h.rng_seed);
    rng.set_stream(h.rng_stream);
    let word_pos: u128 = h.rng_word_pos.parse().map_err(|_| Error::format("checkpoint", "bad rng position"))?;
    rng.set_word_pos(word_pos);
    let state = TrainState { step: h.step, model, optimizer, rng, running: h.running.clone() };
    Ok((state, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;
    use rand::Rng;

    fn tiny() -> TrainConfig {
        TrainConfig { net_depth: 2, net_width: 8, head_width: 4, num_freqs_pos: 2, num_freqs_dir: 1, ..TrainConfig::desk() }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = TrainState::<f32>::new(&tiny(), [1.0; 3]).unwrap();
        state.step = 17;
        state.optimizer.t = 17;
        state.optimizer.m.iter_mut().enumerate().for_each(|(i, m)| *m = i as f32 * 1e-3);
        state.optimizer.v.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-6);
        for _ in 0..5 {
            let _: u64 = state.rng.gen();
        }
        let path = checkpoint_path(dir.path(), 17);
        save_checkpoint(&path, &state, "abc").unwrap();
        let (mut back, h) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(h.config_hash, "abc");
        assert_eq!(back.step, 17);
        assert_eq!(back.model.flat_params(), state.model.flat_params());
        assert_eq!(back.optimizer, state.optimizer);
        assert_eq!(back.rng.gen::<u64>(), state.rng.gen::<u64>());
        assert_eq!(param_hash(&back.model), param_hash(&state.model));
        assert_eq!(latest_checkpoint(dir.path()).unwrap(), Some(path));
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt_00000000");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Format { .. })));
        assert!(matches!(load_checkpoint::<f32>(&dir.path().join("nope")), Err(Error::MissingFile(_))));
    }
}
