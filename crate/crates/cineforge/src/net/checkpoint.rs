//! Model checkpoint file: JSON header + raw little-endian f32 payload.
//!
//! ```text
//! magic "FCKP" | u32 header_len | header JSON | f32 LE parameters
//! ```
//!
//! Parameters are stored in the canonical declaration order (the order of
//! `ClassifierModel::param_names`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::{init_model, ArchDescriptor, ClassifierModel, InitMode, Scalar};

pub const CKPT_MAGIC: [u8; 4] = *b"FCKP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema: u32,
    pub arch: ArchDescriptor,
    pub seed: u64,
    pub epoch: usize,
    pub param_count: usize,
}

pub fn save_checkpoint<F: Scalar>(
    model: &ClassifierModel<F>,
    seed: u64,
    epoch: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let header = CheckpointHeader {
        schema: 1,
        arch: model.arch.clone(),
        seed,
        epoch,
        param_count: model.param_count(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(8 + header_json.len() + 4 * header.param_count);
    bytes.extend_from_slice(&CKPT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in model.params() {
        for &v in p.iter() {
            bytes.extend_from_slice(&(v.into_f64() as f32).to_le_bytes());
        }
    }
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ClassifierModel<f32>, CheckpointHeader)> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < 8 || bytes[0..4] != CKPT_MAGIC {
        return Err(Error::BadCheckpoint("missing FCKP magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::BadCheckpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + header_len])?;
    if header.schema != 1 {
        return Err(Error::BadCheckpoint(format!(
            "unsupported schema {}",
            header.schema
        )));
    }
    let payload = &bytes[8 + header_len..];
    if payload.len() != 4 * header.param_count {
        return Err(Error::BadCheckpoint(format!(
            "payload holds {} bytes, header declares {} parameters",
            payload.len(),
            header.param_count
        )));
    }
    let mut model = init_model::<f32>(&header.arch, InitMode::Scaled, 0)?;
    let mut offset = 0;
    for mut p in model.params_mut() {
        let slice = p.as_slice_mut().expect("standard layout");
        for v in slice.iter_mut() {
            *v = f32::from_le_bytes(payload[offset..offset + 4].try_into().unwrap());
            offset += 4;
        }
    }
    for v in &mut model.velocity {
        v.fill(0.0);
    }
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let arch = ArchDescriptor::tiny_lrcn();
        let model = init_model::<f32>(&arch, InitMode::Scaled, 42).unwrap();
        save_checkpoint(&model, 42, 17, &path).unwrap();
        let (back, header) = load_checkpoint(&path).unwrap();
        assert_eq!(header.epoch, 17);
        assert_eq!(header.seed, 42);
        assert_eq!(header.arch, arch);
        assert_eq!(back.net, model.net);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let arch = ArchDescriptor::tiny_cnn3d();
        let model = init_model::<f32>(&arch, InitMode::Scaled, 1).unwrap();
        save_checkpoint(&model, 1, 0, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::BadCheckpoint(_))
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'F';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
