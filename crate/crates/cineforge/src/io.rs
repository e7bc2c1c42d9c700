//! File formats: the CINE binary container and label manifest CSVs.
//!
//! CINE layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CINE"
//! 4       1     version (=1)
//! 5       1     dtype   (=0, f32)
//! 6       2     reserved (=0)
//! 8       4     T (u32)
//! 12      4     H (u32)
//! 16      4     W (u32)
//! 20      4*T*H*W  payload, frame-major, row-major within a frame
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::cine::{ArtefactType, CineSequence, DatasetEntry, LabeledDataset, Provenance, QualityLabel};
use crate::error::{Error, Result};

pub const CINE_MAGIC: [u8; 4] = *b"CINE";
pub const CINE_VERSION: u8 = 1;
const CINE_DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 20;

/// Serialize a sequence into the CINE byte layout.
pub fn cine_bytes(seq: &CineSequence) -> Vec<u8> {
    let (t, h, w) = seq.dims();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * t * h * w);
    buf.extend_from_slice(&CINE_MAGIC);
    buf.push(CINE_VERSION);
    buf.push(CINE_DTYPE_F32);
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for &v in seq.frames.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_cine(seq: &CineSequence, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &cine_bytes(seq))
}

pub fn read_cine(path: impl AsRef<Path>) -> Result<CineSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    cine_from_bytes(&bytes, &path.to_string_lossy(), id)
}

pub fn cine_from_bytes(bytes: &[u8], origin: &str, id: String) -> Result<CineSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: origin.into(),
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[0..4] != CINE_MAGIC {
        return Err(Error::BadMagic { path: origin.into() });
    }
    if bytes[4] != CINE_VERSION {
        return Err(Error::VersionMismatch {
            path: origin.into(),
            found: bytes[4],
            expected: CINE_VERSION,
        });
    }
    if bytes[5] != CINE_DTYPE_F32 {
        return Err(Error::UnsupportedDtype {
            path: origin.into(),
            found: bytes[5],
        });
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let n = t
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::invalid("CINE dims overflow"))?;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: origin.into(),
            expected,
            got: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for chunk in bytes[HEADER_LEN..expected].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let frames = Array3::from_shape_vec((t, h, w), data)
        .map_err(|e| Error::invalid(format!("CINE shape: {e}")))?;
    Ok(CineSequence::new(id, frames))
}

/// Write bytes via a temp file + rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    label: u8,
    artefact_type: String,
    severity: String,
    provenance: String,
}

/// Write a label manifest with header `id,path,label,artefact_type,severity,provenance`.
pub fn write_manifest(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for e in &dataset.items {
        wtr.serialize(ManifestRow {
            id: e.id.clone(),
            path: e.path.to_string_lossy().into_owned(),
            label: e.label.label,
            artefact_type: e
                .label
                .artefact_type
                .map(|a| a.as_str().to_string())
                .unwrap_or_default(),
            severity: e.label.severity.map(|s| s.to_string()).unwrap_or_default(),
            provenance: match e.label.provenance {
                Provenance::Real => "real".into(),
                Provenance::Synthetic => "synthetic".into(),
            },
        })?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Manifest(e.to_string()))?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut dataset = LabeledDataset::default();
    for row in rdr.deserialize::<ManifestRow>() {
        let row = row?;
        let artefact_type = if row.artefact_type.is_empty() {
            None
        } else {
            Some(row.artefact_type.parse::<ArtefactType>()?)
        };
        let severity = if row.severity.is_empty() {
            None
        } else {
            Some(
                row.severity
                    .parse::<u8>()
                    .map_err(|e| Error::Manifest(format!("severity: {e}")))?,
            )
        };
        let provenance = match row.provenance.as_str() {
            "real" => Provenance::Real,
            "synthetic" => Provenance::Synthetic,
            other => return Err(Error::Manifest(format!("unknown provenance `{other}`"))),
        };
        dataset.push(DatasetEntry {
            id: row.id,
            path: PathBuf::from(row.path),
            label: QualityLabel {
                label: row.label,
                artefact_type,
                severity,
                provenance,
            },
        })?;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cine");
        let frames =
            Array3::from_shape_fn((3, 4, 5), |(t, r, c)| (t * 100 + r * 10 + c) as f32 * 0.37);
        let seq = CineSequence::new("a", frames);
        write_cine(&seq, &path).unwrap();
        let back = read_cine(&path).unwrap();
        assert_eq!(back.frames, seq.frames);
        assert_eq!(back.dims(), (3, 4, 5));
    }

    #[test]
    fn bad_magic_is_reported() {
        let seq = CineSequence::new("a", Array3::zeros((1, 2, 2)));
        let mut bytes = cine_bytes(&seq);
        bytes[0] = b'X';
        assert!(matches!(
            cine_from_bytes(&bytes, "mem", "a".into()),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let seq = CineSequence::new("a", Array3::zeros((1, 2, 2)));
        let mut bytes = cine_bytes(&seq);
        bytes[4] = 9;
        assert!(matches!(
            cine_from_bytes(&bytes, "mem", "a".into()),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let seq = CineSequence::new("a", Array3::zeros((2, 4, 4)));
        let mut bytes = cine_bytes(&seq);
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(
            cine_from_bytes(&bytes, "mem", "a".into()),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let mut ds = LabeledDataset::default();
        ds.push(DatasetEntry {
            id: "p0".into(),
            path: "p0.cine".into(),
            label: QualityLabel::good(),
        })
        .unwrap();
        ds.push(DatasetEntry {
            id: "p0_mis_s3".into(),
            path: "c/p0_mis_s3.cine".into(),
            label: QualityLabel::synthetic(ArtefactType::Mistrigger, 3),
        })
        .unwrap();
        write_manifest(&ds, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.items, ds.items);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_any_finite_tensor(
            t in 1usize..4,
            h in 1usize..6,
            w in 1usize..6,
            seed in any::<u32>(),
        ) {
            let n = t * h * w;
            let vals: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32)) | 1)
                    .clamp(-1e30, 1e30))
                .map(|v| if v.is_finite() { v } else { 0.125 })
                .collect();
            let seq = CineSequence::new("p", Array3::from_shape_vec((t, h, w), vals).unwrap());
            let bytes = cine_bytes(&seq);
            let back = cine_from_bytes(&bytes, "mem", "p".into()).unwrap();
            prop_assert!(back.frames.iter().zip(seq.frames.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
