//! Core domain types: cine sequences and quality labels.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default in-plane pixel spacing in millimetres.
pub const PIXEL_SPACING_MM: (f32, f32) = (1.8, 1.8);

/// A 2D+time magnitude image stack, the unit of classification.
///
/// `frames` is indexed `(t, row, col)`. Intensities are arbitrary units
/// before [`normalize`] and in `[0, 1]` after.
#[derive(Debug, Clone, PartialEq)]
pub struct CineSequence {
    pub id: String,
    pub frames: Array3<f32>,
    pub pixel_spacing_mm: (f32, f32),
}

impl CineSequence {
    pub fn new(id: impl Into<String>, frames: Array3<f32>) -> Self {
        Self {
            id: id.into(),
            frames,
            pixel_spacing_mm: PIXEL_SPACING_MM,
        }
    }

    /// `(T, H, W)`
    pub fn dims(&self) -> (usize, usize, usize) {
        self.frames.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtefactType {
    Mistrigger,
    Breathing,
}

impl ArtefactType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArtefactType::Mistrigger => "mistrigger",
            ArtefactType::Breathing => "breathing",
        }
    }
}

impl std::str::FromStr for ArtefactType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mistrigger" => Ok(ArtefactType::Mistrigger),
            "breathing" => Ok(ArtefactType::Breathing),
            other => Err(Error::invalid(format!("unknown artefact type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// Binary image quality label; severity is carried only by synthetic samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityLabel {
    /// 0 = good quality, 1 = artefact.
    pub label: u8,
    pub artefact_type: Option<ArtefactType>,
    /// Corruption severity level, 1 = heaviest. Present iff synthetic.
    pub severity: Option<u8>,
    pub provenance: Provenance,
}

impl QualityLabel {
    pub fn good() -> Self {
        Self {
            label: 0,
            artefact_type: None,
            severity: None,
            provenance: Provenance::Real,
        }
    }

    pub fn synthetic(artefact_type: ArtefactType, severity: u8) -> Self {
        Self {
            label: 1,
            artefact_type: Some(artefact_type),
            severity: Some(severity),
            provenance: Provenance::Synthetic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::invalid("label must be 0 or 1"));
        }
        match (self.provenance, self.severity) {
            (Provenance::Synthetic, None) => {
                Err(Error::invalid("synthetic label requires a severity"))
            }
            (Provenance::Real, Some(_)) => {
                Err(Error::invalid("real label must not carry a severity"))
            }
            _ => Ok(()),
        }
    }
}

/// One row of a label manifest: a sequence on disk plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub path: std::path::PathBuf,
    pub label: QualityLabel,
}

/// A labelled collection of sequence references with unique ids.
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub items: Vec<DatasetEntry>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, entry: DatasetEntry) -> Result<()> {
        entry.label.validate()?;
        if self.items.iter().any(|e| e.id == entry.id) {
            return Err(Error::Manifest(format!("duplicate id `{}`", entry.id)));
        }
        self.items.push(entry);
        Ok(())
    }
}

/// Per-sequence min-max scaling to `[0, 1]`.
///
/// A constant stack maps to all zeros. Idempotent: a sequence already
/// spanning exactly `[0, 1]` passes through unchanged.
pub fn normalize(seq: &CineSequence) -> Result<CineSequence> {
    if !seq.is_finite() {
        return Err(Error::NonFinite {
            context: format!("sequence `{}`", seq.id),
        });
    }
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in &seq.frames {
        min = min.min(v);
        max = max.max(v);
    }
    let mut out = seq.clone();
    if max > min {
        let scale = 1.0 / (max - min);
        out.frames.mapv_inplace(|v| (v - min) * scale);
    } else {
        out.frames.fill(0.0);
    }
    Ok(out)
}
