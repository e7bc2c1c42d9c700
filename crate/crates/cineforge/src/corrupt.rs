//! Synthetic motion-artefact generation by k-space line corruption.
//!
//! Two generators are provided, both operating on Cartesian k-space where
//! rows are phase-encode lines:
//!
//! * **Mistriggering** — for each frame, one in `z` k-space rows is replaced
//!   with the same row taken from a randomly offset cardiac phase, mimicking
//!   ECG trigger errors that fill lines at the wrong phase. Smaller `z`
//!   replaces more lines and produces heavier ghosting.
//! * **Breathing** — each k-space row is taken from a copy of the frame
//!   translated vertically by a sinusoidal respiratory displacement sampled
//!   at that row's acquisition step. Larger amplitude produces heavier
//!   ghosting.
//!
//! Severity is a 1-based index into a [`SeverityTable`]; level 1 is the
//! heaviest corruption.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cine::{ArtefactType, CineSequence, QualityLabel};
use crate::error::{Error, Result};
use crate::kspace::{dft2, idft2, KSpaceFrame};
use crate::rng::RngStream;

/// Default number of severity levels.
pub const DEFAULT_LEVELS: usize = 10;

/// Per-severity corruption parameters, index 1 = heaviest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    /// Mistriggering line-skip per level; strictly increasing.
    pub mistrigger_z: Vec<u32>,
    /// Breathing translation amplitude in pixels per level; strictly decreasing.
    pub breathing_amplitude_px: Vec<f64>,
}

impl Default for SeverityTable {
    fn default() -> Self {
        Self {
            mistrigger_z: vec![2, 3, 4, 5, 6, 8, 10, 13, 16, 20],
            breathing_amplitude_px: vec![6.0, 5.0, 4.5, 4.0, 3.5, 3.0, 2.5, 2.0, 1.5, 1.0],
        }
    }
}

impl SeverityTable {
    pub fn levels(&self) -> usize {
        self.mistrigger_z.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mistrigger_z.len() != self.breathing_amplitude_px.len() {
            return Err(Error::invalid("severity table columns differ in length"));
        }
        if self.mistrigger_z.is_empty() {
            return Err(Error::invalid("severity table is empty"));
        }
        if self.mistrigger_z.iter().any(|&z| z < 2) {
            return Err(Error::invalid("mistrigger z must be >= 2"));
        }
        if !self.mistrigger_z.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("mistrigger z must be strictly increasing"));
        }
        if !self
            .breathing_amplitude_px
            .windows(2)
            .all(|w| w[0] > w[1])
        {
            return Err(Error::invalid(
                "breathing amplitude must be strictly decreasing",
            ));
        }
        Ok(())
    }

    fn check_severity(&self, severity: u8) -> Result<usize> {
        let s = severity as usize;
        if s == 0 || s > self.levels() {
            return Err(Error::invalid(format!(
                "severity {severity} outside 1..={}",
                self.levels()
            )));
        }
        Ok(s - 1)
    }
}

/// Full parameterisation of one corruption, sufficient to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub artefact_type: ArtefactType,
    /// 1 = heaviest corruption.
    pub severity: u8,
    /// Mistriggering line skip; `None` is the "no corruption" sentinel.
    pub z: Option<u32>,
    /// Inclusive range the frame offset is drawn from (zero excluded).
    pub frame_offset_range: (i32, i32),
    /// Breathing cycles per acquisition.
    pub cycles: u32,
    /// Breathing translation amplitude in pixels.
    pub amplitude_px: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn from_severity(
        artefact_type: ArtefactType,
        severity: u8,
        table: &SeverityTable,
        seed: u64,
    ) -> Result<Self> {
        table.validate()?;
        let idx = table.check_severity(severity)?;
        Ok(Self {
            artefact_type,
            severity,
            z: Some(table.mistrigger_z[idx]),
            frame_offset_range: DEFAULT_FRAME_OFFSET_RANGE,
            cycles: DEFAULT_BREATHING_CYCLES,
            amplitude_px: table.breathing_amplitude_px[idx],
            seed,
        })
    }

    pub fn apply(&self, seq: &CineSequence) -> Result<(CineSequence, QualityLabel)> {
        let stream = RngStream::root(self.seed);
        let corrupted = match self.artefact_type {
            ArtefactType::Mistrigger => {
                corrupt_mistrigger(seq, self.z, self.frame_offset_range, &stream)?
            }
            ArtefactType::Breathing => {
                corrupt_breathing(seq, self.cycles, self.amplitude_px, &stream)?
            }
        };
        Ok((
            corrupted,
            QualityLabel::synthetic(self.artefact_type, self.severity),
        ))
    }
}

/// Default range for the mistriggering frame offset `j` (zero excluded
/// at draw time), so replacement content comes from a nearby cardiac phase.
pub const DEFAULT_FRAME_OFFSET_RANGE: (i32, i32) = (-5, 5);

/// Default number of breathing cycles per acquisition.
pub const DEFAULT_BREATHING_CYCLES: u32 = 4;

/// Which k-space rows of which frame were replaced, and from where.
#[derive(Debug, Clone, Default)]
pub struct MistriggerTrace {
    /// Per frame: the sampled phase `r` and `(row, source_frame)` pairs.
    pub frames: Vec<(usize, Vec<(usize, usize)>)>,
}

/// Replace one in `z` rows of each frame's spectrum with the same row from a
/// randomly offset frame. Pure k-space level; exposed for instrumentation.
pub fn mistrigger_spectra(
    spectra: &[KSpaceFrame],
    z: u32,
    offset_range: (i32, i32),
    stream: &RngStream,
) -> Result<(Vec<KSpaceFrame>, MistriggerTrace)> {
    if z < 2 {
        return Err(Error::invalid("mistrigger z must be >= 2"));
    }
    let (lo, hi) = offset_range;
    if lo > hi || (lo == 0 && hi == 0) {
        return Err(Error::invalid(
            "frame offset range must contain a nonzero integer",
        ));
    }
    let t = spectra.len();
    if t < 2 {
        return Err(Error::invalid("mistriggering needs at least 2 frames"));
    }
    let h = spectra[0].dims().0;
    let mut rng = stream.rng();
    let mut out = spectra.to_vec();
    let mut trace = MistriggerTrace::default();
    for (i, frame) in out.iter_mut().enumerate() {
        let phase = rng.random_range(0..z) as usize;
        let mut replaced = Vec::new();
        let mut row = phase;
        while row < h {
            let j = loop {
                let j = rng.random_range(lo..=hi);
                if j != 0 {
                    break j;
                }
            };
            let source = (i as i64 + j as i64).rem_euclid(t as i64) as usize;
            frame
                .coeffs
                .row_mut(row)
                .assign(&spectra[source].coeffs.row(row));
            replaced.push((row, source));
            row += z as usize;
        }
        trace.frames.push((phase, replaced));
    }
    Ok((out, trace))
}

/// Mistriggering corruption of a cine sequence.
///
/// `z = None` is the sentinel for "no corruption" and returns the input
/// unchanged. Output dimensions always equal input dimensions.
pub fn corrupt_mistrigger(
    seq: &CineSequence,
    z: Option<u32>,
    offset_range: (i32, i32),
    stream: &RngStream,
) -> Result<CineSequence> {
    let Some(z) = z else {
        return Ok(seq.clone());
    };
    let spectra: Vec<KSpaceFrame> = seq
        .frames
        .outer_iter()
        .map(|frame| dft2(frame))
        .collect();
    let (corrupted, _) = mistrigger_spectra(&spectra, z, offset_range, stream)?;
    Ok(rebuild(seq, &corrupted))
}

/// Breathing corruption of a cine sequence.
///
/// Row `l` of each frame's spectrum is taken from the frame translated
/// vertically by `round(amplitude * sin(2*pi*cycles*l/H))` pixels with
/// edge-clamped padding: the respiratory sinusoid sampled at the row's
/// acquisition step. The displacement pattern is deterministic; the stream
/// argument keeps the corruptor signatures uniform.
pub fn corrupt_breathing(
    seq: &CineSequence,
    cycles: u32,
    amplitude_px: f64,
    _stream: &RngStream,
) -> Result<CineSequence> {
    if cycles < 1 {
        return Err(Error::invalid("breathing cycles must be >= 1"));
    }
    if amplitude_px < 0.0 {
        return Err(Error::invalid("breathing amplitude must be >= 0"));
    }
    let (t, h, _w) = seq.dims();
    if t == 0 || h == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    let shifts: Vec<i32> = (0..h)
        .map(|l| {
            let d = amplitude_px
                * (2.0 * std::f64::consts::PI * cycles as f64 * l as f64 / h as f64).sin();
            d.round() as i32
        })
        .collect();
    let mut out_spectra = Vec::with_capacity(t);
    for frame in seq.frames.outer_iter() {
        // K-space of each distinct translated copy, computed once.
        let mut by_shift: std::collections::HashMap<i32, KSpaceFrame> =
            std::collections::HashMap::new();
        for &s in &shifts {
            by_shift
                .entry(s)
                .or_insert_with(|| dft2(translate_rows(&frame.to_owned(), s).view()));
        }
        let mut assembled = by_shift[&shifts[0]].clone();
        for (l, &s) in shifts.iter().enumerate() {
            assembled
                .coeffs
                .row_mut(l)
                .assign(&by_shift[&s].coeffs.row(l));
        }
        out_spectra.push(assembled);
    }
    Ok(rebuild(seq, &out_spectra))
}

/// Dispatch to the corruptor selected by `artefact_type` at severity `s`,
/// returning the corrupted sequence and its synthetic label.
pub fn apply_severity(
    seq: &CineSequence,
    artefact_type: ArtefactType,
    severity: u8,
    table: &SeverityTable,
    stream: &RngStream,
) -> Result<(CineSequence, QualityLabel)> {
    table.validate()?;
    let idx = table.check_severity(severity)?;
    let corrupted = match artefact_type {
        ArtefactType::Mistrigger => corrupt_mistrigger(
            seq,
            Some(table.mistrigger_z[idx]),
            DEFAULT_FRAME_OFFSET_RANGE,
            stream,
        )?,
        ArtefactType::Breathing => corrupt_breathing(
            seq,
            DEFAULT_BREATHING_CYCLES,
            table.breathing_amplitude_px[idx],
            stream,
        )?,
    };
    Ok((
        corrupted,
        QualityLabel::synthetic(artefact_type, severity),
    ))
}

/// Random spatial translation augmentation: one integer shift drawn
/// uniformly from `[-floor(W/5), floor(W/5)] x [-floor(H/5), floor(H/5)]`,
/// applied identically to every frame with edge-clamped padding.
pub fn translate_augment(seq: &CineSequence, stream: &RngStream) -> CineSequence {
    let (_, h, w) = seq.dims();
    let (sy, sx) = ((h / 5) as i32, (w / 5) as i32);
    let mut rng = stream.rng();
    let dy = rng.random_range(-sy..=sy);
    let dx = rng.random_range(-sx..=sx);
    translate_sequence(seq, dy, dx)
}

/// Shift every frame by `(dy, dx)` pixels with edge-clamped padding.
pub fn translate_sequence(seq: &CineSequence, dy: i32, dx: i32) -> CineSequence {
    let (t, h, w) = seq.dims();
    let mut frames = Array3::zeros((t, h, w));
    for ti in 0..t {
        for y in 0..h {
            let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
            for x in 0..w {
                let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
                frames[[ti, y, x]] = seq.frames[[ti, sy, sx]];
            }
        }
    }
    let mut out = seq.clone();
    out.frames = frames;
    out
}

fn translate_rows(frame: &Array2<f32>, dy: i32) -> Array2<f32> {
    let (h, w) = frame.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
        for x in 0..w {
            out[[y, x]] = frame[[sy, x]];
        }
    }
    out
}

fn rebuild(seq: &CineSequence, spectra: &[KSpaceFrame]) -> CineSequence {
    let (t, h, w) = seq.dims();
    let mut frames = Array3::zeros((t, h, w));
    for (i, k) in spectra.iter().enumerate() {
        frames.index_axis_mut(ndarray::Axis(0), i).assign(&idft2(k));
    }
    let mut out = seq.clone();
    out.frames = frames;
    out
}

/// Mean per-frame L2 distance between two equally shaped sequences.
pub fn mean_frame_l2(a: &CineSequence, b: &CineSequence) -> f64 {
    let (t, _, _) = a.dims();
    let mut total = 0.0;
    for (fa, fb) in a.frames.outer_iter().zip(b.frames.outer_iter()) {
        let sq: f64 = fa
            .iter()
            .zip(fb.iter())
            .map(|(x, y)| {
                let d = (*x - *y) as f64;
                d * d
            })
            .sum();
        total += sq.sqrt();
    }
    total / t as f64
}
