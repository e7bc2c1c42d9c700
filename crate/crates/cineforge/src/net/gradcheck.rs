//! Central finite-difference verification of the analytic gradients.
//!
//! Runs in f64 on tiny architecture instances. Coordinates whose
//! perturbation flips a ReLU activation or a pooling argmax are excluded:
//! the loss is not differentiable across those kinks, so the comparison is
//! meaningless there.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::train::{backward, loss};
use super::{activation_signature, init_model, ArchDescriptor, InitMode, Sample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

fn batch_loss_and_signature(
    model: &super::ClassifierModel<f64>,
    batch: &[Sample],
) -> Result<(f64, Vec<u64>)> {
    let mut probs = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    let mut sig = Vec::new();
    for s in batch {
        let x = s.frames.mapv(|v| v as f64);
        let (logit, cache) = model.forward_logit(&x, false, None)?;
        probs.push(super::layers::sigmoid(logit));
        labels.push(s.label);
        sig.extend(activation_signature(&cache));
    }
    Ok((loss(&probs, &labels, None)?, sig))
}

/// Compare analytic gradients against `(L(w+eps) - L(w-eps)) / 2 eps` on a
/// sampled subset of at least `n_coords` coordinates.
pub fn grad_check(
    arch: &ArchDescriptor,
    batch: &[Sample],
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if arch.dropout_p != 0.0 {
        return Err(Error::invalid("gradient check requires dropout_p = 0"));
    }
    if batch.is_empty() {
        return Err(Error::BadDataset("empty gradient-check batch".into()));
    }
    let mut model = init_model::<f64>(arch, InitMode::Scaled, seed)?;
    let (grads, _) = backward(&model, batch, None, &RngStream::root(seed))?;

    let lens: Vec<usize> = grads.0.iter().map(|g| g.len()).collect();
    let total: usize = lens.iter().sum();
    let mut rng = RngStream::root(seed).derive(0xFD).rng();
    let mut coords: Vec<usize> = Vec::with_capacity(n_coords.min(total));
    let mut seen = std::collections::HashSet::new();
    while coords.len() < n_coords.min(total) {
        let c = rng.random_range(0..total);
        if seen.insert(c) {
            coords.push(c);
        }
    }

    let locate = |flat: usize| -> (usize, usize) {
        let mut rest = flat;
        for (ti, &len) in lens.iter().enumerate() {
            if rest < len {
                return (ti, rest);
            }
            rest -= len;
        }
        unreachable!("coordinate within total")
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for &flat in &coords {
        let (ti, off) = locate(flat);
        let analytic = grads.0[ti].as_slice().expect("standard layout")[off];
        let eval = |model: &mut super::ClassifierModel<f64>, delta: f64| -> Result<(f64, Vec<u64>)> {
            {
                let mut views = model.params_mut();
                let slice = views[ti].as_slice_mut().expect("standard layout");
                slice[off] += delta;
            }
            let out = batch_loss_and_signature(model, batch);
            {
                let mut views = model.params_mut();
                let slice = views[ti].as_slice_mut().expect("standard layout");
                slice[off] -= delta;
            }
            out
        };
        let (loss_p, sig_p) = eval(&mut model, eps)?;
        let (loss_m, sig_m) = eval(&mut model, -eps)?;
        if sig_p != sig_m {
            report.skipped += 1;
            continue;
        }
        let numeric = (loss_p - loss_m) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    if report.checked == 0 {
        return Err(Error::Numeric(
            "every sampled coordinate sat on a kink".into(),
        ));
    }
    Ok(report)
}

/// Random `[0, 1)` inputs with alternating labels, for gradient checking.
pub fn synthetic_batch(arch: &ArchDescriptor, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = RngStream::root(seed).derive(0xBA).rng();
    (0..n)
        .map(|i| Sample {
            id: format!("gc{i}"),
            frames: ndarray::Array3::from_shape_simple_fn(arch.input, || {
                rng.random_range(0.0f32..1.0)
            }),
            label: (i % 2) as u8,
            severity: None,
        })
        .collect()
}
