//! Binary cross-entropy loss, SGD with momentum, and the epoch loop with
//! early stopping on validation balanced accuracy.

use ndarray::Zip;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::confusion_and_metrics;
use crate::rng::RngStream;

use super::layers::{sigmoid, Scalar};
use super::{ClassifierModel, Grads, Sample};

const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Sequences per mini-batch.
    pub batch_size: usize,
    /// Early-stopping window in epochs.
    pub patience_epochs: usize,
    /// Relative validation improvement that counts as progress.
    pub min_rel_improvement: f64,
    pub max_epochs: usize,
    /// `(w_pos, w_neg)`; `None` is the unweighted loss.
    pub class_weights: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0001,
            momentum: 0.90,
            batch_size: 50,
            patience_epochs: 100,
            min_rel_improvement: 0.005,
            max_epochs: 200,
            class_weights: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch record of the training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Cost-sensitive weights from class counts: the positive class is
/// up-weighted by the imbalance ratio (e.g. 150 positives vs 3360
/// negatives gives `w_pos/w_neg = 22.4`).
pub fn class_weights_from_counts(n_pos: usize, n_neg: usize) -> (f64, f64) {
    (n_neg as f64 / n_pos as f64, 1.0)
}

/// Class-weighted binary cross entropy over a batch of probabilities.
///
/// `L = -(1/n) sum[w_pos*y*ln(p) + w_neg*(1-y)*ln(1-p)]` with probabilities
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn loss(yhat: &[f64], y: &[u8], class_weights: Option<(f64, f64)>) -> Result<f64> {
    if yhat.is_empty() || yhat.len() != y.len() {
        return Err(Error::BadDataset("empty or mismatched loss batch".into()));
    }
    let (w_pos, w_neg) = class_weights.unwrap_or((1.0, 1.0));
    let mut total = 0.0;
    for (&p, &label) in yhat.iter().zip(y) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total -= if label != 0 {
            w_pos * p.ln()
        } else {
            w_neg * (1.0 - p).ln()
        };
    }
    Ok(total / yhat.len() as f64)
}

/// Mean-batch-loss gradients for every parameter.
///
/// Dropout masks are drawn from per-item streams derived from `stream`, so
/// the same stream state reproduces identical gradients. Returns the
/// gradients and the batch loss.
pub fn backward<F: Scalar>(
    model: &ClassifierModel<F>,
    batch: &[Sample],
    class_weights: Option<(f64, f64)>,
    stream: &RngStream,
) -> Result<(Grads<F>, f64)> {
    let streams: Vec<RngStream> = (0..batch.len()).map(|i| stream.derive(i as u64)).collect();
    let refs: Vec<(&Sample, RngStream)> = batch.iter().zip(streams).collect();
    batch_gradients(model, &refs, class_weights)
}

pub(crate) fn batch_gradients<F: Scalar>(
    model: &ClassifierModel<F>,
    batch: &[(&Sample, RngStream)],
    class_weights: Option<(f64, f64)>,
) -> Result<(Grads<F>, f64)> {
    if batch.is_empty() {
        return Err(Error::BadDataset("empty batch".into()));
    }
    let (w_pos, w_neg) = class_weights.unwrap_or((1.0, 1.0));
    let per_item: Vec<(Grads<F>, f64)> = batch
        .par_iter()
        .map(|(sample, stream)| -> Result<(Grads<F>, f64)> {
            let x = sample.frames.mapv(|v| F::from_float(v as f64));
            let mut rng = stream.rng();
            let (logit, cache) = model.forward_logit(&x, true, Some(&mut rng))?;
            let p = sigmoid(logit).into_f64();
            let y = sample.label;
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let item_loss = if y != 0 {
                -w_pos * pc.ln()
            } else {
                -w_neg * (1.0 - pc).ln()
            };
            // d(item loss)/d(logit), through the logistic output.
            let dlogit = if y != 0 {
                w_pos * (p - 1.0)
            } else {
                w_neg * p
            };
            let grads = model.grads_from_cache(&cache, F::from_float(dlogit));
            Ok((grads, item_loss))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = batch.len();
    let mut iter = per_item.into_iter();
    let (mut grads, mut total_loss) = iter.next().expect("nonempty batch");
    for (g, l) in iter {
        grads.add_assign(&g);
        total_loss += l;
    }
    grads.scale(F::from_float(1.0 / n as f64));
    Ok((grads, total_loss / n as f64))
}

/// Heavy-ball SGD update: `v <- momentum*v + g; w <- w - lr*v`.
pub fn sgd_step<F: Scalar>(
    model: &mut ClassifierModel<F>,
    grads: &Grads<F>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient in SGD step".into()));
    }
    let lr = F::from_float(lr);
    let mu = F::from_float(momentum);
    let net = &mut model.net;
    let velocity = &mut model.velocity;
    let views = net.params_mut();
    if views.len() != grads.0.len() || velocity.len() != grads.0.len() {
        return Err(Error::invalid("gradient/parameter count mismatch"));
    }
    for ((mut p, v), g) in views.into_iter().zip(velocity.iter_mut()).zip(&grads.0) {
        if p.shape() != g.shape() {
            return Err(Error::invalid("gradient shape mismatch"));
        }
        Zip::from(&mut p).and(v).and(g).for_each(|p, v, &g| {
            *v = mu * *v + g;
            *p = *p - lr * *v;
        });
    }
    Ok(())
}

/// Scores every sample (inference mode, parallel, order-stable).
pub fn score_set<F: Scalar>(model: &ClassifierModel<F>, set: &[Sample]) -> Result<Vec<f64>> {
    set.par_iter()
        .map(|s| model.forward(&s.frames, false, None))
        .collect()
}

/// Validation balanced accuracy at threshold 0.5.
pub fn validation_metric<F: Scalar>(
    model: &ClassifierModel<F>,
    val: &[Sample],
) -> Result<f64> {
    let scores = score_set(model, val)?;
    let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    let (_, m) = confusion_and_metrics(&scores, &labels, 0.5)?;
    Ok(m.balanced_accuracy)
}

/// Tracks the best validation metric and the parameters that produced it.
pub(crate) struct BestTracker<F: Scalar> {
    pub best_metric: f64,
    pub best_epoch: usize,
    pub last_improve: usize,
    min_rel: f64,
    snapshot: Option<Vec<ndarray::ArrayD<F>>>,
}

impl<F: Scalar> BestTracker<F> {
    pub fn new(min_rel: f64) -> Self {
        Self {
            best_metric: f64::NEG_INFINITY,
            best_epoch: 0,
            last_improve: 0,
            min_rel,
            snapshot: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64, model: &ClassifierModel<F>) {
        let first = self.snapshot.is_none();
        if first || metric > self.best_metric {
            if first || metric >= self.best_metric * (1.0 + self.min_rel) {
                self.last_improve = epoch;
            }
            self.best_metric = metric;
            self.best_epoch = epoch;
            self.snapshot = Some(model.snapshot());
        }
    }

    pub fn apply_best(&self, model: &mut ClassifierModel<F>) {
        if let Some(snap) = &self.snapshot {
            model.restore(snap);
        }
    }
}

/// One epoch of shuffled mini-batch SGD; returns the mean training loss.
pub(crate) fn run_epoch<F: Scalar>(
    model: &mut ClassifierModel<F>,
    train_set: &[Sample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let shuffle_stream = RngStream::root(cfg.seed).derive(0x5u64).derive(epoch as u64);
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut shuffle_stream.rng());
    let drop_root = RngStream::root(cfg.seed).derive(0xDu64).derive(epoch as u64);
    let mut total_loss = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<(&Sample, RngStream)> = chunk
            .iter()
            .map(|&i| (&train_set[i], drop_root.derive(i as u64)))
            .collect();
        let (grads, batch_loss) = batch_gradients(model, &batch, cfg.class_weights)?;
        sgd_step(model, &grads, cfg.lr, cfg.momentum)?;
        total_loss += batch_loss * chunk.len() as f64;
    }
    Ok(total_loss / train_set.len() as f64)
}

/// Run exactly `epochs` epochs (no early stopping), updating `tracker` and
/// appending to `history`. Used directly by curriculum stages.
pub(crate) fn train_epochs<F: Scalar>(
    model: &mut ClassifierModel<F>,
    pool: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    epochs: usize,
    epoch_offset: usize,
    tracker: &mut BestTracker<F>,
    history: &mut TrainHistory,
) -> Result<()> {
    if pool.is_empty() || val.is_empty() {
        return Err(Error::BadDataset("empty train or validation set".into()));
    }
    for e in 0..epochs {
        let epoch = epoch_offset + e;
        let train_loss = run_epoch(model, pool, cfg, epoch)?;
        let metric = validation_metric(model, val)?;
        history.train_loss.push(train_loss);
        history.val_metric.push(metric);
        tracker.observe(epoch, metric, model);
    }
    Ok(())
}

/// Full training run: shuffled mini-batch SGD with early stopping.
///
/// Stops when no epoch in the trailing `patience_epochs` window improved
/// the best validation balanced accuracy by at least
/// `min_rel_improvement` (relative), or at `max_epochs`. The model is left
/// at the parameters of the best validation epoch.
pub fn train<F: Scalar>(
    model: &mut ClassifierModel<F>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::BadDataset("empty train or validation set".into()));
    }
    for t in train_set {
        if val_set.iter().any(|v| v.id == t.id) {
            return Err(Error::BadDataset(format!(
                "sample `{}` appears in both train and validation sets",
                t.id
            )));
        }
    }
    let mut tracker = BestTracker::new(cfg.min_rel_improvement);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.max_epochs {
        let train_loss = run_epoch(model, train_set, cfg, epoch)?;
        let metric = validation_metric(model, val_set)?;
        history.train_loss.push(train_loss);
        history.val_metric.push(metric);
        tracker.observe(epoch, metric, model);
        if epoch - tracker.last_improve >= cfg.patience_epochs {
            break;
        }
    }
    tracker.apply_best(model);
    history.best_epoch = tracker.best_epoch;
    history.best_metric = tracker.best_metric;
    Ok(history)
}
