//! Baby-step curriculum training over severity-ordered synthetic subsets.
//!
//! Training starts from the original (real) pool and accumulates one
//! synthetic severity stage at a time, training `k` epochs after each
//! addition and keeping every previously introduced sample. Severity 1 is
//! the heaviest corruption, i.e. the easiest example, so the curriculum
//! order runs 1..b; the anti-curriculum reverses it; the control partitions
//! the pooled synthetic samples into b random equal-size stages.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::train::{train_epochs, BestTracker};
use crate::net::{ClassifierModel, Sample, Scalar, TrainConfig, TrainHistory};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    Curriculum,
    Anti,
    Control,
}

impl CurriculumMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurriculumMode::Curriculum => "curriculum",
            CurriculumMode::Anti => "anti",
            CurriculumMode::Control => "control",
        }
    }
}

impl std::str::FromStr for CurriculumMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curriculum" => Ok(CurriculumMode::Curriculum),
            "anti" => Ok(CurriculumMode::Anti),
            "control" => Ok(CurriculumMode::Control),
            other => Err(Error::invalid(format!("unknown curriculum mode `{other}`"))),
        }
    }
}

/// Ordered stage partition of the synthetic set plus the per-stage budget.
#[derive(Debug, Clone)]
pub struct CurriculumSchedule {
    pub stages: Vec<Vec<Sample>>,
    pub epochs_per_stage: usize,
    pub mode: CurriculumMode,
    pub seed: u64,
}

impl CurriculumSchedule {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// All sample ids across stages, sorted; stages with different orders
    /// but equal content compare equal through this view.
    pub fn id_multiset(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .stages
            .iter()
            .flatten()
            .map(|s| s.id.clone())
            .collect();
        ids.sort();
        ids
    }
}

/// Group synthetic samples by severity and order them into stages.
///
/// Severities must form the contiguous range `1..=b`. Control mode ignores
/// severity and deals a seeded shuffle into `b` near-equal stages.
pub fn build_schedule(
    synthetic: &[Sample],
    mode: CurriculumMode,
    epochs_per_stage: usize,
    seed: u64,
) -> Result<CurriculumSchedule> {
    if epochs_per_stage == 0 {
        return Err(Error::invalid("epochs_per_stage must be >= 1"));
    }
    let mut by_severity: BTreeMap<u8, Vec<Sample>> = BTreeMap::new();
    for s in synthetic {
        let sev = s
            .severity
            .ok_or_else(|| Error::BadDataset(format!("sample `{}` has no severity", s.id)))?;
        by_severity.entry(sev).or_default().push(s.clone());
    }
    if by_severity.is_empty() {
        return Err(Error::BadDataset("no synthetic samples".into()));
    }
    let b = *by_severity.keys().max().unwrap() as usize;
    for sev in 1..=b {
        if !by_severity.contains_key(&(sev as u8)) {
            return Err(Error::BadDataset(format!("missing severity level {sev}")));
        }
    }

    let stages = match mode {
        CurriculumMode::Curriculum => by_severity.into_values().collect(),
        CurriculumMode::Anti => {
            let mut v: Vec<Vec<Sample>> = by_severity.into_values().collect();
            v.reverse();
            v
        }
        CurriculumMode::Control => {
            let mut pool: Vec<Sample> = by_severity.into_values().flatten().collect();
            let mut rng = RngStream::root(seed).derive(0xC0).rng();
            rand::seq::SliceRandom::shuffle(&mut pool[..], &mut rng);
            let n = pool.len();
            let base = n / b;
            let extra = n % b;
            let mut stages = Vec::with_capacity(b);
            let mut it = pool.into_iter();
            for i in 0..b {
                let take = base + usize::from(i < extra);
                stages.push(it.by_ref().take(take).collect());
            }
            stages
        }
    };
    Ok(CurriculumSchedule {
        stages,
        epochs_per_stage,
        mode,
        seed,
    })
}

/// Per-stage record: pool size after the stage was added plus the epochs
/// trained on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub pool_size: usize,
    pub history: TrainHistory,
}

/// Outcome of a curriculum run; the model is left at the best parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumOutcome {
    pub stages: Vec<StageRecord>,
    pub best_metric: f64,
    pub best_epoch: usize,
}

/// Accumulating stage loop: the training pool starts as `real_train`,
/// gains one stage per iteration (never dropping anything), trains
/// `epochs_per_stage` epochs on the grown pool, and keeps the parameters
/// with the best validation metric seen anywhere.
pub fn run_curriculum<F: Scalar>(
    model: &mut ClassifierModel<F>,
    schedule: &CurriculumSchedule,
    real_train: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<CurriculumOutcome> {
    cfg.validate()?;
    if val_set.is_empty() {
        return Err(Error::BadDataset("empty validation set".into()));
    }
    let mut pool: Vec<Sample> = real_train.to_vec();
    let mut tracker = BestTracker::new(cfg.min_rel_improvement);
    let mut records = Vec::with_capacity(schedule.stage_count());
    let mut epoch_offset = 0usize;
    for (si, stage) in schedule.stages.iter().enumerate() {
        pool.extend(stage.iter().cloned());
        let mut history = TrainHistory::default();
        train_epochs(
            model,
            &pool,
            val_set,
            cfg,
            schedule.epochs_per_stage,
            epoch_offset,
            &mut tracker,
            &mut history,
        )?;
        epoch_offset += schedule.epochs_per_stage;
        history.best_epoch = tracker.best_epoch;
        history.best_metric = tracker.best_metric;
        records.push(StageRecord {
            stage: si + 1,
            pool_size: pool.len(),
            history,
        });
    }
    tracker.apply_best(model);
    Ok(CurriculumOutcome {
        stages: records,
        best_metric: tracker.best_metric,
        best_epoch: tracker.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_model, ArchDescriptor, InitMode};
    use ndarray::Array3;
    use rand::Rng;

    fn sample(id: &str, severity: Option<u8>, label: u8, seed: u64) -> Sample {
        let mut rng = RngStream::root(seed).rng();
        Sample {
            id: id.into(),
            frames: Array3::from_shape_simple_fn((3, 8, 8), || rng.random_range(0.0f32..1.0)),
            label,
            severity,
        }
    }

    fn synthetic_set(per_severity: usize, b: u8) -> Vec<Sample> {
        let mut v = Vec::new();
        for sev in 1..=b {
            for i in 0..per_severity {
                v.push(sample(
                    &format!("syn_s{sev}_{i}"),
                    Some(sev),
                    1,
                    (sev as u64) * 100 + i as u64,
                ));
            }
        }
        v
    }

    #[test]
    fn curriculum_orders_ascending_anti_descending() {
        let syn = synthetic_set(2, 10);
        let cur = build_schedule(&syn, CurriculumMode::Curriculum, 1, 0).unwrap();
        let sev_of = |stage: &Vec<Sample>| stage[0].severity.unwrap();
        let order: Vec<u8> = cur.stages.iter().map(sev_of).collect();
        assert_eq!(order, (1..=10).collect::<Vec<u8>>());
        let anti = build_schedule(&syn, CurriculumMode::Anti, 1, 0).unwrap();
        let order: Vec<u8> = anti.stages.iter().map(sev_of).collect();
        assert_eq!(order, (1..=10).rev().collect::<Vec<u8>>());
        assert_eq!(cur.id_multiset(), anti.id_multiset());
    }

    #[test]
    fn control_partitions_evenly_and_reproducibly() {
        let syn = synthetic_set(10, 10); // 100 samples
        let a = build_schedule(&syn, CurriculumMode::Control, 1, 7).unwrap();
        assert_eq!(a.stage_count(), 10);
        for stage in &a.stages {
            assert_eq!(stage.len(), 10);
        }
        let all: std::collections::HashSet<&str> = a
            .stages
            .iter()
            .flatten()
            .map(|s| s.id.as_str())
            .collect();
        assert_eq!(all.len(), 100);
        let b = build_schedule(&syn, CurriculumMode::Control, 1, 7).unwrap();
        assert_eq!(a.id_multiset(), b.id_multiset());
        for (x, y) in a.stages.iter().zip(&b.stages) {
            let xi: Vec<&str> = x.iter().map(|s| s.id.as_str()).collect();
            let yi: Vec<&str> = y.iter().map(|s| s.id.as_str()).collect();
            assert_eq!(xi, yi);
        }
        let c = build_schedule(&syn, CurriculumMode::Control, 1, 8).unwrap();
        assert_eq!(a.id_multiset(), c.id_multiset());
    }

    #[test]
    fn missing_severity_is_rejected() {
        let mut syn = synthetic_set(2, 4);
        syn.retain(|s| s.severity != Some(2));
        assert!(build_schedule(&syn, CurriculumMode::Curriculum, 1, 0).is_err());
    }

    #[test]
    fn pool_accumulates_and_never_drops() {
        let syn = synthetic_set(3, 4);
        let schedule = build_schedule(&syn, CurriculumMode::Curriculum, 1, 0).unwrap();
        let real: Vec<Sample> = (0..5)
            .map(|i| sample(&format!("real{i}"), None, 0, i))
            .collect();
        let val: Vec<Sample> = vec![sample("val0", None, 0, 90), sample("val1", Some(1), 1, 91)];
        let arch = ArchDescriptor::tiny_lrcn();
        let mut model = init_model::<f32>(&arch, InitMode::Scaled, 1).unwrap();
        let cfg = TrainConfig {
            lr: 0.01,
            batch_size: 4,
            max_epochs: 100,
            seed: 3,
            ..TrainConfig::default()
        };
        let outcome = run_curriculum(&mut model, &schedule, &real, &val, &cfg).unwrap();
        assert_eq!(outcome.stages.len(), 4);
        for (i, rec) in outcome.stages.iter().enumerate() {
            assert_eq!(rec.pool_size, 5 + 3 * (i + 1));
            assert_eq!(rec.history.train_loss.len(), 1);
        }
        let best = outcome.best_metric;
        let max_seen = outcome
            .stages
            .iter()
            .flat_map(|r| r.history.val_metric.iter())
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, max_seen);
    }

    #[test]
    fn single_stage_curriculum_equals_plain_training() {
        let syn = synthetic_set(4, 1);
        let schedule = build_schedule(&syn, CurriculumMode::Curriculum, 3, 0).unwrap();
        let real: Vec<Sample> = (0..4)
            .map(|i| sample(&format!("real{i}"), None, 0, i))
            .collect();
        let val = vec![sample("val0", None, 0, 90), sample("val1", Some(1), 1, 91)];
        let arch = ArchDescriptor::tiny_lrcn();
        let cfg = TrainConfig {
            lr: 0.02,
            batch_size: 3,
            seed: 11,
            ..TrainConfig::default()
        };

        let mut curriculum_model = init_model::<f32>(&arch, InitMode::Scaled, 5).unwrap();
        run_curriculum(&mut curriculum_model, &schedule, &real, &val, &cfg).unwrap();

        // Plain training on real + all synthetic, same pool order, 3 epochs.
        let mut plain_model = init_model::<f32>(&arch, InitMode::Scaled, 5).unwrap();
        let mut pool = real.clone();
        pool.extend(syn.iter().cloned());
        let mut tracker = BestTracker::new(cfg.min_rel_improvement);
        let mut history = TrainHistory::default();
        train_epochs(
            &mut plain_model,
            &pool,
            &val,
            &cfg,
            3,
            0,
            &mut tracker,
            &mut history,
        )
        .unwrap();
        tracker.apply_best(&mut plain_model);

        assert_eq!(curriculum_model.net, plain_model.net);
    }
}
