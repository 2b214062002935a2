//! Shared fixtures for the criterion benchmarks.

use codistillery_core::data::MultiViewSpec;
use codistillery_core::harness::{DataOptions, ExperimentConfig, OptimizerConfig};
use codistillery_core::losses::DistillKind;
use codistillery_core::model::ModelSpec;
use codistillery_core::schedules::ScheduleSet;
use codistillery_core::sync::{SyncKind, SyncStrategy};
use codistillery_core::Tensor;

/// Deterministic dense matrix with entries in [-1, 1).
pub fn matrix(rows: usize, cols: usize, salt: u64) -> Tensor {
    let data = (0..rows * cols)
        .map(|i| {
            let z = codistillery_core::seeding::mix64(salt ^ i as u64);
            (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

pub fn task() -> MultiViewSpec {
    MultiViewSpec {
        n_views: 4,
        dims_per_view: 4,
        num_classes: 4,
        separation: vec![1.0; 4],
        noise: 1.0,
        train_size: 1024,
        val_size: 256,
        seed: 3,
    }
}

pub fn model() -> ModelSpec {
    ModelSpec::mlp(16, vec![64, 32], 4)
}

/// Two workers at batch 32 (one group of two devices for all-reduce, two
/// groups otherwise), evaluated only at the end.
pub fn experiment(kind: SyncKind, iterations: u64) -> ExperimentConfig {
    ExperimentConfig {
        strategy: SyncStrategy {
            kind,
            n_groups: if kind == SyncKind::AllReduce { 1 } else { 2 },
            devices_per_group: if kind == SyncKind::AllReduce { 2 } else { 1 },
            per_device_batch: 32,
            exchange_period: 1,
            checkpoint_delay: 0,
            b_model_bits: None,
            b_prediction_bits: None,
            count_intra_group: false,
        },
        schedules: ScheduleSet::constant(0.05, 1),
        models: vec![model()],
        dataset: task(),
        data: DataOptions::default(),
        iterations: Some(iterations),
        optimizer: OptimizerConfig::default(),
        distill_loss: DistillKind::Mse,
        seeds: vec![0],
        fixed_compute: false,
        identical_init: false,
        eval_every: Some(iterations),
        reduction_block: None,
        group_index_offset: 0,
    }
}
