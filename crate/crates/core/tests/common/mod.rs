#![allow(dead_code)]

use codistillery_core::data::MultiViewSpec;
use codistillery_core::harness::{
    self, DataOptions, ExperimentConfig, MultiviewSuiteConfig, OptimizerConfig, RunResult,
};
use codistillery_core::losses::DistillKind;
use codistillery_core::model::{ModelSpec, SplitArm};
use codistillery_core::schedules::ScheduleSet;
use codistillery_core::sync::{SyncKind, SyncStrategy};

pub fn strategy(kind: SyncKind, n: usize, batch: usize) -> SyncStrategy {
    SyncStrategy {
        kind,
        n_groups: n,
        devices_per_group: 1,
        per_device_batch: batch,
        exchange_period: 1,
        checkpoint_delay: 0,
        b_model_bits: None,
        b_prediction_bits: None,
        count_intra_group: false,
    }
}

pub fn config(kind: SyncKind, n: usize, dataset: MultiViewSpec, model: ModelSpec, batch: usize) -> ExperimentConfig {
    ExperimentConfig {
        strategy: strategy(kind, n, batch),
        schedules: ScheduleSet::constant(0.05, 1),
        models: vec![model],
        dataset,
        data: DataOptions::default(),
        iterations: None,
        optimizer: OptimizerConfig::sgd(),
        distill_loss: DistillKind::Mse,
        seeds: vec![0],
        fixed_compute: false,
        identical_init: false,
        eval_every: None,
        reduction_block: None,
        group_index_offset: 0,
    }
}

/// Smallest possible run: linear model, batch 2.
pub fn tiny_config(kind: SyncKind, n: usize) -> ExperimentConfig {
    let dataset = MultiViewSpec {
        n_views: 1,
        dims_per_view: 2,
        num_classes: 2,
        separation: vec![1.0],
        noise: 1.0,
        train_size: 64,
        val_size: 8,
        seed: 1,
    };
    let mut cfg = config(kind, n, dataset, ModelSpec::mlp(2, vec![], 2), 2);
    cfg.eval_every = Some(1_000_000);
    cfg
}

/// A small non-linear task with batch 32.
pub fn small_config(kind: SyncKind, n: usize) -> ExperimentConfig {
    let dataset = MultiViewSpec {
        n_views: 2,
        dims_per_view: 4,
        num_classes: 3,
        separation: vec![1.5, 1.0],
        noise: 1.0,
        train_size: 512,
        val_size: 128,
        seed: 5,
    };
    let mut cfg = config(kind, n, dataset, ModelSpec::mlp(8, vec![16, 8], 3), 32);
    cfg.optimizer = OptimizerConfig::default();
    cfg.eval_every = Some(20);
    cfg
}

/// The default multi-view task: 8 views, 4 classes, widths [160, 64],
/// 4000 training samples.
pub fn default_multiview() -> MultiViewSpec {
    MultiViewSpec {
        n_views: 8,
        dims_per_view: 8,
        num_classes: 4,
        separation: vec![1.0; 8],
        noise: 1.0,
        train_size: 4000,
        val_size: 2000,
        seed: 11,
    }
}

pub fn multiview_suite_config(seeds: usize) -> MultiviewSuiteConfig {
    let data = default_multiview();
    let model = ModelSpec::mlp(data.input_dim(), vec![160, 64], data.num_classes);
    let mut base = config(SyncKind::CodistillPredictions, 2, data, model, 32);
    base.schedules = ScheduleSet::constant(0.05, 2);
    base.schedules.alpha.initial = 0.5;
    base.optimizer = OptimizerConfig::default();
    base.seeds = (0..seeds as u64).collect();
    MultiviewSuiteConfig {
        base,
        arms: vec![SplitArm::Frozen],
        n_list: vec![1, 4],
        pretrain: ScheduleSet::constant(0.05, 1),
    }
}

/// Over-parameterized task for the distance-from-init comparison.
pub fn regularization_config(kind: SyncKind, n: usize) -> ExperimentConfig {
    let data = MultiViewSpec {
        n_views: 2,
        dims_per_view: 8,
        num_classes: 4,
        separation: vec![1.0, 1.0],
        noise: 1.0,
        train_size: 256,
        val_size: 256,
        seed: 21,
    };
    let model = ModelSpec::mlp(16, vec![512], 4);
    let mut cfg = config(kind, n, data, model, 32);
    cfg.schedules = ScheduleSet::constant(0.05, 30);
    cfg.optimizer = OptimizerConfig::default();
    cfg.seeds = (0..5).collect();
    cfg
}

pub fn regularization_runs() -> (Vec<RunResult>, Vec<RunResult>) {
    let co = harness::run_experiment(&regularization_config(SyncKind::CodistillPredictions, 2)).unwrap();
    let ind = independent_pair(&regularization_config(SyncKind::CodistillPredictions, 2));
    (co, ind)
}

/// Runs the two groups of a codistillation config as independent
/// supervised runs and merges them per seed.
pub fn independent_pair(cfg: &ExperimentConfig) -> Vec<RunResult> {
    let n = cfg.strategy.n_groups;
    let mut per_group: Vec<Vec<RunResult>> = (0..n)
        .map(|g| {
            let mut base = cfg.clone();
            base.strategy.kind = SyncKind::AllReduce;
            base.strategy.n_groups = 1;
            base.group_index_offset = g as u64;
            base.data.sampling = Some(cfg.sampling_mode());
            harness::run_experiment(&base).unwrap()
        })
        .collect();
    let mut merged = per_group.remove(0);
    for other in per_group {
        for (m, o) in merged.iter_mut().zip(other) {
            let g = m.specs.len();
            m.rows.extend(o.rows.into_iter().map(|mut r| {
                r.group = g;
                r
            }));
            m.final_params.extend(o.final_params);
            m.init_params.extend(o.init_params);
            m.specs.extend(o.specs);
        }
    }
    merged
}

pub fn subsample_config(kind: SyncKind, n: usize) -> ExperimentConfig {
    let data = MultiViewSpec {
        n_views: 4,
        dims_per_view: 4,
        num_classes: 4,
        separation: vec![1.0; 4],
        noise: 1.0,
        train_size: 1024,
        val_size: 1000,
        seed: 31,
    };
    let model = ModelSpec::mlp(16, vec![128], 4);
    let mut cfg = config(kind, n, data, model, 32);
    cfg.schedules = ScheduleSet::constant(0.05, 10);
    cfg.data.subsample = 4;
    cfg.seeds = (0..5).collect();
    cfg
}

pub fn subsample_runs() -> (Vec<RunResult>, Vec<RunResult>) {
    let cfg = subsample_config(SyncKind::CodistillPredictions, 2);
    (harness::run_experiment(&cfg).unwrap(), independent_pair(&cfg))
}

pub fn fixed_compute_config(n: usize) -> ExperimentConfig {
    let data = default_multiview();
    let model = ModelSpec::mlp(data.input_dim(), vec![160, 64], data.num_classes);
    let mut cfg = config(SyncKind::CodistillPredictions, n, data, model, 32);
    cfg.schedules = ScheduleSet::constant(0.01, 1);
    cfg.optimizer = OptimizerConfig::default();
    cfg.fixed_compute = true;
    cfg.seeds = (0..5).collect();
    cfg
}
