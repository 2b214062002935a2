//! The experiment engine.
//!
//! For every seed, `n` groups are initialized and trained for `K` iterations.
//! Each iteration draws the groups' minibatches, runs every group's forward
//! pass, gathers peer logits through the configured [`PeerExchange`],
//! back-propagates each device's objective, averages device gradients inside
//! the group, adds the weight-decay gradient, and applies an SGD step. Groups
//! are processed in round-robin order, so results are bit-reproducible.
//!
//! Metric row `k` describes the parameters entering iteration `k`
//! (`θ^k`): the loss on minibatch `k`, the distance `‖θ^k − θ^1‖`, and the
//! validation accuracy when `k` is an evaluation point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradMap, Tape};
use crate::data::{self, Dataset, MultiViewSpec, SamplerState, SamplingMode};
use crate::error::{Error, Result};
use crate::losses::{self, DistillKind, LossValue, ObjectiveWeights};
use crate::model::{self, ModelSpec, Parameters, SplitArm};
use crate::schedules::ScheduleSet;
use crate::seeding::{self, Stream};
use crate::stats::{self, MeanStderr};
use crate::sync::{self, PeerExchange, SyncKind, SyncStrategy};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewAssignment {
    /// Every model sees every input feature.
    #[default]
    None,
    /// Views are split into `n_groups` contiguous disjoint blocks; group `i`
    /// sees block `i` through its input mask.
    Disjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataOptions {
    /// Train on `1/subsample` of the data for `subsample×` the epochs.
    #[serde(default = "one_u64")]
    pub subsample: u64,
    #[serde(default)]
    pub view_assignment: ViewAssignment,
    /// Defaults to coordinated for prediction exchange, independent otherwise.
    #[serde(default)]
    pub sampling: Option<SamplingMode>,
}

impl Default for DataOptions {
    fn default() -> Self {
        Self {
            subsample: 1,
            view_assignment: ViewAssignment::None,
            sampling: None,
        }
    }
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerKind,
    /// Classical momentum μ, used by `sgd_momentum` only.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            momentum: 0.0,
        }
    }

    /// μ actually applied by the update rule.
    pub fn effective_momentum(&self) -> f64 {
        match self.kind {
            OptimizerKind::Sgd => 0.0,
            OptimizerKind::SgdMomentum => self.momentum,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum: default_momentum(),
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: SyncStrategy,
    pub schedules: ScheduleSet,
    /// One spec per group, or a single spec shared by all groups.
    pub models: Vec<ModelSpec>,
    pub dataset: MultiViewSpec,
    #[serde(default)]
    pub data: DataOptions,
    /// Overrides `total_epochs × iterations_per_epoch`.
    #[serde(default)]
    pub iterations: Option<u64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub distill_loss: DistillKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Divide the per-model iteration budget by `n_groups`.
    #[serde(default)]
    pub fixed_compute: bool,
    /// All groups start from the same parameters.
    #[serde(default)]
    pub identical_init: bool,
    /// Evaluate every this many iterations (default: once per data epoch).
    #[serde(default)]
    pub eval_every: Option<u64>,
    /// Block size for batch-axis reductions (see `Tape::with_row_block`).
    #[serde(default)]
    pub reduction_block: Option<usize>,
    /// Group `i` derives its seeds as group `group_index_offset + i`.
    #[serde(default)]
    pub group_index_offset: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.schedules.validate()?;
        self.dataset.validate()?;
        let n = self.strategy.n_groups;
        if self.models.len() != 1 && self.models.len() != n {
            return Err(Error::config(
                "models",
                format!("expected 1 or {n} model specs, found {}", self.models.len()),
            ));
        }
        for (i, m) in self.models.iter().enumerate() {
            m.validate().map_err(|e| prefix_key(e, &format!("models[{i}]")))?;
            if m.input_dim != self.dataset.input_dim() {
                return Err(Error::config(
                    format!("models[{i}].input_dim"),
                    format!("{} but the dataset has {} features", m.input_dim, self.dataset.input_dim()),
                ));
            }
            if m.num_classes != self.dataset.num_classes {
                return Err(Error::config(
                    format!("models[{i}].num_classes"),
                    format!("{} but the dataset has {} classes", m.num_classes, self.dataset.num_classes),
                ));
            }
        }
        if self.data.subsample == 0 {
            return Err(Error::config("data.subsample", "must be at least 1"));
        }
        if self.data.view_assignment == ViewAssignment::Disjoint && self.dataset.n_views < n {
            return Err(Error::config(
                "data.view_assignment",
                format!("{} views cannot be split across {n} groups", self.dataset.n_views),
            ));
        }
        if self.strategy.kind == SyncKind::CodistillPredictions
            && self.data.sampling == Some(SamplingMode::Independent)
        {
            return Err(Error::config(
                "data.sampling",
                "prediction exchange requires coordinated sampling",
            ));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.iterations == Some(0) {
            return Err(Error::config("iterations", "must be positive"));
        }
        if self.eval_every == Some(0) {
            return Err(Error::config("eval_every", "must be positive"));
        }
        if self.reduction_block == Some(0) {
            return Err(Error::config("reduction_block", "must be positive"));
        }
        let train = self.dataset.train_size / self.data.subsample as usize;
        if self.strategy.group_batch() > train {
            return Err(Error::config(
                "strategy.per_device_batch",
                format!(
                    "group batch {} exceeds the {train} training samples",
                    self.strategy.group_batch()
                ),
            ));
        }
        Ok(())
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        self.data.sampling.unwrap_or(match self.strategy.kind {
            SyncKind::CodistillPredictions => SamplingMode::Coordinated,
            _ => SamplingMode::Independent,
        })
    }

    /// The model spec of every group after replication and view assignment.
    pub fn resolved_specs(&self) -> Vec<ModelSpec> {
        let n = self.strategy.n_groups;
        (0..n)
            .map(|i| {
                let mut s = if self.models.len() == 1 {
                    self.models[0].clone()
                } else {
                    self.models[i].clone()
                };
                if self.data.view_assignment == ViewAssignment::Disjoint {
                    let per = self.dataset.n_views / n;
                    let views: Vec<usize> = (i * per..(i + 1) * per).collect();
                    s.input_mask = Some(self.dataset.view_mask(&views));
                }
                s
            })
            .collect()
    }
}

fn prefix_key(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{prefix}.{key}"),
            message,
        },
        other => other,
    }
}

/// One metric record per (seed, iteration, group).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub iteration: u64,
    pub epoch: u64,
    pub group: usize,
    pub loss: LossValue,
    pub val_acc: Option<f64>,
    pub dist_from_init: f64,
    pub lr: f64,
    pub wd: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub bits_iter: u64,
    pub bits_cum: u64,
}

/// Peer-logit provenance recorded when tracing is on.
#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub iteration: u64,
    pub group: usize,
    pub peer: usize,
    pub source_iteration: u64,
    pub input: Tensor,
    pub logits: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Record the provenance of every peer-logit tensor.
    pub trace: bool,
    /// Keep every group's parameters after every update.
    pub keep_history: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub final_params: Vec<Parameters>,
    pub init_params: Vec<Parameters>,
    pub specs: Vec<ModelSpec>,
    pub trace: Vec<TraceEntry>,
    /// `history[g][j]` holds group `g`'s parameters after `j` updates.
    pub history: Vec<Vec<Parameters>>,
    pub iterations: u64,
}

/// Starting point of a run: specs and initial parameters per group.
#[derive(Clone, Debug)]
pub struct RunSetup {
    pub specs: Vec<ModelSpec>,
    pub init: Vec<Parameters>,
}

impl RunSetup {
    pub fn from_config(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let specs = cfg.resolved_specs();
        let init = specs
            .iter()
            .enumerate()
            .map(|(g, s)| {
                let idx = cfg.group_index_offset + if cfg.identical_init { 0 } else { g as u64 };
                Parameters::init(s, seeding::derive_seed(seed, Stream::ModelInit, idx))
            })
            .collect::<Result<_>>()?;
        Ok(Self { specs, init })
    }
}

/// Generates the configured datasets (with the data-fraction protocol
/// applied) and returns them with the epoch multiplier.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, u64)> {
    let (train, val) = data::generate_multiview(&cfg.dataset)?;
    let (train, mult) = data::subsample_fraction(&train, cfg.data.subsample, cfg.dataset.seed)?;
    Ok((train, val, mult))
}

/// Runs every configured seed. Seeds run in parallel; output order follows
/// `cfg.seeds`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let (train, val, mult) = prepare_data(cfg)?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let setup = RunSetup::from_config(cfg, seed)?;
            run_seed(cfg, seed, setup, &train, &val, mult, &RunOptions::default())
        })
        .collect()
}

/// Iteration counts of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunLength {
    pub iterations: u64,
    pub data_ipe: u64,
    pub schedule_ipe: f64,
}

pub fn run_length(cfg: &ExperimentConfig, schedules: &ScheduleSet, train_len: usize) -> RunLength {
    let data_ipe = (train_len / cfg.strategy.group_batch()).max(1) as u64;
    let base = cfg
        .iterations
        .unwrap_or(schedules.lr.total_epochs * data_ipe);
    let iterations = if cfg.fixed_compute {
        (base / cfg.strategy.n_groups as u64).max(1)
    } else {
        base
    };
    RunLength {
        iterations,
        data_ipe,
        schedule_ipe: iterations as f64 / schedules.lr.total_epochs as f64,
    }
}

struct GroupState {
    params: Parameters,
    init: Parameters,
    velocity: Option<GradMap>,
}

/// Trains one seed from an explicit setup.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    setup: RunSetup,
    train: &Dataset,
    val: &Dataset,
    epoch_multiplier: u64,
    opts: &RunOptions,
) -> Result<RunResult> {
    let strategy = &cfg.strategy;
    let n = strategy.n_groups;
    if setup.specs.len() != n || setup.init.len() != n {
        return Err(Error::config("models", format!("setup has {} groups, strategy {n}", setup.specs.len())));
    }
    for (s, p) in setup.specs.iter().zip(&setup.init) {
        s.validate()?;
        p.check_against(s)?;
    }
    let schedules = cfg.schedules.stretch_epochs(epoch_multiplier);
    let len = run_length(cfg, &schedules, train.len());
    let devices = strategy.devices_per_group;
    let device_batch = strategy.per_device_batch;
    let group_batch = strategy.group_batch();
    let eval_every = cfg.eval_every.unwrap_or(len.data_ipe);

    let mut exchange = PeerExchange::new(strategy, &setup.specs, &setup.init)?;
    let mode = cfg.sampling_mode();
    let mut samplers: Vec<SamplerState> = match mode {
        SamplingMode::Coordinated => vec![SamplerState::for_group(train.len(), seed, 0, mode)],
        SamplingMode::Independent => (0..n)
            .map(|g| SamplerState::for_group(train.len(), seed, cfg.group_index_offset + g as u64, mode))
            .collect(),
    };
    let momentum = cfg.optimizer.effective_momentum();
    let mut groups: Vec<GroupState> = setup
        .init
        .iter()
        .map(|p| GroupState {
            params: p.clone(),
            init: p.clone(),
            velocity: None,
        })
        .collect();
    let specs = setup.specs;
    let mut rows = Vec::with_capacity(len.iterations as usize * n);
    let mut trace = Vec::new();
    let mut history: Vec<Vec<Parameters>> = if opts.keep_history {
        groups.iter().map(|g| vec![g.params.clone()]).collect()
    } else {
        Vec::new()
    };

    for k in 1..=len.iterations {
        let lr = schedules.lr_at(k, len.schedule_ipe);
        let wd = schedules.wd_at(k, len.schedule_ipe);
        let eps = schedules.smoothing_at(k, len.schedule_ipe);
        let alpha = schedules.alpha_at(schedules.epoch_of(k, len.schedule_ipe));

        let batches = match mode {
            SamplingMode::Coordinated => {
                let b = data::next_minibatch(&mut samplers[0], train, group_batch)?;
                vec![b; n]
            }
            SamplingMode::Independent => samplers
                .iter_mut()
                .map(|s| data::next_minibatch(s, train, group_batch))
                .collect::<Result<_>>()?,
        };
        let data_epoch = samplers[0].epoch();

        // forward every device of every group
        let mut tapes = Vec::with_capacity(n);
        let mut own_logits = Vec::with_capacity(n);
        for (g, batch) in batches.iter().enumerate() {
            let mut dev = Vec::with_capacity(devices);
            let mut parts = Vec::with_capacity(devices);
            for d in 0..devices {
                let x = batch.x.slice_rows(d * device_batch, (d + 1) * device_batch)?;
                let mut tape = Tape::new().with_row_block(cfg.reduction_block);
                let xv = tape.constant(x);
                let logits = model::forward_on_tape(&mut tape, &specs[g], &groups[g].params, xv)?;
                parts.push(tape.value(logits).clone());
                dev.push((tape, logits));
            }
            own_logits.push(if devices == 1 {
                parts.pop().expect("one device")
            } else {
                Tensor::concat_rows(&parts)?
            });
            tapes.push(dev);
        }

        let inputs: Vec<Tensor> = batches.iter().map(|b| b.x.clone()).collect();
        let indices: Vec<Vec<usize>> = batches.iter().map(|b| b.indices.clone()).collect();
        let peers = exchange.gather(k, &inputs, &indices, &own_logits)?;
        if opts.trace {
            for (g, ps) in peers.iter().enumerate() {
                for p in ps {
                    trace.push(TraceEntry {
                        iteration: k,
                        group: g,
                        peer: p.source_group,
                        source_iteration: p.source_iteration,
                        input: inputs[g].clone(),
                        logits: p.logits.clone(),
                    });
                }
            }
        }

        let evaluate = k % eval_every == 0 || k == len.iterations;
        let mut iter_rows = Vec::with_capacity(n);
        for (g, dev_tapes) in tapes.into_iter().enumerate() {
            let batch = &batches[g];
            let weights = ObjectiveWeights {
                alpha,
                lambda: 0.0,
                smoothing: eps,
                kind: cfg.distill_loss,
            };
            let mut grads = Vec::with_capacity(devices);
            let mut sup_sum = 0.0;
            let mut dist_sum = 0.0;
            for (d, (mut tape, logits)) in dev_tapes.into_iter().enumerate() {
                let (lo, hi) = (d * device_batch, (d + 1) * device_batch);
                let peer_slices = peers[g]
                    .iter()
                    .map(|p| {
                        if devices == 1 {
                            Ok(p.logits.clone())
                        } else {
                            p.logits.slice_rows(lo, hi)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let obj = losses::codistill_objective(&mut tape, logits, &batch.y[lo..hi], &peer_slices, &[], weights)?;
                sup_sum += obj.value.supervised;
                dist_sum += obj.value.distill;
                grads.push(tape.backward(obj.root)?);
            }
            let mut grad = sync::all_reduce_grads(&grads)?;
            let state = &mut groups[g];
            let spec = &specs[g];

            // coupled L2: λ·w on trainable weights, after the device average
            let mut l2 = 0.0;
            for (name, w) in state.params.iter() {
                if Parameters::is_weight(name) && !Parameters::is_frozen(spec, name) {
                    l2 += 0.5 * w.squared_norm();
                    if wd != 0.0 {
                        let gw = grad.get_mut(name).expect("trainable weight has a gradient");
                        gw.add_assign(&w.scale(wd))?;
                    }
                }
            }
            let (supervised, distill) = if devices == 1 {
                (sup_sum, dist_sum)
            } else {
                (sup_sum / devices as f64, dist_sum / devices as f64)
            };
            let loss = LossValue {
                scalar: supervised + alpha * distill + wd * l2,
                supervised,
                distill,
                l2,
            };
            let val_acc = if evaluate {
                Some(data::accuracy(&model::forward(spec, &state.params, &val.features)?, &val.labels))
            } else {
                None
            };
            let dist_from_init = state.params.distance(&state.init);

            apply_sgd(state, grad, lr, momentum)?;
            iter_rows.push(MetricsRow {
                seed,
                iteration: k,
                epoch: data_epoch,
                group: g,
                loss,
                val_acc,
                dist_from_init,
                lr,
                wd,
                alpha,
                epsilon: eps,
                bits_iter: 0,
                bits_cum: 0,
            });
        }

        let params: Vec<Parameters> = groups.iter().map(|g| g.params.clone()).collect();
        exchange.after_update(k, &params)?;
        for (row, (it, cum)) in iter_rows.iter_mut().zip(exchange.close_iteration()) {
            row.bits_iter = it;
            row.bits_cum = cum;
        }
        rows.extend(iter_rows);
        if opts.keep_history {
            for (h, p) in history.iter_mut().zip(params) {
                h.push(p);
            }
        }
    }

    let init_params = groups.iter().map(|g| g.init.clone()).collect();
    Ok(RunResult {
        seed,
        rows,
        final_params: groups.into_iter().map(|g| g.params).collect(),
        init_params,
        specs,
        trace,
        history,
        iterations: len.iterations,
    })
}

/// `v ← μ·v + g; θ ← θ − η·v`, or `θ ← θ − η·g` when `μ = 0`. Only
/// parameters present in `grad` (the trainable ones) move.
fn apply_sgd(state: &mut GroupState, grad: GradMap, lr: f64, momentum: f64) -> Result<()> {
    let step = if momentum == 0.0 {
        grad
    } else {
        let v = match state.velocity.take() {
            None => grad,
            Some(mut v) => {
                for (name, vt) in v.iter_mut() {
                    let g = &grad[name];
                    for (a, b) in vt.data_mut().iter_mut().zip(g.data()) {
                        *a = momentum * *a + b;
                    }
                }
                v
            }
        };
        state.velocity = Some(v.clone());
        v
    };
    for (name, s) in &step {
        let p = state
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("gradient for unknown parameter `{name}`")))?;
        for (a, b) in p.data_mut().iter_mut().zip(s.data()) {
            *a -= lr * b;
        }
    }
    Ok(())
}

/// Final values of one group in one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFinal {
    pub seed: u64,
    pub group: usize,
    pub final_train_loss: f64,
    pub final_val_acc: f64,
    pub final_dist_from_init: f64,
    pub total_bits: u64,
}

/// Cross-seed aggregation of group-averaged finals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupFinal>,
    pub final_train_loss: MeanStderr,
    pub final_val_acc: MeanStderr,
    pub final_dist_from_init: MeanStderr,
    pub total_bits: MeanStderr,
    pub seeds: Vec<u64>,
}

/// Summarizes a metrics table (any number of seeds, in any order).
pub fn summarize(rows: &[MetricsRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::contract("cannot summarize an empty metrics table"));
    }
    let mut seeds: Vec<u64> = Vec::new();
    for r in rows {
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    let mut groups = Vec::new();
    let mut per_seed = vec![[0.0f64; 4]; seeds.len()];
    for (si, &seed) in seeds.iter().enumerate() {
        let mut ids: Vec<usize> = rows.iter().filter(|r| r.seed == seed).map(|r| r.group).collect();
        ids.sort_unstable();
        ids.dedup();
        for &g in &ids {
            let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.seed == seed && r.group == g).collect();
            let last = mine.iter().max_by_key(|r| r.iteration).expect("non-empty");
            let acc = mine
                .iter()
                .filter(|r| r.val_acc.is_some())
                .max_by_key(|r| r.iteration)
                .and_then(|r| r.val_acc)
                .unwrap_or(f64::NAN);
            let gf = GroupFinal {
                seed,
                group: g,
                final_train_loss: last.loss.scalar,
                final_val_acc: acc,
                final_dist_from_init: last.dist_from_init,
                total_bits: last.bits_cum,
            };
            let acc_row = &mut per_seed[si];
            acc_row[0] += gf.final_train_loss;
            acc_row[1] += gf.final_val_acc;
            acc_row[2] += gf.final_dist_from_init;
            acc_row[3] += gf.total_bits as f64;
            groups.push(gf);
        }
        per_seed[si].iter_mut().for_each(|v| *v /= ids.len() as f64);
    }
    let col = |i: usize| stats::mean_stderr(&per_seed.iter().map(|r| r[i]).collect::<Vec<_>>());
    Ok(Summary {
        groups,
        final_train_loss: col(0),
        final_val_acc: col(1),
        final_dist_from_init: col(2),
        total_bits: col(3),
        seeds,
    })
}

/// Mean final validation accuracy over the groups of one run.
pub fn mean_final_accuracy(result: &RunResult) -> f64 {
    let n = result.specs.len();
    let mut acc = 0.0;
    for g in 0..n {
        acc += result
            .rows
            .iter()
            .rev()
            .find(|r| r.group == g && r.val_acc.is_some())
            .and_then(|r| r.val_acc)
            .unwrap_or(f64::NAN);
    }
    acc / n as f64
}

/// Mean distance `‖θ_final − θ^1‖` over the groups of one run.
pub fn mean_final_distance(result: &RunResult) -> f64 {
    let n = result.final_params.len();
    let mut acc = 0.0;
    for (p, q) in result.final_params.iter().zip(&result.init_params) {
        acc += p.distance(q);
    }
    acc / n as f64
}

/// Settings for the split-family suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiviewSuiteConfig {
    /// Dataset, schedules, optimizer and strategy template. `models` must
    /// hold the single unsplit spec; `strategy.n_groups` is set per `n`.
    pub base: ExperimentConfig,
    pub arms: Vec<SplitArm>,
    pub n_list: Vec<usize>,
    /// Supervised schedule used to train the unsplit model.
    pub pretrain: ScheduleSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub arm: SplitArm,
    pub n: usize,
    pub mean_acc: f64,
    pub stderr: f64,
    pub seeds: usize,
    /// Per-seed mean final accuracy, in seed order.
    pub per_seed: Vec<f64>,
}

impl MultiviewSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base.models.len() != 1 {
            return Err(Error::config("base.models", "the suite takes exactly one unsplit spec"));
        }
        if self.arms.is_empty() {
            return Err(Error::config("arms", "at least one arm is required"));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::config("n_list", "entries must be positive and non-empty"));
        }
        self.pretrain.validate().map_err(|e| prefix_key(e, "pretrain"))?;
        let max_n = *self.n_list.iter().max().expect("non-empty");
        let width = self.base.models[0].hidden_widths.first().copied().unwrap_or(0);
        if width == 0 || width % max_n != 0 {
            return Err(Error::config(
                "n_list",
                format!("first hidden width {width} is not divisible by {max_n}"),
            ));
        }
        let mut probe = self.point_config(max_n.max(2));
        probe.strategy.n_groups = max_n.max(2);
        probe.validate()
    }

    fn point_config(&self, n: usize) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        if n == 1 {
            cfg.strategy.kind = SyncKind::AllReduce;
            cfg.data.sampling = None;
        } else if cfg.strategy.kind == SyncKind::AllReduce {
            cfg.strategy.kind = SyncKind::CodistillPredictions;
        }
        cfg.strategy.n_groups = n;
        cfg.strategy.devices_per_group = 1;
        cfg.fixed_compute = false;
        cfg.data.view_assignment = ViewAssignment::None;
        cfg
    }
}

/// Trains one unsplit model per seed, builds split families for each arm,
/// and reports mean ± stderr of the final accuracy averaged across models.
///
/// Every `n` trains for the same number of steps. For `n = 1`, each of the
/// first `max(n_list)` split members is trained alone and their accuracies
/// are averaged; for `n > 1`, members `0..n` codistill.
pub fn run_multiview_suite(cfg: &MultiviewSuiteConfig) -> Result<Vec<SuiteRow>> {
    cfg.validate()?;
    let (train, val, mult) = prepare_data(&cfg.base)?;
    let max_n = *cfg.n_list.iter().max().expect("validated");
    let unsplit = cfg.base.models[0].clone();

    let per_seed: Vec<Vec<f64>> = cfg
        .base
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut pre_cfg = cfg.point_config(1);
            pre_cfg.schedules = cfg.pretrain.clone();
            pre_cfg.iterations = None;
            pre_cfg.models = vec![unsplit.clone()];
            let setup = RunSetup::from_config(&pre_cfg, seed)?;
            let pre = run_seed(&pre_cfg, seed, setup, &train, &val, mult, &RunOptions::default())?;
            let pretrained = &pre.final_params[0];

            let mut out = Vec::with_capacity(cfg.arms.len() * cfg.n_list.len());
            for &arm in &cfg.arms {
                let family = model::make_split_family(pretrained, &unsplit, max_n, arm, seed)?;
                for &n in &cfg.n_list {
                    let point = cfg.point_config(n);
                    let acc = if n == 1 {
                        let mut total = 0.0;
                        for (spec, params) in &family {
                            let setup = RunSetup {
                                specs: vec![spec.clone()],
                                init: vec![params.clone()],
                            };
                            let r = run_seed(&point, seed, setup, &train, &val, mult, &RunOptions::default())?;
                            total += mean_final_accuracy(&r);
                        }
                        total / family.len() as f64
                    } else {
                        let setup = RunSetup {
                            specs: family[..n].iter().map(|(s, _)| s.clone()).collect(),
                            init: family[..n].iter().map(|(_, p)| p.clone()).collect(),
                        };
                        let r = run_seed(&point, seed, setup, &train, &val, mult, &RunOptions::default())?;
                        mean_final_accuracy(&r)
                    };
                    out.push(acc);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut idx = 0;
    for &arm in &cfg.arms {
        for &n in &cfg.n_list {
            let vals: Vec<f64> = per_seed.iter().map(|s| s[idx]).collect();
            let ms = stats::mean_stderr(&vals);
            rows.push(SuiteRow {
                arm,
                n,
                mean_acc: ms.mean,
                stderr: ms.stderr,
                seeds: vals.len(),
                per_seed: vals,
            });
            idx += 1;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(kind: SyncKind, n: usize) -> ExperimentConfig {
        let dataset = MultiViewSpec {
            n_views: 2,
            dims_per_view: 3,
            num_classes: 3,
            separation: vec![2.0, 2.0],
            noise: 1.0,
            train_size: 64,
            val_size: 32,
            seed: 7,
        };
        ExperimentConfig {
            strategy: SyncStrategy {
                kind,
                n_groups: n,
                devices_per_group: 1,
                per_device_batch: 8,
                exchange_period: 1,
                checkpoint_delay: 0,
                b_model_bits: None,
                b_prediction_bits: None,
                count_intra_group: false,
            },
            schedules: ScheduleSet::constant(0.1, 2),
            models: vec![ModelSpec::mlp(6, vec![5], 3)],
            dataset,
            data: DataOptions::default(),
            iterations: None,
            optimizer: OptimizerConfig::default(),
            distill_loss: DistillKind::Mse,
            seeds: vec![0, 1],
            fixed_compute: false,
            identical_init: false,
            eval_every: None,
            reduction_block: None,
            group_index_offset: 0,
        }
    }

    fn row(seed: u64, iteration: u64, group: usize, loss: f64, acc: Option<f64>, bits: u64) -> MetricsRow {
        MetricsRow {
            seed,
            iteration,
            epoch: 0,
            group,
            loss: LossValue {
                scalar: loss,
                supervised: loss,
                distill: 0.0,
                l2: 0.0,
            },
            val_acc: acc,
            dist_from_init: 0.0,
            lr: 0.1,
            wd: 0.0,
            alpha: 1.0,
            epsilon: 0.0,
            bits_iter: 0,
            bits_cum: bits,
        }
    }

    #[test]
    fn row_count_and_basic_invariants() {
        let cfg = small_cfg(SyncKind::CodistillPredictions, 2);
        let runs = run_experiment(&cfg).unwrap();
        assert_eq!(runs.len(), 2);
        for r in &runs {
            // 2 epochs × 64/8 iterations × 2 groups
            assert_eq!(r.rows.len(), 32);
            for g in 0..2 {
                let mine: Vec<_> = r.rows.iter().filter(|x| x.group == g).collect();
                assert_eq!(mine[0].dist_from_init, 0.0);
                assert!(mine.windows(2).all(|w| w[0].bits_cum <= w[1].bits_cum));
                assert!(mine.iter().all(|x| x.dist_from_init >= 0.0));
                assert!(mine.last().unwrap().val_acc.is_some());
            }
        }
    }

    #[test]
    fn identical_config_is_bit_reproducible() {
        let cfg = small_cfg(SyncKind::CodistillCheckpoints, 2);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.rows.len(), y.rows.len());
            for (r, s) in x.rows.iter().zip(&y.rows) {
                assert_eq!(r.loss.scalar.to_bits(), s.loss.scalar.to_bits());
            }
            for (p, q) in x.final_params.iter().zip(&y.final_params) {
                assert!(p.bit_eq(q));
            }
        }
    }

    #[test]
    fn independent_sampling_with_predictions_fails_early() {
        let mut cfg = small_cfg(SyncKind::CodistillPredictions, 2);
        cfg.data.sampling = Some(SamplingMode::Independent);
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "data.sampling"));
    }

    #[test]
    fn wrong_number_of_model_specs_is_config_error() {
        let mut cfg = small_cfg(SyncKind::CodistillPredictions, 3);
        cfg.models = vec![ModelSpec::mlp(6, vec![5], 3), ModelSpec::mlp(6, vec![4], 3)];
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn heterogeneous_groups_exchange_logits() {
        let mut cfg = small_cfg(SyncKind::CodistillPredictions, 2);
        cfg.models = vec![ModelSpec::mlp(6, vec![5], 3), ModelSpec::mlp(6, vec![7, 4], 3)];
        let runs = run_experiment(&cfg).unwrap();
        assert!(runs[0].rows.iter().any(|r| r.loss.distill > 0.0));
        assert_eq!(runs[0].final_params[1].len(), 6);
    }

    #[test]
    fn frozen_prefix_never_moves() {
        let mut cfg = small_cfg(SyncKind::CodistillPredictions, 2);
        let mut spec = ModelSpec::mlp(6, vec![5, 4], 3);
        spec.frozen_prefix = 1;
        cfg.models = vec![spec];
        cfg.seeds = vec![3];
        let setup = RunSetup::from_config(&cfg, 3).unwrap();
        let (train, val, mult) = prepare_data(&cfg).unwrap();
        let opts = RunOptions {
            trace: false,
            keep_history: true,
        };
        let r = run_seed(&cfg, 3, setup, &train, &val, mult, &opts).unwrap();
        for h in &r.history {
            let w0 = h[0].get("layer0.weight").unwrap();
            let b0 = h[0].get("layer0.bias").unwrap();
            for p in h {
                assert!(p.get("layer0.weight").unwrap().bit_eq(w0));
                assert!(p.get("layer0.bias").unwrap().bit_eq(b0));
            }
            assert!(!h.last().unwrap().get("layer1.weight").unwrap().bit_eq(h[0].get("layer1.weight").unwrap()));
        }
    }

    #[test]
    fn fixed_compute_divides_budget() {
        let mut cfg = small_cfg(SyncKind::CodistillPredictions, 4);
        cfg.fixed_compute = true;
        let len = run_length(&cfg, &cfg.schedules, 64);
        assert_eq!(len.iterations, 4);
        assert_eq!(len.schedule_ipe, 2.0);
    }

    #[test]
    fn summary_of_hand_built_rows() {
        // per-seed finals 1, 2, 3 → mean 2, stderr 1/√3
        let rows = vec![
            row(0, 1, 0, 9.0, None, 4),
            row(0, 2, 0, 1.0, Some(0.5), 8),
            row(1, 2, 0, 2.0, Some(0.6), 8),
            row(2, 2, 0, 3.0, Some(0.7), 8),
        ];
        let s = summarize(&rows).unwrap();
        assert_eq!(s.final_train_loss.mean, 2.0);
        assert!((s.final_train_loss.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.total_bits.mean, 8.0);
        assert_eq!(s.total_bits.stderr, 0.0);
        assert_eq!(s.seeds, vec![0, 1, 2]);
    }

    #[test]
    fn single_seed_summary_flags_stderr() {
        let s = summarize(&[row(5, 1, 0, 1.0, Some(1.0), 0)]).unwrap();
        assert_eq!(s.final_val_acc.stderr, 0.0);
        assert!(!s.final_val_acc.stderr_defined);
        assert!(summarize(&[]).is_err());
    }
}
