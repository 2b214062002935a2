//! Synchronization schemes and per-device communication accounting.
//!
//! - `all_reduce`: one model, gradients averaged across devices every
//!   iteration; each device moves `2·b_model` bits.
//! - `codistill_predictions`: every `T` iterations each group sends its
//!   logits on the shared minibatch to the `n-1` others; on other iterations
//!   the distillation term is dropped.
//! - `codistill_checkpoints`: every `T` iterations each group sends its
//!   parameters to the `n-1` others; peers' logits are recomputed locally from
//!   the latest received (stale) copy on every iteration.
//!
//! Exchanges happen on iterations `k` with `k mod T == 0` (`k` starts at 1).
//! A checkpoint published after the update of iteration `e` is swapped in at
//! iteration `e + 1 + d`. Only inter-group traffic is charged unless
//! `count_intra_group` is set.

use std::collections::VecDeque;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::autodiff::GradMap;
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, Parameters};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncKind {
    AllReduce,
    #[default]
    CodistillPredictions,
    CodistillCheckpoints,
}

impl SyncKind {
    pub fn is_codistillation(self) -> bool {
        !matches!(self, SyncKind::AllReduce)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncStrategy {
    pub kind: SyncKind,
    pub n_groups: usize,
    #[serde(default = "one")]
    pub devices_per_group: usize,
    pub per_device_batch: usize,
    #[serde(default = "one_u64")]
    pub exchange_period: u64,
    #[serde(default)]
    pub checkpoint_delay: u64,
    /// Overrides the serialized model size when set.
    #[serde(default)]
    pub b_model_bits: Option<u64>,
    /// Overrides `num_classes × 64` bits per sample when set.
    #[serde(default)]
    pub b_prediction_bits: Option<u64>,
    /// Also charge the intra-group all_reduce of codistillation groups.
    #[serde(default)]
    pub count_intra_group: bool,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

impl SyncStrategy {
    pub fn group_batch(&self) -> usize {
        self.per_device_batch * self.devices_per_group
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 {
            return Err(Error::config("strategy.n_groups", "must be at least 1"));
        }
        match self.kind {
            SyncKind::AllReduce if self.n_groups != 1 => {
                return Err(Error::config("strategy.n_groups", "all_reduce trains a single group"));
            }
            k if k.is_codistillation() && self.n_groups < 2 => {
                return Err(Error::config("strategy.n_groups", "codistillation needs at least 2 groups"));
            }
            _ => {}
        }
        if self.devices_per_group == 0 {
            return Err(Error::config("strategy.devices_per_group", "must be at least 1"));
        }
        if self.per_device_batch == 0 {
            return Err(Error::config("strategy.per_device_batch", "must be at least 1"));
        }
        if self.exchange_period == 0 {
            return Err(Error::config("strategy.exchange_period", "must be at least 1"));
        }
        if self.b_model_bits == Some(0) {
            return Err(Error::config("strategy.b_model_bits", "must be positive"));
        }
        Ok(())
    }

    pub fn is_exchange_iteration(&self, k: u64) -> bool {
        k % self.exchange_period == 0
    }

    pub fn model_bits(&self, spec: &ModelSpec) -> u64 {
        self.b_model_bits.unwrap_or_else(|| model::model_bits(spec))
    }

    pub fn prediction_bits_per_sample(&self, spec: &ModelSpec) -> u64 {
        self.b_prediction_bits.unwrap_or(spec.num_classes as u64 * 64)
    }
}

/// Exact element-wise mean of per-device gradients, summed left to right
/// over device index.
pub fn all_reduce_grads(grads: &[GradMap]) -> Result<GradMap> {
    let (first, rest) = grads
        .split_first()
        .ok_or_else(|| Error::contract("all_reduce over zero devices"))?;
    let mut acc = first.clone();
    for g in rest {
        if g.len() != acc.len() {
            return Err(Error::contract("devices disagree on gradient keys"));
        }
        for (name, t) in acc.iter_mut() {
            let other = g
                .get(name)
                .ok_or_else(|| Error::contract(format!("device is missing gradient `{name}`")))?;
            if other.shape() != t.shape() {
                return Err(Error::contract(format!(
                    "gradient `{name}` has shape {:?} on one device and {:?} on another",
                    t.shape(),
                    other.shape()
                )));
            }
            t.add_assign(other)?;
        }
    }
    if grads.len() > 1 {
        let m = grads.len() as f64;
        for t in acc.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v /= m);
        }
    }
    Ok(acc)
}

/// `C_AR = 2·b_model` bits per device per iteration.
pub fn allreduce_bits(b_model: u64) -> u64 {
    2 * b_model
}

/// `(n-1)·b_model / T` average bits per device per iteration.
pub fn checkpoint_bits(n: u64, period: u64, b_model: u64) -> Result<Ratio<u128>> {
    if n < 2 || period == 0 {
        return Err(Error::contract("checkpoint_bits needs n ≥ 2 and T ≥ 1"));
    }
    Ok(Ratio::new((n as u128 - 1) * b_model as u128, period as u128))
}

/// `(n-1)·b_predictions·B / T` average bits per device per iteration.
pub fn prediction_bits(n: u64, period: u64, b_predictions: u64, group_batch: u64) -> Result<Ratio<u128>> {
    if n < 2 || period == 0 {
        return Err(Error::contract("prediction_bits needs n ≥ 2 and T ≥ 1"));
    }
    Ok(Ratio::new(
        (n as u128 - 1) * b_predictions as u128 * group_batch as u128,
        period as u128,
    ))
}

pub fn ratio_to_f64(r: Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Per-device bit counter of one group.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub b_model: u64,
    pub b_predictions: u64,
    pub bits_this_iteration: u64,
    pub cumulative: u64,
}

impl CommLedger {
    pub fn new(b_model: u64, b_predictions: u64) -> Self {
        Self {
            b_model,
            b_predictions,
            ..Self::default()
        }
    }

    pub fn charge(&mut self, bits: u64) {
        self.bits_this_iteration += bits;
        self.cumulative += bits;
    }

    /// Returns `(bits this iteration, cumulative)` and resets the former.
    pub fn close_iteration(&mut self) -> (u64, u64) {
        let out = (self.bits_this_iteration, self.cumulative);
        self.bits_this_iteration = 0;
        out
    }
}

/// A received parameter copy and the number of updates it reflects.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub params: Parameters,
    pub taken_at: u64,
}

/// Latest visible checkpoint of every group plus those still in flight.
#[derive(Clone, Debug)]
pub struct StaleCheckpointStore {
    current: Vec<Snapshot>,
    in_flight: Vec<VecDeque<(u64, Snapshot)>>,
    delay: u64,
}

impl StaleCheckpointStore {
    /// Every group starts from a copy of its peers' initial parameters.
    pub fn new(initial: &[Parameters], delay: u64) -> Self {
        Self {
            current: initial
                .iter()
                .map(|p| Snapshot {
                    params: p.clone(),
                    taken_at: 0,
                })
                .collect(),
            in_flight: vec![VecDeque::new(); initial.len()],
            delay,
        }
    }

    /// Sends group `group`'s parameters after the update of iteration `k`.
    /// The copy goes through the binary encoding, as it would on the wire.
    pub fn publish(&mut self, k: u64, group: usize, params: &Parameters) -> Result<()> {
        let received = Parameters::from_bytes(&params.to_bytes())?;
        self.in_flight[group].push_back((
            k + 1 + self.delay,
            Snapshot {
                params: received,
                taken_at: k,
            },
        ));
        Ok(())
    }

    /// Swaps in every copy that has arrived by the start of iteration `k`.
    pub fn advance_to(&mut self, k: u64) {
        for (cur, queue) in self.current.iter_mut().zip(&mut self.in_flight) {
            while queue.front().is_some_and(|(at, _)| *at <= k) {
                *cur = queue.pop_front().expect("checked").1;
            }
        }
    }

    pub fn peer(&self, group: usize) -> &Snapshot {
        &self.current[group]
    }
}

/// Distillation targets handed to one group.
#[derive(Clone, Debug)]
pub struct PeerLogits {
    pub logits: Tensor,
    pub source_group: usize,
    /// Updates reflected by the parameters that produced these logits.
    pub source_iteration: u64,
}

/// Runs the exchange side of one strategy: produces peer logits and keeps
/// one ledger per group.
#[derive(Clone, Debug)]
pub struct PeerExchange {
    strategy: SyncStrategy,
    specs: Vec<ModelSpec>,
    store: Option<StaleCheckpointStore>,
    ledgers: Vec<CommLedger>,
}

impl PeerExchange {
    pub fn new(strategy: &SyncStrategy, specs: &[ModelSpec], initial: &[Parameters]) -> Result<Self> {
        strategy.validate()?;
        if specs.len() != strategy.n_groups || initial.len() != strategy.n_groups {
            return Err(Error::config(
                "models",
                format!("{} groups but {} model specs", strategy.n_groups, specs.len()),
            ));
        }
        if strategy.kind.is_codistillation() {
            let c = specs[0].num_classes;
            if let Some(s) = specs.iter().find(|s| s.num_classes != c) {
                return Err(Error::config(
                    "models.num_classes",
                    format!("codistilled models must agree on classes ({c} vs {})", s.num_classes),
                ));
            }
        }
        let store = (strategy.kind == SyncKind::CodistillCheckpoints)
            .then(|| StaleCheckpointStore::new(initial, strategy.checkpoint_delay));
        let ledgers = specs
            .iter()
            .map(|s| CommLedger::new(strategy.model_bits(s), strategy.prediction_bits_per_sample(s)))
            .collect();
        Ok(Self {
            strategy: strategy.clone(),
            specs: specs.to_vec(),
            store,
            ledgers,
        })
    }

    pub fn store(&self) -> Option<&StaleCheckpointStore> {
        self.store.as_ref()
    }

    pub fn ledger(&self, group: usize) -> &CommLedger {
        &self.ledgers[group]
    }

    /// Peer logits for every group at iteration `k`.
    ///
    /// `inputs[i]` is group `i`'s minibatch, `indices[i]` its sample indices
    /// and `own_logits[i]` the logits group `i` computed on it.
    pub fn gather(
        &mut self,
        k: u64,
        inputs: &[Tensor],
        indices: &[Vec<usize>],
        own_logits: &[Tensor],
    ) -> Result<Vec<Vec<PeerLogits>>> {
        let n = self.strategy.n_groups;
        let intra = self.strategy.count_intra_group && self.strategy.devices_per_group > 1;
        match self.strategy.kind {
            SyncKind::AllReduce => {
                for l in &mut self.ledgers {
                    l.charge(allreduce_bits(l.b_model));
                }
                Ok(vec![Vec::new(); n])
            }
            SyncKind::CodistillPredictions => {
                if intra {
                    self.ledgers.iter_mut().for_each(|l| l.charge(allreduce_bits(l.b_model)));
                }
                if !self.strategy.is_exchange_iteration(k) {
                    return Ok(vec![Vec::new(); n]);
                }
                if let Some(g) = (1..n).find(|&g| indices[g] != indices[0]) {
                    return Err(Error::CoordinatedSampling { iteration: k, group: g });
                }
                let batch = self.strategy.group_batch() as u64;
                for l in &mut self.ledgers {
                    l.charge((n as u64 - 1) * l.b_predictions * batch);
                }
                Ok((0..n)
                    .map(|i| {
                        (0..n)
                            .filter(|&j| j != i)
                            .map(|j| PeerLogits {
                                logits: own_logits[j].clone(),
                                source_group: j,
                                source_iteration: k - 1,
                            })
                            .collect()
                    })
                    .collect())
            }
            SyncKind::CodistillCheckpoints => {
                if intra {
                    self.ledgers.iter_mut().for_each(|l| l.charge(allreduce_bits(l.b_model)));
                }
                let store = self.store.as_mut().expect("checkpoint kind owns a store");
                store.advance_to(k);
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mut peers = Vec::with_capacity(n - 1);
                    for j in (0..n).filter(|&j| j != i) {
                        let snap = store.peer(j);
                        peers.push(PeerLogits {
                            logits: model::forward(&self.specs[j], &snap.params, &inputs[i])?,
                            source_group: j,
                            source_iteration: snap.taken_at,
                        });
                    }
                    out.push(peers);
                }
                Ok(out)
            }
        }
    }

    /// Called once every group has applied the update of iteration `k`.
    pub fn after_update(&mut self, k: u64, params: &[Parameters]) -> Result<()> {
        if self.strategy.kind != SyncKind::CodistillCheckpoints || !self.strategy.is_exchange_iteration(k) {
            return Ok(());
        }
        let n = self.strategy.n_groups as u64;
        let store = self.store.as_mut().expect("checkpoint kind owns a store");
        for (g, p) in params.iter().enumerate() {
            store.publish(k, g, p)?;
        }
        for l in &mut self.ledgers {
            l.charge((n - 1) * l.b_model);
        }
        Ok(())
    }

    /// `(bits this iteration, cumulative)` per group; resets the iteration counters.
    pub fn close_iteration(&mut self) -> Vec<(u64, u64)> {
        self.ledgers.iter_mut().map(CommLedger::close_iteration).collect()
    }
}
