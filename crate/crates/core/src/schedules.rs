//! Time-varying hyper-parameters: learning rate, weight decay, distillation
//! weight and label smoothing.
//!
//! Schedules are written in epochs. The harness evaluates them per iteration
//! by passing `iterations_per_epoch`; iteration `k` (1-based) belongs to
//! epoch `⌊(k-1)/ipe⌋` and has completed `k/ipe` epochs once its update is
//! applied. Weight decay and smoothing change at the learning-rate
//! milestones, whichever LR kind is in use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrKind {
    #[default]
    Step,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    #[serde(default)]
    pub kind: LrKind,
    /// Peak learning rate η₀.
    pub base: f64,
    /// Epochs at which the step kind decays (also the weight-decay and
    /// smoothing segment boundaries).
    #[serde(default)]
    pub milestones: Vec<u64>,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default)]
    pub warmup_epochs: f64,
    pub total_epochs: u64,
}

fn default_factor() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDecaySchedule {
    /// One value per milestone segment; the last value persists.
    pub values: Vec<f64>,
}

impl Default for WeightDecaySchedule {
    fn default() -> Self {
        Self {
            values: vec![5e-4, 1e-5, 0.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    #[default]
    Constant,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    #[serde(default)]
    pub kind: AlphaKind,
    #[serde(default = "one")]
    pub initial: f64,
    /// Per-epoch growth factor of the geometric kind.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn one() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    1.1
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self {
            kind: AlphaKind::Constant,
            initial: 1.0,
            gamma: default_gamma(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSchedule {
    #[serde(default)]
    pub initial: f64,
    /// Index into the LR milestones after which smoothing is switched off.
    #[serde(default)]
    pub zero_after_milestone: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSet {
    pub lr: LrSchedule,
    #[serde(default)]
    pub wd: WeightDecaySchedule,
    #[serde(default)]
    pub alpha: AlphaSchedule,
    #[serde(default)]
    pub smoothing: SmoothingSchedule,
}

impl ScheduleSet {
    /// Constant learning rate, no decay, α ≡ 1, no smoothing.
    pub fn constant(lr: f64, total_epochs: u64) -> Self {
        Self {
            lr: LrSchedule {
                kind: LrKind::Step,
                base: lr,
                milestones: Vec::new(),
                factor: 0.1,
                warmup_epochs: 0.0,
                total_epochs,
            },
            wd: WeightDecaySchedule { values: vec![0.0] },
            alpha: AlphaSchedule::default(),
            smoothing: SmoothingSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        if !(lr.base > 0.0 && lr.base.is_finite()) {
            return Err(Error::config("schedules.lr.base", "must be positive"));
        }
        if lr.total_epochs == 0 {
            return Err(Error::config("schedules.lr.total_epochs", "must be positive"));
        }
        if !(lr.factor > 0.0 && lr.factor <= 1.0) {
            return Err(Error::config("schedules.lr.factor", "must lie in (0, 1]"));
        }
        if !(lr.warmup_epochs >= 0.0 && lr.warmup_epochs <= lr.total_epochs as f64) {
            return Err(Error::config(
                "schedules.lr.warmup_epochs",
                "must lie in [0, total_epochs]",
            ));
        }
        if lr.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("schedules.lr.milestones", "must be strictly increasing"));
        }
        if lr.milestones.last().is_some_and(|&m| m >= lr.total_epochs) {
            return Err(Error::config("schedules.lr.milestones", "must be below total_epochs"));
        }
        if self.wd.values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::config("schedules.wd.values", "must be non-negative"));
        }
        if !(self.alpha.initial >= 0.0 && self.alpha.initial.is_finite()) {
            return Err(Error::config("schedules.alpha.initial", "must be non-negative"));
        }
        if !(self.alpha.gamma >= 1.0 && self.alpha.gamma.is_finite()) {
            return Err(Error::config("schedules.alpha.gamma", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.smoothing.initial) {
            return Err(Error::config("schedules.smoothing.initial", "must lie in [0, 1)"));
        }
        if let Some(i) = self.smoothing.zero_after_milestone {
            if i >= lr.milestones.len() {
                return Err(Error::config(
                    "schedules.smoothing.zero_after_milestone",
                    format!("index {i} but only {} milestones", lr.milestones.len()),
                ));
            }
        }
        Ok(())
    }

    /// Learning rate for iteration `k`.
    pub fn lr_at(&self, k: u64, ipe: f64) -> f64 {
        let lr = &self.lr;
        let warm_iters = lr.warmup_epochs * ipe;
        if lr.warmup_epochs > 0.0 && (k as f64) < warm_iters {
            return lr.base * (k as f64 / warm_iters);
        }
        match lr.kind {
            LrKind::Step => {
                let passed = self.milestones_passed(k, ipe);
                let mut v = lr.base;
                for _ in 0..passed {
                    v *= lr.factor;
                }
                v
            }
            LrKind::Cosine => {
                let total = lr.total_epochs as f64 * ipe;
                let span = total - warm_iters;
                let progress = if span > 0.0 {
                    ((k as f64 - warm_iters) / span).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                lr.base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    /// Weight decay λ for iteration `k`.
    pub fn wd_at(&self, k: u64, ipe: f64) -> f64 {
        let seg = self.milestones_passed(k, ipe);
        match self.wd.values.as_slice() {
            [] => 0.0,
            vals => vals[seg.min(vals.len() - 1)],
        }
    }

    /// Distillation weight α for epoch `epoch` (0-based).
    pub fn alpha_at(&self, epoch: u64) -> f64 {
        match self.alpha.kind {
            AlphaKind::Constant => self.alpha.initial,
            AlphaKind::Geometric => {
                let mut v = self.alpha.initial;
                for _ in 0..epoch {
                    v *= self.alpha.gamma;
                }
                v
            }
        }
    }

    /// Label smoothing ε for iteration `k`.
    pub fn smoothing_at(&self, k: u64, ipe: f64) -> f64 {
        match self.smoothing.zero_after_milestone {
            Some(i) if self.epoch_of(k, ipe) >= self.lr.milestones[i] => 0.0,
            _ => self.smoothing.initial,
        }
    }

    /// 0-based epoch that iteration `k` falls in.
    pub fn epoch_of(&self, k: u64, ipe: f64) -> u64 {
        (k.saturating_sub(1) as f64 / ipe).floor() as u64
    }

    fn milestones_passed(&self, k: u64, ipe: f64) -> usize {
        let e = self.epoch_of(k, ipe);
        self.lr.milestones.iter().filter(|&&m| e >= m).count()
    }

    /// Total iterations of the schedule at a given epoch length.
    pub fn total_iterations(&self, ipe: f64) -> u64 {
        (self.lr.total_epochs as f64 * ipe).floor() as u64
    }

    /// Linear scaling rule: multiply the peak rate by `ratio`. The epoch
    /// structure is unchanged; the iteration count shrinks through the
    /// epoch length (see [`scaled_iterations_per_epoch`]).
    pub fn scale_for_batch(&self, ratio: f64) -> Result<ScheduleSet> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::config("batch_ratio", "must be positive"));
        }
        let mut out = self.clone();
        out.lr.base *= ratio;
        Ok(out)
    }

    /// Multiplies every epoch-denominated field by `k` (the data-fraction
    /// protocol trains `k` times as many epochs on `1/k` of the data).
    pub fn stretch_epochs(&self, k: u64) -> ScheduleSet {
        let mut out = self.clone();
        out.lr.total_epochs *= k;
        out.lr.warmup_epochs *= k as f64;
        out.lr.milestones.iter_mut().for_each(|m| *m *= k);
        out
    }
}

/// Iterations per epoch after growing the batch by `ratio`, rounded down.
pub fn scaled_iterations_per_epoch(ipe: u64, ratio: f64) -> u64 {
    (ipe as f64 / ratio).floor() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recipe() -> ScheduleSet {
        ScheduleSet {
            lr: LrSchedule {
                kind: LrKind::Step,
                base: 0.1,
                milestones: vec![18, 38, 44],
                factor: 0.1,
                warmup_epochs: 0.0,
                total_epochs: 50,
            },
            wd: WeightDecaySchedule::default(),
            alpha: AlphaSchedule::default(),
            smoothing: SmoothingSchedule::default(),
        }
    }

    /// First iteration of 0-based epoch `e`.
    fn first_iter(e: u64, ipe: u64) -> u64 {
        e * ipe + 1
    }

    #[test]
    fn step_decay_at_epoch_twenty() {
        let s = recipe();
        assert_eq!(s.lr_at(first_iter(20, 10), 10.0), 0.1 * 0.1);
        assert_eq!(s.lr_at(first_iter(17, 10), 10.0), 0.1);
        assert_eq!(s.lr_at(first_iter(18, 10), 10.0), 0.1 * 0.1);
    }

    #[test]
    fn weight_decay_segments() {
        let s = recipe();
        assert_eq!(s.wd_at(first_iter(0, 10), 10.0), 5e-4);
        assert_eq!(s.wd_at(first_iter(20, 10), 10.0), 1e-5);
        assert_eq!(s.wd_at(first_iter(40, 10), 10.0), 0.0);
        assert_eq!(s.wd_at(first_iter(49, 10), 10.0), 0.0);
    }

    #[test]
    fn cosine_ends_at_zero() {
        let mut s = recipe();
        s.lr.kind = LrKind::Cosine;
        let last = s.total_iterations(10.0);
        assert!(s.lr_at(last, 10.0).abs() < 1e-12);
        assert_eq!(s.lr_at(0, 10.0), 0.1);
    }

    #[test]
    fn warmup_ramp() {
        let mut s = recipe();
        s.lr.warmup_epochs = 5.0;
        let ipe = 8.0;
        assert_eq!(s.lr_at(40, ipe), 0.1);
        assert_eq!(s.lr_at(20, ipe), 0.05);
        assert!(s.lr_at(1, ipe) > 0.0 && s.lr_at(1, ipe) < s.lr_at(2, ipe));
    }

    #[test]
    fn alpha_kinds() {
        let mut s = recipe();
        assert_eq!(s.alpha_at(0), 1.0);
        assert_eq!(s.alpha_at(37), 1.0);
        s.alpha.kind = AlphaKind::Geometric;
        assert_eq!(s.alpha_at(2), 1.1 * 1.1);
        assert!((s.alpha_at(2) - 1.21).abs() < 1e-15);
        s.alpha.gamma = 1.0;
        assert_eq!(s.alpha_at(9), 1.0);
    }

    #[test]
    fn smoothing_switches_off_after_milestone() {
        let mut s = recipe();
        s.smoothing = SmoothingSchedule {
            initial: 0.1,
            zero_after_milestone: Some(0),
        };
        assert_eq!(s.smoothing_at(first_iter(17, 4), 4.0), 0.1);
        assert_eq!(s.smoothing_at(first_iter(18, 4), 4.0), 0.0);
    }

    #[test]
    fn batch_scaling() {
        let s = recipe();
        let s2 = s.scale_for_batch(2.0).unwrap();
        assert_eq!(s2.lr.base, 0.2);
        let ipe = 100;
        let ipe2 = scaled_iterations_per_epoch(ipe, 2.0);
        assert_eq!(s2.total_iterations(ipe2 as f64) * 2, s.total_iterations(ipe as f64));
        assert_eq!(s.scale_for_batch(1.0).unwrap(), s);
        let twice = s.scale_for_batch(2.0).unwrap().scale_for_batch(2.0).unwrap();
        assert_eq!(twice, s.scale_for_batch(4.0).unwrap());
        assert_eq!(
            scaled_iterations_per_epoch(scaled_iterations_per_epoch(ipe, 2.0), 2.0),
            scaled_iterations_per_epoch(ipe, 4.0)
        );
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut s = recipe();
        s.lr.milestones = vec![18, 18];
        assert!(s.validate().is_err());
        let mut s = recipe();
        s.lr.milestones = vec![60];
        assert!(s.validate().is_err());
        let mut s = recipe();
        s.alpha.gamma = 0.9;
        assert!(s.validate().is_err());
        let mut s = recipe();
        s.smoothing.initial = 1.0;
        assert!(s.validate().is_err());
        recipe().validate().unwrap();
    }

    fn arb_schedule() -> impl Strategy<Value = ScheduleSet> {
        (
            prop_oneof![Just(LrKind::Step), Just(LrKind::Cosine)],
            0.01f64..1.0,
            0u64..4,
            prop::collection::btree_set(1u64..40, 0..4),
            0.05f64..1.0,
        )
            .prop_map(|(kind, base, warm, ms, factor)| ScheduleSet {
                lr: LrSchedule {
                    kind,
                    base,
                    milestones: ms.into_iter().filter(|&m| m > warm).collect(),
                    factor,
                    warmup_epochs: warm as f64,
                    total_epochs: 40,
                },
                wd: WeightDecaySchedule::default(),
                alpha: AlphaSchedule {
                    kind: AlphaKind::Geometric,
                    initial: 1.0,
                    gamma: 1.1,
                },
                smoothing: SmoothingSchedule::default(),
            })
    }

    proptest! {
        #[test]
        fn lr_non_increasing_after_warmup(s in arb_schedule(), ipe in 1u64..12) {
            let ipe_f = ipe as f64;
            let start = (s.lr.warmup_epochs * ipe_f).ceil() as u64;
            let end = s.total_iterations(ipe_f);
            let mut prev = f64::INFINITY;
            for k in start.max(1)..=end {
                let v = s.lr_at(k, ipe_f);
                prop_assert!(v <= prev, "k={k}: {v} > {prev}");
                prev = v;
            }
        }

        #[test]
        fn wd_non_increasing(s in arb_schedule(), ipe in 1u64..12) {
            let ipe_f = ipe as f64;
            let mut prev = f64::INFINITY;
            for k in 1..=s.total_iterations(ipe_f) {
                let v = s.wd_at(k, ipe_f);
                prop_assert!(v <= prev);
                prev = v;
            }
        }

        #[test]
        fn geometric_alpha_strictly_increasing(s in arb_schedule(), e in 0u64..60) {
            prop_assert!(s.alpha_at(e + 1) > s.alpha_at(e));
        }

        #[test]
        fn batch_scaling_preserves_shape(s in arb_schedule(), ipe_half in 1u64..10, k in 1u64..200) {
            let ratio = 2.0;
            let ipe = 2 * ipe_half;
            let scaled = s.scale_for_batch(ratio).unwrap();
            let ipe2 = scaled_iterations_per_epoch(ipe, ratio) as f64;
            let k_orig = k * 2;
            prop_assume!(k_orig <= s.total_iterations(ipe as f64));
            // only compare when both iterations sit in the same epoch
            prop_assume!(s.epoch_of(k_orig, ipe as f64) == scaled.epoch_of(k, ipe2));
            let a = scaled.lr_at(k, ipe2);
            let b = ratio * s.lr_at(k_orig, ipe as f64);
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }
}
