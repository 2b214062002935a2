//! Deterministic simulator for codistillation experiments.
//!
//! Small MLPs are trained with a tape-based autodiff engine under one of
//! three synchronization strategies (all-reduce, prediction exchange,
//! stale-checkpoint exchange), with exact communication accounting.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod schedules;
pub mod seeding;
pub mod stats;
pub mod sync;
pub mod tensor;

pub use autodiff::{GradMap, Tape, Var};
pub use data::{Dataset, MultiViewSpec, SamplingMode, Split};
pub use error::{Error, Result};
pub use harness::{
    run_experiment, run_multiview_suite, summarize, ExperimentConfig, MetricsRow, MultiviewSuiteConfig, RunResult,
    Summary, SuiteRow,
};
pub use losses::{DistillKind, LossValue, ObjectiveWeights};
pub use model::{ModelSpec, Parameters, SplitArm};
pub use schedules::{AlphaSchedule, LrSchedule, ScheduleSet, SmoothingSchedule, WeightDecaySchedule};
pub use stats::MeanStderr;
pub use sync::{CommLedger, SyncKind, SyncStrategy};
pub use tensor::Tensor;
