//! Analytic per-device communication costs.

use codistillery_core::sync::{self, SyncKind};
use num_rational::Ratio;
use serde::Serialize;

pub const PREDICTION_SWEEP: [u64; 4] = [1, 5, 10, 100];
pub const CHECKPOINT_SWEEP: [u64; 4] = [625, 1250, 2500, 5000];

#[derive(Clone, Copy, Debug)]
pub struct Point {
    pub n: u64,
    pub period: u64,
    pub b_model: u64,
    pub b_pred: u64,
    pub batch: u64,
}

#[derive(Debug, Serialize)]
pub struct SweepEntry {
    #[serde(rename = "T")]
    pub period: u64,
    pub bits: f64,
    pub exact: String,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub n: u64,
    #[serde(rename = "T")]
    pub period: u64,
    pub b_model: u64,
    pub b_pred: u64,
    pub batch: u64,
    pub all_reduce: Option<f64>,
    pub codistill_predictions: Option<f64>,
    pub codistill_checkpoints: Option<f64>,
    pub ratio_all_reduce_to_predictions: Option<f64>,
    pub ratio_all_reduce_to_checkpoints: Option<f64>,
    pub prediction_sweep: Vec<SweepEntry>,
    pub checkpoint_sweep: Vec<SweepEntry>,
}

fn exact(r: Ratio<u128>) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn compute(p: Point, only: Option<SyncKind>) -> Result<(Report, String), String> {
    let wants = |k: SyncKind| only.is_none_or(|o| o == k);
    let ar = Ratio::from_integer(sync::allreduce_bits(p.b_model) as u128);
    let pred = sync::prediction_bits(p.n, p.period, p.b_pred, p.batch).map_err(|e| e.to_string())?;
    let ckpt = sync::checkpoint_bits(p.n, p.period, p.b_model).map_err(|e| e.to_string())?;
    let f = sync::ratio_to_f64;

    let mut text = String::new();
    text.push_str(&format!(
        "per-device bits per iteration (n={}, T={}, b_model={}, b_pred={}, B={})\n",
        p.n, p.period, p.b_model, p.b_pred, p.batch
    ));
    text.push_str(&format!("{:<24} {:>24} {:>24}\n", "strategy", "bits", "exact"));
    for (kind, v) in [
        (SyncKind::AllReduce, ar),
        (SyncKind::CodistillPredictions, pred),
        (SyncKind::CodistillCheckpoints, ckpt),
    ] {
        if wants(kind) {
            text.push_str(&format!("{:<24} {:>24e} {:>24}\n", kind_name(kind), f(v), exact(v)));
        }
    }
    let sweep = |periods: &[u64], cost: &dyn Fn(u64) -> Result<Ratio<u128>, String>| {
        periods
            .iter()
            .map(|&t| {
                cost(t).map(|r| SweepEntry {
                    period: t,
                    bits: f(r),
                    exact: exact(r),
                })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let prediction_sweep = if wants(SyncKind::CodistillPredictions) {
        sweep(&PREDICTION_SWEEP, &|t| {
            sync::prediction_bits(p.n, t, p.b_pred, p.batch).map_err(|e| e.to_string())
        })?
    } else {
        Vec::new()
    };
    let checkpoint_sweep = if wants(SyncKind::CodistillCheckpoints) {
        sweep(&CHECKPOINT_SWEEP, &|t| {
            sync::checkpoint_bits(p.n, t, p.b_model).map_err(|e| e.to_string())
        })?
    } else {
        Vec::new()
    };
    for (name, entries) in [("codistill_predictions", &prediction_sweep), ("codistill_checkpoints", &checkpoint_sweep)] {
        if entries.is_empty() {
            continue;
        }
        text.push_str(&format!("\n{name} sweep\n{:<8} {:>24} {:>24}\n", "T", "bits", "exact"));
        for e in entries {
            text.push_str(&format!("{:<8} {:>24e} {:>24}\n", e.period, e.bits, e.exact));
        }
    }
    let report = Report {
        n: p.n,
        period: p.period,
        b_model: p.b_model,
        b_pred: p.b_pred,
        batch: p.batch,
        all_reduce: wants(SyncKind::AllReduce).then(|| f(ar)),
        codistill_predictions: wants(SyncKind::CodistillPredictions).then(|| f(pred)),
        codistill_checkpoints: wants(SyncKind::CodistillCheckpoints).then(|| f(ckpt)),
        ratio_all_reduce_to_predictions: only.is_none().then(|| f(ar / pred)),
        ratio_all_reduce_to_checkpoints: only.is_none().then(|| f(ar / ckpt)),
        prediction_sweep,
        checkpoint_sweep,
    };
    if let Some(r) = report.ratio_all_reduce_to_predictions {
        text.push_str(&format!("\nall_reduce / codistill_predictions = {r}\n"));
    }
    Ok((report, text))
}

pub fn kind_name(kind: SyncKind) -> &'static str {
    match kind {
        SyncKind::AllReduce => "all_reduce",
        SyncKind::CodistillPredictions => "codistill_predictions",
        SyncKind::CodistillCheckpoints => "codistill_checkpoints",
    }
}
