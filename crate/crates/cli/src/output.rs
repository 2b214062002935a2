//! Artifact writers: metrics CSV, summaries and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use codistillery_core::harness::{MetricsRow, SuiteRow};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const METRICS_HEADER: [&str; 16] = [
    "seed",
    "iteration",
    "epoch",
    "group",
    "train_loss",
    "supervised",
    "distill",
    "l2",
    "val_acc",
    "dist_from_init",
    "lr",
    "wd",
    "alpha",
    "epsilon",
    "bits_iter",
    "bits_cum",
];

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.group.to_string(),
            fmt_f64(r.loss.scalar),
            fmt_f64(r.loss.supervised),
            fmt_f64(r.loss.distill),
            fmt_f64(r.loss.l2),
            r.val_acc.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.dist_from_init),
            fmt_f64(r.lr),
            fmt_f64(r.wd),
            fmt_f64(r.alpha),
            fmt_f64(r.epsilon),
            r.bits_iter.to_string(),
            r.bits_cum.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_suite(path: &Path, rows: &[SuiteRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arm", "n", "mean_acc", "stderr", "seeds"])?;
    for r in rows {
        w.write_record([
            r.arm.as_str().to_string(),
            r.n.to_string(),
            fmt_f64(r.mean_acc),
            fmt_f64(r.stderr),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep_assignments: Vec<(String, serde_json::Value)>,
}

impl Manifest {
    pub fn new(config: serde_json::Value, seeds: Vec<u64>, started: DateTime<Utc>) -> Self {
        Self {
            tool: "codistillery",
            version: env!("CARGO_PKG_VERSION"),
            config_digest: digest(&config),
            config,
            seeds,
            artifacts: Vec::new(),
            started_at: started.to_rfc3339(),
            finished_at: String::new(),
            sweep_assignments: Vec::new(),
        }
    }
}

/// SHA-256 over the compact JSON form of the resolved config.
pub fn digest(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json values always serialize");
    let hash = Sha256::digest(&bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")
}

/// `path` relative to `base`, with forward slashes.
pub fn relative(base: &Path, path: &Path) -> String {
    let rel: PathBuf = path.strip_prefix(base).unwrap_or(path).to_path_buf();
    rel.to_string_lossy().replace('\\', "/")
}
