//! `codistillery`: run experiments and sweeps, compute communication costs,
//! and drive the multi-view split suite.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 runtime
//! contract violation.

mod commcost;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::Utc;
use clap::{Parser, Subcommand};
use codistillery_core::harness::{self, ExperimentConfig, MultiviewSuiteConfig};
use codistillery_core::sync::SyncKind;
use codistillery_core::Error;
use toml::Table;

use crate::config::ConfigError;
use crate::output::Manifest;

const SEED_OFFSET_VAR: &str = "CODISTILLERY_SEED_OFFSET";

#[derive(Parser)]
#[command(name = "codistillery", version, about = "Codistillation training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (list-valued keys expand into a sweep).
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `strategy.exchange_period=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the generated train/val sets as flat binary files.
        #[arg(long)]
        export_data: bool,
    },
    /// Per-device bits per iteration of every strategy.
    Commcost {
        #[arg(long, default_value = "2", value_parser = positive_count)]
        n: u64,
        #[arg(long = "T", default_value = "1", value_parser = positive_count)]
        period: u64,
        #[arg(long, default_value = "8e8", value_parser = positive_count)]
        b_model: u64,
        #[arg(long, default_value = "3.2e4", value_parser = positive_count)]
        b_pred: u64,
        #[arg(long, default_value = "256", value_parser = positive_count)]
        batch: u64,
        /// Restrict the output to one strategy.
        #[arg(long, value_parser = parse_kind)]
        strategy: Option<SyncKind>,
    },
    /// Run the split-family suite and write `multiview_summary.csv`.
    Multiview {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Positive integer, also accepted in float notation such as `8e8`.
fn positive_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return if v > 0 { Ok(v) } else { Err("must be positive".into()) };
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err("must be positive".into());
    }
    if v.fract() != 0.0 || v > 9_007_199_254_740_992.0 {
        return Err(format!("`{s}` is not an exact integer"));
    }
    Ok(v as u64)
}

fn parse_kind(s: &str) -> Result<SyncKind, String> {
    match s {
        "all_reduce" => Ok(SyncKind::AllReduce),
        "codistill_predictions" | "predictions" => Ok(SyncKind::CodistillPredictions),
        "codistill_checkpoints" | "checkpoints" => Ok(SyncKind::CodistillCheckpoints),
        _ => Err("expected all_reduce, codistill_predictions or codistill_checkpoints".into()),
    }
}

enum Failure {
    Io(String),
    Config(ConfigError),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { key, message } => Failure::Config(ConfigError::new(key, message)),
            Error::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            set,
            out,
            export_data,
        } => cmd_run(&config, &set, &out, export_data),
        Command::Commcost {
            n,
            period,
            b_model,
            b_pred,
            batch,
            strategy,
        } => cmd_commcost(
            commcost::Point {
                n,
                period,
                b_model,
                b_pred,
                batch,
            },
            strategy,
        ),
        Command::Multiview { config, set, out } => cmd_multiview(&config, &set, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("config error: {e}"),
                Failure::Runtime(m) => eprintln!("runtime error: {m}"),
                Failure::Io(m) => eprintln!("i/o error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn seed_offset() -> Result<u64, ConfigError> {
    match std::env::var(SEED_OFFSET_VAR) {
        Err(_) => Ok(0),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| ConfigError::new(SEED_OFFSET_VAR, format!("`{s}` is not a non-negative integer"))),
    }
}

fn load_table(path: &Path, sets: &[String]) -> Result<Table, ConfigError> {
    let mut table = config::read_table(path)?;
    for s in sets {
        config::apply_override(&mut table, s)?;
    }
    Ok(table)
}

fn offset_seeds(seeds: &mut [u64], offset: u64) -> Result<(), ConfigError> {
    for s in seeds {
        *s = s
            .checked_add(offset)
            .ok_or_else(|| ConfigError::new("seeds", "seed plus offset overflows"))?;
    }
    Ok(())
}

fn to_json(value: &impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("configs serialize to json")
}

fn toml_to_json(value: &toml::Value) -> serde_json::Value {
    serde_json::to_value(value).expect("toml values serialize to json")
}

fn cmd_run(path: &Path, sets: &[String], out: &Path, export_data: bool) -> Result<(), Failure> {
    let table = load_table(path, sets)?;
    let offset = seed_offset()?;
    let points = config::expand_sweeps(&table);
    // validate every point before running any
    let mut configs = Vec::with_capacity(points.len());
    for p in &points {
        let mut cfg: ExperimentConfig = config::typed(&p.table)?;
        offset_seeds(&mut cfg.seeds, offset)?;
        cfg.validate()?;
        configs.push(cfg);
    }
    std::fs::create_dir_all(out)?;
    let sweep = points.len() > 1;
    let mut index = Vec::new();
    for (i, (p, cfg)) in points.iter().zip(&configs).enumerate() {
        let dir = if sweep { out.join(format!("point-{i:03}")) } else { out.to_path_buf() };
        std::fs::create_dir_all(&dir)?;
        let mut manifest = run_point(cfg, &dir, export_data)?;
        manifest.sweep_assignments = p
            .assignments
            .iter()
            .map(|(k, v)| (k.clone(), toml_to_json(v)))
            .collect();
        output::write_json(&dir.join("manifest.json"), &manifest)?;
        if sweep {
            eprintln!("point {i}: {}", dir.display());
            index.push(serde_json::json!({
                "dir": output::relative(out, &dir),
                "config_digest": manifest.config_digest,
                "assignments": manifest.sweep_assignments,
            }));
        }
    }
    if sweep {
        output::write_json(&out.join("sweep.json"), &serde_json::json!({ "points": index }))?;
    }
    Ok(())
}

fn run_point(cfg: &ExperimentConfig, dir: &Path, export_data: bool) -> Result<Manifest, Failure> {
    let started = Utc::now();
    let mut manifest = Manifest::new(to_json(cfg), cfg.seeds.clone(), started);
    let results = harness::run_experiment(cfg)?;
    let rows: Vec<_> = results.into_iter().flat_map(|r| r.rows).collect();
    let summary = harness::summarize(&rows)?;

    let metrics = dir.join("metrics.csv");
    output::write_metrics(&metrics, &rows)?;
    let summary_path = dir.join("summary.json");
    output::write_json(&summary_path, &summary)?;
    let mut artifacts = vec![metrics, summary_path];
    if export_data {
        let (train, val, _) = harness::prepare_data(cfg)?;
        for (name, set) in [("train.bin", &train), ("val.bin", &val)] {
            let p = dir.join(name);
            let f = std::io::BufWriter::new(std::fs::File::create(&p)?);
            set.write_binary(f)?;
            artifacts.push(p);
        }
    }
    artifacts.push(dir.join("manifest.json"));
    manifest.artifacts = artifacts.iter().map(|a| output::relative(dir, a)).collect();
    manifest.finished_at = Utc::now().to_rfc3339();
    Ok(manifest)
}

fn cmd_commcost(point: commcost::Point, only: Option<SyncKind>) -> Result<(), Failure> {
    if point.n < 2 {
        return Err(ConfigError::new("n", "codistillation needs at least 2 groups").into());
    }
    let (report, text) = commcost::compute(point, only).map_err(|m| ConfigError::new("", m))?;
    print!("{text}");
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

fn cmd_multiview(path: &Path, sets: &[String], out: &Path) -> Result<(), Failure> {
    let table = load_table(path, sets)?;
    let mut cfg: MultiviewSuiteConfig = config::typed(&table)?;
    offset_seeds(&mut cfg.base.seeds, seed_offset()?)?;
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let started = Utc::now();
    let mut manifest = Manifest::new(to_json(&cfg), cfg.base.seeds.clone(), started);
    let rows = harness::run_multiview_suite(&cfg)?;
    let csv_path = out.join("multiview_summary.csv");
    output::write_suite(&csv_path, &rows)?;
    manifest.artifacts = vec!["multiview_summary.csv".into(), "manifest.json".into()];
    manifest.finished_at = Utc::now().to_rfc3339();
    output::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}
