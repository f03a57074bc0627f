//! Experiment orchestration: data preparation, runs, sweeps and artifacts.
//!
//! A run directory holds `manifest.txt`, `run.csv`, `summary.txt`,
//! optionally `curve.svg` and `checkpoint.json`, and `metadata.txt`. Only
//! the metadata file carries timestamps; everything else is a pure function
//! of the config.

mod checkpoint;
mod config;
mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use thiserror::Error;

pub use checkpoint::{parse_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{
    parse_config_text, DatasetKind, ExperimentConfig, SweepAxis, SweepConfig, TestSetKind, KEYS,
};
pub use output::{
    csv_string, curve_svg, emit_csv, emit_curve_svg, manifest_string, parse_run_csv, CSV_HEADER,
};

use crate::data::{
    holdout_balanced_test, load_cifar10_split, load_mnist_dir, local_split, partition, ClientSilo,
    LabeledDataset,
};
use crate::error::Error;
use crate::federation::{global_loss, Federation, LogRecord, Metric, RoundContext, RunLog};
use crate::rng::{substream, Purpose};

/// A failure classified by the stage it came from.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(Error),
    #[error("data error: {0}")]
    Data(Error),
    #[error("runtime failure: {0}")]
    Runtime(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Data(_) => 3,
            RunError::Runtime(_) => 4,
        }
    }
}

type RunResult<T> = std::result::Result<T, RunError>;

/// Read a config file and apply command-line overrides.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> RunResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(Error::io(path, e)))?;
    ExperimentConfig::from_text(&text, overrides).map_err(RunError::Config)
}

/// Silos and evaluation set built from a config.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub layer_dims: Vec<usize>,
    pub silos: Vec<ClientSilo>,
    pub test: LabeledDataset,
    pub pool_size: usize,
    /// Per-client per-class sample counts (train and local test together).
    pub counts: Vec<Vec<usize>>,
}

fn seeded_subset(data: LabeledDataset, max: Option<usize>, seed: u64) -> crate::Result<LabeledDataset> {
    match max {
        Some(n) if n < data.len() => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut substream(seed, Purpose::Subset, &[]));
            idx.truncate(n);
            idx.sort_unstable();
            data.select(&idx)
        }
        _ => Ok(data),
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> RunResult<PreparedData> {
    let data_err = RunError::Data;
    let (train, test) = match cfg.dataset {
        DatasetKind::Mnist => load_mnist_dir(&cfg.data_dir),
        DatasetKind::Cifar10 => load_cifar10_split(&cfg.data_dir),
    }
    .map_err(data_err)?;
    let seed = cfg.partition.seed;
    let (pool, test) = match cfg.test_set {
        TestSetKind::Holdout => {
            let merged = LabeledDataset::concat(&train, &test).map_err(data_err)?;
            let merged = seeded_subset(merged, cfg.max_samples, seed).map_err(data_err)?;
            let (pool, global) =
                holdout_balanced_test(&merged, cfg.holdout_per_class, seed).map_err(data_err)?;
            (pool, global.into_inner())
        }
        TestSetKind::Official => (seeded_subset(train, cfg.max_samples, seed).map_err(data_err)?, test),
    };
    if test.is_empty() {
        return Err(RunError::Data(Error::EmptyDataset("global test set")));
    }
    let parts = partition(&pool, &cfg.partition).map_err(data_err)?;
    let mut silos = Vec::with_capacity(parts.len());
    let mut counts = Vec::with_capacity(parts.len());
    for (k, idx) in parts.iter().enumerate() {
        let mut per_class = vec![0usize; pool.num_classes()];
        for &i in idx {
            per_class[usize::from(pool.labels()[i])] += 1;
        }
        counts.push(per_class);
        let silo = local_split(k, idx, &pool, cfg.local_train_ratio, seed).map_err(data_err)?;
        if silo.train.is_empty() {
            return Err(RunError::Data(Error::EmptyDataset("client training split")));
        }
        silos.push(silo);
    }
    Ok(PreparedData {
        layer_dims: cfg.layer_dims(pool.sample_len()),
        silos,
        test,
        pool_size: pool.len(),
        counts,
    })
}

fn create_dir(dir: &Path) -> RunResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Runtime(Error::io(dir, e)))
}

fn write(path: &Path, text: &str) -> RunResult<()> {
    output::write_file(path, text.as_bytes()).map_err(RunError::Runtime)
}

pub fn write_manifest(cfg: &ExperimentConfig, data: &PreparedData, path: &Path) -> RunResult<()> {
    write(
        path,
        &manifest_string(&cfg.echo(), data.pool_size, data.test.len(), &data.counts),
    )
}

/// Build the partition and write `manifest.txt` only.
pub fn run_partition(cfg: &ExperimentConfig) -> RunResult<PathBuf> {
    let data = prepare_data(cfg)?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("manifest.txt");
    write_manifest(cfg, &data, &path)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub log: RunLog,
    pub rounds_completed: usize,
    pub best: Option<LogRecord>,
    pub final_acc: Option<f64>,
    /// Mean local-test loss of the final model; absent when a client has no local test split.
    pub final_objective: Option<f64>,
}

impl RunSummary {
    pub fn line(&self, scheduler: &str) -> String {
        let mut s = format!("scheduler={scheduler} rounds_completed={}", self.rounds_completed);
        if let Some(b) = &self.best {
            let _ = write!(
                s,
                " best_global_acc={:.6} best_round={} best_site={} best_epoch_global={}",
                b.value, b.round, b.site, b.epoch_global
            );
        }
        if let Some(a) = self.final_acc {
            let _ = write!(s, " final_global_acc={a:.6}");
        }
        if let Some(o) = self.final_objective {
            let _ = write!(s, " final_objective={o:.6}");
        }
        s.push('\n');
        s
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Load data and run one experiment, writing all artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> RunResult<RunSummary> {
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data)
}

/// Run one experiment on already prepared data.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> RunResult<RunSummary> {
    let started = unix_now();
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_manifest(cfg, data, &dir.join("manifest.txt"))?;
    let ctx = RoundContext {
        cfg: &cfg.federation,
        layer_dims: &data.layer_dims,
        silos: &data.silos,
        test: &data.test,
    };
    let fingerprint = cfg.echo();
    let mut fed = match &cfg.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(Error::io(path, e)))?;
            let cp = parse_checkpoint(&text).map_err(|e| RunError::Config(e.into()))?;
            if cp.fingerprint != fingerprint {
                return Err(RunError::Config(Error::Config(format!(
                    "checkpoint {} was written by a different configuration",
                    path.display()
                ))));
            }
            Federation::resume(ctx, cp.state).map_err(RunError::Config)?
        }
        None => Federation::new(ctx).map_err(RunError::Runtime)?,
    };
    let checkpoint_path = dir.join("checkpoint.json");
    while !fed.is_finished() {
        let result = fed.run_round().map_err(RunError::Runtime)?;
        let round = result.round;
        let stop = cfg.stop_after == Some(round);
        if stop || (cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0) {
            let cp = Checkpoint::new(fingerprint.clone(), fed.state().clone());
            write(&checkpoint_path, &cp.to_json())?;
        }
        if stop {
            break;
        }
    }

    let log = fed.log().clone();
    let final_objective = if data.silos.iter().all(|s| !s.test.is_empty()) {
        Some(global_loss(&data.layer_dims, fed.params(), &data.silos).map_err(RunError::Runtime)?)
    } else {
        None
    };
    let summary = RunSummary {
        rounds_completed: fed.state().next_round - 1,
        best: log.best_global_accuracy().copied(),
        final_acc: log.global_records(Metric::Acc).last().map(|r| r.value),
        final_objective,
        log,
    };
    emit_csv(&summary.log, &dir.join("run.csv")).map_err(RunError::Runtime)?;
    let scheduler = cfg.federation.scheduler.name();
    write(&dir.join("summary.txt"), &summary.line(scheduler))?;
    if cfg.svg {
        emit_curve_svg(&summary.log, scheduler, &dir.join("curve.svg")).map_err(RunError::Runtime)?;
    }
    write(
        &dir.join("metadata.txt"),
        &format!(
            "started_unix = {started}\nfinished_unix = {}\nversion = {}\n",
            unix_now(),
            env!("CARGO_PKG_VERSION")
        ),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub best_acc: f64,
    pub best_round: usize,
    pub rounds_to_target: Option<usize>,
    pub epochs_to_target: Option<usize>,
    /// Population std of global accuracy over the final `tail_rounds` rounds.
    pub oscillation: f64,
}

pub fn sweep_row(value: f64, log: &RunLog, target: f64, tail_rounds: usize) -> SweepRow {
    let best = log.best_global_accuracy();
    let hit = log.first_reaching(target);
    SweepRow {
        value,
        best_acc: best.map_or(0.0, |b| b.value),
        best_round: best.map_or(0, |b| b.round),
        rounds_to_target: hit.map(|r| r.round),
        epochs_to_target: hit.map(|r| r.epoch_global),
        oscillation: log.accuracy_std_last_rounds(tail_rounds).unwrap_or(0.0),
    }
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let opt = |v: Option<usize>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
    let mut s = String::from("axis,value,best_acc,best_round,rounds_to_target,epochs_to_target,oscillation\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{},{},{:.6}",
            axis.name(),
            r.value,
            r.best_acc,
            r.best_round,
            opt(r.rounds_to_target),
            opt(r.epochs_to_target),
            r.oscillation
        );
    }
    s
}

/// One run per axis value, each in its own subdirectory; writes `sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig) -> RunResult<Vec<SweepRow>> {
    let axis = cfg
        .sweep
        .axis
        .ok_or_else(|| RunError::Config(Error::Config("`sweep_axis` is required for a sweep".into())))?;
    if cfg.sweep.values.is_empty() {
        return Err(RunError::Config(Error::Config("`sweep_values` is empty".into())));
    }
    if cfg.resume.is_some() || cfg.stop_after.is_some() {
        return Err(RunError::Config(Error::Config(
            "sweeps do not support `resume` or `stop_after`".into(),
        )));
    }
    let runs: Vec<ExperimentConfig> = cfg
        .sweep
        .values
        .iter()
        .map(|&v| {
            let mut run = cfg.with_axis_value(axis, v)?;
            run.output_dir = cfg.output_dir.join(format!("{}_{v}", axis.name()));
            Ok(run)
        })
        .collect::<crate::Result<_>>()
        .map_err(RunError::Config)?;
    let data = prepare_data(cfg)?;
    let mut rows = Vec::with_capacity(runs.len());
    let mut logs = Vec::with_capacity(runs.len());
    for run in &runs {
        let summary = run_prepared(run, &data)?;
        let value = match axis {
            SweepAxis::LocalEpochs => run.federation.local_epochs as f64,
            SweepAxis::Sigma => run.federation.consolidation.sigma,
        };
        rows.push(sweep_row(value, &summary.log, cfg.sweep.target_acc, cfg.sweep.tail_rounds));
        logs.push((format!("{}={value}", axis.name()), summary.log));
    }
    write(&cfg.output_dir.join("sweep.csv"), &sweep_csv(axis, &rows))?;
    if cfg.svg {
        let series: Vec<(&str, &RunLog)> = logs.iter().map(|(l, log)| (l.as_str(), log)).collect();
        write(&cfg.output_dir.join("sweep.svg"), &curve_svg(&series))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::Split;

    fn acc(round: usize, epoch: usize, value: f64) -> LogRecord {
        LogRecord {
            round,
            site: 1,
            epoch_global: epoch,
            split: Split::Global,
            metric: Metric::Acc,
            value,
        }
    }

    #[test]
    fn sweep_row_statistics() {
        let mut log = RunLog::new();
        for (i, v) in [0.2, 0.8, 0.6, 0.8].iter().enumerate() {
            log.push(acc(i / 2 + 1, i + 1, *v)).unwrap();
        }
        let row = sweep_row(1.0, &log, 0.75, 1);
        assert_eq!(row.best_acc, 0.8);
        assert_eq!(row.best_round, 1);
        assert_eq!((row.rounds_to_target, row.epochs_to_target), (Some(1), Some(2)));
        assert!((row.oscillation - 0.1).abs() < 1e-12);
        let none = sweep_row(0.0, &log, 0.9, 20);
        assert_eq!(none.rounds_to_target, None);
        assert!(sweep_csv(SweepAxis::Sigma, &[none]).contains(",NA,NA,"));
    }

    #[test]
    fn exit_codes() {
        let e = || Error::Config(String::new());
        assert_eq!(RunError::Config(e()).exit_code(), 2);
        assert_eq!(RunError::Data(e()).exit_code(), 3);
        assert_eq!(RunError::Runtime(e()).exit_code(), 4);
    }
}
