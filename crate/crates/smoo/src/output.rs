//! File formats: CSV run tables and JSON dumps.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use smoo_core::acq::HistoryRecord;
use smoo_core::optimizer::{RunResult, RunRow};

pub const RUN_TABLE_HEADER: &str = "iteration,evals,hv,igd,mean_s_used,refit,epochs,acq_loss,seconds";

pub fn run_table_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_table_seed{seed}.csv"))
}

pub fn archive_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("archive_seed{seed}.json"))
}

pub fn history_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("history_seed{seed}.json"))
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO_FILE: &str = "effective_config.json";

/// Creates `dir`, or refuses when it already holds outputs and `force` is off.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .next()
            .is_some();
        if occupied && !force {
            bail!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            );
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn run_table_string(rows: &[RunRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    Ok(format!("{RUN_TABLE_HEADER}\n{body}"))
}

pub fn write_run_table(path: &Path, rows: &[RunRow]) -> Result<()> {
    fs::write(path, run_table_string(rows)?).with_context(|| format!("cannot write {}", path.display()))
}

pub fn parse_run_table(text: &str) -> Result<Vec<RunRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RUN_TABLE_HEADER {
        bail!("unexpected run table header '{}'", header.join(","));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn read_run_table(path: &Path) -> Result<Vec<RunRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_run_table(&text).with_context(|| format!("in {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub eval_index: usize,
    pub rank: usize,
}

pub fn archive_entries(result: &RunResult) -> Vec<ArchiveEntry> {
    result
        .archive
        .samples()
        .iter()
        .zip(result.archive.ranks())
        .map(|(s, &rank)| ArchiveEntry {
            x: s.x.clone(),
            f: s.f.clone(),
            eval_index: s.eval_index,
            rank,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryDump {
    pub feature_width: usize,
    pub work_ref: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub records: Vec<HistoryRecord>,
}

/// Writes the table, archive and history files of one seed.
pub fn write_seed_outputs(dir: &Path, result: &RunResult) -> Result<()> {
    write_run_table(&run_table_path(dir, result.seed), &result.rows)?;
    write_json(&archive_path(dir, result.seed), &archive_entries(result))?;
    write_json(
        &history_path(dir, result.seed),
        &HistoryDump {
            feature_width: result.feature_width,
            work_ref: result.work_ref.clone(),
            temperatures: result.temperatures.clone(),
            records: result.history.clone(),
        },
    )
}
