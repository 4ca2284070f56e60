//! Experiment bookkeeping: sweeps over the fusion weights, experiment
//! records and their CSV / JSON forms.
//!
//! Every CSV file starts with a `# columns:` comment line describing its
//! columns, followed by a plain header row. JSON mirrors use the same field
//! names. All writers go through [`write_atomic`](crate::io::write_atomic).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{Federation, FederationConfig, RoundLog, ServerState};
use crate::io::{read_bytes, write_atomic};
use crate::partition::Scheme;
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub base: FederationConfig,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() {
            return Err(Error::Invalid("sweep axes must be non-empty".into()));
        }
        for (i, &alpha) in self.alphas.iter().enumerate() {
            for &beta in &self.betas {
                self.cell_config(i, alpha, beta).validate()?;
            }
        }
        Ok(())
    }

    fn cell_config(&self, index: usize, alpha: f64, beta: f64) -> FederationConfig {
        FederationConfig {
            alpha,
            beta,
            seed: cell_seed(self.base.seed, index),
            ..self.base.clone()
        }
    }

    /// `(alpha, beta, config)` for every cell, alpha-major.
    pub fn cells(&self) -> Vec<(f64, f64, FederationConfig)> {
        let mut out = Vec::with_capacity(self.alphas.len() * self.betas.len());
        for &alpha in &self.alphas {
            for &beta in &self.betas {
                let idx = out.len();
                out.push((alpha, beta, self.cell_config(idx, alpha, beta)));
            }
        }
        out
    }
}

pub fn cell_seed(base: u64, index: usize) -> u64 {
    rng::derive_seed(base, &[tag::SWEEP, index as u64])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: FederationConfig,
    pub scheme: Scheme,
    pub seed: u64,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub history: Vec<RoundLog>,
}

impl ExperimentRecord {
    pub fn new(config: &FederationConfig, scheme: Scheme, state: &ServerState) -> Self {
        ExperimentRecord {
            config: config.clone(),
            scheme,
            seed: config.seed,
            initial_accuracy: state.initial_accuracy,
            final_accuracy: state.final_accuracy(),
            history: state.history.clone(),
        }
    }

    pub fn rounds(&self) -> Vec<RoundRow> {
        round_rows(self.initial_accuracy, &self.history)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: f64,
    pub final_accuracy: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub records: Vec<ExperimentRecord>,
}

impl SweepResult {
    /// The best cell; ties go to the earliest in alpha-major order.
    pub fn argmax(&self) -> Option<SweepCell> {
        self.cells.iter().copied().fold(None, |best: Option<SweepCell>, c| match best {
            Some(b) if b.final_accuracy >= c.final_accuracy => Some(b),
            _ => Some(c),
        })
    }
}

/// One training run per `(alpha, beta)` cell; cells run in parallel.
pub fn run_sweep(grid: &SweepGrid, federation: &Federation, scheme: Scheme) -> Result<SweepResult> {
    grid.validate()?;
    let records: Vec<ExperimentRecord> = grid
        .cells()
        .into_par_iter()
        .map(|(_, _, cfg)| {
            let state = federation.run(&cfg)?;
            Ok(ExperimentRecord::new(&cfg, scheme, &state))
        })
        .collect::<Result<_>>()?;
    let cells = records
        .iter()
        .map(|r| SweepCell {
            alpha: r.config.alpha,
            beta: r.config.beta,
            final_accuracy: r.final_accuracy,
            seed: r.seed,
        })
        .collect();
    Ok(SweepResult { cells, records })
}

/// One line of `rounds.csv`. Round 0 is the untrained cache and has no loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub accuracy: f64,
    pub mean_loss: Option<f64>,
    pub params_uploaded: u64,
    pub flops: u64,
}

pub fn round_rows(initial_accuracy: f64, history: &[RoundLog]) -> Vec<RoundRow> {
    let mut rows = vec![RoundRow {
        round: 0,
        accuracy: initial_accuracy,
        mean_loss: None,
        params_uploaded: 0,
        flops: 0,
    }];
    rows.extend(history.iter().map(|l| RoundRow {
        round: l.round,
        accuracy: l.accuracy,
        mean_loss: Some(l.mean_loss),
        params_uploaded: l.params_uploaded,
        flops: l.flops_estimate,
    }));
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scheme: Scheme,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub rounds: usize,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
}

impl From<&ExperimentRecord> for ExperimentRow {
    fn from(r: &ExperimentRecord) -> Self {
        ExperimentRow {
            scheme: r.scheme,
            seed: r.seed,
            alpha: r.config.alpha,
            beta: r.config.beta,
            rounds: r.history.len(),
            initial_accuracy: r.initial_accuracy,
            final_accuracy: r.final_accuracy,
        }
    }
}

pub const ROUNDS_COLUMNS: &str = "# columns: round (0 = untrained cache), accuracy (test fraction), \
mean_loss (mean final-epoch client loss, empty for round 0), params_uploaded (key entries sent \
to the server), flops (estimated training FLOPs)";
pub const SWEEP_COLUMNS: &str =
    "# columns: alpha (fusion weight), beta (sharpness), final_accuracy (test fraction), seed (cell seed)";
pub const EXPERIMENTS_COLUMNS: &str = "# columns: scheme (iid|dir|pat), seed, alpha, beta, rounds, \
initial_accuracy, final_accuracy";

pub fn csv_string<T: Serialize>(comment: &str, rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invalid(format!("csv encoding: {e}")))?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Invalid(format!("csv encoding: {e}")))?;
    let mut out = String::with_capacity(comment.len() + 1 + body.len());
    out.push_str(comment);
    out.push('\n');
    out.push_str(std::str::from_utf8(&body).expect("csv writer emits utf-8"));
    Ok(out)
}

pub fn parse_csv<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn jsonl_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Invalid(format!("json encoding: {e}")))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_rounds_csv(path: &Path, rows: &[RoundRow]) -> Result<()> {
    write_atomic(path, csv_string(ROUNDS_COLUMNS, rows)?.as_bytes())
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>> {
    parse_csv(&read_text(path)?, path)
}

pub fn write_rounds_jsonl(path: &Path, rows: &[RoundRow]) -> Result<()> {
    write_atomic(path, jsonl_string(rows)?.as_bytes())
}

pub fn read_rounds_jsonl(path: &Path) -> Result<Vec<RoundRow>> {
    parse_jsonl(&read_text(path)?, path)
}

pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    write_atomic(path, csv_string(SWEEP_COLUMNS, cells)?.as_bytes())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepCell>> {
    parse_csv(&read_text(path)?, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(format!("json encoding: {e}")))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub runs: usize,
    pub mean_initial_accuracy: f64,
    pub mean_final_accuracy: f64,
    pub min_final_accuracy: f64,
    pub max_final_accuracy: f64,
}

/// Per-scheme aggregates in `iid, dir, pat` order; absent schemes are skipped.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SchemeSummary> {
    [Scheme::Iid, Scheme::Dirichlet, Scheme::Pathological]
        .into_iter()
        .filter_map(|scheme| {
            let group: Vec<&ExperimentRecord> = records.iter().filter(|r| r.scheme == scheme).collect();
            if group.is_empty() {
                return None;
            }
            let n = group.len() as f64;
            let finals = group.iter().map(|r| r.final_accuracy);
            Some(SchemeSummary {
                scheme,
                runs: group.len(),
                mean_initial_accuracy: group.iter().map(|r| r.initial_accuracy).sum::<f64>() / n,
                mean_final_accuracy: finals.clone().sum::<f64>() / n,
                min_final_accuracy: finals.clone().fold(f64::INFINITY, f64::min),
                max_final_accuracy: finals.fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

pub fn summary_table(summaries: &[SchemeSummary]) -> String {
    let mut s = String::from("scheme  runs  initial  final    min      max\n");
    for g in summaries {
        let _ = writeln!(
            s,
            "{:<6}  {:>4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            g.scheme.tag(),
            g.runs,
            g.mean_initial_accuracy,
            g.mean_final_accuracy,
            g.min_final_accuracy,
            g.max_final_accuracy
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportPaths {
    pub records_json: PathBuf,
    pub experiments_csv: PathBuf,
    pub summary_txt: PathBuf,
}

/// Writes `records.json`, `experiments.csv` and `summary.txt` into `dir`.
pub fn emit_report(records: &[ExperimentRecord], dir: &Path) -> Result<ReportPaths> {
    if records.is_empty() {
        return Err(Error::Invalid("nothing to report".into()));
    }
    let paths = ReportPaths {
        records_json: dir.join("records.json"),
        experiments_csv: dir.join("experiments.csv"),
        summary_txt: dir.join("summary.txt"),
    };
    write_json(&paths.records_json, &records)?;
    let rows: Vec<ExperimentRow> = records.iter().map(ExperimentRow::from).collect();
    write_atomic(&paths.experiments_csv, csv_string(EXPERIMENTS_COLUMNS, &rows)?.as_bytes())?;
    write_atomic(&paths.summary_txt, summary_table(&summarize(records)).as_bytes())?;
    Ok(paths)
}

pub fn read_records_json(path: &Path) -> Result<Vec<ExperimentRecord>> {
    read_json(path)
}

pub fn read_experiments_csv(path: &Path) -> Result<Vec<ExperimentRow>> {
    parse_csv(&read_text(path)?, path)
}
