use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StreamReport;
use crate::{Error, Result};

/// One CSV line: a (run, step, budget) triple. Columns ending in `_time`
/// are wall-clock seconds; everything else is deterministic for a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run: usize,
    pub label: String,
    pub train_mode: String,
    pub update_every: usize,
    pub step: usize,
    pub window: String,
    pub query_month: i64,
    pub n_live: usize,
    pub n_queries: usize,
    pub budget_index: usize,
    pub budget_dcs: usize,
    pub recall: f64,
    pub dcs_expected: u64,
    pub dcs_actual: u64,
    pub updated: bool,
    pub cells_retrained: usize,
    pub vectors_reassigned: usize,
    pub vectors_reencoded: usize,
    pub list_min: usize,
    pub list_median: usize,
    pub list_max: usize,
    pub gt_time: f64,
    pub search_time: f64,
    pub update_time: f64,
}

pub const CSV_HEADER: [&str; 24] = [
    "run",
    "label",
    "train_mode",
    "update_every",
    "step",
    "window",
    "query_month",
    "n_live",
    "n_queries",
    "budget_index",
    "budget_dcs",
    "recall",
    "dcs_expected",
    "dcs_actual",
    "updated",
    "cells_retrained",
    "vectors_reassigned",
    "vectors_reencoded",
    "list_min",
    "list_median",
    "list_max",
    "gt_time",
    "search_time",
    "update_time",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub label: String,
    pub train_mode: String,
    pub update_every: usize,
    pub n_steps: usize,
    /// Per budget position.
    pub mean_budget_dcs: Vec<f64>,
    pub mean_recall: Vec<f64>,
    pub n_updates: usize,
    /// Mean over steps that ran an update; 0 when none did.
    pub mean_update_time: f64,
}

/// Step where a run beats the first run (the baseline) by the widest
/// margin at the smallest budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxGap {
    pub run: usize,
    pub label: String,
    pub baseline: String,
    pub step: usize,
    pub window: String,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<RunSummary>,
    pub max_gap: Vec<MaxGap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

pub fn to_rows(reports: &[StreamReport]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for (run, r) in reports.iter().enumerate() {
        for s in &r.steps {
            let u = s.update.unwrap_or_default();
            for (bi, b) in s.budgets.iter().enumerate() {
                rows.push(CsvRow {
                    run,
                    label: r.label.clone(),
                    train_mode: r.train_mode.name().to_string(),
                    update_every: r.update_every,
                    step: s.step,
                    window: s.window.clone(),
                    query_month: s.query_month,
                    n_live: s.n_live,
                    n_queries: s.n_queries,
                    budget_index: bi,
                    budget_dcs: b.dcs,
                    recall: b.recall,
                    dcs_expected: b.dcs_expected,
                    dcs_actual: b.dcs_actual,
                    updated: s.update.is_some(),
                    cells_retrained: u.cells_retrained,
                    vectors_reassigned: u.vectors_reassigned,
                    vectors_reencoded: u.vectors_reencoded,
                    list_min: s.list_min,
                    list_median: s.list_median,
                    list_max: s.list_max,
                    gt_time: s.gt_time_s,
                    search_time: b.search_time_s,
                    update_time: u.wall_time_s,
                });
            }
        }
    }
    rows
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in v {
        sum += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn summarize_rows(rows: &[CsvRow]) -> Summary {
    let mut run_ids: Vec<usize> = rows.iter().map(|r| r.run).collect();
    run_ids.sort_unstable();
    run_ids.dedup();

    let mut runs = Vec::with_capacity(run_ids.len());
    for &run in &run_ids {
        let mine: Vec<&CsvRow> = rows.iter().filter(|r| r.run == run).collect();
        let n_budgets = mine.iter().map(|r| r.budget_index + 1).max().unwrap_or(0);
        let at = |b: usize| mine.iter().filter(move |r| r.budget_index == b);
        let step_rows: Vec<&&CsvRow> = at(0).collect();
        runs.push(RunSummary {
            run,
            label: mine[0].label.clone(),
            train_mode: mine[0].train_mode.clone(),
            update_every: mine[0].update_every,
            n_steps: step_rows.len(),
            mean_budget_dcs: (0..n_budgets).map(|b| mean(at(b).map(|r| r.budget_dcs as f64))).collect(),
            mean_recall: (0..n_budgets).map(|b| mean(at(b).map(|r| r.recall))).collect(),
            n_updates: step_rows.iter().filter(|r| r.updated).count(),
            mean_update_time: mean(step_rows.iter().filter(|r| r.updated).map(|r| r.update_time)),
        });
    }

    let mut max_gap = Vec::new();
    if let Some(&base) = run_ids.first() {
        let base_rows: Vec<&CsvRow> = rows.iter().filter(|r| r.run == base && r.budget_index == 0).collect();
        for &run in &run_ids[1..] {
            let mut best: Option<MaxGap> = None;
            for r in rows.iter().filter(|r| r.run == run && r.budget_index == 0) {
                let Some(b) = base_rows.iter().find(|b| b.step == r.step) else {
                    continue;
                };
                let gap = r.recall - b.recall;
                if best.as_ref().is_none_or(|g| gap > g.gap) {
                    best = Some(MaxGap {
                        run,
                        label: r.label.clone(),
                        baseline: b.label.clone(),
                        step: r.step,
                        window: r.window.clone(),
                        gap,
                    });
                }
            }
            max_gap.extend(best);
        }
    }
    Summary { runs, max_gap }
}

pub fn summarize(reports: &[StreamReport]) -> Summary {
    summarize_rows(&to_rows(reports))
}

/// Writes `steps.csv` and `summary.json` into `dir`, creating it if needed.
pub fn report_emit(reports: &[StreamReport], dir: impl AsRef<Path>) -> Result<EmittedFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("steps.csv");
    let summary_path = dir.join("summary.json");

    let rows = to_rows(reports);
    let csv_err = |e: csv::Error| Error::format(&csv_path, e.to_string());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&csv_path)
        .map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let json = serde_json::to_string_pretty(&summarize_rows(&rows))?;
    fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))?;
    Ok(EmittedFiles {
        csv: csv_path,
        summary: summary_path,
    })
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Recomputes the summary from an emitted CSV.
pub fn summary_from_csv(path: impl AsRef<Path>) -> Result<Summary> {
    Ok(summarize_rows(&read_rows(path)?))
}
