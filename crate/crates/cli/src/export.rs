//! `export-plot`: plot-ready tables folded across the seeds of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plab::io::{create_output, CSV_NAME};
use serde::Deserialize;

use crate::{CmdResult, Failure};

#[derive(Clone, Debug, Deserialize)]
struct Row {
    step: u64,
    task: usize,
    loss: f64,
    accuracy: Option<f64>,
    dead_frac: f64,
    zombie_frac: f64,
    param_norm: f64,
    entropy: Option<f64>,
}

fn metric_files(run: &Path) -> Result<Vec<PathBuf>, Failure> {
    if run.join(CSV_NAME).is_file() {
        return Ok(vec![run.join(CSV_NAME)]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(run)?
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(CSV_NAME))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Failure::Failed(format!("no {CSV_NAME} under {}", run.display())));
    }
    Ok(found)
}

fn read_rows(path: &Path) -> Result<Vec<Row>, Failure> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .collect::<Result<Vec<Row>, _>>()
        .map_err(|e| Failure::Failed(format!("{}: {e}", path.display())))
}

struct Stats {
    mean: f64,
    min: f64,
    max: f64,
}

fn stats(v: impl Iterator<Item = f64>) -> Stats {
    let v: Vec<f64> = v.collect();
    Stats {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v.iter().cloned().fold(f64::INFINITY, f64::min),
        max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Mean of optional values; empty unless every seed reported one.
fn opt_mean<'a>(rows: impl Iterator<Item = &'a Row>, f: fn(&Row) -> Option<f64>) -> String {
    let v: Option<Vec<f64>> = rows.map(f).collect();
    match v {
        Some(v) if !v.is_empty() => (v.iter().sum::<f64>() / v.len() as f64).to_string(),
        _ => String::new(),
    }
}

struct Table {
    name: &'static str,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(name: &'static str, header: &[&str]) -> Result<Self, Failure> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self { name, writer })
    }

    fn row(&mut self, fields: Vec<String>) -> CmdResult {
        Ok(self.writer.write_record(fields)?)
    }
}

pub(crate) fn export_plot(run: &Path, out: &Path, force: bool) -> CmdResult {
    let seeds: Vec<Vec<Row>> = metric_files(run)?.iter().map(|p| read_rows(p)).collect::<Result<_, _>>()?;
    let mut by_step: BTreeMap<u64, Vec<&Row>> = BTreeMap::new();
    for r in seeds.iter().flatten() {
        by_step.entry(r.step).or_default().push(r);
    }

    let mut curves = Table::new(
        "learning_curves.csv",
        &["step", "task", "seeds", "loss_mean", "loss_min", "loss_max", "accuracy_mean"],
    )?;
    let mut units = Table::new("unit_health.csv", &["step", "dead_frac_mean", "zombie_frac_mean", "entropy_mean"])?;
    let mut norms = Table::new("param_norm.csv", &["step", "param_norm_mean", "param_norm_min", "param_norm_max"])?;
    for (step, rows) in &by_step {
        let loss = stats(rows.iter().map(|r| r.loss));
        curves.row(vec![
            step.to_string(),
            rows[0].task.to_string(),
            rows.len().to_string(),
            loss.mean.to_string(),
            loss.min.to_string(),
            loss.max.to_string(),
            opt_mean(rows.iter().copied(), |r| r.accuracy),
        ])?;
        units.row(vec![
            step.to_string(),
            stats(rows.iter().map(|r| r.dead_frac)).mean.to_string(),
            stats(rows.iter().map(|r| r.zombie_frac)).mean.to_string(),
            opt_mean(rows.iter().copied(), |r| r.entropy),
        ])?;
        let n = stats(rows.iter().map(|r| r.param_norm));
        norms.row(vec![step.to_string(), n.mean.to_string(), n.min.to_string(), n.max.to_string()])?;
    }

    let mut finals: BTreeMap<usize, Vec<&Row>> = BTreeMap::new();
    let mut spikes: BTreeMap<usize, Vec<(&Row, &Row)>> = BTreeMap::new();
    for rows in &seeds {
        for (i, r) in rows.iter().enumerate() {
            match rows.get(i + 1) {
                Some(next) if next.task == r.task => {}
                Some(next) => {
                    finals.entry(r.task).or_default().push(r);
                    if next.step == r.step + 1 {
                        spikes.entry(next.task).or_default().push((r, next));
                    }
                }
                None => finals.entry(r.task).or_default().push(r),
            }
        }
    }
    let mut task_table = Table::new(
        "task_finals.csv",
        &["task", "seeds", "loss_mean", "accuracy_mean", "dead_frac_mean", "param_norm_mean"],
    )?;
    for (task, rows) in &finals {
        task_table.row(vec![
            task.to_string(),
            rows.len().to_string(),
            stats(rows.iter().map(|r| r.loss)).mean.to_string(),
            opt_mean(rows.iter().copied(), |r| r.accuracy),
            stats(rows.iter().map(|r| r.dead_frac)).mean.to_string(),
            stats(rows.iter().map(|r| r.param_norm)).mean.to_string(),
        ])?;
    }
    let mut spike_table = Table::new(
        "switch_spikes.csv",
        &["task", "seeds", "loss_before", "loss_after", "dead_frac_before", "dead_frac_after"],
    )?;
    for (task, pairs) in &spikes {
        spike_table.row(vec![
            task.to_string(),
            pairs.len().to_string(),
            stats(pairs.iter().map(|p| p.0.loss)).mean.to_string(),
            stats(pairs.iter().map(|p| p.1.loss)).mean.to_string(),
            stats(pairs.iter().map(|p| p.0.dead_frac)).mean.to_string(),
            stats(pairs.iter().map(|p| p.1.dead_frac)).mean.to_string(),
        ])?;
    }

    std::fs::create_dir_all(out)?;
    for t in [curves, units, norms, task_table, spike_table] {
        let bytes = t.writer.into_inner().map_err(|e| Failure::Failed(e.to_string()))?;
        use std::io::Write;
        create_output(&out.join(t.name), force)?.write_all(&bytes)?;
    }
    println!("wrote plot tables for {} seed(s) to {}", seeds.len(), out.display());
    Ok(())
}
