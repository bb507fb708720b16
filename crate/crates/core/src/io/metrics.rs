use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::{HeavyRecord, MetricRecord, MetricSink};

pub const CSV_HEADER: &str = "step,task,loss,accuracy,dead_frac,zombie_frac,param_norm,entropy";
pub const CSV_NAME: &str = "metrics.csv";
pub const JSONL_NAME: &str = "diagnostics.jsonl";

/// Opens `path` for writing, refusing to replace an existing file unless
/// `force` is set.
pub fn create_output(path: &Path, force: bool) -> Result<File> {
    if path.exists() && !force {
        return Err(Error::Exists(path.display().to_string()));
    }
    Ok(File::create(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn csv_row(r: &MetricRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.step,
        r.task,
        r.loss,
        opt(r.accuracy),
        r.dead_fraction,
        r.zombie_fraction,
        r.param_norm,
        opt(r.entropy)
    )
}

/// Writes `metrics.csv` and the `diagnostics.jsonl` sidecar into a directory.
pub struct MetricFiles {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
    dir: PathBuf,
}

impl MetricFiles {
    pub fn create(dir: &Path, force: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(CSV_NAME);
        let jsonl_path = dir.join(JSONL_NAME);
        for p in [&csv_path, &jsonl_path] {
            if p.exists() && !force {
                return Err(Error::Exists(p.display().to_string()));
            }
        }
        let mut csv = BufWriter::new(create_output(&csv_path, force)?);
        writeln!(csv, "{CSV_HEADER}")?;
        Ok(Self {
            csv,
            jsonl: BufWriter::new(create_output(&jsonl_path, force)?),
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn line(&mut self, rec: &HeavyRecord) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, rec)?;
        self.jsonl.write_all(b"\n")?;
        Ok(())
    }
}

impl MetricSink for MetricFiles {
    fn record(&mut self, r: &MetricRecord) -> Result<()> {
        writeln!(self.csv, "{}", csv_row(r))?;
        let payload = json!({
            "kind": r.kind,
            "layer_norms": r.layer_norms,
            "diverged": r.diverged,
            "heavy": r.heavy,
        });
        self.line(&HeavyRecord {
            step: r.step,
            kind: "record".into(),
            payload,
        })
    }

    fn heavy(&mut self, record: &HeavyRecord) -> Result<()> {
        self.line(record)
    }

    fn flush(&mut self) -> Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        Ok(())
    }
}

impl Drop for MetricFiles {
    fn drop(&mut self) {
        let _ = MetricSink::flush(self);
    }
}
