use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Writes `results.jsonl`, `summary.csv` and one `series_<sweep>.csv` per
/// sweep present in `reports`. Returns the written paths. Output depends only
/// on the reports, so identical inputs give identical bytes.
pub fn emit_report(reports: &[MetricsReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::EmptySet("reports"));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut jsonl = String::new();
    for r in reports {
        jsonl.push_str(&serde_json::to_string(r).expect("report serializes"));
        jsonl.push('\n');
    }
    let path = out_dir.join("results.jsonl");
    fs::write(&path, jsonl)?;
    written.push(path);

    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record([
        "method",
        "backbone",
        "task",
        "request",
        "level",
        "metric",
        "value",
        "unlearn_seconds",
        "peak_bytes",
        "seed",
    ])
    .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            r.backbone.clone(),
            r.task.clone(),
            r.request.clone(),
            r.level.to_string(),
            r.primary.clone(),
            r.primary_value().to_string(),
            r.unlearn_seconds.to_string(),
            r.peak_bytes.to_string(),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    written.push(path);

    let mut series: BTreeMap<&str, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        if let Some(name) = &r.sweep {
            series.entry(name).or_default().push(r);
        }
    }
    for (name, rows) in series {
        let path = out_dir.join(format!("series_{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(["x", "y", "method"]).map_err(csv_err)?;
        for r in rows {
            w.write_record([r.level.to_string(), r.primary_value().to_string(), r.method.clone()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Reads the reports back from a `results.jsonl`.
pub fn read_reports(dir: &Path) -> Result<Vec<MetricsReport>> {
    let text = fs::read_to_string(dir.join("results.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("results.jsonl line {}: {e}", i + 1))))
        .collect()
}
