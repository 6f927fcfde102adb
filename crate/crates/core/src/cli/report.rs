//! Aggregation of metrics across runs that differ only in their seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{write_distribution_figure, Metrics, METRICS_JSON};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::train::{RunConfig, CONFIG_FILE};

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORT_JSON: &str = "report.json";

/// Config keys allowed to differ between runs of one report.
const PER_RUN_KEYS: [&str; 2] = ["seed", "output_dir"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: PathBuf,
    pub seed: u64,
    /// `section.metric` → value.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; undefined for a single run.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunRow>,
    pub summary: BTreeMap<String, Summary>,
}

/// Flattens a TOML value into `dotted.key` → rendered value.
fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

fn comparable(config: &RunConfig) -> Result<BTreeMap<String, String>> {
    let value = toml::Value::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut flat = BTreeMap::new();
    flatten("", &value, &mut flat);
    for key in PER_RUN_KEYS {
        flat.remove(key);
    }
    Ok(flat)
}

/// Lines describing how `other` differs from `base`; empty when they match.
pub fn config_diff(base: &RunConfig, other: &RunConfig) -> Result<Vec<String>> {
    let (a, b) = (comparable(base)?, comparable(other)?);
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let missing = "<unset>".to_string();
    Ok(keys
        .into_iter()
        .filter_map(|k| {
            let (x, y) = (a.get(k).unwrap_or(&missing), b.get(k).unwrap_or(&missing));
            (x != y).then(|| format!("{k}: {x} vs {y}"))
        })
        .collect())
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    Summary { n, mean, std }
}

/// Builds the cross-run table; refuses runs whose configs differ in
/// anything but seed and output directory.
pub fn build_report(runs: &[PathBuf]) -> Result<Report> {
    let mut base: Option<(PathBuf, RunConfig)> = None;
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        let config_path = dir.join(CONFIG_FILE);
        if !config_path.is_file() {
            return Err(Error::Usage(format!("{} is not a run directory (no {CONFIG_FILE})", dir.display())));
        }
        let config = RunConfig::read(&config_path)?;
        match &base {
            None => base = Some((dir.clone(), config.clone())),
            Some((base_dir, base_config)) => {
                let diff = config_diff(base_config, &config)?;
                if !diff.is_empty() {
                    return Err(Error::Usage(format!(
                        "run configs differ between {} and {}: {}",
                        base_dir.display(),
                        dir.display(),
                        diff.join("; ")
                    )));
                }
            }
        }
        let metrics_path = dir.join(METRICS_JSON);
        if !metrics_path.is_file() {
            return Err(Error::Usage(format!(
                "{} has no {METRICS_JSON}; run eval-dci or eval-downstream first",
                dir.display()
            )));
        }
        let metrics: Metrics = read_json(&metrics_path)?;
        let metrics = metrics
            .rows()
            .into_iter()
            .map(|(section, metric, value)| (format!("{section}.{metric}"), value))
            .collect();
        rows.push(RunRow {
            run: dir.clone(),
            seed: config.seed,
            metrics,
        });
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &rows {
        for (k, v) in &row.metrics {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    let summary = columns.iter().map(|(k, v)| (k.clone(), summarize(v))).collect();
    Ok(Report { runs: rows, summary })
}

pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<Report> {
    let report = build_report(runs)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(REPORT_JSON), &report)?;

    let columns: Vec<&String> = report.summary.keys().collect();
    let path = out.join(REPORT_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut header = vec!["run".to_string(), "seed".to_string()];
    header.extend(columns.iter().map(|c| c.to_string()));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for row in &report.runs {
        let mut record = vec![row.run.display().to_string(), row.seed.to_string()];
        record.extend(columns.iter().map(|c| row.metrics.get(*c).map(f64::to_string).unwrap_or_default()));
        w.write_record(&record).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join(SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["metric", "n", "mean", "std"]).map_err(|e| csv_error(&path, e))?;
    for (metric, s) in &report.summary {
        let std = s.std.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([metric.clone(), s.n.to_string(), s.mean.to_string(), std])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let headline: BTreeMap<String, Vec<f64>> = ["dci.disentanglement", "dci.completeness", "dci.informativeness", "downstream.auroc"]
        .iter()
        .filter_map(|k| {
            let values: Vec<f64> = report.runs.iter().filter_map(|r| r.metrics.get(*k).copied()).collect();
            (!values.is_empty()).then(|| (k.to_string(), values))
        })
        .collect();
    write_distribution_figure(out, &headline)?;
    Ok(report)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}
