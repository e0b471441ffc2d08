//! Report files. Column orders are fixed:
//!
//! - `metrics.csv`: one header row of [`MetricsReport::SCALAR_NAMES`] and one value row
//! - `confusion.csv`: `matrix,truth,nue_cc,numu_cc,nc` for the count, recall and precision matrices
//! - `roc.csv`: `class,fpr,tpr,threshold`, thresholds descending from `inf` to `-inf`
//! - `report.jsonl`: a scalars record, a confusion record, then one record per ROC point

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::{EvalError, MetricsReport, RocPoint};
use crate::EventClass;

pub const REPORT_TXT: &str = "report.txt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const ROC_CSV: &str = "roc.csv";
pub const REPORT_JSONL: &str = "report.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Csv,
    Jsonl,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Text, ReportFormat::Csv, ReportFormat::Jsonl];
}

fn text(report: &MetricsReport) -> String {
    let mut s = String::new();
    let w = &mut s;
    writeln!(w, "{} | downsample factor {} | {} events\n", report.label, report.downsample_factor, report.events).unwrap();
    writeln!(w, "{:<18}{:>10}", "metric", "value").unwrap();
    for (name, v) in report.scalars().iter().skip(2) {
        writeln!(w, "{name:<18}{v:>10.4}").unwrap();
    }
    let header: String = EventClass::ALL.iter().map(|c| format!("{:>10}", c.key())).collect();
    for (title, m) in [
        ("recall matrix (rows: truth, columns: predicted)", &report.confusion.recall),
        ("precision matrix (rows: truth, columns: predicted)", &report.confusion.precision),
    ] {
        writeln!(w, "\n{title}\n{:<10}{header}", "").unwrap();
        for (t, row) in m.iter().enumerate() {
            let cells: String = row.iter().map(|v| format!("{v:>10.4}")).collect();
            writeln!(w, "{:<10}{cells}", EventClass::ALL[t].key()).unwrap();
        }
    }
    writeln!(w, "\ncounts (rows: truth, columns: predicted)\n{:<10}{header}", "").unwrap();
    for (t, row) in report.confusion.counts.iter().enumerate() {
        let cells: String = row.iter().map(|v| format!("{v:>10}")).collect();
        writeln!(w, "{:<10}{cells}", EventClass::ALL[t].key()).unwrap();
    }
    s
}

fn metrics_csv(report: &MetricsReport) -> String {
    let scalars = report.scalars();
    let header: Vec<&str> = scalars.iter().map(|s| s.0).collect();
    let values: Vec<String> = scalars.iter().map(|s| s.1.to_string()).collect();
    format!("{}\n{}\n", header.join(","), values.join(","))
}

fn confusion_csv(report: &MetricsReport) -> String {
    let mut s = String::from("matrix,truth,nue_cc,numu_cc,nc\n");
    let c = &report.confusion;
    for (t, class) in EventClass::ALL.iter().enumerate() {
        let row: Vec<String> = c.counts[t].iter().map(u64::to_string).collect();
        writeln!(s, "counts,{},{}", class.key(), row.join(",")).unwrap();
    }
    for (name, m) in [("recall", &c.recall), ("precision", &c.precision)] {
        for (t, class) in EventClass::ALL.iter().enumerate() {
            let row: Vec<String> = m[t].iter().map(f64::to_string).collect();
            writeln!(s, "{name},{},{}", class.key(), row.join(",")).unwrap();
        }
    }
    s
}

fn roc_csv(report: &MetricsReport) -> String {
    let mut s = String::from("class,fpr,tpr,threshold\n");
    for curve in &report.roc {
        for RocPoint { fpr, tpr, threshold } in &curve.points {
            writeln!(s, "{},{fpr},{tpr},{threshold}", curve.class.key()).unwrap();
        }
    }
    s
}

fn jsonl(report: &MetricsReport) -> String {
    let mut scalars = serde_json::Map::new();
    scalars.insert("record".into(), json!("scalars"));
    scalars.insert("label".into(), json!(report.label));
    for (name, v) in report.scalars() {
        scalars.insert(name.into(), json!(v));
    }
    let mut lines = vec![serde_json::Value::Object(scalars).to_string()];
    lines.push(
        json!({
            "record": "confusion",
            "counts": report.confusion.counts,
            "recall": report.confusion.recall,
            "precision": report.confusion.precision,
        })
        .to_string(),
    );
    for curve in &report.roc {
        for p in &curve.points {
            let mut v = serde_json::to_value(p).expect("point serialises");
            let obj = v.as_object_mut().expect("object");
            obj.insert("record".into(), json!("roc"));
            obj.insert("class".into(), json!(curve.class.key()));
            lines.push(v.to_string());
        }
    }
    lines.join("\n") + "\n"
}

/// Writes `report` into `dir` (created if missing) and returns the paths written.
pub fn emit_report(report: &MetricsReport, dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>, EvalError> {
    let dir = dir.as_ref();
    let io = |path: &Path, source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let files: Vec<(&str, String)> = match format {
        ReportFormat::Text => vec![(REPORT_TXT, text(report))],
        ReportFormat::Csv => vec![
            (METRICS_CSV, metrics_csv(report)),
            (CONFUSION_CSV, confusion_csv(report)),
            (ROC_CSV, roc_csv(report)),
        ],
        ReportFormat::Jsonl => vec![(REPORT_JSONL, jsonl(report))],
    };
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Parses the two-row `metrics.csv` layout back into name/value pairs.
pub fn parse_scalars_csv(text: &str) -> Result<Vec<(String, f64)>, EvalError> {
    let mut lines = text.lines();
    let (Some(header), Some(values)) = (lines.next(), lines.next()) else {
        return Err(EvalError::Parse("metrics csv needs a header and a value row".into()));
    };
    let names: Vec<&str> = header.split(',').collect();
    let vals: Vec<&str> = values.split(',').collect();
    if names.len() != vals.len() {
        return Err(EvalError::Parse("header and value rows differ in length".into()));
    }
    names
        .iter()
        .zip(vals)
        .map(|(n, v)| {
            v.parse::<f64>()
                .map(|x| (n.to_string(), x))
                .map_err(|_| EvalError::Parse(format!("column {n}: bad number {v:?}")))
        })
        .collect()
}
