//! Report files.
//!
//! CSV: `#`-prefixed metadata lines (`schema_version`, `meta.<key>`,
//! `aggregate.<field>`), then a fixed header and one row per sample.
//! Divergences are `;`-separated. JSON-lines: a `meta` line, one `sample`
//! line per record and a closing `aggregate` line. Every row and line carries
//! `schema_version`. Wall time is never written so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use leantta_core::bench::{AblationCurve, RunReport, SampleRecord, SweepResult};
use leantta_core::shift::ShiftKind;
use leantta_core::OpCounts;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format::write_bytes;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 9] =
    ["schema_version", "id", "label", "predicted", "correct", "shift_kind", "severity", "divergences", "error"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            _ => Err(format!("unknown report format {s:?} (expected csv or jsonl)")),
        }
    }
}

impl ReportFormat {
    /// `.csv` is CSV, everything else JSON-lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::JsonLines,
        }
    }
}

fn report_err(path: &Path, detail: impl Into<String>) -> CliError {
    CliError::Report { path: path.to_path_buf(), detail: detail.into() }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn encode_csv(report: &RunReport) -> Result<Vec<u8>> {
    let mut head = String::new();
    let _ = writeln!(head, "# schema_version={SCHEMA_VERSION}");
    for (k, v) in &report.meta {
        let _ = writeln!(head, "# meta.{}={}", one_line(k), one_line(v));
    }
    let _ = writeln!(head, "# aggregate.samples={}", report.records.len());
    let _ = writeln!(head, "# aggregate.accuracy={}", opt_f64(report.accuracy));
    let _ = writeln!(head, "# aggregate.weighted_f1={}", opt_f64(report.weighted_f1));
    let o = &report.ops;
    let _ = writeln!(head, "# aggregate.float_mults={}", o.float_mults);
    let _ = writeln!(head, "# aggregate.int_mults={}", o.int_mults);
    let _ = writeln!(head, "# aggregate.dequant={}", o.dequant);
    let _ = writeln!(head, "# aggregate.requant={}", o.requant);
    let mut w = csv::Writer::from_writer(head.into_bytes());
    let csv_err = |e: csv::Error| leantta_core::Error::Unsupported(format!("csv encoding: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &report.records {
        let divs: Vec<String> = r.divergences.iter().map(|d| d.to_string()).collect();
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.id.to_string(),
            r.label.to_string(),
            r.predicted.map_or_else(String::new, |p| p.to_string()),
            (r.correct() as u8).to_string(),
            r.shift_kind.name().to_string(),
            r.severity.to_string(),
            divs.join(";"),
            r.error.as_deref().map(one_line).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| leantta_core::Error::Unsupported(format!("csv encoding: {e}")).into())
}

fn parse<T: FromStr>(path: &Path, field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| report_err(path, format!("bad {field} value {v:?}")))
}

fn parse_opt<T: FromStr>(path: &Path, field: &str, v: &str) -> Result<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        parse(path, field, v).map(Some)
    }
}

pub fn decode_csv(text: &str, path: &Path) -> Result<RunReport> {
    let mut meta = BTreeMap::new();
    let mut agg = BTreeMap::new();
    let mut schema = None;
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let Some(comment) = line.strip_prefix("# ") else { break };
        body_start += line.len();
        let comment = comment.trim_end_matches(['\n', '\r']);
        let (k, v) = comment.split_once('=').ok_or_else(|| report_err(path, format!("bad metadata line {comment:?}")))?;
        if k == "schema_version" {
            schema = Some(parse::<u32>(path, k, v)?);
        } else if let Some(k) = k.strip_prefix("meta.") {
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(k) = k.strip_prefix("aggregate.") {
            agg.insert(k.to_string(), v.to_string());
        }
    }
    if schema != Some(SCHEMA_VERSION) {
        return Err(report_err(path, format!("unsupported or missing schema version {schema:?}")));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(&text.as_bytes()[body_start..]);
    let header = rdr.headers().map_err(|e| report_err(path, e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(report_err(path, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| report_err(path, e.to_string()))?;
        if parse::<u32>(path, "schema_version", &row[0])? != SCHEMA_VERSION {
            return Err(report_err(path, "row with a different schema version"));
        }
        let divergences = if row[7].is_empty() {
            Vec::new()
        } else {
            row[7].split(';').map(|d| parse::<f64>(path, "divergence", d)).collect::<Result<_>>()?
        };
        records.push(SampleRecord {
            id: parse(path, "id", &row[1])?,
            label: parse(path, "label", &row[2])?,
            predicted: parse_opt(path, "predicted", &row[3])?,
            shift_kind: row[5].parse::<ShiftKind>().map_err(|e| report_err(path, e.to_string()))?,
            severity: parse(path, "severity", &row[6])?,
            divergences,
            error: (!row[8].is_empty()).then(|| row[8].to_string()),
        });
    }
    let get = |k: &str| agg.get(k).map(String::as_str).unwrap_or("");
    let ops = OpCounts {
        float_mults: parse(path, "float_mults", get("float_mults"))?,
        int_mults: parse(path, "int_mults", get("int_mults"))?,
        dequant: parse(path, "dequant", get("dequant"))?,
        requant: parse(path, "requant", get("requant"))?,
    };
    Ok(RunReport {
        meta,
        records,
        accuracy: parse_opt(path, "accuracy", get("accuracy"))?,
        weighted_f1: parse_opt(path, "weighted_f1", get("weighted_f1"))?,
        ops,
        wall_time_ms: None,
    })
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    kind: String,
    schema_version: u32,
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    kind: String,
    schema_version: u32,
    #[serde(flatten)]
    record: SampleRecord,
}

#[derive(Serialize, Deserialize)]
struct AggregateLine {
    kind: String,
    schema_version: u32,
    samples: usize,
    accuracy: Option<f64>,
    weighted_f1: Option<f64>,
    ops: OpCounts,
}

pub fn encode_jsonl(report: &RunReport) -> Result<Vec<u8>> {
    let enc = |v: serde_json::Result<String>| v.map_err(|e| leantta_core::Error::Unsupported(format!("json encoding: {e}")));
    let mut out = String::new();
    let meta = MetaLine { kind: "meta".into(), schema_version: SCHEMA_VERSION, meta: report.meta.clone() };
    out += &enc(serde_json::to_string(&meta))?;
    out.push('\n');
    for r in &report.records {
        let line = SampleLine { kind: "sample".into(), schema_version: SCHEMA_VERSION, record: r.clone() };
        out += &enc(serde_json::to_string(&line))?;
        out.push('\n');
    }
    let agg = AggregateLine {
        kind: "aggregate".into(),
        schema_version: SCHEMA_VERSION,
        samples: report.records.len(),
        accuracy: report.accuracy,
        weighted_f1: report.weighted_f1,
        ops: report.ops,
    };
    out += &enc(serde_json::to_string(&agg))?;
    out.push('\n');
    Ok(out.into_bytes())
}

pub fn decode_jsonl(text: &str, path: &Path) -> Result<RunReport> {
    let mut report = RunReport::default();
    let mut saw_aggregate = false;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |e: serde_json::Error| report_err(path, format!("line {}: {e}", i + 1));
        let value: serde_json::Value = serde_json::from_str(line).map_err(bad)?;
        if value.get("schema_version").and_then(|v| v.as_u64()) != Some(SCHEMA_VERSION as u64) {
            return Err(report_err(path, format!("line {}: unsupported or missing schema version", i + 1)));
        }
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("meta") => report.meta = serde_json::from_value::<MetaLine>(value).map_err(bad)?.meta,
            Some("sample") => report.records.push(serde_json::from_value::<SampleLine>(value).map_err(bad)?.record),
            Some("aggregate") => {
                let a: AggregateLine = serde_json::from_value(value).map_err(bad)?;
                if a.samples != report.records.len() {
                    return Err(report_err(path, format!("aggregate counts {} samples, file has {}", a.samples, report.records.len())));
                }
                report.accuracy = a.accuracy;
                report.weighted_f1 = a.weighted_f1;
                report.ops = a.ops;
                saw_aggregate = true;
            }
            other => return Err(report_err(path, format!("line {}: unknown record kind {other:?}", i + 1))),
        }
    }
    if !saw_aggregate {
        return Err(report_err(path, "missing aggregate record"));
    }
    Ok(report)
}

pub fn encode(report: &RunReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => encode_csv(report),
        ReportFormat::JsonLines => encode_jsonl(report),
    }
}

pub fn write_report(path: &Path, report: &RunReport, format: ReportFormat) -> Result<()> {
    write_bytes(path, &encode(report, format)?)
}

/// Read a report and check that its stored aggregates equal the values
/// recomputed from its records.
pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let report = match ReportFormat::from_path(path) {
        ReportFormat::Csv => decode_csv(&text, path)?,
        ReportFormat::JsonLines => decode_jsonl(&text, path)?,
    };
    let (acc, f1) = report.recompute();
    if acc != report.accuracy || f1 != report.weighted_f1 {
        return Err(report_err(
            path,
            format!("stored aggregates ({:?}, {:?}) differ from recomputed ({acc:?}, {f1:?})", report.accuracy, report.weighted_f1),
        ));
    }
    Ok(report)
}

fn comment_block(meta: &BTreeMap<String, String>) -> String {
    let mut s = format!("# schema_version={SCHEMA_VERSION}\n");
    for (k, v) in meta {
        let _ = writeln!(s, "# meta.{}={}", one_line(k), one_line(v));
    }
    s
}

pub fn encode_sweep_csv(sweep: &SweepResult, meta: &BTreeMap<String, String>) -> String {
    let mut s = comment_block(meta);
    let _ = writeln!(s, "# aggregate.source_accuracy={}", sweep.source_accuracy);
    s += "schema_version,tau,lambda,accuracy\n";
    let n = sweep.lambdas.len();
    for (i, a) in sweep.accuracy.iter().enumerate() {
        let _ = writeln!(s, "{SCHEMA_VERSION},{},{},{a}", sweep.taus[i / n], sweep.lambdas[i % n]);
    }
    s
}

pub fn encode_ablation_csv(curves: &[AblationCurve], meta: &BTreeMap<String, String>) -> String {
    let mut s = comment_block(meta);
    s += "schema_version,direction,k,adaptive_layers,accuracy\n";
    for c in curves {
        for p in &c.points {
            let ids: Vec<String> = p.adaptive_layers.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{SCHEMA_VERSION},{},{},\"{}\",{}", c.direction, p.k, ids.join(","), p.accuracy);
        }
    }
    s
}
