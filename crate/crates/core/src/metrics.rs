//! Gradient-invariance diagnostics, accuracy bookkeeping, and CSV/JSON
//! export of per-round reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::RoundReport;
use crate::vector::{dot, norm, GradientSet, ParamVector};

/// Which server direction the per-domain cosines were measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineReference {
    /// The reference aggregate `g_FL`.
    Reference,
    /// The matched direction `g_IGD`.
    Invariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `None` on rounds skipped by the evaluation stride.
    pub source_accuracy: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub generalization_gap: Option<f64>,
    pub per_domain_cosine: Vec<f64>,
    pub cosine_variance: f64,
    /// `None` when fewer than two clients took part.
    pub pairwise_gip: Option<f64>,
    pub cosine_reference: CosineReference,
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(a, b)? / (na * nb)).clamp(-1.0, 1.0))
}

/// Per-client cosine against `g_global` and their population variance.
pub fn invariance_report(grads: &GradientSet, g_global: &ParamVector) -> Result<(Vec<f64>, f64)> {
    let cosines = grads
        .gradients()
        .iter()
        .map(|g| cosine_similarity(g, g_global))
        .collect::<Result<Vec<_>>>()?;
    let n = cosines.len() as f64;
    let mean = cosines.iter().sum::<f64>() / n;
    let variance = cosines.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok((cosines, variance))
}

/// Mean pairwise inner product `2/(U(U−1)) Σ_{u<v} g_u·g_v`.
pub fn pairwise_gip(grads: &GradientSet) -> Result<f64> {
    let u = grads.len();
    if u < 2 {
        return Err(Error::InvalidInput(
            "pairwise inner product needs at least two clients".into(),
        ));
    }
    let gs = grads.gradients();
    let mut sum = 0.0;
    for i in 0..u {
        for j in i + 1..u {
            sum += dot(&gs[i], &gs[j])?;
        }
    }
    Ok(2.0 * sum / (u * (u - 1)) as f64)
}

/// `source_acc − target_acc`; negative values are allowed.
pub fn generalization_gap(source_acc: f64, target_acc: f64) -> f64 {
    source_acc - target_acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    /// Guesses from a path's extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ExportFormat::Json,
            _ => ExportFormat::Csv,
        }
    }
}

/// Fixed leading CSV columns; `gamma_0..gamma_{U−1}` follow.
pub const CSV_COLUMNS: [&str; 8] = [
    "round",
    "source_acc",
    "target_acc",
    "gen_gap",
    "cosine_var",
    "gip",
    "min_ip",
    "mean_ip",
];

/// One flattened row of the export schema.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportRow {
    pub round: usize,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
    pub gen_gap: Option<f64>,
    pub cosine_var: f64,
    pub gip: Option<f64>,
    pub min_ip: f64,
    pub mean_ip: f64,
    pub gamma: Vec<f64>,
}

impl From<&RoundReport> for ExportRow {
    fn from(r: &RoundReport) -> Self {
        ExportRow {
            round: r.round_index,
            source_acc: r.metrics.source_accuracy,
            target_acc: r.metrics.target_accuracy,
            gen_gap: r.metrics.generalization_gap,
            cosine_var: r.metrics.cosine_variance,
            gip: r.metrics.pairwise_gip,
            min_ip: r.aggregation.min_inner_product,
            mean_ip: r.aggregation.mean_inner_product,
            gamma: r.aggregation.gamma_star.as_slice().to_vec(),
        }
    }
}

// `Display` for f64 prints the shortest string that parses back to the same
// bits.
fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn json_num(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn json_opt(v: Option<f64>) -> serde_json::Value {
    v.map_or(serde_json::Value::Null, json_num)
}

pub fn write_csv<W: Write>(rows: &[ExportRow], out: W) -> csv::Result<()> {
    let width = rows.iter().map(|r| r.gamma.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..width).map(|u| format!("gamma_{u}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.round.to_string(),
            fmt_opt(r.source_acc),
            fmt_opt(r.target_acc),
            fmt_opt(r.gen_gap),
            fmt_num(r.cosine_var),
            fmt_opt(r.gip),
            fmt_num(r.min_ip),
            fmt_num(r.mean_ip),
        ];
        rec.extend((0..width).map(|u| r.gamma.get(u).map(|g| fmt_num(*g)).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json(rows: &[ExportRow]) -> serde_json::Value {
    let objects = rows
        .iter()
        .map(|r| {
            let mut obj = serde_json::Map::new();
            obj.insert("round".into(), r.round.into());
            obj.insert("source_acc".into(), json_opt(r.source_acc));
            obj.insert("target_acc".into(), json_opt(r.target_acc));
            obj.insert("gen_gap".into(), json_opt(r.gen_gap));
            obj.insert("cosine_var".into(), json_num(r.cosine_var));
            obj.insert("gip".into(), json_opt(r.gip));
            obj.insert("min_ip".into(), json_num(r.min_ip));
            obj.insert("mean_ip".into(), json_num(r.mean_ip));
            for (u, g) in r.gamma.iter().enumerate() {
                obj.insert(format!("gamma_{u}"), json_num(*g));
            }
            serde_json::Value::Object(obj)
        })
        .collect();
    serde_json::Value::Array(objects)
}

/// Writes one row/object per round to `path`.
pub fn export(records: &[RoundReport], format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows: Vec<ExportRow> = records.iter().map(ExportRow::from).collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ExportFormat::Csv => write_csv(&rows, &mut out).map_err(|e| {
            Error::io(path, std::io::Error::other(e))
        })?,
        ExportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &to_json(&rows))
                .map_err(|e| Error::io(path, e.into()))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses a CSV written by [`export`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ExportRow>> {
    let path = path.as_ref();
    let bad = |msg: String| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() < CSV_COLUMNS.len()
        || headers.iter().zip(CSV_COLUMNS).any(|(h, c)| h != c)
    {
        return Err(bad(format!("unexpected header {headers:?}")));
    }
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
        }
    };
    let req = |s: &str| -> Result<f64> {
        parse(s)?.ok_or_else(|| bad("missing required value".into()))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let gamma = rec
            .iter()
            .skip(CSV_COLUMNS.len())
            .map(parse)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        rows.push(ExportRow {
            round: rec[0].parse().map_err(|_| bad(format!("bad round {:?}", &rec[0])))?,
            source_acc: parse(&rec[1])?,
            target_acc: parse(&rec[2])?,
            gen_gap: parse(&rec[3])?,
            cosine_var: req(&rec[4])?,
            gip: parse(&rec[5])?,
            min_ip: req(&rec[6])?,
            mean_ip: req(&rec[7])?,
            gamma,
        });
    }
    Ok(rows)
}
