//! File formats: system and library JSON, input and report CSV, and JSON
//! renderings of analysis results.
//!
//! JSON numbers are written in shortest round-trip form; CSV numbers with
//! 12 significant digits. Infinite values are written as the string `"inf"`.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::energy::{EnergyBound, EnergyReport, Witness};
use crate::error::{Error, Result};
use crate::gramian::GramianResult;
use crate::network::SweepRecord;
use crate::numerics::Matrix;
use crate::selection::{Actuator, ActuatorLibrary, MetricRow, Selection};
use crate::system::BilinearSystem;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    n: usize,
    m: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    f: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateFile {
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    candidates: Vec<CandidateFile>,
}

fn invalid(what: &str, e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{what}: {e}"))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| invalid(&path.display().to_string(), e))
}

/// Nested rows with a known column count; `n` empty rows give an `n x 0` matrix.
fn matrix(rows: &[Vec<f64>], n_rows: usize, n_cols: usize, name: &str) -> Result<Matrix> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::Shape(format!("{name} must be {n_rows}x{n_cols}")));
    }
    Matrix::new(n_rows, n_cols, rows.concat())
}

pub fn system_from_json(text: &str) -> Result<BilinearSystem> {
    let file: SystemFile = serde_json::from_str(text).map_err(|e| invalid("system JSON", e))?;
    let (n, m) = (file.n, file.m);
    if file.f.len() != m {
        return Err(Error::Shape(format!("F lists {} matrices, m = {m}", file.f.len())));
    }
    let a = matrix(&file.a, n, n, "A")?;
    let f = file
        .f
        .iter()
        .enumerate()
        .map(|(j, fj)| matrix(fj, n, n, &format!("F[{j}]")))
        .collect::<Result<_>>()?;
    let b = matrix(&file.b, n, m, "B")?;
    BilinearSystem::new(a, f, b)
}

pub fn system_to_json(sys: &BilinearSystem) -> String {
    let file = SystemFile {
        n: sys.n(),
        m: sys.m(),
        a: sys.a().to_rows(),
        f: sys.f().iter().map(Matrix::to_rows).collect(),
        b: sys.b().to_rows(),
    };
    serde_json::to_string_pretty(&file).expect("plain data serializes")
}

pub fn load_system(path: &Path) -> Result<BilinearSystem> {
    system_from_json(&read_file(path)?)
}

pub fn library_from_json(text: &str) -> Result<ActuatorLibrary> {
    let file: LibraryFile = serde_json::from_str(text).map_err(|e| invalid("library JSON", e))?;
    let n = file.a.len();
    let a = matrix(&file.a, n, n, "A")?;
    let candidates = file
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let f = matrix(&c.f, n, n, &format!("candidates[{i}].F"))?;
            if c.b.len() != n || c.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("candidates[{i}].B must have {n} finite entries")));
            }
            Ok(Actuator { f, b: c.b.clone() })
        })
        .collect::<Result<_>>()?;
    ActuatorLibrary::new(a, candidates)
}

pub fn library_to_json(lib: &ActuatorLibrary) -> String {
    let file = LibraryFile {
        a: lib.a().to_rows(),
        candidates: lib
            .candidates()
            .iter()
            .map(|c| CandidateFile {
                f: c.f.to_rows(),
                b: c.b.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("plain data serializes")
}

pub fn load_library(path: &Path) -> Result<ActuatorLibrary> {
    library_from_json(&read_file(path)?)
}

/// Finite numbers as JSON numbers, `+-inf` as strings, NaN as null.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        Value::Null
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn opt_num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

/// CSV cell with 12 significant digits.
pub fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, csv_num)
}

pub fn gramian_json(g: &GramianResult) -> Value {
    json!({
        "W": g.w,
        "method": g.method,
        "truncation_order": g.truncation_order,
        "residual": num(g.residual),
        "existence_rho": num(g.existence_rho),
    })
}

pub fn energy_bound_json(b: &EnergyBound, emit_psi: bool) -> Value {
    let mut v = json!({
        "beta": num(b.beta),
        "input_cap": num(b.input_cap),
        "G_negdef": b.g_negdef,
        "G_lambda_max": num(b.g_lambda_max),
        "cross_norm_sum": num(b.cross_norm_sum),
        "linear_norm_sum": num(b.linear_norm_sum),
    });
    if emit_psi {
        v["Psi"] = json!(b.psi);
    }
    v
}

pub fn metric_row_json(r: &MetricRow) -> Value {
    json!({
        "S": r.set,
        "trace": num(r.trace),
        "lambda_min": num(r.lambda_min),
        "log_det": opt_num(r.log_det),
        "det": opt_num(r.det),
    })
}

pub fn selection_json(s: &Selection, table: &[MetricRow]) -> Value {
    let singletons: serde_json::Map<String, Value> =
        s.singletons.iter().map(|(i, v)| (i.to_string(), num(*v))).collect();
    let excluded: Vec<Value> = s
        .excluded
        .iter()
        .map(|(i, why)| json!({"index": i, "reason": why}))
        .collect();
    json!({
        "S": s.set,
        "metric": s.metric.as_str(),
        "value": num(s.value),
        "singletons": singletons,
        "excluded": excluded,
        "table": table.iter().map(metric_row_json).collect::<Vec<_>>(),
    })
}

pub fn witness_json(w: &Witness) -> Value {
    json!({
        "a": num(w.a),
        "f": num(w.f),
        "w": num(w.w),
        "u0": num(w.u0),
        "u1": num(w.u1),
        "x_f": num(w.x_f),
        "energy": num(w.energy),
        "ratio": num(w.achieved_ratio),
    })
}

/// Input sequence with one row per step and an optional header line.
pub fn read_inputs_csv<R: Read>(reader: R, m: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| invalid("input CSV", e))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(invalid(&format!("input CSV row {}", line + 1), e)),
        };
        if row.len() != m {
            return Err(Error::Shape(format!(
                "input CSV row {} has {} values, expected {m}",
                line + 1,
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(invalid(&format!("input CSV row {}", line + 1), "non-finite value"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_inputs(path: &Path, m: usize) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| invalid(&path.display().to_string(), e))?;
    read_inputs_csv(file, m)
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

pub fn inputs_csv(inputs: &[Vec<f64>], m: usize) -> String {
    let header: Vec<String> = (1..=m).map(|j| format!("u{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(
        &header,
        inputs.iter().map(|u| u.iter().copied().map(csv_num).collect()),
    )
}

pub fn energy_report_csv(report: &EnergyReport) -> String {
    csv_string(
        &["k", "energy", "bound", "slack"],
        report.records.iter().map(|r| {
            vec![
                r.k.to_string(),
                csv_num(r.energy),
                csv_num(r.bound),
                csv_num(r.slack),
            ]
        }),
    )
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    csv_string(
        &[
            "n",
            "lambda_min_bilinear",
            "lambda_min_linear",
            "theorem8_bound",
            "assumptions_hold",
        ],
        records.iter().map(|r| {
            vec![
                r.n.to_string(),
                csv_opt(r.lambda_min_bilinear),
                csv_opt(r.lambda_min_linear),
                csv_opt(r.theorem8_bound),
                r.assumptions_hold.to_string(),
            ]
        }),
    )
}
