//! Re-reads an output directory, spot-checks the summary against its trace
//! files and renders a table.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

use super::execute::{SUMMARY_FILE, TRACE_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct Summarized {
    pub table: String,
    pub runs_checked: usize,
}

#[derive(Debug, Default)]
struct TraceTail {
    rows: usize,
    last_queries: Option<u64>,
    last_f: Option<f64>,
    last_grad: Option<f64>,
    min_grad: Option<f64>,
}

fn read_trace(path: &Path) -> Result<TraceTail> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Verification(vec![format!("{}: {other:?}", path.display())]),
    })?;
    let bad = |msg: String| Error::Verification(vec![format!("{}: {msg}", path.display())]);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("bad number `{s}`")))
        }
    };
    let mut tail = TraceTail::default();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        tail.rows += 1;
        tail.last_f = opt(&rec[1])?;
        tail.last_grad = opt(&rec[2])?;
        if let Some(g) = tail.last_grad {
            tail.min_grad = Some(tail.min_grad.map_or(g, |m: f64| m.min(g)));
        }
        tail.last_queries = Some(rec[7].parse().map_err(|_| bad(format!("bad count `{}`", &rec[7])))?);
    }
    Ok(tail)
}

fn num(v: &Value, key: &str) -> Option<f64> {
    v.get(key).and_then(Value::as_f64)
}

fn stat(v: &Value, key: &str) -> String {
    match (v[key].get("mean").and_then(Value::as_f64), v[key].get("std").and_then(Value::as_f64)) {
        (Some(m), Some(s)) => format!("{m:.4e} ± {s:.2e}"),
        _ => "-".into(),
    }
}

/// Loads `dir/summary.json`, checks each run's final iterate, query count
/// and minimum gradient norm against its trace file, and renders per-eta
/// statistics.
pub fn summarize(dir: &Path) -> Result<Summarized> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Verification(vec![format!("{}: {e}", path.display())]))?;
    let trace_every = summary["config"]["trace_every"].as_u64().unwrap_or(1);
    let runs = summary["runs"].as_array().cloned().unwrap_or_default();
    let mut problems = Vec::new();
    let mut checked = 0;
    for run in &runs {
        let Some(file) = run.get("trace_file").and_then(Value::as_str) else {
            continue;
        };
        let tail = read_trace(&dir.join(file))?;
        checked += 1;
        let mut mismatch = |what: &str| problems.push(format!("{file}: {what} disagrees with summary"));
        if tail.rows == 0 {
            mismatch("row count");
            continue;
        }
        if tail.last_queries != run.get("queries").and_then(Value::as_u64) {
            mismatch("queries");
        }
        if let Some(f) = num(run, "f_final") {
            if tail.last_f != Some(f) {
                mismatch("final F");
            }
        }
        if let Some(g) = num(run, "grad_norm_final") {
            if tail.last_grad != Some(g) {
                mismatch("final gradient norm");
            }
        }
        if let (Some(m), Some(trace_min)) = (num(run, "min_grad_norm"), tail.min_grad) {
            let consistent = if trace_every == 1 { trace_min == m } else { trace_min >= m };
            if !consistent {
                mismatch("minimum gradient norm");
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Verification(problems));
    }

    let mut table = String::new();
    let algorithm = summary["config"]["algorithm"].as_str().unwrap_or("?");
    let family = summary["problem"]["family"].as_str().unwrap_or("?");
    table.push_str(&format!("{algorithm} on {family}, T = {}\n", summary["config"]["T"]));
    table.push_str(&format!(
        "{:>10}  {:>5}  {:>8}  {:<24}  {:<24}  {:<24}\n",
        "eta", "seeds", "diverged", "|grad F(x_out)|", "min |grad F|", "F(x_T)"
    ));
    for e in summary["per_eta"].as_array().into_iter().flatten() {
        table.push_str(&format!(
            "{:>10}  {:>5}  {:>8}  {:<24}  {:<24}  {:<24}\n",
            e["eta"].to_string(),
            e["seeds"].to_string(),
            e["diverged"].to_string(),
            stat(e, "grad_norm_out"),
            stat(e, "min_grad_norm"),
            stat(e, "f_final"),
        ));
    }
    match summary["best_eta"].as_f64() {
        Some(b) => table.push_str(&format!("best eta: {b}\n")),
        None => table.push_str("best eta: none\n"),
    }
    Ok(Summarized {
        table,
        runs_checked: checked,
    })
}
