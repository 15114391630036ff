//! Record persistence and table / plot-data rendering.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::algorithms::{HParams, Method};
use crate::error::Result;
use crate::harness::{aggregate, aggregate_env_averaged, RunRecord, SweepPoint, SweepRecord};

pub const RECORD_HEADER: [&str; 11] = [
    "problem",
    "algorithm",
    "env",
    "repetition",
    "test_error",
    "valid_error",
    "lr",
    "weight_decay",
    "lambda",
    "tau",
    "diverged",
];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    problem: String,
    algorithm: Method,
    env: usize,
    repetition: usize,
    test_error: f64,
    valid_error: f64,
    lr: f64,
    weight_decay: f64,
    lambda: f64,
    tau: f64,
    diverged: bool,
}

impl From<&RunRecord> for CsvRecord {
    fn from(r: &RunRecord) -> Self {
        Self {
            problem: r.problem.clone(),
            algorithm: r.algorithm,
            env: r.env,
            repetition: r.repetition,
            test_error: r.test_error,
            valid_error: r.valid_error,
            lr: r.hparams.lr,
            weight_decay: r.hparams.weight_decay,
            lambda: r.hparams.lambda,
            tau: r.hparams.tau,
            diverged: r.diverged,
        }
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_records<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = writer(out);
    for r in records {
        w.serialize(CsvRecord::from(r))?;
    }
    if records.is_empty() {
        w.write_record(RECORD_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record CSV. The step count is not stored and comes back as 0.
pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let c: CsvRecord = row?;
        out.push(RunRecord {
            problem: c.problem,
            algorithm: c.algorithm,
            env: c.env,
            repetition: c.repetition,
            test_error: c.test_error,
            valid_error: c.valid_error,
            hparams: HParams {
                method: c.algorithm,
                lr: c.lr,
                weight_decay: c.weight_decay,
                lambda: c.lambda,
                tau: c.tau,
                steps: 0,
            },
            diverged: c.diverged,
        });
    }
    Ok(out)
}

/// Sweep records: the record columns preceded by `axis_value`.
pub fn write_sweep_records<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["axis_value"];
    header.extend(RECORD_HEADER);
    w.write_record(&header)?;
    for s in records {
        let r = &s.record;
        w.write_record([
            s.axis_value.to_string(),
            r.problem.clone(),
            r.algorithm.to_string(),
            r.env.to_string(),
            r.repetition.to_string(),
            r.test_error.to_string(),
            r.valid_error.to_string(),
            r.hparams.lr.to_string(),
            r.hparams.weight_decay.to_string(),
            r.hparams.lambda.to_string(),
            r.hparams.tau.to_string(),
            r.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_cell(mean: f64, spread: f64) -> String {
    format!("{mean:.2} ± {spread:.2}")
}

pub const MISSING_CELL: &str = "—";

/// `example1s` → `Example1s`.
fn row_name(problem: &str) -> String {
    let mut c = problem.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Grid {
    columns: Vec<Method>,
    rows: Vec<(String, Vec<String>)>,
}

fn grid(records: &[RunRecord]) -> Grid {
    let cells = aggregate(records);
    let columns: Vec<Method> = records
        .iter()
        .map(|r| r.algorithm)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let row_keys: BTreeSet<(String, usize)> =
        records.iter().map(|r| (r.problem.clone(), r.env)).collect();
    let rows = row_keys
        .into_iter()
        .map(|(problem, env)| {
            let label = format!("{}.E{env}", row_name(&problem));
            let vals = columns
                .iter()
                .map(|&m| {
                    cells.get(&(problem.clone(), m, env)).map_or_else(
                        || MISSING_CELL.to_string(),
                        |s| format_cell(s.mean, s.spread),
                    )
                })
                .collect();
            (label, vals)
        })
        .collect();
    Grid { columns, rows }
}

/// Aligned plain-text table: one row per (problem, environment), one column
/// per algorithm in alphabetical order.
pub fn render_table(records: &[RunRecord]) -> String {
    let g = grid(records);
    let width = |s: &str| s.chars().count();
    let label_w = g.rows.iter().map(|(l, _)| width(l)).max().unwrap_or(0);
    let col_w: Vec<usize> = g
        .columns
        .iter()
        .enumerate()
        .map(|(j, m)| {
            g.rows
                .iter()
                .map(|(_, v)| width(&v[j]))
                .chain(std::iter::once(m.name().len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - width(s)));
    let mut out = String::new();
    out.push_str(&pad("", label_w));
    for (m, &w) in g.columns.iter().zip(&col_w) {
        out.push_str("  ");
        out.push_str(&pad(m.name(), w));
    }
    out.push('\n');
    for (label, vals) in &g.rows {
        out.push_str(&pad(label, label_w));
        for (v, &w) in vals.iter().zip(&col_w) {
            out.push_str("  ");
            out.push_str(&pad(v, w));
        }
        out.push('\n');
    }
    out
}

/// The same table as comma-separated values.
pub fn table_csv(records: &[RunRecord]) -> Result<String> {
    let g = grid(records);
    let mut w = writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend(g.columns.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for (label, vals) in &g.rows {
        let mut rec = vec![label.clone()];
        rec.extend(vals.iter().cloned());
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8 fields"))
}

/// Environment-averaged test error per (problem, algorithm).
pub fn plot_data_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = writer(Vec::new());
    w.write_record(["problem", "algorithm", "mean_error", "spread", "n"])?;
    for ((problem, method), s) in aggregate_env_averaged(records) {
        w.write_record([
            problem,
            method.to_string(),
            s.mean.to_string(),
            s.spread.to_string(),
            s.n.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8 fields"))
}

/// One row per (axis value, problem, algorithm), in the order given.
pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = writer(Vec::new());
    w.write_record([
        "axis_value",
        "problem",
        "algorithm",
        "mean_error",
        "spread",
        "n",
    ])?;
    for p in points {
        w.write_record([
            p.axis_value.to_string(),
            p.problem.clone(),
            p.algorithm.to_string(),
            p.summary.mean.to_string(),
            p.summary.spread.to_string(),
            p.summary.n.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8 fields"))
}
