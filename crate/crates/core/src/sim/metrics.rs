//! Coverage metrics and their text, CSV and JSON-lines renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::scenario::{MethodOutcome, ReplicationRecord};
use crate::error::{Error, Result};
use crate::inference::IntervalMethod;

/// Share of failed replications above which a row is flagged.
pub const FLAG_FAILURE_RATE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: IntervalMethod,
    /// Coverage probability, percent.
    pub cp_pct: f64,
    /// Share of intervals entirely above the true mean, percent.
    pub l_pct: f64,
    /// Share of intervals entirely below the true mean, percent.
    pub u_pct: f64,
    /// Average length.
    pub al: f64,
    /// Replications in which the method produced an interval.
    pub completed: usize,
    pub failed: usize,
    /// More than 2% of the replications failed for this method.
    pub flagged: bool,
}

/// Aggregates counts per method. Percentages are relative to the completed
/// replications, so `%CP + %L + %U = 100`.
pub fn aggregate(methods: &[IntervalMethod], records: &[ReplicationRecord]) -> Vec<MetricsRow> {
    methods
        .iter()
        .map(|&m| {
            let (mut cover, mut low, mut high, mut failed) = (0usize, 0usize, 0usize, 0usize);
            let mut total_len = 0.0;
            for rec in records {
                match rec.outcomes.iter().find(|(t, _)| *t == m).map(|(_, o)| o) {
                    Some(MethodOutcome::Interval { lower, upper }) => {
                        total_len += upper - lower;
                        if rec.mu_y < *lower {
                            low += 1;
                        } else if rec.mu_y > *upper {
                            high += 1;
                        } else {
                            cover += 1;
                        }
                    }
                    _ => failed += 1,
                }
            }
            let done = cover + low + high;
            let pct = |c: usize| if done == 0 { f64::NAN } else { 100.0 * c as f64 / done as f64 };
            MetricsRow {
                method: m,
                cp_pct: pct(cover),
                l_pct: pct(low),
                u_pct: pct(high),
                al: if done == 0 { f64::NAN } else { total_len / done as f64 },
                completed: done,
                failed,
                flagged: failed as f64 > FLAG_FAILURE_RATE * records.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    TextTable,
    Csv,
    Jsonl,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "text_table" | "table" => Ok(OutputFormat::TextTable),
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" | "json" => Ok(OutputFormat::Jsonl),
            other => Err(Error::Validation(format!("unknown output format `{other}`"))),
        }
    }
}

const HEADER: [&str; 8] = ["method", "cp_pct", "l_pct", "u_pct", "al", "completed", "failed", "flagged"];

/// Renders rows with percentages to two decimals and lengths to three.
pub fn summarize(rows: &[MetricsRow], format: OutputFormat) -> String {
    match format {
        OutputFormat::TextTable => {
            let mut out = format!(
                "{:<10} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6}\n",
                "method", "%CP", "%L", "%U", "AL", "done", "failed"
            );
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:<10} {:>7.2} {:>7.2} {:>7.2} {:>7.3} {:>6} {:>6}{}",
                    r.method.tag(),
                    r.cp_pct,
                    r.l_pct,
                    r.u_pct,
                    r.al,
                    r.completed,
                    r.failed,
                    if r.flagged { "  *" } else { "" }
                );
            }
            out
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(HEADER).expect("in-memory write");
            for r in rows {
                w.write_record([
                    r.method.tag().to_string(),
                    format!("{:.2}", r.cp_pct),
                    format!("{:.2}", r.l_pct),
                    format!("{:.2}", r.u_pct),
                    format!("{:.3}", r.al),
                    r.completed.to_string(),
                    r.failed.to_string(),
                    r.flagged.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
        }
        OutputFormat::Jsonl => rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serialises") + "\n")
            .collect(),
    }
}
