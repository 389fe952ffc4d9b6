use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::script::Attribute;
use crate::dialogue::Outcome;
use crate::error::{Error, Result};

/// Audit row for one simulated dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRow {
    pub round: u32,
    pub session_id: String,
    pub participant: u32,
    pub object: String,
    pub attribute: Attribute,
    pub opening: String,
    pub resolved_question: String,
    pub expected: String,
    pub answer: String,
    pub correct: bool,
    pub used_reference: bool,
    pub clarification_rounds: u32,
    pub outcome: Option<Outcome>,
    pub stored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub retrieval_enabled: bool,
    pub model_version: String,
    pub dialogues: usize,
    pub correct: usize,
    /// Mean over all dialogues of the round.
    pub accuracy: f64,
    pub per_object: BTreeMap<String, f64>,
    pub used_reference_rate: f64,
    /// Number of clarification questions asked -> dialogues.
    pub clarification_histogram: BTreeMap<u32, usize>,
    /// Events in the store when the round finished.
    pub events_after_round: usize,
}

impl RoundReport {
    pub fn from_rows(round: u32, retrieval_enabled: bool, model_version: &str, rows: &[DialogueRow], events: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let correct = rows.iter().filter(|r| r.correct).count();
        let mut by_object: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let mut histogram = BTreeMap::new();
        for r in rows {
            let e = by_object.entry(r.object.clone()).or_default();
            e.0 += usize::from(r.correct);
            e.1 += 1;
            *histogram.entry(r.clarification_rounds).or_insert(0) += 1;
        }
        Self {
            round,
            retrieval_enabled,
            model_version: model_version.to_owned(),
            dialogues: rows.len(),
            correct,
            accuracy: ratio(correct, rows.len()),
            per_object: by_object.into_iter().map(|(k, (c, n))| (k, ratio(c, n))).collect(),
            used_reference_rate: ratio(rows.iter().filter(|r| r.used_reference).count(), rows.len()),
            clarification_histogram: histogram,
            events_after_round: events,
        }
    }
}

/// One line of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportLine {
    Round(RoundReport),
    Dialogue(DialogueRow),
}

/// Aligned text table: one row per round, then per-object accuracy.
pub fn render_table(reports: &[RoundReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:<10} {:<9} {:>9} {:>8} {:>9} {:>9} {:>7}  clarifications",
        "round", "model", "retrieval", "dialogues", "correct", "accuracy", "used_ref", "events"
    );
    for r in reports {
        let hist = r.clarification_histogram.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "{:<6} {:<10} {:<9} {:>9} {:>8} {:>9.3} {:>9.3} {:>7}  {}",
            r.round,
            r.model_version,
            if r.retrieval_enabled { "on" } else { "off" },
            r.dialogues,
            r.correct,
            r.accuracy,
            r.used_reference_rate,
            r.events_after_round,
            hist
        );
    }
    let objects: Vec<&String> = reports.first().map(|r| r.per_object.keys().collect()).unwrap_or_default();
    if !objects.is_empty() {
        out.push('\n');
        let width = objects.iter().map(|o| o.len()).max().unwrap_or(6).max(6);
        let _ = write!(out, "{:<width$}", "object");
        for r in reports {
            let _ = write!(out, " {:>8}", format!("round{}", r.round));
        }
        out.push('\n');
        for o in objects {
            let _ = write!(out, "{:<width$}", o);
            for r in reports {
                let _ = write!(out, " {:>8.3}", r.per_object.get(o).copied().unwrap_or(0.0));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_jsonl(path: &Path, reports: &[RoundReport], rows: &[DialogueRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::storage("creating report file", e))?;
    let mut w = std::io::BufWriter::new(file);
    let lines = reports
        .iter()
        .cloned()
        .map(ReportLine::Round)
        .chain(rows.iter().cloned().map(ReportLine::Dialogue));
    for line in lines {
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::storage("writing report", e))?;
        w.write_all(b"\n").map_err(|e| Error::storage("writing report", e))?;
    }
    w.flush().map_err(|e| Error::storage("writing report", e))
}

pub fn read_jsonl(path: &Path) -> Result<(Vec<RoundReport>, Vec<DialogueRow>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::storage("opening report file", e))?;
    let (mut reports, mut rows) = (Vec::new(), Vec::new());
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::storage("reading report", e))?;
        if line.trim().is_empty() {
            continue;
        }
        // dispatch on `kind` by hand: serde's buffered enum path cannot read
        // the histogram's integer map keys back from JSON strings
        let parse = |e| Error::storage("parsing report", e);
        let value: serde_json::Value = serde_json::from_str(&line).map_err(parse)?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("round") => reports.push(serde_json::from_value(value).map_err(parse)?),
            Some("dialogue") => rows.push(serde_json::from_value(value).map_err(parse)?),
            other => return Err(Error::StorageFailure(format!("parsing report: unknown line kind {other:?}"))),
        }
    }
    Ok((reports, rows))
}
