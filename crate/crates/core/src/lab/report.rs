//! Result tables: metric scores per run plus paired t-test cells, rendered
//! as CSV or an aligned markdown table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ComparisonResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub vocab: usize,
    pub epsilon: f64,
    pub meteor: f64,
    pub similarity: f64,
    pub bleu: f64,
    /// `None` on the baseline row it is compared against.
    pub meteor_test: Option<ComparisonResult>,
    pub similarity_test: Option<ComparisonResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

pub const HEADER: [&str; 7] = [
    "vocab",
    "epsilon",
    "METEOR",
    "similarity",
    "BLEU",
    "METEOR t, p",
    "similarity t, p",
];

/// Scores in `[0, 1]` print as percentages with two decimals.
pub fn format_score(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Two decimals, or `<0.01` below 0.01.
pub fn format_p(p: f64) -> String {
    if p < 0.01 {
        "<0.01".to_string()
    } else {
        format!("{p:.2}")
    }
}

pub fn format_t(t: f64) -> String {
    if t.is_infinite() {
        if t > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{t:.2}")
    }
}

fn test_cell(c: &Option<ComparisonResult>) -> String {
    match c {
        Some(c) => format!("{}, {}", format_t(c.t_stat), format_p(c.p_value)),
        None => "-".to_string(),
    }
}

impl ReportRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.vocab.to_string(),
            self.epsilon.to_string(),
            format_score(self.meteor),
            format_score(self.similarity),
            format_score(self.bleu),
            test_cell(&self.meteor_test),
            test_cell(&self.similarity_test),
        ]
    }
}

/// Aligned markdown table; the first column is left-aligned, the rest right.
pub fn render_markdown(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let body: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        format!("| {} |\n", body.join(" | "))
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if i == 0 {
                format!(":{}", "-".repeat(w.max(2) - 1))
            } else {
                format!("{}:", "-".repeat(w.max(2) - 1))
            }
        })
        .collect();
    out.push_str(&format!("| {} |\n", rule.join(" | ")));
    for r in rows {
        out.push_str(&line(r.clone()));
    }
    out
}

/// RFC 4180 CSV with `\n` line endings.
pub fn render_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| Error::data(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::data(format!("csv: {e}")))
}

pub fn render_report(table: &ReportTable, format: Format) -> Result<String> {
    let rows: Vec<Vec<String>> = table.rows.iter().map(ReportRow::cells).collect();
    match format {
        Format::Csv => render_csv(&HEADER, &rows),
        Format::Markdown => Ok(render_markdown(&HEADER, &rows)),
    }
}
