use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{aggregate_runs, EvalError, Summary, TTest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterRow {
    pub writer: String,
    pub n_query: usize,
    pub wer: f64,
    pub cer: f64,
}

/// Per-writer results of one condition, already averaged over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub rows: Vec<WriterRow>,
    pub wer: f64,
    pub cer: f64,
}

impl EvalReport {
    /// Aggregates are unweighted means over writers.
    pub fn new(condition: impl Into<String>, rows: Vec<WriterRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let wer = rows.iter().map(|r| r.wer).sum::<f64>() / n;
        let cer = rows.iter().map(|r| r.cer).sum::<f64>() / n;
        EvalReport { condition: condition.into(), rows, wer, cer }
    }
}

/// Paired with/without-adaptation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub with_adaptation: EvalReport,
    pub without_adaptation: EvalReport,
    /// Mean WER without minus mean WER with adaptation.
    pub delta_wer: f64,
    pub test: TTest,
}

impl PairedReport {
    /// Welch test over the per-writer WER of two reports on the same writers.
    pub fn pair(with: EvalReport, without: EvalReport) -> Result<Self, EvalError> {
        let xs: Vec<f64> = with.rows.iter().map(|r| r.wer).collect();
        let ys: Vec<f64> = without.rows.iter().map(|r| r.wer).collect();
        let test = super::two_sample_t_test(&xs, &ys)?;
        Ok(PairedReport { delta_wer: without.wer - with.wer, with_adaptation: with, without_adaptation: without, test })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub wer: Summary,
    pub cer: Summary,
}

/// Mean and spread per condition over runs (e.g. seeds), in first-seen order.
pub fn summarize(reports: &[EvalReport]) -> Vec<ConditionSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.condition.as_str()) {
            order.push(&r.condition);
        }
    }
    order
        .into_iter()
        .map(|c| {
            let runs: Vec<&EvalReport> = reports.iter().filter(|r| r.condition == c).collect();
            let wer: Vec<f64> = runs.iter().map(|r| r.wer).collect();
            let cer: Vec<f64> = runs.iter().map(|r| r.cer).collect();
            ConditionSummary {
                condition: c.to_string(),
                wer: aggregate_runs(&wer).expect("non-empty"),
                cer: aggregate_runs(&cer).expect("non-empty"),
            }
        })
        .collect()
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Human-readable table; rates shown as percentages.
pub fn render_report(report: &EvalReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.writer.clone(), r.n_query.to_string(), pct(r.wer), pct(r.cer)])
        .collect();
    rows.push(vec!["mean".into(), String::new(), pct(report.wer), pct(report.cer)]);
    format!("condition: {}\n{}", report.condition, table(&["writer", "n_query", "WER", "CER"], &rows))
}

pub fn render_paired(p: &PairedReport) -> String {
    let rows: Vec<Vec<String>> = p
        .with_adaptation
        .rows
        .iter()
        .zip(&p.without_adaptation.rows)
        .map(|(a, b)| vec![a.writer.clone(), pct(b.wer), pct(a.wer), pct(b.wer - a.wer)])
        .collect();
    let mut out = table(&["writer", "WER without", "WER with", "delta"], &rows);
    let _ = writeln!(
        out,
        "mean delta WER {} (without - with); Welch t = {:.4}, df = {:.2}, p = {:.4}",
        pct(p.delta_wer),
        p.test.t,
        p.test.df,
        p.test.p
    );
    out
}

pub fn render_summaries(s: &[ConditionSummary]) -> String {
    let rows: Vec<Vec<String>> = s
        .iter()
        .map(|c| {
            vec![
                c.condition.clone(),
                c.wer.n.to_string(),
                format!("{} ± {}", pct(c.wer.mean), pct(c.wer.std)),
                pct(c.wer.best),
                format!("{} ± {}", pct(c.cer.mean), pct(c.cer.std)),
            ]
        })
        .collect();
    table(&["condition", "runs", "WER avg", "WER best", "CER avg"], &rows)
}

/// Rows `index,name,rate` in the given (model) order.
pub fn layer_lrs_csv(names: &[String], rates: &[f64]) -> String {
    let mut out = String::from("index,name,rate\n");
    for (i, (n, r)) in names.iter().zip(rates).enumerate() {
        let _ = writeln!(out, "{i},{n},{r:e}");
    }
    out
}

pub fn export_layer_lrs(names: &[String], rates: &[f64], path: &Path) -> Result<(), EvalError> {
    if names.len() != rates.len() {
        return Err(EvalError::LengthMismatch { predictions: rates.len(), references: names.len() });
    }
    std::fs::write(path, layer_lrs_csv(names, rates))?;
    Ok(())
}
