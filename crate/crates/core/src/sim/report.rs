use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub seed: u64,
    pub time_to_frontend_s: Option<f64>,
    pub queries: u64,
    pub handshakes: u64,
    pub transfers: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" | "text" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}; use table, json or csv")),
        }
    }
}

impl Report {
    /// Models in first-appearance order with their median time to frontend.
    pub fn medians(&self) -> Vec<(String, Option<f64>)> {
        let mut models: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        models
            .into_iter()
            .map(|m| {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.model == m).filter_map(|r| r.time_to_frontend_s).collect();
                (m.to_string(), median(&v))
            })
            .collect()
    }
}

pub fn emit_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("reports serialize") + "\n",
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["model", "seed", "time_to_frontend_s", "queries", "handshakes", "transfers"]).expect("in memory");
            for r in &report.rows {
                let ttf = r.time_to_frontend_s.map(|t| format!("{t:.6}")).unwrap_or_default();
                w.write_record([
                    r.model.clone(),
                    r.seed.to_string(),
                    ttf,
                    r.queries.to_string(),
                    r.handshakes.to_string(),
                    r.transfers.to_string(),
                ])
                .expect("in memory");
            }
            String::from_utf8(w.into_inner().expect("in memory")).expect("utf-8")
        }
        ReportFormat::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "{:<6} {:>10} {:>20} {:>8} {:>10} {:>9}", "model", "seed", "time_to_frontend_s", "queries", "handshakes", "transfers");
            for r in &report.rows {
                let ttf = r.time_to_frontend_s.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(s, "{:<6} {:>10} {:>20} {:>8} {:>10} {:>9}", r.model, r.seed, ttf, r.queries, r.handshakes, r.transfers);
            }
            for (m, med) in report.medians() {
                let med = med.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(s, "median {m}: {med} s");
            }
            s
        }
    }
}
