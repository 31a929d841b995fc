//! QoE aggregation and JSON/CSV export.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abr::BitrateLadder;
use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;
use crate::fairness::FairnessResult;
use crate::sim::SessionTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoeReport {
    /// Number of adjacent segments whose representation differs.
    pub bitrate_changes: usize,
    pub stall_events: usize,
    pub stall_durations_s: Vec<f64>,
    /// Unweighted mean of per-segment nominal bitrates.
    pub mean_bitrate_kbps: f64,
    /// `(kbps, fraction of segments at or below)` for every ladder rung.
    pub bitrate_cdf: Vec<(f64, f64)>,
    /// `(seconds, fraction of sampled time at or below)`.
    pub buffer_cdf: Vec<(f64, f64)>,
}

pub fn summarize(trace: &SessionTrace, ladder: &BitrateLadder) -> QoeReport {
    let qualities: Vec<usize> = trace.quality_indices().collect();
    let bitrate_changes = qualities.windows(2).filter(|w| w[0] != w[1]).count();
    let n = qualities.len().max(1) as f64;
    let mean_bitrate_kbps = qualities.iter().map(|&q| ladder.bitrate(q)).sum::<f64>() / n;

    let bitrate_cdf = ladder
        .bitrates()
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, qualities.iter().filter(|&&q| q <= i).count() as f64 / n))
        .collect();

    QoeReport {
        bitrate_changes,
        stall_events: trace.stalls.len(),
        stall_durations_s: trace.stalls.iter().map(|s| s.duration_s).collect(),
        mean_bitrate_kbps,
        bitrate_cdf,
        buffer_cdf: buffer_cdf(&trace.buffer_series),
    }
}

/// Sample-and-hold CDF: each sample is weighted by the time until the next
/// one. Falls back to equal weights when the series spans no time.
fn buffer_cdf(series: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if series.is_empty() {
        return Vec::new();
    }
    let mut weighted: Vec<(f64, f64)> = series
        .windows(2)
        .map(|w| (w[0].1, w[1].0 - w[0].0))
        .filter(|&(_, dt)| dt > 0.0)
        .collect();
    if weighted.is_empty() {
        weighted = series.iter().map(|&(_, b)| (b, 1.0)).collect();
    }
    weighted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = weighted.iter().map(|&(_, w)| w).sum();

    let mut cdf: Vec<(f64, f64)> = Vec::new();
    let mut acc = 0.0;
    for (level, w) in weighted {
        acc += w;
        match cdf.last_mut() {
            Some(last) if last.0 == level => last.1 = acc / total,
            _ => cdf.push((level, acc / total)),
        }
    }
    if let Some(last) = cdf.last_mut() {
        last.1 = 1.0;
    }
    cdf
}

/// One line of a per-method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub bitrate_changes: usize,
    pub stall_events: usize,
    pub stall_durations_s: Vec<f64>,
    pub mean_bitrate_kbps: f64,
}

impl CompareRow {
    pub fn new(estimator: &EstimatorConfig, report: &QoeReport) -> Self {
        Self {
            method: estimator.label(),
            bitrate_changes: report.bitrate_changes,
            stall_events: report.stall_events,
            stall_durations_s: report.stall_durations_s.clone(),
            mean_bitrate_kbps: report.mean_bitrate_kbps,
        }
    }

    /// Stall durations as `"1.28, 0.9"`, or `--` when there were none.
    pub fn stall_time_cell(&self) -> String {
        if self.stall_durations_s.is_empty() {
            "--".to_string()
        } else {
            self.stall_durations_s
                .iter()
                .map(|d| format!("{d:.2}"))
                .collect::<Vec<_>>()
                .join(", ")
        }
    }
}

/// Renders rows as an aligned plain-text table.
pub fn comparison_table(rows: &[CompareRow]) -> String {
    let header = ["Method", "Bitrate Changes", "Stalling Events", "Time (s)", "Mean Bitrate (Kbps)"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.bitrate_changes.to_string(),
                r.stall_events.to_string(),
                r.stall_time_cell(),
                format!("{:.2}", r.mean_bitrate_kbps),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cols: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cols
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for row in &cells {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidParameter(format!(
                "unknown format '{other}' (expected json or csv)"
            ))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Json => "json",
            Self::Csv => "csv",
        })
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

/// Something that can be written as JSON or as `field,key,value` CSV rows.
pub trait Export: Serialize {
    fn csv_rows(&self) -> Vec<[String; 3]>;

    fn export<W: Write>(&self, format: Format, mut sink: W) -> Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut sink, self)?;
                sink.write_all(b"\n")?;
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(sink);
                w.write_record(["field", "key", "value"])?;
                for row in self.csv_rows() {
                    w.write_record(&row)?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}

impl Export for QoeReport {
    fn csv_rows(&self) -> Vec<[String; 3]> {
        let mut rows = vec![
            ["bitrate_changes".into(), String::new(), self.bitrate_changes.to_string()],
            ["stall_events".into(), String::new(), self.stall_events.to_string()],
        ];
        rows.extend(
            self.stall_durations_s
                .iter()
                .enumerate()
                .map(|(i, d)| ["stall_duration_s".into(), i.to_string(), f4(*d)]),
        );
        rows.push(["mean_bitrate_kbps".into(), String::new(), f4(self.mean_bitrate_kbps)]);
        rows.extend(
            self.bitrate_cdf
                .iter()
                .map(|(x, p)| ["bitrate_cdf".into(), f4(*x), f4(*p)]),
        );
        rows.extend(
            self.buffer_cdf
                .iter()
                .map(|(x, p)| ["buffer_cdf".into(), f4(*x), f4(*p)]),
        );
        rows
    }
}

impl Export for FairnessResult {
    fn csv_rows(&self) -> Vec<[String; 3]> {
        let mut rows: Vec<[String; 3]> = self
            .per_client_avg_kbps
            .iter()
            .enumerate()
            .map(|(i, x)| ["per_client_avg_kbps".into(), i.to_string(), f4(*x)])
            .collect();
        rows.push(["jfi".into(), String::new(), f4(self.jfi)]);
        rows.push(["total_avg_kbps".into(), String::new(), f4(self.total_avg_kbps)]);
        rows
    }
}

impl Export for Vec<CompareRow> {
    fn csv_rows(&self) -> Vec<[String; 3]> {
        self.iter()
            .flat_map(|r| {
                let mut rows = vec![
                    ["bitrate_changes".into(), r.method.clone(), r.bitrate_changes.to_string()],
                    ["stall_events".into(), r.method.clone(), r.stall_events.to_string()],
                ];
                rows.extend(
                    r.stall_durations_s
                        .iter()
                        .map(|d| ["stall_duration_s".into(), r.method.clone(), f4(*d)]),
                );
                rows.push(["mean_bitrate_kbps".into(), r.method.clone(), f4(r.mean_bitrate_kbps)]);
                rows
            })
            .collect()
    }

    fn export<W: Write>(&self, format: Format, mut sink: W) -> Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut sink, self)?;
                sink.write_all(b"\n")?;
            }
            // one row per method reads better than the long format here
            Format::Csv => {
                let mut w = csv::Writer::from_writer(sink);
                w.write_record([
                    "method",
                    "bitrate_changes",
                    "stall_events",
                    "stall_time_s",
                    "mean_bitrate_kbps",
                ])?;
                for r in self {
                    w.write_record([
                        r.method.clone(),
                        r.bitrate_changes.to_string(),
                        r.stall_events.to_string(),
                        r.stall_time_cell(),
                        f4(r.mean_bitrate_kbps),
                    ])?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}

/// Reads a report back from its CSV export.
pub fn parse_report_csv<R: Read>(source: R) -> Result<QoeReport> {
    let mut reader = csv::Reader::from_reader(source);
    let mut report = QoeReport {
        bitrate_changes: 0,
        stall_events: 0,
        stall_durations_s: Vec::new(),
        mean_bitrate_kbps: 0.0,
        bitrate_cdf: Vec::new(),
        buffer_cdf: Vec::new(),
    };
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("bad {what}"),
        };
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad("number"))
        };
        let count = |i: usize| -> Result<usize> {
            record
                .get(i)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| bad("count"))
        };
        match record.get(0).unwrap_or("") {
            "bitrate_changes" => report.bitrate_changes = count(2)?,
            "stall_events" => report.stall_events = count(2)?,
            "stall_duration_s" => report.stall_durations_s.push(num(2)?),
            "mean_bitrate_kbps" => report.mean_bitrate_kbps = num(2)?,
            "bitrate_cdf" => report.bitrate_cdf.push((num(1)?, num(2)?)),
            "buffer_cdf" => report.buffer_cdf.push((num(1)?, num(2)?)),
            other => return Err(bad(&format!("field '{other}'"))),
        }
    }
    Ok(report)
}
