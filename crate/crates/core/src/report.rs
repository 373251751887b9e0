//! Table rendering for per-seed metric reports.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{aggregate, Aggregate, MetricStat};
use crate::metrics::{paired_t_test, MetricReport, TTestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Marker appended to AVG when a row differs significantly from the
/// baseline.
pub const SIGNIFICANCE_MARKER: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub aggregate: Aggregate,
    /// Paired t-test of this row's AVG against the baseline, by seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub versus_baseline: Option<TTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub rows: Vec<ReportRow>,
}

/// Groups reports by scheme (first-appearance order) and runs the
/// significance tests against `baseline`.
pub fn build_table(records: &[MetricReport], baseline: Option<&str>) -> Result<ReportTable> {
    let first = records.first().ok_or_else(|| Error::Validation("no records to report".into()))?;
    if let Some(other) = records.iter().find(|r| r.dataset != first.dataset) {
        return Err(Error::Validation(format!(
            "records mix datasets {:?} and {:?}",
            first.dataset, other.dataset
        )));
    }
    let mut groups: Vec<(String, Vec<MetricReport>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(s, _)| *s == r.scheme) {
            Some((_, g)) => g.push(r.clone()),
            None => groups.push((r.scheme.clone(), vec![r.clone()])),
        }
    }
    for (scheme, g) in &mut groups {
        g.sort_by_key(|r| r.seed);
        if g.windows(2).any(|w| w[0].seed == w[1].seed) {
            return Err(Error::Validation(format!("scheme {scheme:?} has duplicate seeds")));
        }
    }
    let base = match baseline {
        Some(name) => Some(
            groups
                .iter()
                .find(|(s, _)| s == name)
                .map(|(_, g)| g.clone())
                .ok_or_else(|| Error::Config(format!("baseline {name:?} is not among the reported schemes")))?,
        ),
        None => None,
    };
    let mut rows = Vec::with_capacity(groups.len());
    for (_, g) in &groups {
        let versus_baseline = match &base {
            Some(b) => {
                let seeds: Vec<u64> = b.iter().map(|r| r.seed).collect();
                if seeds != g.iter().map(|r| r.seed).collect::<Vec<_>>() {
                    return Err(Error::Validation("significance tests need the same seeds in every row".into()));
                }
                let a: Vec<f64> = b.iter().map(|r| r.metrics.avg).collect();
                let x: Vec<f64> = g.iter().map(|r| r.metrics.avg).collect();
                Some(paired_t_test(&a, &x)?)
            }
            None => None,
        };
        rows.push(ReportRow {
            aggregate: aggregate(g)?,
            versus_baseline,
        });
    }
    Ok(ReportTable {
        dataset: first.dataset.clone(),
        baseline: baseline.map(str::to_owned),
        rows,
    })
}

/// Percent with one decimal, as `37.0±4.1`.
pub fn format_stat(s: &MetricStat) -> String {
    format!("{:.1}±{:.1}", 100.0 * s.mean, 100.0 * s.std)
}

fn stats(a: &Aggregate) -> [&MetricStat; 6] {
    [&a.avg, &a.acc, &a.nmi, &a.ari, &a.binary_f1, &a.macro_f1]
}

const COLUMNS: [&str; 6] = ["AVG", "ACC", "NMI", "ARI", "Binary F1", "Macro F1"];
const CSV_COLUMNS: [&str; 6] = ["avg", "acc", "nmi", "ari", "binary_f1", "macro_f1"];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn render_table(table: &ReportTable, format: ReportFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            writeln!(out, "Dataset: {}", table.dataset).unwrap();
            if let Some(b) = &table.baseline {
                writeln!(out, "Baseline: {b} ({SIGNIFICANCE_MARKER} marks p < 0.05)").unwrap();
            }
            writeln!(out).unwrap();
            writeln!(out, "| Scheme | {} |", COLUMNS.join(" | ")).unwrap();
            writeln!(out, "|---|{}", "---:|".repeat(COLUMNS.len())).unwrap();
            for row in &table.rows {
                let a = &row.aggregate;
                let mut cells: Vec<String> = stats(a).iter().map(|s| format_stat(s)).collect();
                if row.versus_baseline.is_some_and(|t| t.significant) {
                    cells[0].push_str(SIGNIFICANCE_MARKER);
                }
                writeln!(out, "| {} | {} |", a.scheme.replace('|', "\\|"), cells.join(" | ")).unwrap();
            }
        }
        ReportFormat::Csv => {
            writeln!(out, "scheme,stat,{},p_value", CSV_COLUMNS.join(",")).unwrap();
            for row in &table.rows {
                let a = &row.aggregate;
                let p = row.versus_baseline.map(|t| t.p_value.to_string()).unwrap_or_default();
                for (stat, pick) in [("mean", true), ("std", false)] {
                    let values: Vec<String> = stats(a)
                        .iter()
                        .map(|s| if pick { s.mean } else { s.std }.to_string())
                        .collect();
                    writeln!(out, "{},{stat},{},{p}", csv_field(&a.scheme), values.join(",")).unwrap();
                }
            }
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(table)?;
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn render_report(records: &[MetricReport], baseline: Option<&str>, format: ReportFormat) -> Result<String> {
    render_table(&build_table(records, baseline)?, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metrics;

    fn report(scheme: &str, seed: u64, avg_shift: f64) -> MetricReport {
        let v = 0.3 + 0.01 * seed as f64 + avg_shift;
        MetricReport {
            dataset: "purchase".into(),
            scheme: scheme.into(),
            seed,
            metrics: Metrics::from_components(v, v, v, v, v).unwrap(),
        }
    }

    fn two_schemes() -> Vec<MetricReport> {
        let mut r: Vec<MetricReport> = (0..5).map(|s| report("static", s, 0.0)).collect();
        r.extend((0..5).map(|s| report("cdac", s, if s % 2 == 0 { 0.1 } else { 0.12 })));
        r
    }

    #[test]
    fn stat_format_matches_tables() {
        assert_eq!(format_stat(&MetricStat { mean: 0.37, std: 0.041 }), "37.0±4.1");
    }

    #[test]
    fn markdown_has_one_row_per_scheme() {
        let md = render_report(&two_schemes(), Some("static"), ReportFormat::Markdown).unwrap();
        let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Scheme")).collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].starts_with("| static | 32.0±1.6 |"), "{}", rows[0]);
        assert!(rows[1].contains(SIGNIFICANCE_MARKER));
        assert!(!rows[0].contains(SIGNIFICANCE_MARKER));
    }

    #[test]
    fn csv_has_header_and_mean_std_rows() {
        let csv = render_report(&two_schemes(), None, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "scheme,stat,avg,acc,nmi,ari,binary_f1,macro_f1,p_value");
        assert!(lines[1].starts_with("static,mean,"));
        assert!(lines[2].starts_with("static,std,"));
    }

    #[test]
    fn json_round_trips() {
        let json = render_report(&two_schemes(), Some("static"), ReportFormat::Json).unwrap();
        let t: ReportTable = serde_json::from_str(&json).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].versus_baseline.unwrap().p_value, 1.0);
    }

    #[test]
    fn mixed_datasets_are_rejected() {
        let mut r = two_schemes();
        r[3].dataset = "delivery".into();
        assert!(render_report(&r, None, ReportFormat::Markdown).is_err());
        assert!(render_report(&[], None, ReportFormat::Markdown).is_err());
    }

    #[test]
    fn unknown_baseline_is_config_error() {
        let err = render_report(&two_schemes(), Some("dac"), ReportFormat::Csv).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
