//! Report assembly: scored-run CSVs, protocol comparison tables, and
//! cross-seed aggregation.
//!
//! Every CSV written here starts with a `# config: {...}` comment line
//! echoing the resolved configuration that produced it; all readers in
//! this module skip `#` lines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::Protocol;
use crate::metrics::MetricReport;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv error: {0}")]
    Csv(String),
    #[error("no reports to aggregate")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::Csv(e.to_string())
    }
}

fn config_comment(config: &serde_json::Value) -> String {
    format!("# config: {config}\n")
}

/// Strip `#` comment lines so CSV parsers see clean input.
fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extract the config JSON from a `# config:` header line.
pub fn parse_config_header(text: &str) -> Option<serde_json::Value> {
    text.lines()
        .find_map(|l| l.strip_prefix("# config: "))
        .and_then(|json| serde_json::from_str(json).ok())
}

/// Columns: metric, value, n, excluded.
pub fn score_csv<T: Scalar>(
    report: &MetricReport<T>,
    prefix_spor: bool,
    config: &serde_json::Value,
) -> String {
    let mut out = config_comment(config);
    out.push_str("metric,value,n,excluded\n");
    let n = report.n_samples;
    let mut push = |metric: &str, value: T, n: usize, excluded: usize| {
        out.push_str(&format!("{metric},{value},{n},{excluded}\n"));
    };
    push("hca", report.hca, n, 0);
    push("leaf_acc", report.leaf_acc, n, 0);
    push("por", report.por, n, 0);
    if prefix_spor {
        push("s_por_prefix", report.s_por_prefix, n, 0);
        push("s_por", report.s_por, n, 0);
    } else {
        push("s_por", report.s_por, n, 0);
        push("s_por_prefix", report.s_por_prefix, n, 0);
    }
    if let Some(tor) = report.tor {
        push(
            "tor",
            tor,
            n - report.excluded.tor_short_paths,
            report.excluded.tor_short_paths,
        );
    }
    out
}

/// Depth-wise table: level, acc, acc|correct parent, acc|error parent,
/// delta, n, excluded. Levels flagged as singletons in the taxonomy are
/// marked excluded (the raw values stay in the table).
pub fn depthwise_csv<T: Scalar>(
    report: &MetricReport<T>,
    singleton_levels: Option<&[bool]>,
    config: &serde_json::Value,
) -> String {
    let fmt_opt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = config_comment(config);
    out.push_str("level,acc,acc_given_correct,acc_given_error,delta,n,excluded\n");
    for row in &report.per_level {
        let cond = report.conditional.iter().find(|c| c.level + 1 == row.level);
        let excluded = singleton_levels
            .and_then(|flags| flags.get(row.level - 1))
            .copied()
            .unwrap_or(false);
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.level,
            row.acc,
            fmt_opt(cond.and_then(|c| c.acc_given_correct)),
            fmt_opt(cond.and_then(|c| c.acc_given_error)),
            fmt_opt(cond.and_then(|c| c.delta)),
            row.n,
            excluded,
        ));
    }
    out
}

/// One protocol's headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow<T> {
    pub protocol: Protocol,
    pub hca: T,
    pub leaf_acc: T,
    pub tor: T,
    pub por: T,
    pub s_por: T,
}

/// Protocol comparison with absolute deltas against the joint row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolComparison<T> {
    pub rows: Vec<ComparisonRow<T>>,
}

impl<T: Scalar> ProtocolComparison<T> {
    pub fn from_reports(reports: &[(Protocol, MetricReport<T>)]) -> Self {
        let rows = reports
            .iter()
            .map(|(protocol, r)| ComparisonRow {
                protocol: *protocol,
                hca: r.hca,
                leaf_acc: r.leaf_acc,
                tor: r.tor.unwrap_or_else(T::zero),
                por: r.por,
                s_por: r.s_por,
            })
            .collect();
        Self { rows }
    }

    fn joint(&self) -> Option<&ComparisonRow<T>> {
        self.rows.iter().find(|r| r.protocol == Protocol::Joint)
    }

    /// Machine-readable CSV with explicit delta columns; parses back via
    /// [`ProtocolComparison::from_csv`].
    pub fn to_csv(&self, config: &serde_json::Value) -> String {
        let mut out = config_comment(config);
        out.push_str(
            "protocol,hca,hca_delta,leaf_acc,leaf_acc_delta,tor,tor_delta,por,por_delta,s_por,s_por_delta\n",
        );
        let joint = self.joint().cloned();
        for row in &self.rows {
            let d = |v: T, j: fn(&ComparisonRow<T>) -> T| {
                joint.as_ref().map(|jr| v - j(jr)).unwrap_or_else(T::zero)
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                row.protocol,
                row.hca,
                d(row.hca, |r| r.hca),
                row.leaf_acc,
                d(row.leaf_acc, |r| r.leaf_acc),
                row.tor,
                d(row.tor, |r| r.tor),
                row.por,
                d(row.por, |r| r.por),
                row.s_por,
                d(row.s_por, |r| r.s_por),
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let clean = strip_comments(text);
        let mut reader = csv::Reader::from_reader(clean.as_bytes());
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let get = |i: usize| -> Result<T, ReportError> {
                record
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .map(T::from_f64c)
                    .ok_or_else(|| ReportError::Csv(format!("bad field {i}")))
            };
            let protocol: Protocol = record
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(ReportError::Csv)?;
            rows.push(ComparisonRow {
                protocol,
                hca: get(1)?,
                leaf_acc: get(3)?,
                tor: get(5)?,
                por: get(7)?,
                s_por: get(9)?,
            });
        }
        Ok(Self { rows })
    }

    /// Human-readable table with deltas vs the joint row in parentheses,
    /// values in percent.
    pub fn render_table(&self) -> String {
        let joint = self.joint().cloned();
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22}{:>16}{:>16}{:>16}{:>16}{:>16}\n",
            "Protocol", "HCA", "LeafAcc", "TOR", "POR", "S-POR"
        ));
        for row in &self.rows {
            let cell = |v: T, j: fn(&ComparisonRow<T>) -> T| -> String {
                let pct = v.to_f64().unwrap_or(f64::NAN) * 100.0;
                match (&joint, row.protocol) {
                    (Some(jr), p) if p != Protocol::Joint => {
                        let delta = pct - j(jr).to_f64().unwrap_or(f64::NAN) * 100.0;
                        format!("{pct:.2} ({delta:+.2})")
                    }
                    _ => format!("{pct:.2}"),
                }
            };
            out.push_str(&format!(
                "{:<22}{:>16}{:>16}{:>16}{:>16}{:>16}\n",
                row.protocol.to_string(),
                cell(row.hca, |r| r.hca),
                cell(row.leaf_acc, |r| r.leaf_acc),
                cell(row.tor, |r| r.tor),
                cell(row.por, |r| r.por),
                cell(row.s_por, |r| r.s_por),
            ));
        }
        out
    }
}

/// Mean and population standard deviation of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow<T> {
    pub metric: String,
    pub mean: T,
    /// Population standard deviation (divisor n).
    pub std: T,
    pub n_runs: usize,
}

/// Merge headline metrics across seeds into mean +/- std rows.
pub fn aggregate_reports<T: Scalar>(
    reports: &[MetricReport<T>],
    prefix_spor: bool,
) -> Result<Vec<AggregateRow<T>>, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut by_metric: BTreeMap<&'static str, Vec<T>> = BTreeMap::new();
    for report in reports {
        for (name, value) in report.headline(prefix_spor) {
            by_metric.entry(name).or_default().push(value);
        }
    }
    Ok(by_metric
        .into_iter()
        .map(|(metric, values)| {
            let n = T::from_count(values.len());
            let mean = values.iter().copied().sum::<T>() / n;
            let var = values
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                / n;
            AggregateRow {
                metric: metric.to_string(),
                mean,
                std: var.sqrt(),
                n_runs: values.len(),
            }
        })
        .collect())
}

pub fn aggregate_csv<T: Scalar>(rows: &[AggregateRow<T>], config: &serde_json::Value) -> String {
    let mut out = config_comment(config);
    out.push_str("metric,mean,std,n_runs\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.metric, row.mean, row.std, row.n_runs
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::compute_report;
    use approx::assert_abs_diff_eq;

    fn report(masks: &[&[bool]]) -> MetricReport<f64> {
        let masks: Vec<Vec<bool>> = masks.iter().map(|m| m.to_vec()).collect();
        compute_report(&masks).unwrap()
    }

    #[test]
    fn comparison_csv_roundtrip() {
        let joint = report(&[&[true, false], &[false, false]]);
        let cond = report(&[&[true, true], &[true, false]]);
        let comparison = ProtocolComparison::from_reports(&[
            (Protocol::Joint, joint),
            (Protocol::Conditioned, cond),
        ]);
        let csv = comparison.to_csv(&serde_json::json!({"seed": 1}));
        let back = ProtocolComparison::<f64>::from_csv(&csv).unwrap();
        assert_eq!(back, comparison);
        assert_eq!(
            parse_config_header(&csv),
            Some(serde_json::json!({"seed": 1}))
        );
    }

    #[test]
    fn identical_runs_aggregate_with_zero_std() {
        let r = report(&[&[true, true], &[true, false]]);
        let rows = aggregate_reports(&[r.clone(), r.clone(), r], false).unwrap();
        for row in rows {
            assert_abs_diff_eq!(row.std, 0.0);
            assert_eq!(row.n_runs, 3);
        }
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        // HCA 0.2 and 0.4 -> mean 0.3, population std 0.1.
        let a = report(&[&[true, true], &[true, false], &[false, true], &[false, false], &[false, false]]);
        assert_abs_diff_eq!(a.hca, 0.2);
        let b = report(&[&[true, true], &[true, true], &[true, false], &[false, true], &[false, false]]);
        assert_abs_diff_eq!(b.hca, 0.4);
        let rows = aggregate_reports(&[a, b], false).unwrap();
        let hca = rows.iter().find(|r| r.metric == "hca").unwrap();
        assert_abs_diff_eq!(hca.mean, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(hca.std, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn render_table_marks_deltas() {
        let joint = report(&[&[false, false]]);
        let cond = report(&[&[true, true]]);
        let comparison = ProtocolComparison::from_reports(&[
            (Protocol::Joint, joint),
            (Protocol::Conditioned, cond),
        ]);
        let table = comparison.render_table();
        assert!(table.contains("(+100.00)"));
    }
}
