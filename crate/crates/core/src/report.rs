//! Result emission: CSV rows, learning-curve files, and the
//! env-by-scheme comparison table.
//!
//! The CSV layout is one row per run with the header
//! `env,scheme,rho,seed,eps_pb,eps_ms`; float fields use a fixed
//! scientific format so repeated runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{CurvePoint, EvalReport, Scheme};

pub const CSV_HEADER: &str = "env,scheme,rho,seed,eps_pb,eps_ms";

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub env: String,
    pub scheme: String,
    pub rho: f64,
    pub seed: u64,
    pub eps_pb: f64,
    pub eps_ms: f64,
}

impl From<&EvalReport> for ResultRow {
    fn from(report: &EvalReport) -> Self {
        Self {
            env: report.env.clone(),
            scheme: report.scheme.name().to_string(),
            rho: report.rho,
            seed: report.seed,
            eps_pb: report.eps_pb,
            eps_ms: report.eps_ms,
        }
    }
}

fn fmt_eps(x: f64) -> String {
    format!("{x:.8e}")
}

/// Render rows as a CSV document (header included).
pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.env,
            row.scheme,
            row.rho,
            row.seed,
            fmt_eps(row.eps_pb),
            fmt_eps(row.eps_ms)
        );
    }
    out
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::write(path, csv_string(rows))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("bad CSV record: {e}")))?;
        if record.len() != 6 {
            return Err(Error::Parse(format!(
                "expected 6 CSV fields, got {}",
                record.len()
            )));
        }
        let field = |i: usize| record.get(i).unwrap().trim();
        rows.push(ResultRow {
            env: field(0).to_string(),
            scheme: field(1).to_string(),
            rho: field(2)
                .parse()
                .map_err(|e| Error::Parse(format!("bad rho: {e}")))?,
            seed: field(3)
                .parse()
                .map_err(|e| Error::Parse(format!("bad seed: {e}")))?,
            eps_pb: field(4)
                .parse()
                .map_err(|e| Error::Parse(format!("bad eps_pb: {e}")))?,
            eps_ms: field(5)
                .parse()
                .map_err(|e| Error::Parse(format!("bad eps_ms: {e}")))?,
        });
    }
    Ok(rows)
}

/// Render a learning curve as JSON lines, one checkpoint per line.
pub fn curve_jsonl(points: &[CurvePoint]) -> String {
    let mut out = String::new();
    for point in points {
        let line = serde_json::to_string(point).expect("curve point serializes");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    std::fs::write(path, curve_jsonl(points))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Md,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "md" => Ok(TableFormat::Md),
            other => Err(Error::InvalidConfig(format!("unknown table format '{other}'"))),
        }
    }
}

fn scheme_order(names: &mut Vec<String>) {
    names.sort_by_key(|name| {
        Scheme::ALL
            .iter()
            .position(|s| s.name() == name)
            .unwrap_or(usize::MAX)
    });
}

/// Ranks of the three lowest finite values (1 = lowest).
fn low_three_ranks(values: &[f64]) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..values.len())
        .filter(|&i| values[i].is_finite())
        .collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![None; values.len()];
    for (rank, &i) in order.iter().take(3).enumerate() {
        ranks[i] = Some(rank + 1);
    }
    ranks
}

/// Group rows by environment and scheme (averaging over seeds and rhos)
/// and mark the three lowest cells of each row per metric. The markdown
/// format renders one table per metric; the CSV format is long-form with
/// a rank column.
pub fn format_table(rows: &[ResultRow], format: TableFormat) -> String {
    // env -> scheme -> accumulated (sum, count) per metric.
    let mut grid: BTreeMap<String, BTreeMap<String, (f64, f64, usize)>> = BTreeMap::new();
    let mut scheme_names: Vec<String> = Vec::new();
    for row in rows {
        let cell = grid
            .entry(row.env.clone())
            .or_default()
            .entry(row.scheme.clone())
            .or_insert((0.0, 0.0, 0));
        cell.0 += row.eps_pb;
        cell.1 += row.eps_ms;
        cell.2 += 1;
        if !scheme_names.contains(&row.scheme) {
            scheme_names.push(row.scheme.clone());
        }
    }
    scheme_order(&mut scheme_names);

    let metric = |env_cells: &BTreeMap<String, (f64, f64, usize)>, name: &str, pb: bool| {
        env_cells
            .get(name)
            .map(|(s_pb, s_ms, c)| {
                if pb {
                    s_pb / *c as f64
                } else {
                    s_ms / *c as f64
                }
            })
            .unwrap_or(f64::NAN)
    };

    let mut out = String::new();
    match format {
        TableFormat::Md => {
            for (label, pb) in [("eps_pb", true), ("eps_ms", false)] {
                let _ = writeln!(out, "## {label}");
                let _ = write!(out, "| env |");
                for name in &scheme_names {
                    let _ = write!(out, " {name} |");
                }
                out.push('\n');
                let _ = write!(out, "|---|");
                for _ in &scheme_names {
                    let _ = write!(out, "---|");
                }
                out.push('\n');
                for (env, cells) in &grid {
                    let values: Vec<f64> = scheme_names
                        .iter()
                        .map(|name| metric(cells, name, pb))
                        .collect();
                    let ranks = low_three_ranks(&values);
                    let _ = write!(out, "| {env} |");
                    for (value, rank) in values.iter().zip(&ranks) {
                        let text = if value.is_nan() {
                            "NaN".to_string()
                        } else {
                            format!("{value:.1e}")
                        };
                        let cell = match rank {
                            Some(1) => format!("**{text}**"),
                            Some(2) => format!("*{text}*"),
                            Some(3) => format!("_{text}_"),
                            _ => text,
                        };
                        let _ = write!(out, " {cell} |");
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        TableFormat::Csv => {
            out.push_str("env,metric,scheme,value,rank\n");
            for (env, cells) in &grid {
                for (label, pb) in [("eps_pb", true), ("eps_ms", false)] {
                    let values: Vec<f64> = scheme_names
                        .iter()
                        .map(|name| metric(cells, name, pb))
                        .collect();
                    let ranks = low_three_ranks(&values);
                    for ((name, value), rank) in
                        scheme_names.iter().zip(&values).zip(&ranks)
                    {
                        let rank_text =
                            rank.map(|r| r.to_string()).unwrap_or_default();
                        let _ = writeln!(
                            out,
                            "{env},{label},{name},{},{rank_text}",
                            fmt_eps(*value)
                        );
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(env: &str, scheme: &str, eps_pb: f64, eps_ms: f64) -> ResultRow {
        ResultRow {
            env: env.into(),
            scheme: scheme.into(),
            rho: 0.49,
            seed: 0,
            eps_pb,
            eps_ms,
        }
    }

    #[test]
    fn single_run_single_row() {
        let text = csv_string(&[row("h6", "p01", 1.5, 2.5)]);
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("h6,p01,0.49,0,"));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("h6", "p01", 1.5, 2.5), row("h6", "pinf", 0.001, 4.0)];
        let dir = std::env::temp_dir().join("bias_eval_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.csv");
        write_csv(&path, &rows).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].env, "h6");
        assert!((back[1].eps_pb - 0.001).abs() < 1e-12);
    }

    #[test]
    fn sweep_rows_and_marking_consistent_with_sorting() {
        let names = [
            "buw", "p01", "p02am", "p02tv", "p02ot", "p02md", "paxtv", "paxot", "paxmd", "pinf",
        ];
        let rows: Vec<ResultRow> = names
            .iter()
            .enumerate()
            .map(|(i, name)| row("h6", name, (10 - i) as f64, i as f64 + 1.0))
            .collect();
        assert_eq!(csv_string(&rows).trim_end().lines().count(), 11);

        let table = format_table(&rows, TableFormat::Csv);
        let mut marked: Vec<(String, f64, usize)> = Vec::new();
        for line in table.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts[1] == "eps_pb" && !parts[4].is_empty() {
                marked.push((
                    parts[2].to_string(),
                    parts[3].parse().unwrap(),
                    parts[4].parse().unwrap(),
                ));
            }
        }
        marked.sort_by_key(|(_, _, rank)| *rank);
        assert_eq!(marked.len(), 3);
        // Lowest three eps_pb values are 1, 2, 3 (pinf, paxmd, paxot).
        assert_eq!(marked[0].0, "pinf");
        assert!(marked[0].1 < marked[1].1 && marked[1].1 < marked[2].1);
    }

    #[test]
    fn curve_line_count_matches_checkpoints() {
        let points: Vec<CurvePoint> = (1..=7)
            .map(|k| CurvePoint {
                checkpoint: k,
                trials: k * 10,
                eps_pb: 1.0 / k as f64,
                eps_ms: 2.0 / k as f64,
            })
            .collect();
        assert_eq!(curve_jsonl(&points).lines().count(), 7);
    }

    #[test]
    fn md_table_contains_bold_lowest() {
        let rows = vec![
            row("h6", "p01", 10.0, 10.0),
            row("h6", "pinf", 0.5, 0.5),
            row("h6", "buw", 100.0, 100.0),
        ];
        let table = format_table(&rows, TableFormat::Md);
        assert!(table.contains("**5.0e-1**"));
    }
}
