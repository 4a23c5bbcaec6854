//! Wide-format plot tables from metric logs.
//!
//! One step column plus one column per run; mismatched step grids are
//! outer-joined, with blanks where a run has no value. Any plotting tool
//! that reads delimiter-separated text can consume the output.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{BenchError, Result};
use crate::records::{read_metrics, METRICS_FILE};

/// Render values with 12 significant digits, enough to round-trip the
/// metric stream for plotting purposes.
pub fn format_value(value: f64) -> String {
    format!("{value:.11e}")
}

/// Build the table text for one metric across the given run directories.
/// Column order follows the argument order; column names are the run ids
/// found in each log.
pub fn plot_table(metric: &str, run_dirs: &[impl AsRef<Path>]) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(BenchError::BadSpec {
            field: "runs",
            message: "need at least one run directory".to_string(),
        });
    }
    let mut columns: Vec<(String, BTreeMap<u64, f64>)> = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let path = dir.as_ref().join(METRICS_FILE);
        let rows = read_metrics(&path)?;
        let run = match rows.first() {
            Some(row) => row.run.clone(),
            None => {
                return Err(BenchError::Corrupt {
                    path,
                    message: "metric log is empty".to_string(),
                })
            }
        };
        // Later rows supersede earlier ones at the same step; the log is
        // append-only, so last wins.
        let mut series = BTreeMap::new();
        for row in rows.iter().filter(|r| r.metric == metric) {
            series.insert(row.step, row.value);
        }
        if series.is_empty() {
            return Err(BenchError::BadSpec {
                field: "metric",
                message: format!("run {run} has no rows for metric {metric:?}"),
            });
        }
        columns.push((run, series));
    }

    let mut steps: Vec<u64> = columns.iter().flat_map(|(_, s)| s.keys().copied()).collect();
    steps.sort_unstable();
    steps.dedup();

    let mut out = String::from("step");
    for (run, _) in &columns {
        out.push(',');
        out.push_str(run);
    }
    out.push('\n');
    for step in steps {
        out.push_str(&step.to_string());
        for (_, series) in &columns {
            out.push(',');
            if let Some(&v) = series.get(&step) {
                out.push_str(&format_value(v));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Write the table to `out`.
pub fn emit_plot(metric: &str, run_dirs: &[impl AsRef<Path>], out: &Path) -> Result<()> {
    let table = plot_table(metric, run_dirs)?;
    std::fs::write(out, table).map_err(|e| BenchError::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::MetricsWriter;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn run_dir(tag: &str, run: &str, rows: &[(u64, &str, f64)]) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("celab-plot-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let mut w = MetricsWriter::append(&dir, run).unwrap();
        for &(step, metric, value) in rows {
            w.write(step, metric, value).unwrap();
        }
        w.flush().unwrap();
        dir
    }

    #[test]
    fn single_run_gives_two_columns() {
        let dir = run_dir("single", "r1", &[(0, "loss", 1.0), (10, "loss", 0.5), (10, "other", 9.0)]);
        let table = plot_table("loss", &[&dir]).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "step,r1");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("10,"));
        assert_eq!(lines[1].split(',').count(), 2);
    }

    #[test]
    fn mismatched_grids_outer_join_with_blanks() {
        let a = run_dir("join-a", "ra", &[(0, "loss", 1.0), (20, "loss", 0.25)]);
        let b = run_dir("join-b", "rb", &[(10, "loss", 0.7)]);
        let table = plot_table("loss", &[&a, &b]).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "step,ra,rb");
        assert_eq!(lines.len(), 4);
        let cells: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
        assert_eq!(cells[0][0], "0");
        assert!(!cells[0][1].is_empty() && cells[0][2].is_empty());
        assert_eq!(cells[1][0], "10");
        assert!(cells[1][1].is_empty() && !cells[1][2].is_empty());
        assert_eq!(cells[2][0], "20");
        assert!(!cells[2][1].is_empty() && cells[2][2].is_empty());
    }

    #[test]
    fn values_round_trip_to_twelve_significant_digits() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let rows: Vec<(u64, String, f64)> = (0..64)
            .map(|i| {
                let scale = 10f64.powi(rng.random_range(-8..8));
                (i, "loss".to_string(), (rng.random::<f64>() * 2.0 - 1.0) * scale)
            })
            .collect();
        let borrowed: Vec<(u64, &str, f64)> =
            rows.iter().map(|(s, m, v)| (*s, m.as_str(), *v)).collect();
        let dir = run_dir("round", "rr", &borrowed);
        let table = plot_table("loss", &[&dir]).unwrap();
        for (line, (_, _, original)) in table.lines().skip(1).zip(&rows) {
            let cell = line.split(',').nth(1).unwrap();
            let parsed: f64 = cell.parse().unwrap();
            assert_eq!(format_value(parsed), format_value(*original), "cell {cell}");
        }
    }

    #[test]
    fn missing_metric_is_an_error() {
        let dir = run_dir("missing", "rm", &[(0, "loss", 1.0)]);
        assert!(plot_table("return", &[&dir]).is_err());
        let empty = std::env::temp_dir().join(format!("celab-plot-none-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&empty);
        std::fs::create_dir_all(&empty).unwrap();
        assert!(plot_table("loss", &[&empty]).is_err());
    }
}
