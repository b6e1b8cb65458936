//! Confusion-matrix files.
//!
//! ```text
//! # confusion matrix: rows are true classes, columns predicted classes
//! [counts]
//! true,pred_0,pred_1,...
//! 0,<count>,<count>,...
//! [row_normalized]
//! true,pred_0,pred_1,...
//! 0,<fraction>,<fraction>,...
//! ```
//!
//! Normalized rows divide each count by its row total (all zeros for an
//! empty row). Import rebuilds the metrics from the counts and checks the
//! normalized section against them.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{PtError, Result};
use crate::trainer::Metrics;

pub fn format_confusion(metrics: &Metrics) -> String {
    let c = metrics.confusion.len();
    let mut header = String::from("true");
    for k in 0..c {
        let _ = write!(header, ",pred_{k}");
    }
    let mut s =
        String::from("# confusion matrix: rows are true classes, columns predicted classes\n");
    let _ = writeln!(s, "[counts]\n{header}");
    for (k, row) in metrics.confusion.iter().enumerate() {
        let _ = write!(s, "{k}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "[row_normalized]\n{header}");
    for (k, row) in normalized(&metrics.confusion).iter().enumerate() {
        let _ = write!(s, "{k}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn normalized(confusion: &[Vec<u64>]) -> Vec<Vec<f64>> {
    confusion
        .iter()
        .map(|row| {
            let n: u64 = row.iter().sum();
            row.iter()
                .map(|&v| if n == 0 { 0.0 } else { v as f64 / n as f64 })
                .collect()
        })
        .collect()
}

pub fn export_confusion(metrics: &Metrics, path: &Path) -> Result<()> {
    std::fs::write(path, format_confusion(metrics)).map_err(|e| PtError::io(path, e))
}

pub fn import_confusion(path: &Path) -> Result<Metrics> {
    let text = std::fs::read_to_string(path).map_err(|e| PtError::io(path, e))?;
    parse_confusion(&text, &path.display().to_string())
}

pub fn parse_confusion(text: &str, origin: &str) -> Result<Metrics> {
    let err = |line: usize, detail: String| PtError::Parse {
        path: origin.to_string(),
        line,
        detail,
    };
    let mut counts: Vec<Vec<u64>> = Vec::new();
    let mut norm: Vec<Vec<f64>> = Vec::new();
    let mut section = "";
    for (no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') || line.starts_with("true") {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[counts]" => "counts",
                "[row_normalized]" => "norm",
                other => return Err(err(no, format!("unknown section {other}"))),
            };
            continue;
        }
        let f: Vec<&str> = line.split(',').skip(1).collect();
        match section {
            "counts" => counts.push(
                f.iter()
                    .map(|v| v.parse().map_err(|_| err(no, format!("bad count {v:?}"))))
                    .collect::<Result<_>>()?,
            ),
            "norm" => norm.push(
                f.iter()
                    .map(|v| {
                        v.parse()
                            .map_err(|_| err(no, format!("bad fraction {v:?}")))
                    })
                    .collect::<Result<_>>()?,
            ),
            _ => return Err(err(no, "data before a section header".into())),
        }
    }
    if norm != normalized(&counts) {
        return Err(err(
            0,
            "row-normalized section disagrees with counts".into(),
        ));
    }
    Metrics::from_confusion(counts).map_err(|e| err(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matrix_is_diagonal() {
        let m = Metrics::from_confusion(vec![vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 1]]).unwrap();
        let text = format_confusion(&m);
        assert!(text
            .contains("[row_normalized]\ntrue,pred_0,pred_1,pred_2\n0,1,0,0\n1,0,1,0\n2,0,0,1\n"));
        assert_eq!(parse_confusion(&text, "t").unwrap(), m);
    }

    #[test]
    fn round_trip_with_empty_row() {
        let m = Metrics::from_confusion(vec![vec![3, 1], vec![0, 0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        export_confusion(&m, &p).unwrap();
        assert_eq!(import_confusion(&p).unwrap(), m);
    }

    #[test]
    fn tampered_normalized_rows_are_rejected() {
        let m = Metrics::from_confusion(vec![vec![3, 1], vec![1, 1]]).unwrap();
        let text = format_confusion(&m).replace("0.75", "0.7");
        assert!(parse_confusion(&text, "t").is_err());
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let m = Metrics::from_confusion(vec![vec![1]]).unwrap();
        let msg = export_confusion(&m, Path::new("/nonexistent/dir/c.csv"))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("/nonexistent/dir/c.csv"), "{msg}");
    }
}
