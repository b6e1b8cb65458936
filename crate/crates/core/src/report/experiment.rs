use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{PtError, Result};
use crate::par;
use crate::trainer::{
    train_finetune, train_mean_teacher, train_pseudo_label, train_pt, ModelKind, TrainConfig,
    TrainHistory,
};

use super::config::{ExperimentConfig, Method};

/// A finished cell: its history and the model whose accuracy is reported.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub history: TrainHistory,
    pub reported: ModelKind,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub method: Method,
    pub noise: f64,
    pub seed: u64,
    pub metrics_path: PathBuf,
    pub result: std::result::Result<CellResult, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellOutcome>,
    pub summary_path: PathBuf,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    /// 0 when every cell finished, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.failed() == 0 {
            0
        } else {
            2
        }
    }
}

/// Exit status for an error raised before any cell ran.
pub fn exit_code_for(err: &PtError) -> u8 {
    match err {
        PtError::Config(_) | PtError::Parse { .. } => 1,
        _ => 2,
    }
}

/// Train one cell of the grid.
pub fn run_cell(
    exp: &ExperimentConfig,
    method: Method,
    noise: f64,
    seed: u64,
) -> Result<CellResult> {
    let data = exp.cell_data(seed)?;
    let cfg = exp.cell_config(noise, seed);
    Ok(match method {
        Method::Pt => CellResult {
            history: train_pt(&cfg, &data)?.history,
            reported: ModelKind::Teacher1,
        },
        Method::Finetune => cell_from(train_finetune(&cfg, &data)?),
        Method::MeanTeacher => cell_from(train_mean_teacher(&cfg, &data)?),
        Method::PseudoLabel => cell_from(train_pseudo_label(&cfg, &data)?),
    })
}

fn cell_from(run: crate::trainer::BaselineRun) -> CellResult {
    CellResult {
        history: run.history,
        reported: run.reported,
    }
}

pub fn cell_stem(method: Method, noise: f64, seed: u64) -> String {
    format!(
        "{}_noise{:03}_seed{}",
        method,
        (noise * 100.0).round() as u64,
        seed
    )
}

/// Everything needed to rerun a cell, embedded in its output files.
#[derive(Serialize)]
struct CellProvenance<'a> {
    method: Method,
    noise: f64,
    seed: u64,
    data_file: Option<&'a Path>,
    data: Option<&'a crate::data::SyntheticSpec>,
    train: &'a TrainConfig,
}

fn commented(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

fn cell_header(exp: &ExperimentConfig, method: Method, noise: f64, seed: u64) -> String {
    let cfg = exp.cell_config(noise, seed);
    let prov = CellProvenance {
        method,
        noise,
        seed,
        data_file: exp.data_file.as_deref(),
        data: exp.data_file.is_none().then_some(&exp.data),
        train: &cfg,
    };
    let toml = toml::to_string(&prov).expect("cell provenance always serializes");
    format!(
        "# progressive-teacher cell metrics\n# resolved config:\n{}",
        commented(&toml)
    )
}

/// Column header of the metrics files.
pub fn metrics_columns(num_classes: usize) -> String {
    let mut s = String::from("method,noise,seed,epoch,model,accuracy");
    for k in 0..num_classes {
        let _ = write!(s, ",recall_{k}");
    }
    s
}

/// Per-epoch rows for every recorded model, then one `final` row per model
/// holding the mean over the final epoch's evaluations.
pub fn format_metrics(
    header: &str,
    method: Method,
    noise: f64,
    seed: u64,
    outcome: &std::result::Result<CellResult, String>,
    num_classes: usize,
) -> String {
    let mut s = String::from(header);
    let cell = match outcome {
        Ok(c) => c,
        Err(msg) => {
            let _ = writeln!(s, "# status: failed: {}", msg.replace('\n', " "));
            let _ = writeln!(s, "{}", metrics_columns(num_classes));
            return s;
        }
    };
    let _ = writeln!(s, "# status: ok");
    let _ = writeln!(s, "# reported: {}", cell.reported);
    let _ = writeln!(s, "{}", metrics_columns(num_classes));
    let mut row = |epoch: &str, model: ModelKind, acc: f64, recall: &[f64]| {
        let _ = write!(s, "{method},{noise},{seed},{epoch},{model},{acc}");
        for r in recall {
            let _ = write!(s, ",{r}");
        }
        s.push('\n');
    };
    let h = &cell.history;
    for model in h.models() {
        for e in h.epoch_metrics(model) {
            row(
                &(e.epoch + 1).to_string(),
                model,
                e.metrics.accuracy,
                &e.metrics.per_class_recall,
            );
        }
    }
    for model in h.models() {
        if let (Some(acc), Some(rec)) = (h.stable_accuracy(model), h.stable_recall(model)) {
            row("final", model, acc, &rec);
        }
    }
    s
}

/// One parsed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: Method,
    pub noise: f64,
    pub seed: u64,
    /// `None` for the `final` row.
    pub epoch: Option<usize>,
    pub model: ModelKind,
    pub accuracy: f64,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub ok: bool,
    pub reported: Option<ModelKind>,
    pub rows: Vec<MetricsRow>,
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| PtError::io(path, e))?;
    parse_metrics(&text, &path.display().to_string())
}

pub fn parse_metrics(text: &str, origin: &str) -> Result<MetricsFile> {
    let err = |line: usize, detail: String| PtError::Parse {
        path: origin.to_string(),
        line,
        detail,
    };
    let mut out = MetricsFile {
        ok: false,
        reported: None,
        rows: Vec::new(),
    };
    let mut seen_header = false;
    for (no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let c = c.trim();
            if c == "status: ok" {
                out.ok = true;
            } else if let Some(m) = c.strip_prefix("reported: ") {
                out.reported = ModelKind::parse(m);
            }
            continue;
        }
        if !seen_header {
            if !line.starts_with("method,noise,seed,epoch,model,accuracy") {
                return Err(err(no, "missing column header".into()));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 6 {
            return Err(err(no, "too few columns".into()));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(no, format!("bad number {s:?}")))
        };
        out.rows.push(MetricsRow {
            method: Method::parse(f[0]).ok_or_else(|| err(no, format!("bad method {:?}", f[0])))?,
            noise: num(f[1])?,
            seed: f[2]
                .parse()
                .map_err(|_| err(no, format!("bad seed {:?}", f[2])))?,
            epoch: match f[3] {
                "final" => None,
                e => Some(e.parse().map_err(|_| err(no, format!("bad epoch {e:?}")))?),
            },
            model: ModelKind::parse(f[4])
                .ok_or_else(|| err(no, format!("bad model {:?}", f[4])))?,
            accuracy: num(f[5])?,
            recall: f[6..].iter().map(|v| num(v)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Seed statistics of one (method, noise, model) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub noise: f64,
    pub model: ModelKind,
    pub reported: bool,
    pub n: usize,
    pub failed: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 with fewer than two seeds.
    pub std: f64,
}

/// Summarize `final` rows, taken in the order given. `failed` counts cells
/// of the group that produced no rows.
pub fn summarize(files: &[(Method, f64, MetricsFile)]) -> Vec<SummaryRow> {
    let mut groups: Vec<(Method, f64, ModelKind, bool, Vec<f64>, usize)> = Vec::new();
    let mut failed: Vec<(Method, f64, usize)> = Vec::new();
    for (method, noise, file) in files {
        if !file.ok {
            match failed.iter_mut().find(|f| f.0 == *method && f.1 == *noise) {
                Some(f) => f.2 += 1,
                None => failed.push((*method, *noise, 1)),
            }
            continue;
        }
        for row in file.rows.iter().filter(|r| r.epoch.is_none()) {
            let reported = file.reported == Some(row.model);
            match groups
                .iter_mut()
                .find(|g| g.0 == *method && g.1 == *noise && g.2 == row.model)
            {
                Some(g) => g.4.push(row.accuracy),
                None => groups.push((*method, *noise, row.model, reported, vec![row.accuracy], 0)),
            }
        }
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|(method, noise, model, reported, accs, _)| {
            let n = accs.len();
            let mean = accs.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            SummaryRow {
                method,
                noise,
                model,
                reported,
                n,
                failed: failed
                    .iter()
                    .find(|f| f.0 == method && f.1 == noise)
                    .map_or(0, |f| f.2),
                mean,
                std,
            }
        })
        .collect();
    // groups where every seed failed still get a row
    for (method, noise, count) in failed {
        if !out.iter().any(|r| r.method == method && r.noise == noise) {
            out.push(SummaryRow {
                method,
                noise,
                model: ModelKind::Teacher1,
                reported: false,
                n: 0,
                failed: count,
                mean: f64::NAN,
                std: f64::NAN,
            });
        }
    }
    out
}

pub const SUMMARY_COLUMNS: &str = "method,noise,model,reported,n,failed,mean_accuracy,std_accuracy";

pub fn format_summary(exp: &ExperimentConfig, rows: &[SummaryRow]) -> String {
    let mut s = String::from("# progressive-teacher experiment summary\n# experiment config:\n");
    s.push_str(&commented(&exp.to_toml()));
    let _ = writeln!(s, "{SUMMARY_COLUMNS}");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.method, r.noise, r.model, r.reported, r.n, r.failed, r.mean, r.std
        );
    }
    s
}

pub fn parse_summary(text: &str, origin: &str) -> Result<Vec<SummaryRow>> {
    let err = |line: usize, detail: String| PtError::Parse {
        path: origin.to_string(),
        line,
        detail,
    };
    let mut rows = Vec::new();
    for (no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') || line == SUMMARY_COLUMNS {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(no, "expected 8 columns".into()));
        }
        let bad = |what: &str| err(no, format!("bad {what}"));
        rows.push(SummaryRow {
            method: Method::parse(f[0]).ok_or_else(|| bad("method"))?,
            noise: f[1].parse().map_err(|_| bad("noise"))?,
            model: ModelKind::parse(f[2]).ok_or_else(|| bad("model"))?,
            reported: f[3].parse().map_err(|_| bad("reported"))?,
            n: f[4].parse().map_err(|_| bad("n"))?,
            failed: f[5].parse().map_err(|_| bad("failed"))?,
            mean: f[6].parse().map_err(|_| bad("mean"))?,
            std: f[7].parse().map_err(|_| bad("std"))?,
        });
    }
    Ok(rows)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| PtError::io(path, e))
}

/// Train one cell and write `<stem>.csv` (and `<stem>.history.json` when
/// asked and the cell succeeded) into `dir`. Training errors are recorded in
/// the outcome; only I/O errors are returned.
pub fn run_and_write_cell(
    exp: &ExperimentConfig,
    method: Method,
    noise: f64,
    seed: u64,
    dir: &Path,
    write_history: bool,
) -> Result<CellOutcome> {
    let stem = cell_stem(method, noise, seed);
    let result = run_cell(exp, method, noise, seed).map_err(|e| e.to_string());
    let header = cell_header(exp, method, noise, seed);
    let metrics_path = dir.join(format!("{stem}.csv"));
    let num_classes = exp.train.net.num_classes;
    write_file(
        &metrics_path,
        &format_metrics(&header, method, noise, seed, &result, num_classes),
    )?;
    if write_history {
        if let Ok(cell) = &result {
            let path = dir.join(format!("{stem}.history.json"));
            let json = serde_json::to_string(&cell.history)
                .map_err(|e| PtError::Contract(e.to_string()))?;
            write_file(&path, &json)?;
        }
    }
    Ok(CellOutcome {
        method,
        noise,
        seed,
        metrics_path,
        result,
    })
}

/// Run the whole grid, writing one metrics file per cell under
/// `output_dir/cells/` and `output_dir/summary.csv`. Cells run concurrently
/// under parallel execution; a failed cell is recorded and the rest go on.
pub fn run_experiment(exp: &ExperimentConfig) -> Result<ExperimentOutcome> {
    exp.validate()?;
    let cells_dir = exp.output_dir.join("cells");
    std::fs::create_dir_all(&cells_dir).map_err(|e| PtError::io(&cells_dir, e))?;

    let mut grid = Vec::new();
    for &method in &exp.methods {
        for &noise in &exp.noise_rates {
            for &seed in &exp.seeds {
                grid.push((method, noise, seed));
            }
        }
    }
    let cells: Vec<Result<CellOutcome>> = par::map(exp.train.execution, &grid, |_, &(m, n, s)| {
        run_and_write_cell(exp, m, n, s, &cells_dir, exp.write_history)
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;

    let mut files = Vec::with_capacity(cells.len());
    for c in &cells {
        files.push((c.method, c.noise, read_metrics(&c.metrics_path)?));
    }
    let summary_path = exp.output_dir.join("summary.csv");
    write_file(&summary_path, &format_summary(exp, &summarize(&files)))?;
    Ok(ExperimentOutcome {
        cells,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{EvalRecord, Metrics};

    fn history() -> TrainHistory {
        let m = |acc_num: u64| {
            Metrics::from_confusion(vec![vec![acc_num, 10 - acc_num], vec![0, 10]]).unwrap()
        };
        let ev = |iteration, epoch, epoch_end, model, k| EvalRecord {
            iteration,
            epoch,
            epoch_end,
            model,
            metrics: m(k),
        };
        TrainHistory {
            iters_per_epoch: 4,
            epochs: 2,
            iterations: Vec::new(),
            evals: vec![
                ev(4, 0, true, ModelKind::Student1, 3),
                ev(6, 1, false, ModelKind::Student1, 5),
                ev(8, 1, true, ModelKind::Student1, 8),
            ],
            noise_audit: None,
        }
    }

    #[test]
    fn metrics_file_round_trips() {
        let cell = Ok(CellResult {
            history: history(),
            reported: ModelKind::Student1,
        });
        let text = format_metrics("# h\n", Method::Finetune, 0.1, 7, &cell, 2);
        let parsed = parse_metrics(&text, "t").unwrap();
        assert!(parsed.ok);
        assert_eq!(parsed.reported, Some(ModelKind::Student1));
        assert_eq!(parsed.rows.len(), 3);
        assert_eq!(parsed.rows[0].epoch, Some(1));
        assert_eq!(parsed.rows[0].accuracy, 13.0 / 20.0);
        let last = &parsed.rows[2];
        assert_eq!(last.epoch, None);
        assert_eq!(last.accuracy, (15.0 / 20.0 + 18.0 / 20.0) / 2.0);
        assert_eq!(last.recall, vec![(0.5 + 0.8) / 2.0, 1.0]);
    }

    #[test]
    fn failed_cell_is_marked() {
        let text = format_metrics("", Method::Pt, 0.0, 1, &Err("boom".into()), 3);
        let parsed = parse_metrics(&text, "t").unwrap();
        assert!(!parsed.ok);
        assert!(parsed.rows.is_empty());
        let rows = summarize(&[(Method::Pt, 0.0, parsed)]);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].n, rows[0].failed), (0, 1));
    }

    #[test]
    fn summary_statistics() {
        let file = |acc: f64| MetricsFile {
            ok: true,
            reported: Some(ModelKind::Teacher1),
            rows: vec![MetricsRow {
                method: Method::Pt,
                noise: 0.2,
                seed: 0,
                epoch: None,
                model: ModelKind::Teacher1,
                accuracy: acc,
                recall: vec![],
            }],
        };
        let rows = summarize(&[
            (Method::Pt, 0.2, file(0.5)),
            (Method::Pt, 0.2, file(0.7)),
            (Method::Pt, 0.2, file(0.9)),
        ]);
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 0.7).abs() < 1e-15);
        assert!((rows[0].std - 0.2).abs() < 1e-15);
        assert!(rows[0].reported);
        let text = format_summary(&ExperimentConfig::default(), &rows);
        assert_eq!(parse_summary(&text, "t").unwrap(), rows);
    }
}
