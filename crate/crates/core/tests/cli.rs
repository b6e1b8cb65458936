use std::path::Path;
use std::process::{Command, Output};

use ptcore::report::{format_summary, load_config, parse_summary, read_metrics, summarize, Method};

const SMALL: &str = r#"
methods = ["pt", "finetune"]
noise_rates = [0.0, 0.2]
seeds = [1, 2]

[data]
labeled_per_class = 20
unlabeled = 200
test_per_class = 20

[train]
eval_interval = 5

[train.net]
hidden_dims = [16]

[train.schedules]
total_epochs = 3
lr_decay_epoch = 2
turning_iteration = 10
"#;

fn pteach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pteach"))
        .args(args)
        .output()
        .expect("spawn pteach")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let out = dir.join("out");
    let text = format!(
        "output_dir = {:?}\n{SMALL}{extra}",
        out.display().to_string()
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "methods = [\"pt\"]\nbogus_key = 3\n").unwrap();
    let o = pteach(&["config", "-c", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));

    let o = pteach(&["config", "--set", "train.batch_size=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("batch_size"), "{}", stderr(&o));

    let o = pteach(&["train", "--method", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));

    let o = pteach(&["config", "-c", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(1));

    let o = pteach(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_prints_a_loadable_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = pteach(&["config", "-c", &cfg, "--set", "train.momentum=0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed = dir.path().join("printed.toml");
    std::fs::write(&printed, &o.stdout).unwrap();
    let again = pteach(&["config", "-c", printed.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    assert_eq!(o.stdout, again.stdout);
    assert!(String::from_utf8_lossy(&o.stdout).contains("momentum = 0.5"));
}

#[test]
fn train_then_audit_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("cell");
    let out_s = out.to_str().unwrap();
    let o = pteach(&[
        "train", "-c", &cfg, "--method", "pt", "--noise", "0.2", "--seed", "1", "--out", out_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("pt_noise020_seed1"));
    for f in [
        "pt_noise020_seed1.csv",
        "pt_noise020_seed1.history.json",
        "pt_noise020_seed1.confusion.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let history = out.join("pt_noise020_seed1.history.json");
    let o = pteach(&["audit", history.to_str().unwrap(), "--since", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class,clean_abandoned,noisy_abandoned");
    let (mut clean, mut noisy) = (0u64, 0u64);
    for l in &lines[1..lines.len() - 1] {
        let v: Vec<u64> = l.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        clean += v[0];
        noisy += v[1];
    }
    assert_eq!(*lines.last().unwrap(), format!("total,{clean},{noisy}"));

    let exported = dir.path().join("student2.csv");
    let o = pteach(&[
        "export",
        history.to_str().unwrap(),
        "--model",
        "student2",
        "--out",
        exported.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let matrix = ptcore::report::import_confusion(&exported).unwrap();
    assert_eq!(matrix.confusion.len(), 7);

    let o = pteach(&[
        "export",
        history.to_str().unwrap(),
        "--model",
        "teacher9",
        "--out",
        "x.csv",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_summary_matches_recomputation_from_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = pteach(&["sweep", "-c", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");

    let mut files = Vec::new();
    for m in [Method::Pt, Method::Finetune] {
        for noise in [0.0, 0.2] {
            for seed in [1, 2] {
                let stem = ptcore::report::cell_stem(m, noise, seed);
                let f = read_metrics(&out.join("cells").join(format!("{stem}.csv"))).unwrap();
                files.push((m, noise, f));
            }
        }
    }
    let written = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let exp = load_config(Some(Path::new(&cfg)), &[]).unwrap();
    let recomputed = format_summary(&exp, &summarize(&files));
    assert_eq!(written, recomputed);
    let rows = parse_summary(&written, "summary.csv").unwrap();
    // one row per tracked model, one of them reported per (method, noise)
    assert_eq!(rows.len(), 2 * 4 + 2);
    assert_eq!(rows.iter().filter(|r| r.reported).count(), 4);
    assert!(rows.iter().all(|r| r.n == 2 && r.failed == 0));
}
