//! Experiment driver: generate data, train single cells, run sweeps, audit
//! abandoned samples and export confusion matrices.
//!
//! Every subcommand that trains takes `--config FILE` and any number of
//! `--set key=value` overrides on the config's dotted keys; overrides win.
//! Exit status is 0 on success, 1 for configuration errors and 2 when a run
//! fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptcore::data::write_dataset;
use ptcore::report::{
    cell_stem, exit_code_for, export_confusion, load_config, run_and_write_cell, run_experiment,
    ExperimentConfig, Method,
};
use ptcore::trainer::{audit_abandoned_since, ModelKind, TrainHistory};
use ptcore::{PtError, Result};

#[derive(Parser)]
#[command(name = "pteach", version, about = "Progressive teacher experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.schedules.total_epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        load_config(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration as TOML.
    Config(ConfigArgs),
    /// Write the synthetic dataset of one seed.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one (method, noise, seed) cell.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "pt")]
        method: String,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory; the config's `output_dir` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured grid.
    Sweep(ConfigArgs),
    /// Tally abandoned labeled samples of a saved history by noise status.
    Audit {
        history: PathBuf,
        /// Count only iterations after this one (e.g. the turning iteration).
        #[arg(long, default_value_t = 0)]
        since: usize,
    },
    /// Export the final confusion matrix of one model from a saved history.
    Export {
        history: PathBuf,
        #[arg(long, default_value = "teacher1")]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Config(cfg) => {
            print!("{}", cfg.load()?.to_toml());
            Ok(0)
        }
        Command::GenData { cfg, seed, out } => {
            let exp = cfg.load()?;
            let data = exp.cell_data(seed)?;
            write_dataset(&data, &out)?;
            eprintln!(
                "wrote {} labeled, {} unlabeled, {} test samples to {}",
                data.labeled.len(),
                data.unlabeled.len(),
                data.test.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Train {
            cfg,
            method,
            noise,
            seed,
            out,
        } => {
            let exp = cfg.load()?;
            let method = Method::parse(&method)
                .ok_or_else(|| PtError::Config(format!("unknown method {method:?}")))?;
            if !(0.0..1.0).contains(&noise) {
                return Err(PtError::Config(format!("noise {noise} is outside [0,1)")));
            }
            train_one(
                &exp,
                method,
                noise,
                seed,
                out.as_deref().unwrap_or(&exp.output_dir),
            )
        }
        Command::Sweep(cfg) => {
            let exp = cfg.load()?;
            let outcome = run_experiment(&exp)?;
            for c in &outcome.cells {
                if let Err(msg) = &c.result {
                    eprintln!(
                        "cell {} failed: {msg}",
                        cell_stem(c.method, c.noise, c.seed)
                    );
                }
            }
            eprintln!(
                "{} cells, {} failed; summary in {}",
                outcome.cells.len(),
                outcome.failed(),
                outcome.summary_path.display()
            );
            Ok(outcome.exit_code())
        }
        Command::Audit { history, since } => {
            let h = read_history(&history)?;
            let audit = h
                .noise_audit
                .as_ref()
                .ok_or_else(|| PtError::Config("history carries no noise audit".into()))?;
            let a = audit_abandoned_since(&h, audit, since)?;
            println!("class,clean_abandoned,noisy_abandoned");
            for (k, (c, n)) in a
                .clean_by_class
                .iter()
                .zip(&a.noisy_by_original_class)
                .enumerate()
            {
                println!("{k},{c},{n}");
            }
            println!("total,{},{}", a.clean(), a.noisy);
            eprintln!("noisy fraction of abandoned: {}", a.noisy_fraction());
            Ok(0)
        }
        Command::Export {
            history,
            model,
            out,
        } => {
            let h = read_history(&history)?;
            let model = ModelKind::parse(&model)
                .ok_or_else(|| PtError::Config(format!("unknown model {model:?}")))?;
            let last = h
                .evals
                .iter()
                .rev()
                .find(|e| e.model == model)
                .ok_or_else(|| PtError::Config(format!("history has no evaluations of {model}")))?;
            export_confusion(&last.metrics, &out)?;
            Ok(0)
        }
    }
}

fn train_one(
    exp: &ExperimentConfig,
    method: Method,
    noise: f64,
    seed: u64,
    out: &Path,
) -> Result<u8> {
    std::fs::create_dir_all(out).map_err(|e| PtError::io(out, e))?;
    let stem = cell_stem(method, noise, seed);
    let outcome = run_and_write_cell(exp, method, noise, seed, out, true)?;
    let cell = match &outcome.result {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{stem} failed: {msg}");
            return Ok(2);
        }
    };
    if let Some(last) = cell
        .history
        .evals
        .iter()
        .rev()
        .find(|e| e.model == cell.reported)
    {
        export_confusion(&last.metrics, &out.join(format!("{stem}.confusion.csv")))?;
    }
    match cell.history.stable_accuracy(cell.reported) {
        Some(acc) => println!("{stem}: {} accuracy {acc}", cell.reported),
        None => println!("{stem}: no evaluations"),
    }
    Ok(0)
}

fn read_history(path: &Path) -> Result<TrainHistory> {
    let text = std::fs::read_to_string(path).map_err(|e| PtError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PtError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        detail: e.to_string(),
    })
}
