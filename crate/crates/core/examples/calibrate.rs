//! Seed-averaged accuracies of each method on an experiment grid, for tuning
//! the synthetic benchmark. Usage: `calibrate CONFIG [variant...]`, where a
//! variant is a method name or one of `fixed`, `same`, `conf`.

use std::time::Instant;

use ptcore::report::{load_config, run_cell, Method};
use ptcore::trainer::{audit_abandoned_since, train_pt, Guidance, ModelKind, SelectionMode};

fn main() -> ptcore::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let exp = load_config(args.first().map(std::path::Path::new), &[])?;
    let variants = &args[1..];
    for &noise in &exp.noise_rates {
        for v in variants {
            let start = Instant::now();
            let (mut accs, mut purity) = (Vec::new(), Vec::new());
            for &seed in &exp.seeds {
                let acc = match Method::parse(v) {
                    Some(m) => {
                        let cell = run_cell(&exp, m, noise, seed)?;
                        cell.history
                            .stable_accuracy(cell.reported)
                            .unwrap_or(f64::NAN)
                    }
                    None => {
                        let mut cfg = exp.cell_config(noise, seed);
                        match v.as_str() {
                            "fixed" => cfg.selection_mode = SelectionMode::Fixed,
                            "same" => cfg.guidance = Guidance::Same,
                            "conf" => cfg.confidence = Some(Default::default()),
                            other => panic!("unknown variant {other}"),
                        }
                        let run = train_pt(&cfg, &exp.cell_data(seed)?)?;
                        let audit = run.history.noise_audit.as_ref().expect("audit");
                        let a = audit_abandoned_since(
                            &run.history,
                            audit,
                            cfg.schedules.turning_iteration,
                        )?;
                        purity.push(a.noisy_fraction());
                        run.history
                            .stable_accuracy(ModelKind::Teacher1)
                            .unwrap_or(f64::NAN)
                    }
                };
                accs.push(acc);
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let pur = purity.iter().sum::<f64>() / purity.len().max(1) as f64;
            let per: Vec<f64> = accs.iter().map(|a| (a * 1000.0).round() / 10.0).collect();
            println!(
                "noise {noise:.2} {v:13} acc {:.2} purity {pur:.3} [{:.1}s] {per:?}",
                mean * 100.0,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
