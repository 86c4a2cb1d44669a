//! `deeprff` command-line driver.

mod args;

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Parser;
use deeprff::experiment::{
    compare_methods, replica_seeds, run_experiment, save_models, sweep_kl, write_epoch_logs, write_manifest,
    write_results, write_summary, CompareReport, ExperimentConfig, ExperimentResult,
};
use deeprff::gradopt::mse;
use deeprff::model::ResidualNet;
use deeprff::targets::{gen_dataset, Dataset, DatasetMeta};
use deeprff::theory::verify_all;
use serde::Serialize;

use args::{Cli, Command, CompareArgs, DataCommand, DataGenArgs, EvalArgs, SweepArgs, TheoryArgs, TrainArgs};

const BUILD: &str = env!("DEEPRFF_BUILD");

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}

/// Exit code 0 on success, 1 when theory checks fail.
fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Data {
            command: DataCommand::Gen(a),
        } => data_gen(a)?,
        Command::Train(a) => train(a)?,
        Command::Sweep(a) => sweep(a)?,
        Command::Compare(a) => compare(a)?,
        Command::VerifyTheory(a) => return Ok(if verify_theory(a)? { 0 } else { 1 }),
        Command::Eval(a) => eval(a)?,
    }
    Ok(0)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn prepare(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_outputs(out: &Path, cfg: &ExperimentConfig, results: &[&ExperimentResult], slope: Option<f64>) -> Result<()> {
    write_results(&out.join("results.csv"), results)?;
    write_summary(&out.join("summary.csv"), results)?;
    for r in results {
        write_epoch_logs(out, r)?;
        if cfg.save_models {
            save_models(out, r)?;
        }
    }
    write_manifest(&out.join("manifest.json"), &command_line(), BUILD, cfg, slope)?;
    Ok(())
}

fn print_result(r: &ExperimentResult) {
    println!(
        "method {} L={} KL={}: mean {:.4e} sd {:.2e} bar [{:.4e}, {:.4e}]",
        r.method, r.layers, r.kl, r.mean, r.sd, r.bar.0, r.bar.1
    );
}

fn data_gen(a: DataGenArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    prepare(&a.cfg.out, &cfg)?;
    let spec = cfg.data_spec();
    let (seed, _) = replica_seeds(cfg.seed, a.replica);
    let (train, test) = gen_dataset(&spec, seed)?;
    for (ds, split) in [(&train, "train"), (&test, "test")] {
        let path = a.cfg.out.join(format!("{split}.csv"));
        ds.write_csv(&path, &DatasetMeta::for_dataset(ds, &spec, split))?;
        println!("wrote {} ({} rows)", path.display(), ds.len());
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(m) = a.method {
        cfg.method = m;
    }
    prepare(&a.cfg.out, &cfg)?;
    let r = run_experiment(&cfg)?;
    print_result(&r);
    write_outputs(&a.cfg.out, &cfg, &[&r], None)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(s) = a.sweep {
        cfg.sweep = s;
    }
    prepare(&a.cfg.out, &cfg)?;
    let s = sweep_kl(&cfg)?;
    for p in &s.points {
        print_result(p);
    }
    println!("log-log slope {:.4}", s.slope);
    let refs: Vec<&ExperimentResult> = s.points.iter().collect();
    write_outputs(&a.cfg.out, &cfg, &refs, Some(s.slope))
}

fn compare(a: CompareArgs) -> Result<()> {
    let [m1, m2] = a.methods[..] else {
        bail!("--methods needs exactly two methods, got {}", a.methods.len());
    };
    let base = a.cfg.resolve()?;
    let first = ExperimentConfig { method: m1, ..base.clone() };
    let second = ExperimentConfig { method: m2, ..base };
    prepare(&a.cfg.out, &first)?;
    second.validate()?;
    let rep = compare_methods(&first, &second)?;
    print_result(&rep.first);
    print_result(&rep.second);
    println!(
        "method {} wins {} of {}, method {} wins {}",
        m1,
        rep.first_wins,
        rep.first.replicas.len(),
        m2,
        rep.second_wins
    );
    write_outputs(&a.cfg.out, &first, &[&rep.first, &rep.second], None)?;
    write_paired(&a.cfg.out.join("paired.csv"), &rep)
}

/// `replica,seed,error_{m1},error_{m2},winner` rows; `winner` is empty on ties.
fn write_paired(path: &Path, rep: &CompareReport) -> Result<()> {
    let (m1, m2) = (rep.first.method, rep.second.method);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replica".to_string(),
        "seed".to_string(),
        format!("error_method{m1}"),
        format!("error_method{m2}"),
        "winner".to_string(),
    ])?;
    for (x, y) in rep.first.replicas.iter().zip(&rep.second.replicas) {
        let winner = if x.error < y.error {
            m1.to_string()
        } else if y.error < x.error {
            m2.to_string()
        } else {
            String::new()
        };
        w.write_record([
            x.replica.to_string(),
            x.seed.to_string(),
            x.error.to_string(),
            y.error.to_string(),
            winner,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TheorySummary<'a> {
    build: &'a str,
    seed: u64,
    passed: usize,
    failed: usize,
    checks: &'a [deeprff::theory::CheckOutcome],
}

/// Prints one line per check; true when all pass.
fn verify_theory(a: TheoryArgs) -> Result<bool> {
    let checks = verify_all(a.seed)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    let failed = checks.len() - passed;
    println!("{passed} passed, {failed} failed");
    if let Some(path) = &a.json {
        let summary = TheorySummary {
            build: BUILD,
            seed: a.seed,
            passed,
            failed,
            checks: &checks,
        };
        fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(failed == 0)
}

fn eval(a: EvalArgs) -> Result<()> {
    let net = ResidualNet::load(&a.model)?;
    let (data, _) = Dataset::read_csv(&a.data)?;
    if net.input_dim() != data.dim() {
        bail!("model expects d = {}, dataset has d = {}", net.input_dim(), data.dim());
    }
    let err = mse(&net, &data)?;
    let pred = net.predict(data.inputs())?;
    let mut pred_raw = pred.clone();
    let mut y_raw = data.targets().to_vec();
    data.target_stats.denormalize(&mut pred_raw);
    data.target_stats.denormalize(&mut y_raw);
    let raw = pred_raw.iter().zip(&y_raw).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y_raw.len() as f64;
    println!("mse {err:.6e} (original units {raw:.6e}) on {} points", data.len());
    if let Some(path) = &a.predictions {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["y", "prediction"])?;
        for (t, p) in data.targets().iter().zip(&pred) {
            w.write_record([t.to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}
