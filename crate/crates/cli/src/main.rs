//! `psweight` command-line interface.

mod config;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use psweight::analysis::{analyze, diagnose};
use psweight::data::load_csv;
use psweight::report;
use psweight::simulation::{run_replications, truth_for_config};
use psweight::weights::{balance_report, compute_weights, ps_summaries};

use config::{AnalysisArgs, AnalysisConfig, Format, SimulateArgs};

#[derive(Parser, Debug)]
#[command(name = "psweight", version, about = "Propensity-score balancing weights for weighted average treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate every requested estimand × flavor with sandwich inference.
    Analyze(AnalysisArgs),
    /// Propensity-score summaries, effective sample sizes and covariate balance.
    Diagnose(AnalysisArgs),
    /// Monte Carlo replication study.
    Simulate(SimulateArgs),
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn prepare(cfg: &AnalysisConfig) -> Result<(psweight::Dataset, psweight::NuisanceSpec)> {
    let d = load_csv(&cfg.data, &cfg.csv_spec()).with_context(|| format!("loading {}", cfg.data.display()))?;
    let spec = cfg.nuisance_spec(&d)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok((d, spec))
}

fn cmd_analyze(args: AnalysisArgs) -> Result<()> {
    let cfg = AnalysisConfig::resolve(args)?;
    let (d, spec) = prepare(&cfg)?;
    let a = analyze(&d, &spec, &cfg.options())?;

    let mut balance = Vec::new();
    for scheme in &cfg.schemes {
        match compute_weights(&d, &a.ps.fitted, scheme).and_then(|ws| balance_report(&d, &a.ps.fitted, &ws)) {
            Ok(b) => balance.push(b),
            Err(e) => log::warn!("balance for {}: {e}", scheme.label()),
        }
    }
    let summary = ps_summaries(d.z(), &a.ps.fitted);
    let failed = a.rows.iter().filter(|r| r.result.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {} rows could not be estimated", a.rows.len());
    }

    match cfg.format {
        Format::Csv => {
            write(&cfg.out, "estimates.csv", &report::estimates_table_csv(&a.rows)?)?;
            write(&cfg.out, "results.csv", &report::results_csv(&a.rows)?)?;
            write(&cfg.out, "balance.csv", &report::balance_csv(&balance)?)?;
            write(&cfg.out, "ps_summary.csv", &report::ps_summary_csv(&summary)?)?;
        }
        Format::Json => {
            let doc = serde_json::json!({
                "results": a.rows,
                "balance": balance,
                "ps_summary": summary,
                "propensity_model": {
                    "covariates": a.ps.columns.iter().map(|&j| d.names()[j].clone()).collect::<Vec<_>>(),
                    "coefficients": a.ps.beta,
                    "converged": a.ps.converged,
                    "iterations": a.ps.iterations,
                    "separation_warning": a.ps.separation_warning,
                },
                "seed": cfg.seed,
            });
            write(&cfg.out, "analysis.json", &serde_json::to_string_pretty(&doc)?)?;
        }
    }
    print!("{}", report::estimates_table_csv(&a.rows)?);
    Ok(())
}

fn cmd_diagnose(args: AnalysisArgs) -> Result<()> {
    let cfg = AnalysisConfig::resolve(args)?;
    let (d, spec) = prepare(&cfg)?;
    let diag = diagnose(&d, &spec, &cfg.trims)?;
    match cfg.format {
        Format::Csv => {
            write(&cfg.out, "ps_summary.csv", &report::ps_summary_csv(&diag.ps_summary)?)?;
            write(&cfg.out, "ess.csv", &report::ess_csv(&diag.ess)?)?;
            write(&cfg.out, "balance.csv", &report::balance_csv(&diag.balance)?)?;
        }
        Format::Json => write(&cfg.out, "diagnostics.json", &serde_json::to_string_pretty(&diag)?)?,
    }
    print!("{}", report::ess_csv(&diag.ess)?);
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (cfg, format, out) = args.resolve()?;
    cfg.validate()?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let truth = truth_for_config(&cfg)?;
    let rep = run_replications(&cfg, &truth)?;
    match format {
        Format::Csv => {
            write(&out, "truth.csv", &report::truth_csv(&truth)?)?;
            write(&out, "sim_report.csv", &report::sim_report_csv(&rep)?)?;
        }
        Format::Json => {
            write(&out, "truth.json", &serde_json::to_string_pretty(&truth)?)?;
            write(&out, "sim_report.json", &serde_json::to_string_pretty(&rep)?)?;
        }
    }
    println!(
        "p = {:.4}, r = {:.3}, {} replicates of n = {}",
        truth.p, truth.r, cfg.reps, cfg.n
    );
    println!("{:<14} {:<14} {:>10} {:>10} {:>9} {:>8} {:>7} {:>7} {:>6}", "estimand", "flavor", "truth", "PE", "ARBias%", "RMSE", "RE", "CP", "fail");
    let f = |v: Option<f64>, p: usize| v.map_or_else(|| report::NA.to_string(), |x| format!("{x:.p$}"));
    for r in &rep.rows {
        let m = r.metrics.as_ref();
        println!(
            "{:<14} {:<14} {:>10.3} {:>10} {:>9} {:>8} {:>7} {:>7} {:>6}",
            r.estimand.label(),
            r.flavor.name(),
            r.truth,
            f(m.map(|m| m.pe), 3),
            f(m.map(|m| m.arbias_pct), 2),
            f(m.map(|m| m.rmse), 3),
            f(m.and_then(|m| m.re), 2),
            f(m.and_then(|m| m.cp), 3),
            r.n_failed
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
