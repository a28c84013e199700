//! Command-line front end: single runs, the five-variant ablation ladder,
//! hyperparameter sweeps, and the analytic selftest suite.

use clap::{Args, Parser, Subcommand};
use specmerge::harness::{
    emit_results, emit_sweep, parse_seed_list, run_ablation, run_batch, run_sensitivity,
    RunConfig, RunResult,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "specmerge",
    about = "Continual classification with spectral adapter merging on dual-imbalanced streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Plain-text config file, one key=value per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list (overrides seed_list).
    #[arg(long)]
    seeds: Option<String>,
    /// Additional key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured variant over the seed list.
    Run(CommonArgs),
    /// Run all five ablation variants on identical streams.
    Ablate(CommonArgs),
    /// Sweep one hyperparameter across a list of values.
    Sweep {
        /// One of: head_ratio, gamma_head, gamma_tail, rho.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the built-in analytic invariant suite.
    Selftest,
}

fn build_config(common: &CommonArgs) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| e.to_string())?;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        cfg.seed_list = parse_seed_list(seeds).map_err(|e| e.to_string())?;
    }
    for kv in &common.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got `{kv}`"))?;
        cfg.set(key.trim(), value).map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}

fn print_results(results: &[RunResult]) {
    println!(
        "{:<12} {:>5} {:>9} {:>9} {:>9} {:>9}",
        "variant", "seeds", "A_T", "std", "Abar", "wAbar"
    );
    for r in results {
        let a = &r.aggregate;
        println!(
            "{:<12} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.variant.name(),
            r.per_seed.len(),
            a.mean_a_final,
            a.std_a_final,
            a.mean_a_bar,
            a.mean_wa_bar
        );
    }
    let total: f64 = results
        .iter()
        .flat_map(|r| r.per_seed.iter())
        .map(|s| s.duration.as_secs_f64())
        .sum();
    println!("total run time: {total:.1}s");
}

fn execute(command: &Command) -> Result<(), String> {
    match command {
        Command::Run(common) => {
            let cfg = build_config(common)?;
            let results = vec![run_batch(&cfg).map_err(|e| e.to_string())?];
            emit_results(&results, &cfg, &cfg.output_dir).map_err(|e| e.to_string())?;
            print_results(&results);
            println!("results written to {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Ablate(common) => {
            let cfg = build_config(common)?;
            let results = run_ablation(&cfg).map_err(|e| e.to_string())?;
            emit_results(&results, &cfg, &cfg.output_dir).map_err(|e| e.to_string())?;
            print_results(&results);
            println!("results written to {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Sweep {
            param,
            values,
            common,
        } => {
            let cfg = build_config(common)?;
            let parsed: Vec<f64> = values
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("bad sweep value `{t}`"))
                })
                .collect::<Result<_, _>>()?;
            let rows = run_sensitivity(&cfg, param, &parsed).map_err(|e| e.to_string())?;
            emit_sweep(&rows, param, &cfg, &cfg.output_dir).map_err(|e| e.to_string())?;
            println!("{:<12} {:>9} {:>9} {:>9}", param, "A_T", "Abar", "wAbar");
            for (value, result) in &rows {
                let a = &result.aggregate;
                println!(
                    "{:<12} {:>9.4} {:>9.4} {:>9.4}",
                    value, a.mean_a_final, a.mean_a_bar, a.mean_wa_bar
                );
            }
            println!("results written to {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Selftest => {
            if specmerge::selftest::run_all() {
                Ok(())
            } else {
                Err("selftest failures (see lines above)".to_string())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
