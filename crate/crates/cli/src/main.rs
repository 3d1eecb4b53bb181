use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use scvbi::harness::{
    run_experiment, run_selftest, solve_cell, write_records, write_records_to_path, BenchSpec, Cell, ExperimentSpec,
};

#[derive(Parser)]
#[command(
    name = "scvbi",
    version,
    about = "Sparse recovery on a dynamic grid: solver, experiments, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file. Defaults apply to every omitted field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file. CSV for `experiment` and `bench`, JSON for `selftest`,
    /// per-iteration CSV trace for `solve`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Replaces the seed list of the configuration with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for experiment cells. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print a JSON summary.
    Solve,
    /// Run every cell of an experiment and write metric rows as CSV.
    Experiment,
    /// Time SC-VBI rounds against dense solves and fit scaling slopes.
    Bench,
    /// Run the built-in numerical checks.
    Selftest,
}

fn read_config(path: Option<&Path>) -> Result<Option<String>> {
    path.map(|p| fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())))
        .transpose()
}

fn experiment_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = match read_config(cli.config.as_deref())? {
        Some(text) => ExperimentSpec::from_json(&text)
            .with_context(|| format!("parsing config {}", cli.config.as_ref().unwrap().display()))?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    spec.validate().context("invalid experiment config")?;
    Ok(spec)
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn solve(cli: &Cli) -> Result<()> {
    let spec = experiment_spec(cli)?;
    // The first entry of every list defines the instance.
    let cell = Cell {
        seed: spec.seeds[0],
        snr_db: spec.snr_db[0],
        algorithm: spec.algorithms[0],
        prior: spec.priors[0],
        grid_refinement: spec.grid_refinement[0],
    };
    let per_iteration = ExperimentSpec {
        per_iteration: true,
        ..spec.clone()
    };
    let (cell_result, result) = solve_cell(&per_iteration, cell)?;
    let last = result.trace.last().context("solver produced no iterations")?;
    let summary = json!({
        "scenario": spec.scenario,
        "seed": cell.seed,
        "snr_db": cell.snr_db,
        "algorithm": cell.label(),
        "iterations": result.trace.len(),
        "converged": result.converged,
        "final_nmse_db": cell_result.final_nmse_db,
        "free_energy": last.free_energy,
        "support_size": result.support.len(),
        "support": result.support.indices,
        "noise_precision": result.kappa_hat,
        "wall_ms": last.wall_ms,
    });
    if let Some(path) = &cli.out {
        write_records_to_path(path, &cell_result.records)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn experiment(cli: &Cli) -> Result<()> {
    let spec = experiment_spec(cli)?;
    let records = run_experiment(&spec, cli.threads)?;
    match cli.out.as_ref().or(spec.output.as_ref()) {
        Some(path) => {
            write_records_to_path(path, &records)?;
            eprintln!("wrote {} rows to {}", records.len(), path.display());
        }
        None => write_records(std::io::stdout().lock(), &records)?,
    }
    Ok(())
}

fn bench(cli: &Cli) -> Result<()> {
    let mut spec = match read_config(cli.config.as_deref())? {
        Some(text) => BenchSpec::from_json(&text).context("parsing bench config")?,
        None => BenchSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let report = spec.run()?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    match &cli.out {
        Some(path) => write_output(path, &csv)?,
        None => std::io::stdout().lock().write_all(&csv)?,
    }
    eprintln!("{}", serde_json::to_string(&report.slopes)?);
    Ok(())
}

fn selftest(cli: &Cli) -> Result<bool> {
    if cli.config.is_some() {
        bail!("selftest takes no configuration");
    }
    let report = run_selftest()?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &cli.out {
        write_output(path, text.as_bytes())?;
    }
    println!("{text}");
    Ok(report.passed)
}

fn run(cli: &Cli) -> Result<bool> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    match cli.command {
        Command::Solve => solve(cli).map(|_| true),
        Command::Experiment => experiment(cli).map(|_| true),
        Command::Bench => bench(cli).map(|_| true),
        Command::Selftest => selftest(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: selftest failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            // Some sources repeat their inner error in their own message.
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !parts.last().is_some_and(|p| p.contains(&text)) {
                    parts.push(text);
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(2)
        }
    }
}
