//! `rmt-equiv`: runs one seeded experiment from a flat TOML config and writes
//! its CSV outputs.

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{validate, Overrides};
use experiments::{run, write_result_csv, RunError};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "rmt-equiv", version, about = "Deterministic-equivalent predictions checked against seeded simulation")]
struct Cli {
    /// One of mp, tanh-demo, ridge-sweep, rf-sweep, kernel-lin, ck-depth, dynamics.
    experiment: String,
    /// Flat TOML file of experiment parameters.
    #[arg(long)]
    config: PathBuf,
    /// Directory for the CSV outputs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
    /// The dataset CSV starts with a header row.
    #[arg(long)]
    header: bool,
    /// Use this dataset CSV instead of synthetic data (rf-sweep).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

fn fail(code: u8, lines: &[String]) -> ExitCode {
    for l in lines {
        eprintln!("error: {l}");
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_VALIDATION, &[format!("cannot read {}: {e}", cli.config.display())]),
    };
    let table: toml::Table = match text.parse() {
        Ok(t) => t,
        Err(e) => return fail(EXIT_VALIDATION, &[format!("{}: {e}", cli.config.display())]),
    };
    let overrides = Overrides {
        seed_env: std::env::var("RMT_EQUIV_SEED").ok(),
        dataset: cli.dataset.clone(),
        header: cli.header,
    };
    let cfg = match validate(&cli.experiment, &table, &overrides) {
        Ok(c) => c,
        Err(errors) => return fail(EXIT_VALIDATION, &errors),
    };
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(EXIT_VALIDATION, &["--threads must be at least 1".into()]);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(EXIT_IO, &[format!("thread pool: {e}")]);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        return fail(EXIT_IO, &[format!("cannot create {}: {e}", cli.out.display())]);
    }
    let echo = cli.out.join(format!("{}.resolved.toml", cfg.stem));
    if let Err(e) = std::fs::write(&echo, toml::to_string(&cfg.resolved).unwrap_or_default()) {
        return fail(EXIT_IO, &[format!("cannot write {}: {e}", echo.display())]);
    }

    let report = match run(&cfg, &cli.out) {
        Ok(r) => r,
        Err(e @ RunError::Numerical { .. }) => return fail(EXIT_NUMERICAL, &[e.to_string()]),
        Err(e @ RunError::Input(_)) => return fail(EXIT_VALIDATION, &[e.to_string()]),
        Err(e @ RunError::Io { .. }) => return fail(EXIT_IO, &[e.to_string()]),
    };
    let main_csv = match write_result_csv(&cli.out, &cfg.stem, &report.rows) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_IO, &[e.to_string()]),
    };

    let worst = report
        .rows
        .iter()
        .filter_map(|r| r.deviation().map(|d| (d, r)))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    let failed: Vec<_> = report.rows.iter().filter(|r| r.status.contains("failed_trials")).collect();
    let deviation = match worst {
        Some((d, r)) => format!("max |empirical − theory| = {d:.3e} ({} at ratio {}, γ {})", r.metric, r.ratio, r.gamma),
        None => "no row has both empirical and theory values".to_string(),
    };
    println!(
        "{}: {} rows, {deviation}; wrote {} and {} more file(s)",
        cfg.experiment,
        report.rows.len(),
        main_csv.display(),
        report.files.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for r in &failed {
            eprintln!("error: ratio {} γ {} {}: {}", r.ratio, r.gamma, r.metric, r.status);
        }
        ExitCode::from(EXIT_NUMERICAL)
    }
}
