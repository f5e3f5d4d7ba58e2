use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qam_cli::commands::{run_compare_oracle, run_wigner, write_wigner};
use qam_cli::config::{ExperimentFile, ExperimentManifest};
use qam_cli::runner::{cell_dirs, check_partial, fit_directory, plot_script, run_experiment, write_json};
use qam_cli::{parse_config, resolve_workers, CliError, WORKERS_ENV};
use qam_core::ensemble::EnsembleOptions;

/// Quantum particle in an actively driven harmonic trap.
#[derive(Parser)]
#[command(name = "qam", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment file (TOML, or JSON by extension); defaults if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; the QAM_WORKERS environment variable overrides this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the file's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed (overrides `simulation.base_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured cell, ignoring any sweep.
    Run,
    /// Run every cell of the sweep.
    Sweep,
    /// Relax at fixed x_c and compare the Wigner function with the analytic steady state.
    Wigner {
        #[arg(long)]
        x_c: Option<f64>,
        #[arg(long)]
        t_relax: Option<f64>,
    },
    /// Run every cell and compare density-matrix moments with the moment equations.
    CompareOracle {
        /// Exit with status 4 if any cell exceeds the tolerance.
        #[arg(long)]
        check: bool,
    },
    /// Fit scaling exponents to finished runs.
    Fit {
        /// Results directory (defaults to the output directory).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Exit with status 4 if any fit misses its expected slope.
        #[arg(long)]
        check: bool,
    },
    /// Write a gnuplot script for finished runs.
    EmitPlots {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn manifest(g: &Global) -> Result<ExperimentManifest, CliError> {
    let mut m = match &g.config {
        Some(p) => parse_config(p)?,
        None => ExperimentFile::default().into_manifest()?,
    };
    if let Some(out) = &g.out {
        m.outputs = out.clone();
    }
    if let Some(seed) = g.seed {
        m.cfg.base_seed = seed;
    }
    Ok(m)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let m = manifest(g)?;
    let workers = || resolve_workers(g.workers, std::env::var(WORKERS_ENV).ok().as_deref());
    let full = |w| EnsembleOptions { workers: w, quantum: true, oracle: true, keep_final: false };
    match cli.command {
        Command::Run => {
            let outcomes = run_experiment(&m, &[m.base_cell()], &m.outputs, &full(workers()?))?;
            check_partial(&outcomes)
        }
        Command::Sweep => {
            let outcomes = run_experiment(&m, &m.cells()?, &m.outputs, &full(workers()?))?;
            check_partial(&outcomes)
        }
        Command::Wigner { x_c, t_relax } => {
            let run = run_wigner(&m, x_c.unwrap_or(m.wigner.x_c), t_relax.or(m.wigner.t_relax))?;
            let dir = m.outputs.join(format!("wigner_{}", m.base_cell().label));
            write_wigner(&dir, &m, &run)?;
            let r = &run.report;
            println!("peak ({:.5}, {:.5})", r.peak[0], r.peak[1]);
            match r.analytic_mean {
                Some(a) => println!("analytic mean ({:.5}, {:.5})", a[0], a[1]),
                None => println!("analytic steady state: {}", r.steady_state),
            }
            Ok(())
        }
        Command::CompareOracle { check } => {
            let (outcomes, rep) = run_compare_oracle(&m, &m.cells()?, &m.outputs, workers()?)?;
            for c in &rep.cells {
                println!(
                    "{}: max_rel_err {:.3e}, max_abs_err {:.3e}, {}",
                    c.cell,
                    c.max_rel_err,
                    c.max_abs_err,
                    if c.pass { "pass" } else { "FAIL" }
                );
            }
            check_partial(&outcomes)?;
            if check && !rep.pass {
                return Err(CliError::Tolerance("oracle comparison exceeds tolerance".into()));
            }
            Ok(())
        }
        Command::Fit { input, check } => {
            let root = input.unwrap_or_else(|| m.outputs.clone());
            let mut failed = Vec::new();
            for dir in cell_dirs(&root)? {
                let fits = fit_directory(&dir, &m)?;
                for f in &fits {
                    let slope = f.slope.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into());
                    println!("{} {} [{}, {}]: slope {slope}", dir.display(), f.name, f.window[0], f.window[1]);
                    if f.pass == Some(false) || (f.expected.is_some() && f.slope.is_none()) {
                        failed.push(format!("{}:{}", dir.display(), f.name));
                    }
                }
                write_json(&dir.join("fits.json"), &fits)?;
            }
            if check && !failed.is_empty() {
                return Err(CliError::Tolerance(format!("fits outside tolerance: {}", failed.join(", "))));
            }
            Ok(())
        }
        Command::EmitPlots { input } => {
            let root = input.unwrap_or_else(|| m.outputs.clone());
            let script = plot_script(&root)?;
            std::fs::write(root.join("plots.gp"), script)?;
            println!("{}", root.join("plots.gp").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
