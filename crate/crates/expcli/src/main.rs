use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use precgd_expcli::commands::{self, DiagnoseArgs, Globals};
use precgd_expcli::CliResult;

#[derive(Parser)]
#[command(name = "precgd", version, about = "Matrix sensing experiments with GD, ScaledGD and PrecGD")]
struct Cli {
    /// Experiment config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run a single base seed instead of problem.seeds
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic instance files, one per seed
    Generate,
    /// Run every solver from a shared starting point
    Run {
        /// Use a saved instance instead of generating one
        #[arg(long)]
        instance: Option<PathBuf>,
    },
    /// Run the cross product of sweep axes and seeds
    Sweep,
    /// Print metric diagnostics for a factor
    Diagnose {
        #[arg(long)]
        instance: PathBuf,
        /// Factor CSV, one row of X per line
        #[arg(long)]
        factor: PathBuf,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Render trace CSVs (or directories of them) to SVG
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let g = Globals { config: cli.config, out: cli.out, seed: cli.seed, threads: cli.threads };
    match cli.command {
        Command::Generate => {
            for p in commands::cmd_generate(&g)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Run { instance } => {
            let report = commands::cmd_run(&g, instance.as_deref())?;
            println!("{:<16} {:>8} {:>11} {:>11} {:>7} {:>7} {:>7}  stop", "label", "iters", "final_err", "best_err", "k@1e-3", "k@1e-6", "k@1e-9");
            for s in &report.solvers {
                let hits: Vec<String> = s.iterations_to.iter().map(|h| h.iteration.map_or("-".into(), |k| k.to_string())).collect();
                println!(
                    "{:<16} {:>8} {:>11} {:>11} {:>7} {:>7} {:>7}  {}{}",
                    s.label,
                    s.iterations,
                    fmt_opt(s.final_error),
                    fmt_opt(s.best_error),
                    hits[0],
                    hits[1],
                    hits[2],
                    s.stop,
                    if s.diverged { " (diverged)" } else { "" }
                );
            }
        }
        Command::Sweep => {
            let report = commands::cmd_sweep(&g)?;
            print!("{}", precgd_expcli::sweep::table_csv(&report.table));
            for f in &report.fits {
                println!("slope[{} vs {}] = {} (expected {})", f.label, f.axis, fmt_opt(f.slope), f.expected);
            }
        }
        Command::Diagnose { instance, factor, eta, delta, rho } => {
            let report = commands::cmd_diagnose(&g, &instance, &factor, DiagnoseArgs { eta, delta, rho })?;
            print!("{}", report.to_kv());
        }
        Command::Plot { traces } => {
            let (svg, csv, _) = commands::cmd_plot(&g, &traces)?;
            println!("wrote {}", svg.display());
            println!("wrote {}", csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
