use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use v2g_core::power_quality::DEFAULT_N_MAX;
use v2g_core::runner::{self, ComparisonReport, RunError};
use v2g_core::scenario::parse_scenario;

/// Closed-loop G2V/V2G simulation with and without the predictive inverter
/// controller. Set RUST_LOG (e.g. `RUST_LOG=debug`) for more output.
#[derive(Parser)]
#[command(name = "v2g-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario with and without the controller and write the results.
    Run(RunArgs),
    /// Same as `run`.
    Compare(RunArgs),
    /// THD of every phase column of a written time series.
    Analyze {
        csv: PathBuf,
        /// Nominal fundamental frequency in hertz.
        #[arg(long)]
        f0: f64,
        #[arg(long, default_value_t = DEFAULT_N_MAX)]
        n_max: usize,
        /// Trailing fraction of the record to analyze.
        #[arg(long, default_value_t = 1.0)]
        window: f64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Also write the controller's per-sample moves and cost.
    #[arg(long)]
    trace: bool,
}

fn print_report(r: &ComparisonReport) {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!("{:<26}{:>16}{:>16}{:>16}", "signal", "THD without %", "THD with %", "improvement %");
    for row in &r.rows {
        println!(
            "{:<26}{:>16}{:>16}{:>16}",
            row.signal_name,
            cell(row.thd_without_mpc),
            cell(row.thd_with_mpc),
            cell(row.improvement_percent)
        );
    }
    println!("raw bridge THD without controller: {} %", cell(r.raw_bridge_thd_without_mpc));
    println!(
        "inverter voltage frequency: {} Hz without, {} Hz with",
        cell(r.grid_frequency_without_mpc),
        cell(r.grid_frequency_with_mpc)
    );
}

fn execute(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Run(args) | Command::Compare(args) => {
            let sc = parse_scenario(&args.scenario)?;
            log::info!("simulating {} s at {} s steps", sc.sim.duration, sc.sim.step);
            let (report, paths) = runner::run(&sc, &args.out, args.trace)?;
            print_report(&report);
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Analyze {
            csv,
            f0,
            n_max,
            window,
            json,
        } => {
            let a = runner::analyze_csv(&csv, f0, n_max, window)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&a).expect("serializable"));
            } else {
                println!("{:<14}{:>16}", "column", "THD %");
                for c in &a.columns {
                    let v = c.thd_percent.map_or_else(|| "-".into(), |v| format!("{v:.6}"));
                    println!("{:<14}{:>16}", c.column, v);
                }
                if let Some(f) = a.frequency {
                    println!("v_ia frequency: {f:.6} Hz");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
