use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use genbound::cli::{cmd_check, cmd_render, cmd_sweep, cmd_train, ExperimentConfig, Fault, SweepAxis, SweepResult};
use genbound::Error;

/// Trains small networks with perturbed SGD and traces generalization-bound components.
#[derive(Parser)]
#[command(name = "genbound", version)]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write trace.csv and summary.json.
    Train,
    /// Repeat training (or the analytic bound model) along one axis.
    Sweep {
        /// `n`, `width` or `gamma`.
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Run the numerical property suite.
    Check {
        /// Negative control: inject a known defect (`delta-sign`).
        #[arg(long, value_parser = parse_fault)]
        inject_fault: Option<Fault>,
    },
    /// Render CSV columns as an SVG line chart.
    Render {
        /// A trace.csv or sweep.csv file.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated column names.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        columns: Vec<String>,
        /// Destination SVG path.
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Train => {
            let cfg = load_config(cli)?;
            let run = cmd_train(&cfg)?;
            println!(
                "{} epochs, {} steps{}; wrote {}",
                run.summary.epochs,
                run.summary.steps,
                if run.summary.stopped_early { " (early stop)" } else { "" },
                cfg.out.join("trace.csv").display()
            );
            if let Some(acc) = run.summary.final_test_accuracy {
                println!("final test accuracy {acc:.4}");
            }
        }
        Command::Sweep { axis, values } => {
            let cfg = load_config(cli)?;
            match cmd_sweep(&cfg, *axis, values)? {
                SweepResult::Rate(r) => println!("fitted slope {:.4}, top-decade slope {:.4}", r.slope, r.top_decade_slope),
                SweepResult::Trained(rows) => println!("{} runs complete", rows.len()),
            }
            println!("wrote {}", cfg.out.join("sweep.csv").display());
        }
        Command::Check { inject_fault } => {
            let report = cmd_check(*inject_fault);
            println!("{report}");
            if !report.all_passed() {
                return Ok(EXIT_PROPERTY);
            }
        }
        Command::Render { input, columns, output } => cmd_render(input, columns, output)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("GENBOUND_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
