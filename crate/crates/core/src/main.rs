use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odmts::experiment::{ingest_queries, run_design, run_experiment, run_paired_report, run_sweep, ExperimentConfig, RunSummary};
use odmts::report::{geojson, SolutionDoc};
use odmts::{Error, ScenarioTag};

#[derive(Parser)]
#[command(name = "odmts", version, about = "On-demand multimodal transit design under congestion scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an instance (and any scenario inputs) without solving.
    Validate(RunArgs),
    /// Write the instance with scenario travel times applied.
    Scale(RunArgs),
    /// Fixed-demand design for existing riders.
    Design {
        #[command(flatten)]
        run: RunArgs,
        /// Treat every potential rider as must-serve demand.
        #[arg(long)]
        all_riders: bool,
    },
    /// Bilevel design with rider adoption.
    Solve(RunArgs),
    /// One bilevel solve per adoption factor in `--rho`.
    Sweep(RunArgs),
    /// Paired comparison without and with the `--dbl` overlay.
    Report(RunArgs),
    /// GeoJSON of a stored solution.
    ExportGeojson {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        solution: PathBuf,
    },
    /// Convert a QRL travel-time query dump into scaling matrix files.
    IngestQueries {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "baseline")]
    scenario: ScenarioTag,
    /// Dedicated-lane overlay (JSON map of bus arc id to free-flow minutes).
    #[arg(long)]
    dbl: Option<PathBuf>,
    /// Adoption factor, or a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    /// Synchronized bus/rail schedules (no post-processing waits).
    #[arg(long)]
    sync: bool,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 20)]
    max_rounds: usize,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long)]
    qrls: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> ExperimentConfig {
        ExperimentConfig {
            instance: self.instance.clone(),
            qrls: self.qrls.clone(),
            queries: self.queries.clone(),
            matrix: self.matrix.clone(),
            scenario: self.scenario,
            dbl: self.dbl.clone(),
            rho: self.rho.clone(),
            sync: self.sync,
            tolerance: self.tolerance,
            max_rounds: self.max_rounds,
            max_iterations: self.max_iterations,
            out: self.out.clone(),
        }
    }
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::LimitExceeded(_) => EXIT_NOT_CONVERGED,
        Error::Consistency(_) => 1,
        _ => EXIT_VALIDATION,
    }
}

fn report_run(summary: &RunSummary) -> ExitCode {
    for path in &summary.files {
        println!("{}", path.display());
    }
    if summary.converged {
        ExitCode::SUCCESS
    } else {
        log::warn!("solve did not converge; outputs hold the best design found");
        ExitCode::from(EXIT_NOT_CONVERGED)
    }
}

fn write_out(dir: &PathBuf, name: &str, text: &str) -> odmts::Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

fn run(cli: Cli) -> odmts::Result<ExitCode> {
    match cli.command {
        Command::Validate(args) => {
            let config = args.config();
            config.validate()?;
            let instance = config.load_instance(config.dbl.is_some())?;
            println!(
                "ok: {} locations, {} arcs ({} bus), {} trips ({} potential)",
                instance.network.num_locations(),
                instance.network.arcs().len(),
                instance.network.bus_arcs().len(),
                instance.trips.len(),
                instance.trips.iter().filter(|t| t.is_potential()).count()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Scale(args) => {
            let config = args.config();
            config.validate()?;
            let instance = config.load_instance(config.dbl.is_some())?;
            let path = write_out(&config.out, "instance.json", &instance.to_json())?;
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Design { run, all_riders } => Ok(report_run(&run_design(&run.config(), all_riders)?)),
        Command::Solve(args) => Ok(report_run(&run_experiment(&args.config())?)),
        Command::Sweep(args) => Ok(report_run(&run_sweep(&args.config())?)),
        Command::Report(args) => Ok(report_run(&run_paired_report(&args.config())?)),
        Command::ExportGeojson { run, solution } => {
            let config = run.config();
            config.validate()?;
            let text = fs::read_to_string(&solution).map_err(|e| Error::Io {
                path: solution.clone(),
                source: e,
            })?;
            let doc = SolutionDoc::from_json(&text)?;
            let instance = config.load_instance(doc.dbl)?;
            let value = geojson(&instance.network, &doc)?;
            let text = serde_json::to_string_pretty(&value).expect("serializes") + "\n";
            let path = write_out(&config.out, "network.geojson", &text)?;
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::IngestQueries { queries, out } => {
            for path in ingest_queries(&queries, &out)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
