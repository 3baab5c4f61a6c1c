use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use keyboard::scenario::{count_mtds, PMaxMode};
use keyboard::sim::{export_results, run_study, ScenarioSource, SimSpec, REPORT_FILE, SUMMARY_FILE};
use keyboard::{DecisionTable, DoseCoord, KeyboardError, TrialConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "keyboard", version, about = "Keyboard dose-finding designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random toxicity scenarios for a dose-combination grid.
    Scenario(ScenarioArgs),
    /// Run a simulation study described by a JSON spec.
    Simulate(SimulateArgs),
    /// Print the decision table for a target key.
    Table(TableArgs),
    /// Serve the trial HTTP API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PMax {
    Beta,
    Mean,
}

impl From<PMax> for PMaxMode {
    fn from(p: PMax) -> Self {
        match p {
            PMax::Beta => PMaxMode::Beta,
            PMax::Mean => PMaxMode::Mean,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioFormat {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long)]
    phi: f64,
    #[arg(long)]
    eps1: f64,
    #[arg(long)]
    eps2: f64,
    /// Required number of doses in the target key.
    #[arg(long)]
    mtds: Option<usize>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "beta")]
    p_max: PMax,
    #[arg(long, default_value_t = 100_000)]
    max_attempts: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to csv for a `.csv` output file and json otherwise.
    #[arg(long, value_enum)]
    format: Option<ScenarioFormat>,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Leave per-trial records out of the report.
    #[arg(long)]
    no_records: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
    Md,
}

#[derive(clap::Args)]
struct TableArgs {
    #[arg(long)]
    phi: f64,
    #[arg(long)]
    eps1: f64,
    #[arg(long)]
    eps2: f64,
    #[arg(long, default_value_t = 16)]
    nmax: u32,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, env = "KEYBOARD_DATA")]
    data: PathBuf,
    #[arg(long, env = "KEYBOARD_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] KeyboardError),
    #[error(transparent)]
    Service(#[from] keyboard_service::ApiError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Spec {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Spec { .. } => 2,
            CliError::Core(e) => match e {
                KeyboardError::InvalidConfig { .. } | KeyboardError::UnsupportedVersion(_) => 2,
                KeyboardError::GeneratorExhausted { .. } => 3,
                _ => 1,
            },
            _ => 1,
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ScenarioOut {
    scenario_id: usize,
    mtd_location: DoseCoord,
    mtd_count: usize,
    matrix: Vec<Vec<f64>>,
}

fn scenario(args: ScenarioArgs) -> Result<(), CliError> {
    let trial = TrialConfig::new(args.rows, args.cols, args.phi, args.eps1, args.eps2, 1);
    let mut spec = SimSpec::generated(trial, args.mtds, args.count);
    spec.seed = args.seed;
    spec.scenarios = ScenarioSource::Generated {
        target_mtd_count: args.mtds,
        p_max_mode: args.p_max.into(),
        max_attempts: args.max_attempts,
    };
    spec.validate()?;
    let scenarios = spec.build_scenarios()?;

    let format = args.format.unwrap_or_else(|| {
        let is_csv = args
            .out
            .as_deref()
            .and_then(Path::extension)
            .is_some_and(|e| e == "csv");
        if is_csv {
            ScenarioFormat::Csv
        } else {
            ScenarioFormat::Json
        }
    });
    let text = match format {
        ScenarioFormat::Csv => {
            let mut out = String::from("scenario_id,j,k,p\n");
            for (i, s) in scenarios.iter().enumerate() {
                for (c, p) in s.p.iter() {
                    let _ = writeln!(out, "{i},{},{},{p}", c.j, c.k);
                }
            }
            out
        }
        ScenarioFormat::Json => {
            let rows: Vec<ScenarioOut> = scenarios
                .iter()
                .enumerate()
                .map(|(i, s)| ScenarioOut {
                    scenario_id: i,
                    mtd_location: s.mtd_location,
                    mtd_count: count_mtds(s, args.phi, args.eps1, args.eps2),
                    matrix: (1..=s.rows())
                        .map(|j| (1..=s.cols()).map(|k| *s.p.get(DoseCoord::new(j, k))).collect())
                        .collect(),
                })
                .collect();
            let mut text = serde_json::to_string_pretty(&rows).map_err(KeyboardError::from)?;
            text.push('\n');
            text
        }
    };
    write_output(args.out.as_deref(), &text)
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.spec).map_err(|source| CliError::Io {
        path: args.spec.clone(),
        source,
    })?;
    let mut spec: SimSpec = serde_json::from_str(&text).map_err(|source| CliError::Spec {
        path: args.spec.clone(),
        source,
    })?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if args.threads.is_some() {
        spec.threads = args.threads;
    }
    let mut report = run_study(&spec)?;
    if args.no_records {
        report = report.without_records();
    }
    export_results(&report, &args.out)?;

    let m = &report.metrics;
    println!(
        "{} scenarios x {} trials: PCS {:.2}  PCA {:.2}  overdose {:.2}  underdose {:.2}  safety stop {:.2}",
        report.scenarios.len(),
        spec.trials_per_scenario,
        m.pcs,
        m.pca,
        m.overdose_pct,
        m.underdose_pct,
        m.safety_stop_pct
    );
    println!(
        "wrote {} and {}",
        args.out.join(SUMMARY_FILE).display(),
        args.out.join(REPORT_FILE).display()
    );
    Ok(())
}

fn table(args: TableArgs) -> Result<(), CliError> {
    let table = DecisionTable::build(args.phi, args.eps1, args.eps2, args.nmax)?;
    let text = match args.format {
        TableFormat::Csv => table.to_csv(),
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(&table).map_err(KeyboardError::from)?;
            s.push('\n');
            s
        }
        TableFormat::Md => table.to_markdown(),
    };
    write_output(args.out.as_deref(), &text)
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: args.data.clone(),
        source,
    })?;
    eprintln!("serving {} on http://{}", args.data.display(), args.addr);
    runtime.block_on(keyboard_service::serve(args.data, args.addr))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scenario(a) => scenario(a),
        Command::Simulate(a) => simulate(a),
        Command::Table(a) => table(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
