//! `byzfed`: run experiment configs and table suites, convert records.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use byzfed::bench::{
    emit_report, read_record, run_experiment, table_suite, write_csv, ExperimentConfig,
    ExperimentRecord, ReportFormat, Scale, Suite,
};
use byzfed::Error;
use clap::{Parser, Subcommand};

/// Worker threads for Monte-Carlo runs; unset means one per core.
const THREADS_ENV: &str = "BYZFED_THREADS";

#[derive(Parser)]
#[command(
    name = "byzfed",
    version,
    about = "Byzantine-resilient federated subspace estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one TOML experiment config and write <name>.csv and <name>.json.
    Run {
        config: PathBuf,
        /// Overrides the config's `output` key (default: ./results).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a table suite: exp1, exp2, mom1 or lrcs_fig.
    Suite {
        name: String,
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Overrides the number of Monte-Carlo runs.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print a saved JSON record as CSV or JSON.
    Report {
        record: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ConfigInvalid(_) | Error::UnknownSuite(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| {
        Error::ConfigInvalid(format!(
            "{THREADS_ENV} must be a positive integer, got `{v}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::ConfigInvalid(e.to_string()))
}

fn dispatch(cmd: Command) -> byzfed::Result<()> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| "results".into());
            let record = run_experiment(&cfg)?;
            persist(&record, &dir)
        }
        Command::Suite {
            name,
            scale,
            runs,
            out,
        } => {
            let suite: Suite = name.parse()?;
            let scale: Scale = scale.parse()?;
            let mut configs = table_suite(suite, scale);
            for cfg in &mut configs {
                if let Some(n) = runs {
                    cfg.runs = n;
                }
                cfg.validate()?;
            }
            let mut records = Vec::new();
            for cfg in &configs {
                eprintln!("running {} ({} runs)", cfg.display_name(), cfg.runs);
                let record = run_experiment(cfg)?;
                persist(&record, &out)?;
                records.push(record);
            }
            let path = out.join(format!("{name}.csv"));
            write_csv(&records, std::fs::File::create(&path)?)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Report { record, format } => {
            let format: ReportFormat = format.parse()?;
            let record = read_record(&record)?;
            match format {
                ReportFormat::Csv => {
                    write_csv(std::slice::from_ref(&record), std::io::stdout().lock())
                }
                ReportFormat::Json => {
                    println!("{}", serde_json::to_string_pretty(&record)?);
                    Ok(())
                }
            }
        }
    }
}

fn persist(record: &ExperimentRecord, dir: &Path) -> byzfed::Result<()> {
    for format in [ReportFormat::Csv, ReportFormat::Json] {
        let path = emit_report(record, format, dir)?;
        eprintln!("wrote {}", path.display());
    }
    let failed: usize = record.cells.iter().map(|c| c.failed_runs).sum();
    if failed > 0 {
        eprintln!("warning: {failed} run(s) failed; see per_run errors in the JSON record");
    }
    Ok(())
}
