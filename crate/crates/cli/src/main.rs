use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use lgindex_cli::{emit_report, run_scenario, Mode, OutputFormat, RunOptions, ScenarioConfig, ScenarioKind};

#[derive(Parser)]
#[command(name = "lgindex", version, about = "Run lgindex scenarios and emit reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Structure identities, d∘d = 0 and the modular cocycle of an algebroid
    CheckAlgebroid(Flags),
    /// Chevalley-Eilenberg cohomology
    Cohomology(Flags),
    /// Simplicial and cyclic identities and the Chern-Connes pairing on a finite groupoid
    GroupoidPairing(Flags),
    /// Star-product identities
    StarVerify(Flags),
    /// Germ coboundary and the van Est chain map
    VanestVerify(Flags),
    /// Both sides of the index identity on a desk model
    IndexVerify(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// Scenario file (JSON)
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall-clock time in the report (the output is then not reproducible)
    #[arg(long)]
    timing: bool,
}

#[derive(ValueEnum, Clone, Copy)]
enum ModeArg {
    Exact,
    Float,
}

#[derive(ValueEnum, Clone, Copy)]
enum FormatArg {
    Json,
    CsvSummary,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, flags) = match cli.command {
        Command::CheckAlgebroid(f) => (ScenarioKind::CheckAlgebroid, f),
        Command::Cohomology(f) => (ScenarioKind::Cohomology, f),
        Command::GroupoidPairing(f) => (ScenarioKind::GroupoidPairing, f),
        Command::StarVerify(f) => (ScenarioKind::StarVerify, f),
        Command::VanestVerify(f) => (ScenarioKind::VanestVerify, f),
        Command::IndexVerify(f) => (ScenarioKind::IndexVerify, f),
    };
    let text = match std::fs::read_to_string(&flags.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", flags.config.display());
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        mode: flags.mode.map(|m| match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Float => Mode::Float,
        }),
        seed: flags.seed,
    };
    let start = Instant::now();
    let report = ScenarioConfig::parse(&text).and_then(|cfg| run_scenario(kind, &cfg, opts));
    let mut report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if flags.timing {
        report.timing_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    let format = match flags.format {
        FormatArg::Json => OutputFormat::Json,
        FormatArg::CsvSummary => OutputFormat::CsvSummary,
    };
    let bytes = emit_report(&report, format);
    let written = match &flags.out {
        Some(p) => std::fs::write(p, &bytes),
        None => std::io::Write::write_all(&mut std::io::stdout(), &bytes),
    };
    if let Err(e) = written {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(2);
    }
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
