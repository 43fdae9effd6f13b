use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use homlab::fields::sample_on_grid;
use homlab::io::{write_grid_binary, write_grid_csv};
use homlab::renorm::centered_cube;
use homlab::seed::ExperimentKind;
use homlab_cli::bundle::{write_json, EXIT_INVARIANT, EXIT_OK};
use homlab_cli::report::{render, report};
use homlab_cli::{resolve_settings, run, CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "homlab", version, about = "Monte Carlo experiments on random elliptic coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Overrides HOMLAB_OUTPUT_DIR and the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides HOMLAB_THREADS and the config's threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridFormat {
    Csv,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the config's field on a centred cube and export the cell tensors.
    GenField {
        config: PathBuf,
        /// Cube side in unit cells.
        #[arg(long)]
        side: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: GridFormat,
        /// Output file; defaults to field.csv or field.bin in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Effective and dual matrices per realization.
    Effmat(RunArgs),
    /// Multiscale statistics of the subadditive energies.
    Sweep(RunArgs),
    /// Corrector gradient decay and corrector growth.
    Corrector(RunArgs),
    /// Filtered corrector gradients against the Gaussian surrogate.
    GffCompare(RunArgs),
    /// Homogenization error rates.
    ErrorScaling(RunArgs),
    /// Large-scale regularity diagnostic.
    Regularity(RunArgs),
    /// Merge bundles into a rate table and an invariant matrix.
    Report {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        /// Also write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    ExperimentConfig::from_toml(&text).map_err(|e| CliError::file(path, e))
}

fn run_kind(kind: ExperimentKind, args: RunArgs) -> CliResult<u8> {
    let config = load_config(&args.config)?;
    if config.kind != kind {
        return Err(CliError::Config(format!(
            "{}: config kind is `{}`, the subcommand expects `{}`",
            args.config.display(),
            config.kind.name(),
            kind.name()
        )));
    }
    let settings = resolve_settings(&config, args.output_dir, args.threads)?;
    let bundle = run(&config, &settings)?;
    let passed = bundle.summary.checks.iter().filter(|c| c.passed).count();
    println!(
        "{}: {} checks passed of {}, {} failed tasks, {:.1}s -> {}",
        kind.name(),
        passed,
        bundle.summary.checks.len(),
        bundle.summary.failures,
        bundle.record.wall_clock_seconds,
        bundle.dir.display()
    );
    for f in &bundle.summary.fits {
        println!("  {}: slope {:.4} [{:.4}, {:.4}] R2 {:.4}", f.name, f.slope, f.ci_lo, f.ci_hi, f.r2);
    }
    for c in bundle.summary.checks.iter().filter(|c| !c.passed) {
        println!("  FAILED {}: {}", c.name, c.detail);
    }
    Ok(bundle.exit_code())
}

fn gen_field(config: &Path, side: usize, format: GridFormat, out: Option<PathBuf>, output_dir: Option<PathBuf>) -> CliResult<u8> {
    let config = load_config(config)?;
    if side == 0 {
        return Err(CliError::Config("--side must be positive".into()));
    }
    let field = config.field()?;
    let grid = sample_on_grid(&field, &centered_cube(config.dim, side), config.m)?;
    let path = match out {
        Some(p) => p,
        None => {
            let dir = resolve_settings(&config, output_dir, None)?.output_dir;
            std::fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
            dir.join(match format {
                GridFormat::Csv => "field.csv",
                GridFormat::Binary => "field.bin",
            })
        }
    };
    match format {
        GridFormat::Csv => write_grid_csv(&path, &grid)?,
        GridFormat::Binary => write_grid_binary(&path, &grid)?,
    }
    println!("{} cells -> {}", grid.cells().len(), path.display());
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::GenField { config, side, format, out, output_dir } => gen_field(&config, side, format, out, output_dir),
        Command::Effmat(a) => run_kind(ExperimentKind::Effmat, a),
        Command::Sweep(a) => run_kind(ExperimentKind::Sweep, a),
        Command::Corrector(a) => run_kind(ExperimentKind::Corrector, a),
        Command::GffCompare(a) => run_kind(ExperimentKind::GffCompare, a),
        Command::ErrorScaling(a) => run_kind(ExperimentKind::ErrorScaling, a),
        Command::Regularity(a) => run_kind(ExperimentKind::Regularity, a),
        Command::Report { bundles, json } => {
            let r = report(&bundles)?;
            print!("{}", render(&r));
            if let Some(path) = json {
                write_json(&path, &r)?;
            }
            Ok(if r.passed { EXIT_OK } else { EXIT_INVARIANT })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
