//! A run and the directory it leaves behind.
//!
//! Everything except `run.json` is a deterministic function of the resolved
//! config; `run.json` carries wall-clock time, thread count and location.

use std::path::{Path, PathBuf};
use std::time::Instant;

use homlab::io::{write_csv, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RunSettings};
use crate::error::{CliError, CliResult};
use crate::experiments::{execute, FAILURES_CSV};
use crate::summary::{regenerate, Summary, CONFIG_FILE, SUMMARY_FILE};

pub const RUN_FILE: &str = "run.json";

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVARIANT: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub kind: String,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub config: String,
    pub tables: Vec<String>,
    pub failures: String,
    pub summary: String,
    pub wall_clock_seconds: f64,
    pub solver_iterations: u64,
    pub exit_code: u8,
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub summary: Summary,
    pub record: RunRecord,
}

impl ResultBundle {
    pub fn exit_code(&self) -> u8 {
        self.record.exit_code
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::file(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::file(path, e))
}

fn exit_code_of(summary: &Summary) -> u8 {
    if summary.failures > 0 {
        EXIT_SOLVER
    } else if !summary.all_checks_pass() {
        EXIT_INVARIANT
    } else {
        EXIT_OK
    }
}

/// Executes `config` into `settings.output_dir`. Solver failures of single
/// tasks leave a partial bundle with a nonempty failure manifest.
pub fn run(config: &ExperimentConfig, settings: &RunSettings) -> CliResult<ResultBundle> {
    config.validate()?;
    let dir = &settings.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
    let resolved = config.resolved();
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, resolved.to_toml()?).map_err(|e| CliError::file(&config_path, e))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = settings.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let out = pool.install(|| execute(&resolved, dir))?;
    let elapsed = start.elapsed().as_secs_f64();
    write_csv(&dir.join(FAILURES_CSV), &[], &out.failures)?;
    let summary = regenerate(dir)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    let record = RunRecord {
        schema: SCHEMA_VERSION,
        kind: config.kind.name().to_string(),
        output_dir: dir.clone(),
        threads: pool.current_num_threads(),
        config: CONFIG_FILE.into(),
        tables: out.tables,
        failures: FAILURES_CSV.into(),
        summary: SUMMARY_FILE.into(),
        wall_clock_seconds: elapsed,
        solver_iterations: out.iterations,
        exit_code: exit_code_of(&summary),
    };
    write_json(&dir.join(RUN_FILE), &record)?;
    Ok(ResultBundle { dir: dir.clone(), summary, record })
}
