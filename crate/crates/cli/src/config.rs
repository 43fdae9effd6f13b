//! Experiment configs: one TOML document per run.
//!
//! The canonical text of a config is what [`ExperimentConfig::to_toml`]
//! produces; canonical text survives parse and re-serialization unchanged.

use std::path::PathBuf;

use homlab::corrector::KernelKind;
use homlab::fields::{CoefficientField, FieldSpec};
use homlab::homerr::BoundaryData;
use homlab::seed::ExperimentKind;
use homlab::solver::SolverOptions;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const OUTPUT_DIR_ENV: &str = "HOMLAB_OUTPUT_DIR";
pub const THREADS_ENV: &str = "HOMLAB_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dim: usize,
    pub seed: u64,
    /// Mesh cells per unit length (per `ε` for error scaling).
    pub m: usize,
    /// Realizations per scale; boundary draws for `regularity`.
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scales: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps_inv: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter_factor: Option<f64>,
    pub field: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector: Option<CorrectorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gff: Option<GffSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorSection {
    /// Cube side `L`.
    pub side: usize,
    pub filter_scales: Vec<f64>,
    pub radii: Vec<f64>,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    /// Nodal dumps of the correctors of realization 0.
    #[serde(default)]
    pub dump_fields: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GffSection {
    pub side: usize,
    pub filter_scales: Vec<f64>,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    /// Row-major `ā`; estimated from the corrector ensemble when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSection {
    pub data: BoundaryData,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_oracle_resolution")]
    pub oracle_resolution: usize,
    /// Row-major `ā`; estimated by a sweep at `abar_side` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abar: Option<Vec<f64>>,
    #[serde(default = "default_abar_side")]
    pub abar_side: usize,
    #[serde(default = "default_abar_samples")]
    pub abar_samples: usize,
}

fn default_kernel() -> KernelKind {
    KernelKind::Bump
}

fn default_window() -> f64 {
    0.25
}

fn default_oracle_resolution() -> usize {
    1
}

fn default_abar_side() -> usize {
    16
}

fn default_abar_samples() -> usize {
    16
}

fn config_err(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {message}"))
}

impl ExperimentConfig {
    /// Parses and validates; syntax errors carry line and column.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            max_iter_factor: self.max_iter_factor.unwrap_or(d.max_iter_factor),
        }
    }

    /// The generator with the master seed; realizations re-seed it per task.
    pub fn field(&self) -> CliResult<CoefficientField> {
        CoefficientField::new(self.dim, self.field.clone(), self.seed).map_err(|e| config_err("field", e))
    }

    /// Copy written beside the outputs: defaults spelled out, with the
    /// run-location settings removed so that bundles compare byte for byte.
    pub fn resolved(&self) -> Self {
        let opts = self.solver_options();
        let mut c = self.clone();
        c.output_dir = None;
        c.threads = None;
        c.tolerance = Some(opts.tolerance);
        c.max_iter_factor = Some(opts.max_iter_factor);
        c
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(config_err("dim", format!("must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.m == 0 {
            return Err(config_err("m", "must be positive"));
        }
        if self.samples == 0 {
            return Err(config_err("samples", "must be positive"));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0 && t < 1.0) {
                return Err(config_err("tolerance", "must lie in (0, 1)"));
            }
        }
        if let Some(f) = self.max_iter_factor {
            if !(f > 0.0) {
                return Err(config_err("max_iter_factor", "must be positive"));
            }
        }
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be positive"));
        }
        self.field()?;
        let need_scales = matches!(self.kind, ExperimentKind::Effmat | ExperimentKind::Sweep | ExperimentKind::Regularity);
        if need_scales && self.scales.is_empty() {
            return Err(config_err("scales", format!("required for {}", self.kind.name())));
        }
        if self.scales.contains(&0) {
            return Err(config_err("scales", "must be positive"));
        }
        match self.kind {
            ExperimentKind::Sweep if self.samples < 8 => Err(config_err("samples", "a sweep needs at least 8 samples per scale")),
            ExperimentKind::Sweep if self.scales.windows(2).any(|w| w[1] != 2 * w[0]) => {
                Err(config_err("scales", "must form a dyadic ladder r, 2r, 4r, ..."))
            }
            ExperimentKind::Corrector => {
                let s = self.corrector.as_ref().ok_or_else(|| config_err("corrector", "section required"))?;
                if s.filter_scales.is_empty() || s.filter_scales.iter().any(|&r| !(r > 0.0)) {
                    return Err(config_err("corrector.filter_scales", "must be a nonempty list of positive scales"));
                }
                if s.radii.iter().any(|&r| !(r > 0.0) || r > s.side as f64 / 4.0) {
                    return Err(config_err("corrector.radii", "radii must lie in (0, side/4]"));
                }
                Ok(())
            }
            ExperimentKind::GffCompare => {
                let s = self.gff.as_ref().ok_or_else(|| config_err("gff", "section required"))?;
                if self.samples < 16 {
                    return Err(config_err("samples", "the comparison needs at least 16 realizations"));
                }
                if s.filter_scales.is_empty() || s.filter_scales.iter().any(|&r| !(r > 0.0)) {
                    return Err(config_err("gff.filter_scales", "must be a nonempty list of positive scales"));
                }
                if let Some(a) = &s.abar {
                    check_matrix("gff.abar", a, self.dim)?;
                }
                Ok(())
            }
            ExperimentKind::ErrorScaling => {
                let s = self.error.as_ref().ok_or_else(|| config_err("error", "section required"))?;
                if self.eps_inv.len() < 3 || self.eps_inv.contains(&0) {
                    return Err(config_err("eps_inv", "needs at least three positive values of 1/ε"));
                }
                if self.m < homlab::homerr::MIN_CELLS_PER_EPS {
                    return Err(config_err("m", format!("at least {} cells per ε", homlab::homerr::MIN_CELLS_PER_EPS)));
                }
                if s.oracle_resolution == 0 {
                    return Err(config_err("error.oracle_resolution", "must be positive"));
                }
                if let Some(a) = &s.abar {
                    check_matrix("error.abar", a, self.dim)?;
                }
                Ok(())
            }
            ExperimentKind::Regularity if self.scales.iter().any(|&r| r < 4) => Err(config_err("scales", "regularity needs r >= 4")),
            _ => Ok(()),
        }
    }
}

fn check_matrix(field: &str, entries: &[f64], dim: usize) -> CliResult<()> {
    if entries.len() != dim * dim {
        return Err(config_err(field, format!("needs {} row-major entries", dim * dim)));
    }
    let m = nalgebra::DMatrix::from_row_slice(dim, dim, entries);
    if (&m - m.transpose()).abs().max() > 1e-12 || homlab::tensor::lambda_min(&m) <= 0.0 {
        return Err(config_err(field, "must be symmetric positive definite"));
    }
    Ok(())
}

/// Run-location settings after flag, environment and config precedence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

/// Flag beats environment beats config; the default directory is
/// `runs/<kind>-seed<seed>`.
pub fn resolve_settings(config: &ExperimentConfig, flag_dir: Option<PathBuf>, flag_threads: Option<usize>) -> CliResult<RunSettings> {
    let env_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    let env_threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| CliError::Config(format!("{THREADS_ENV}={v} is not a thread count")))?),
        Err(_) => None,
    };
    let output_dir = flag_dir
        .or(env_dir)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", config.kind.name(), config.seed)));
    let threads = flag_threads.or(env_threads).or(config.threads);
    if threads == Some(0) {
        return Err(CliError::Config("thread count must be positive".into()));
    }
    Ok(RunSettings { output_dir, threads })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"kind = "sweep"
dim = 2
seed = 7
m = 2
samples = 8
scales = [2, 4, 8]
tolerance = 0.0000000001

[field]
kind = "checkerboard"
a_lo = 1.0
a_hi = 4.0
prob_hi = 0.5
"#;

    #[test]
    fn canonical_text_round_trips() {
        let c = ExperimentConfig::from_toml(SWEEP).unwrap();
        assert_eq!(c.to_toml().unwrap(), SWEEP);
        let r = c.resolved().to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&r).unwrap().to_toml().unwrap(), r);
    }

    #[test]
    fn errors_name_line_or_field() {
        let e = ExperimentConfig::from_toml(&SWEEP.replace("dim = 2", "dim = \"two\"")).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = ExperimentConfig::from_toml(&SWEEP.replace("scales = [2, 4, 8]", "scales = [2, 6]")).unwrap_err();
        assert!(e.to_string().contains("`scales`"), "{e}");
        let e = ExperimentConfig::from_toml(&SWEEP.replace("prob_hi = 0.5", "prob_hi = 1.5")).unwrap_err();
        assert!(e.to_string().contains("`field`"), "{e}");
        let e = ExperimentConfig::from_toml(&format!("{SWEEP}bogus = 1\n")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml(&SWEEP.replace("[field]", "bogus = 1\n\n[field]")).unwrap_err();
        assert!(e.to_string().contains("bogus") && e.exit_code() == 2, "{e}");
    }
}
