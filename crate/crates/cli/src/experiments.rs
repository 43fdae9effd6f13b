//! Monte Carlo drivers: one function per experiment kind, each writing its
//! raw CSV tables into the bundle directory.

use std::path::Path;

use homlab::corrector::{
    corrector_with, default_windows, filter_cells, filtered_gradient_average, gaussian_surrogate, corrector_growth, CorrectorField,
    FilterKernel, MIN_CORRECTOR_SIDE,
};
use homlab::energies::cube_energies;
use homlab::fields::{sample_on_grid, CellTensorGrid, CoefficientField, Cube};
use homlab::homerr::{abar_from_series, error_task, validate_error_config, ErrorRow, ErrorScalingConfig};
use homlab::io::write_csv;
use homlab::renorm::{centered_cube, scale_sweep, sweep_rows, SweepConfig};
use homlab::seed::{derive, task_seed, ExperimentKind};
use homlab::solver::{cell_gradient, flux_average, ScalarField, Solver, SolverOptions};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const FAILURES_CSV: &str = "failures.csv";

/// A task that did not complete. `unit` is the scale, `1/ε` or `0` when the
/// task has no scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub unit: usize,
    pub sample_idx: usize,
    pub message: String,
}

/// One matrix of one realization; `entries` is row-major, space-separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffmatRow {
    pub scale: usize,
    pub sample_idx: usize,
    pub seed: u64,
    /// `a`, `b`, `arithmetic` or `harmonic`.
    pub matrix: String,
    pub entries: String,
    pub iterations: usize,
    pub residual: f64,
}

/// One filtered gradient `∫χ_r(x − ·)∇φ` at one window centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    /// `corrector` or `surrogate`.
    pub ensemble: String,
    pub sample_idx: usize,
    /// Index `i` of the slope `p = e_i`.
    pub direction: usize,
    pub scale: f64,
    pub window: usize,
    pub g1: f64,
    pub g2: Option<f64>,
    pub g3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub sample_idx: usize,
    pub direction: usize,
    pub radius: f64,
    pub nodes: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityRow {
    pub scale: usize,
    pub draw_idx: usize,
    pub ratio: f64,
    pub caccioppoli_r1: f64,
    pub caccioppoli_r2: f64,
}

/// Outcome of the compute phase of a run.
#[derive(Debug, Clone, Default)]
pub struct ExecOutput {
    pub tables: Vec<String>,
    pub failures: Vec<FailureRow>,
    pub iterations: u64,
}

pub fn format_entries(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn parse_entries(text: &str) -> Option<Vec<f64>> {
    text.split_whitespace().map(|v| v.parse().ok()).collect()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

fn unit_vector(dim: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[i] = 1.0;
    e
}

fn failure(unit: usize, sample_idx: usize, e: homlab::Error) -> FailureRow {
    FailureRow { unit, sample_idx, message: e.to_string() }
}

/// Splits ordered task results into rows and failures.
fn split<T>(results: Vec<Result<Vec<T>, FailureRow>>) -> (Vec<T>, Vec<FailureRow>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut v) => rows.append(&mut v),
            Err(f) => failures.push(f),
        }
    }
    (rows, failures)
}

pub fn table_name(kind: ExperimentKind) -> String {
    format!("{}.csv", kind.name())
}

pub fn execute(config: &ExperimentConfig, dir: &Path) -> CliResult<ExecOutput> {
    let field = config.field()?;
    let opts = config.solver_options();
    match config.kind {
        ExperimentKind::Effmat => run_effmat(config, &field, opts, dir),
        ExperimentKind::Sweep => run_sweep(config, &field, opts, dir),
        ExperimentKind::Corrector => run_corrector(config, &field, opts, dir),
        ExperimentKind::GffCompare => run_gff(config, &field, opts, dir),
        ExperimentKind::ErrorScaling => run_errors(config, &field, opts, dir),
        ExperimentKind::Regularity => run_regularity(config, &field, dir),
    }
}

fn scale_tasks(config: &ExperimentConfig) -> Vec<(usize, usize, usize)> {
    config
        .scales
        .iter()
        .enumerate()
        .flat_map(|(si, &r)| (0..config.samples).map(move |k| (si, r, k)))
        .collect()
}

fn run_effmat(config: &ExperimentConfig, field: &CoefficientField, opts: SolverOptions, dir: &Path) -> CliResult<ExecOutput> {
    let dim = config.dim;
    let results: Vec<Result<Vec<EffmatRow>, FailureRow>> = scale_tasks(config)
        .par_iter()
        .map(|&(si, r, k)| {
            let seed = task_seed(config.seed, ExperimentKind::Effmat.id(), si as u64, k as u64);
            let run = || -> homlab::Result<Vec<EffmatRow>> {
                let grid = sample_on_grid(&field.with_seed(seed), &centered_cube(dim, r), config.m)?;
                let e = cube_energies(&grid, opts)?;
                let row = |matrix: &str, entries: Vec<f64>, it: usize, res: f64| EffmatRow {
                    scale: r,
                    sample_idx: k,
                    seed,
                    matrix: matrix.into(),
                    entries: format_entries(&entries),
                    iterations: it,
                    residual: res,
                };
                Ok(vec![
                    row("a", e.a.entries.clone(), e.a.stats.iterations, e.a.stats.relative_residual),
                    row("b", e.b.entries.clone(), e.b.stats.iterations, e.b.stats.relative_residual),
                    row("arithmetic", row_major(&grid.arithmetic_mean()), 0, 0.0),
                    row("harmonic", row_major(&grid.harmonic_mean()), 0, 0.0),
                ])
            };
            run().map_err(|e| failure(r, k, e))
        })
        .collect();
    let (rows, failures) = split(results);
    let name = table_name(ExperimentKind::Effmat);
    write_csv(&dir.join(&name), &[("d", dim.to_string()), ("m", config.m.to_string())], &rows)?;
    let iterations = rows.iter().map(|r| r.iterations as u64).sum();
    Ok(ExecOutput { tables: vec![name], failures, iterations })
}

fn run_sweep(config: &ExperimentConfig, field: &CoefficientField, opts: SolverOptions, dir: &Path) -> CliResult<ExecOutput> {
    let sweep = SweepConfig { scales: config.scales.clone(), samples: config.samples, m: config.m, seed: config.seed, options: opts };
    let (rows, failures) = sweep_rows(field, &sweep)?;
    let name = table_name(ExperimentKind::Sweep);
    write_csv(&dir.join(&name), &[("d", config.dim.to_string()), ("m", config.m.to_string())], &rows)?;
    let failures = failures.into_iter().map(|f| FailureRow { unit: f.scale, sample_idx: f.sample_idx, message: f.message }).collect();
    let iterations = rows.iter().map(|r| r.iterations as u64).sum();
    Ok(ExecOutput { tables: vec![name], failures, iterations })
}

fn filter_rows(ensemble: &str, sample_idx: usize, direction: usize, scale: f64, values: &[Vec<f64>]) -> Vec<FilterRow> {
    values
        .iter()
        .enumerate()
        .map(|(w, v)| FilterRow {
            ensemble: ensemble.into(),
            sample_idx,
            direction,
            scale,
            window: w,
            g1: v[0],
            g2: v.get(1).copied(),
            g3: v.get(2).copied(),
        })
        .collect()
}

fn corrector_grid(config: &ExperimentConfig, field: &CoefficientField, side: usize, seed: u64) -> homlab::Result<CellTensorGrid> {
    if side < MIN_CORRECTOR_SIDE {
        return Err(homlab::Error::InvalidParameter(format!("corrector cube side {side} is below {MIN_CORRECTOR_SIDE}")));
    }
    sample_on_grid(&field.with_seed(seed), &Cube::centered(config.dim, side), config.m)
}

fn run_corrector(config: &ExperimentConfig, field: &CoefficientField, opts: SolverOptions, dir: &Path) -> CliResult<ExecOutput> {
    let section = config.corrector.as_ref().ok_or_else(|| CliError::Config("missing [corrector] section".into()))?;
    let dim = config.dim;
    type Sample = (Vec<FilterRow>, Vec<GrowthRow>, Vec<CorrectorField>, u64);
    let results: Vec<Result<Sample, FailureRow>> = (0..config.samples)
        .into_par_iter()
        .map(|k| {
            let seed = task_seed(config.seed, ExperimentKind::Corrector.id(), 0, k as u64);
            let run = || -> homlab::Result<Sample> {
                let grid = corrector_grid(config, field, section.side, seed)?;
                let solver = Solver::with_options(&grid, opts);
                let mut filtered = Vec::new();
                let mut growth = Vec::new();
                let mut correctors = Vec::new();
                let mut iterations = 0;
                for i in 0..dim {
                    let c = corrector_with(&solver, &unit_vector(dim, i))?;
                    iterations += c.phi.stats.map_or(0, |s| s.iterations as u64);
                    for &r in &section.filter_scales {
                        let kernel = FilterKernel { kind: section.kernel, scale: r };
                        let fa = filtered_gradient_average(&c, &kernel, &default_windows(&c.phi.geometry, r))?;
                        filtered.extend(filter_rows("corrector", k, i, r, &fa.values));
                    }
                    for p in corrector_growth(&c, &section.radii)? {
                        growth.push(GrowthRow { sample_idx: k, direction: i, radius: p.radius, nodes: p.nodes, variance: p.variance });
                    }
                    if k == 0 && section.dump_fields {
                        correctors.push(c);
                    }
                }
                Ok((filtered, growth, correctors, iterations))
            };
            run().map_err(|e| failure(section.side, k, e))
        })
        .collect();
    let mut filtered = Vec::new();
    let mut growth = Vec::new();
    let mut failures = Vec::new();
    let mut iterations = 0;
    let mut tables = vec![table_name(ExperimentKind::Corrector), "growth.csv".to_string()];
    for r in results {
        match r {
            Ok((mut f, mut g, correctors, it)) => {
                filtered.append(&mut f);
                growth.append(&mut g);
                iterations += it;
                for (i, c) in correctors.iter().enumerate() {
                    let name = format!("phi_e{}.bin", i + 1);
                    homlab::io::write_nodal(&dir.join(&name), &c.phi)?;
                    tables.push(name);
                }
            }
            Err(f) => failures.push(f),
        }
    }
    let meta = [("d", dim.to_string()), ("m", config.m.to_string()), ("side", section.side.to_string())];
    write_csv(&dir.join(&tables[0]), &meta, &filtered)?;
    write_csv(&dir.join(&tables[1]), &meta, &growth)?;
    Ok(ExecOutput { tables, failures, iterations })
}

fn run_gff(config: &ExperimentConfig, field: &CoefficientField, opts: SolverOptions, dir: &Path) -> CliResult<ExecOutput> {
    let section = config.gff.as_ref().ok_or_else(|| CliError::Config("missing [gff] section".into()))?;
    let dim = config.dim;
    let kind_id = ExperimentKind::GffCompare.id();
    let e1 = unit_vector(dim, 0);
    type Sample = (Vec<FilterRow>, DMatrix<f64>, homlab::fields::Geometry, u64);
    let results: Vec<Result<Sample, FailureRow>> = (0..config.samples)
        .into_par_iter()
        .map(|k| {
            let seed = task_seed(config.seed, kind_id, 0, k as u64);
            let run = || -> homlab::Result<Sample> {
                let grid = corrector_grid(config, field, section.side, seed)?;
                let solver = Solver::with_options(&grid, opts);
                let mut a_cube = DMatrix::zeros(dim, dim);
                let mut rows = Vec::new();
                let mut iterations = 0;
                for i in 0..dim {
                    let e = unit_vector(dim, i);
                    let c = corrector_with(&solver, &e)?;
                    iterations += c.phi.stats.map_or(0, |s| s.iterations as u64);
                    // Column i of a(□_L) is the mean flux of ℓ_{e_i} + φ_{e_i}.
                    let v = ScalarField::affine(c.phi.geometry, &e).axpy(1.0, &c.phi);
                    let flux = flux_average(&grid, &v);
                    for j in 0..dim {
                        a_cube[(j, i)] = flux[j];
                    }
                    if i == 0 {
                        for &r in &section.filter_scales {
                            let kernel = FilterKernel { kind: section.kernel, scale: r };
                            let fa = filtered_gradient_average(&c, &kernel, &default_windows(&c.phi.geometry, r))?;
                            rows.extend(filter_rows("corrector", k, 0, r, &fa.values));
                        }
                    }
                }
                Ok((rows, a_cube, *grid.geometry(), iterations))
            };
            run().map_err(|e| failure(section.side, k, e))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut iterations = 0;
    let mut abar_sum = DMatrix::zeros(dim, dim);
    let mut count = 0usize;
    let mut geometry = None;
    for r in results {
        match r {
            Ok((mut f, a, geo, it)) => {
                rows.append(&mut f);
                abar_sum += a;
                count += 1;
                iterations += it;
                geometry = Some(geo);
            }
            Err(f) => failures.push(f),
        }
    }
    let abar = match &section.abar {
        Some(a) => Some(DMatrix::from_row_slice(dim, dim, a)),
        None if count > 0 => {
            let m = abar_sum / count as f64;
            Some((&m + m.transpose()) * 0.5)
        }
        None => None,
    };
    if let (Some(abar), Some(geo)) = (&abar, geometry) {
        let results: Vec<Result<Vec<FilterRow>, FailureRow>> = (0..config.samples)
            .into_par_iter()
            .map(|k| {
                let seed = task_seed(config.seed, kind_id, 1, k as u64);
                let run = || -> homlab::Result<Vec<FilterRow>> {
                    let psi = gaussian_surrogate(abar, &e1, &geo, None, seed)?;
                    let g = cell_gradient(&psi);
                    let mut out = Vec::new();
                    for &r in &section.filter_scales {
                        let kernel = FilterKernel { kind: section.kernel, scale: r };
                        let fa = filter_cells(&geo, &g, &kernel, &default_windows(&geo, r))?;
                        out.extend(filter_rows("surrogate", k, 0, r, &fa.values));
                    }
                    Ok(out)
                };
                run().map_err(|e| failure(section.side, k, e))
            })
            .collect();
        let (mut s, mut f) = split(results);
        rows.append(&mut s);
        failures.append(&mut f);
    }
    let name = table_name(ExperimentKind::GffCompare);
    let abar_text = abar.as_ref().map_or(String::from("none"), |a| format_entries(&row_major(a)));
    let meta = [("d", dim.to_string()), ("m", config.m.to_string()), ("side", section.side.to_string()), ("abar", abar_text)];
    write_csv(&dir.join(&name), &meta, &rows)?;
    Ok(ExecOutput { tables: vec![name], failures, iterations })
}

fn run_errors(config: &ExperimentConfig, field: &CoefficientField, opts: SolverOptions, dir: &Path) -> CliResult<ExecOutput> {
    let section = config.error.as_ref().ok_or_else(|| CliError::Config("missing [error] section".into()))?;
    let dim = config.dim;
    let cfg = ErrorScalingConfig {
        dim,
        data: section.data,
        eps_inv: config.eps_inv.clone(),
        cells_per_eps: config.m,
        samples: config.samples,
        seed: config.seed,
        window: section.window,
        oracle_resolution: section.oracle_resolution,
    };
    validate_error_config(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    // The one-dimensional oracle path never touches ā.
    let (abar, halfwidth) = match (&section.abar, dim) {
        (_, 1) => (DMatrix::identity(1, 1), 0.0),
        (Some(a), _) => (DMatrix::from_row_slice(dim, dim, a), 0.0),
        (None, _) => {
            let sweep = SweepConfig {
                scales: vec![section.abar_side],
                samples: section.abar_samples,
                m: config.m,
                seed: derive(config.seed, &[ExperimentKind::ErrorScaling.id(), 0xa]),
                options: opts,
            };
            let out = scale_sweep(field, &sweep)?;
            if let Some(f) = out.failures.first() {
                return Err(CliError::Solver(format!("estimating ā at side {}: {}", f.scale, f.message)));
            }
            abar_from_series(&out.series)?
        }
    };
    let tasks: Vec<(usize, usize)> = (0..cfg.eps_inv.len()).flat_map(|li| (0..cfg.samples).map(move |k| (li, k))).collect();
    let results: Vec<Result<Vec<ErrorRow>, FailureRow>> = tasks
        .par_iter()
        .map(|&(li, k)| error_task(&cfg, field, &abar, li, k).map(|r| vec![r]).map_err(|e| failure(cfg.eps_inv[li], k, e)))
        .collect();
    let (rows, failures) = split(results);
    let name = table_name(ExperimentKind::ErrorScaling);
    let meta = [
        ("d", dim.to_string()),
        ("m", config.m.to_string()),
        ("abar", if dim == 1 { "none".to_string() } else { format_entries(&row_major(&abar)) }),
        ("abar_halfwidth", halfwidth.to_string()),
    ];
    write_csv(&dir.join(&name), &meta, &rows)?;
    let iterations = rows.iter().map(|r| r.iterations as u64).sum();
    Ok(ExecOutput { tables: vec![name], failures, iterations })
}

fn run_regularity(config: &ExperimentConfig, field: &CoefficientField, dir: &Path) -> CliResult<ExecOutput> {
    let results: Vec<Result<(Vec<RegularityRow>, usize), FailureRow>> = config
        .scales
        .par_iter()
        .enumerate()
        .map(|(si, &r)| {
            let seed = task_seed(config.seed, ExperimentKind::Regularity.id(), si as u64, 0);
            homlab::corrector::regularity_ratio(field, r, config.samples, config.m, seed)
                .map(|out| {
                    let rows = out
                        .samples
                        .iter()
                        .enumerate()
                        .map(|(i, s)| RegularityRow {
                            scale: r,
                            draw_idx: i,
                            ratio: s.ratio,
                            caccioppoli_r1: s.caccioppoli_r1,
                            caccioppoli_r2: s.caccioppoli_r2,
                        })
                        .collect();
                    (rows, out.skipped)
                })
                .map_err(|e| failure(r, 0, e))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut skipped = Vec::new();
    for (res, &r) in results.into_iter().zip(&config.scales) {
        match res {
            Ok((mut v, s)) => {
                rows.append(&mut v);
                skipped.push(format!("{r}:{s}"));
            }
            Err(f) => failures.push(f),
        }
    }
    let name = table_name(ExperimentKind::Regularity);
    let meta = [("d", config.dim.to_string()), ("m", config.m.to_string()), ("skipped", skipped.join(" "))];
    write_csv(&dir.join(&name), &meta, &rows)?;
    Ok(ExecOutput { tables: vec![name], failures, iterations: 0 })
}
