//! Summaries are pure functions of a bundle's `config.toml` and CSV tables;
//! [`regenerate`] is the only way a summary is ever produced.

use std::collections::BTreeMap;
use std::path::Path;

use homlab::corrector::{compare_corrector_gff, log_growth_fit, pooled_variance, Calibration, FilteredAverages, RegularityOutput, RegularitySample};
use homlab::homerr::{summarize_errors, ErrorRow};
use homlab::io::{read_csv, CsvTable, SCHEMA_VERSION};
use homlab::renorm::{fit_exponent, sample_variance, summarize, Check, ExponentFit, ScaleSeries, SweepRow};
use homlab::seed::ExperimentKind;
use homlab::tensor::{lambda_max, psd_leq};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::{parse_entries, table_name, EffmatRow, FailureRow, FilterRow, GrowthRow, RegularityRow, FAILURES_CSV};

pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.json";

/// One statistic at one scale (or `ε`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub statistic: String,
    pub x: f64,
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub name: String,
    pub slope: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub r2: f64,
}

impl FitEntry {
    fn new(name: impl Into<String>, f: &ExponentFit) -> Self {
        let (ci_lo, ci_hi) = f.interval();
        FitEntry { name: name.into(), slope: f.slope, stderr: f.stderr, ci_lo, ci_hi, r2: f.r2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub kind: ExperimentKind,
    pub dim: usize,
    pub seed: u64,
    pub failures: usize,
    pub levels: Vec<LevelEntry>,
    pub fits: Vec<FitEntry>,
    pub checks: Vec<Check>,
    pub statistics: serde_json::Value,
    /// Set when the rows could not be aggregated at all.
    pub error: Option<String>,
}

impl Summary {
    pub fn all_checks_pass(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }
}

struct Parts {
    levels: Vec<LevelEntry>,
    fits: Vec<FitEntry>,
    checks: Vec<Check>,
    statistics: serde_json::Value,
}

fn level(statistic: &str, x: f64, value: f64, se: Option<f64>) -> LevelEntry {
    LevelEntry { statistic: statistic.into(), x, value, se }
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed, detail: detail.into() }
}

pub fn read_config(dir: &Path) -> CliResult<ExperimentConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::file(&path, e))?;
    ExperimentConfig::from_toml(&text).map_err(|e| CliError::file(&path, e))
}

fn table<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> CliResult<CsvTable<T>> {
    Ok(read_csv(&dir.join(name))?)
}

/// Recomputes the summary of the bundle in `dir` from its files alone.
pub fn regenerate(dir: &Path) -> CliResult<Summary> {
    let config = read_config(dir)?;
    let failures: CsvTable<FailureRow> = table(dir, FAILURES_CSV)?;
    let parts = match config.kind {
        ExperimentKind::Effmat => effmat_parts(&config, &table(dir, &table_name(config.kind))?.rows),
        ExperimentKind::Sweep => sweep_parts(&config, &table(dir, &table_name(config.kind))?.rows),
        ExperimentKind::Corrector => {
            corrector_parts(&config, &table(dir, &table_name(config.kind))?.rows, &table(dir, "growth.csv")?.rows)
        }
        ExperimentKind::GffCompare => gff_parts(&config, &table(dir, &table_name(config.kind))?.rows),
        ExperimentKind::ErrorScaling => error_parts(&config, &table(dir, &table_name(config.kind))?),
        ExperimentKind::Regularity => regularity_parts(&config, &table(dir, &table_name(config.kind))?),
    };
    let (parts, error) = match parts {
        Ok(p) => (p, None),
        Err(e) => (
            Parts {
                levels: Vec::new(),
                fits: Vec::new(),
                checks: vec![check("aggregation", false, e.to_string())],
                statistics: serde_json::Value::Null,
            },
            Some(e.to_string()),
        ),
    };
    Ok(Summary {
        schema: SCHEMA_VERSION,
        kind: config.kind,
        dim: config.dim,
        seed: config.seed,
        failures: failures.rows.len(),
        levels: parts.levels,
        fits: parts.fits,
        checks: parts.checks,
        statistics: parts.statistics,
        error,
    })
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn matrix_of(dim: usize, entries: &str) -> homlab::Result<DMatrix<f64>> {
    match parse_entries(entries) {
        Some(v) if v.len() == dim * dim => Ok(DMatrix::from_row_slice(dim, dim, &v)),
        _ => Err(homlab::Error::InvalidParameter(format!("malformed matrix entries `{entries}`"))),
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = if xs.len() > 1 { (sample_variance(xs) / n).sqrt() } else { 0.0 };
    (mean, se)
}

#[derive(Debug, Serialize)]
struct EffmatScale {
    scale: usize,
    samples: usize,
    mean_a: Vec<f64>,
    mean_b_inverse: Vec<f64>,
    max_sample_gap: f64,
}

fn effmat_parts(config: &ExperimentConfig, rows: &[EffmatRow]) -> homlab::Result<Parts> {
    let dim = config.dim;
    let mut samples: BTreeMap<(usize, usize), BTreeMap<String, DMatrix<f64>>> = BTreeMap::new();
    for r in rows {
        samples.entry((r.scale, r.sample_idx)).or_default().insert(r.matrix.clone(), matrix_of(dim, &r.entries)?);
    }
    if samples.is_empty() {
        return Err(homlab::Error::InvalidParameter("no effective matrices".into()));
    }
    let (mut pinching, mut dual) = (true, true);
    let mut by_scale: BTreeMap<usize, Vec<(DMatrix<f64>, DMatrix<f64>)>> = BTreeMap::new();
    for (&(scale, _), mats) in &samples {
        let get = |k: &str| mats.get(k).cloned().ok_or_else(|| homlab::Error::InvalidParameter(format!("sample lacks matrix `{k}`")));
        let (a, b, arith, harm) = (get("a")?, get("b")?, get("arithmetic")?, get("harmonic")?);
        let b_inv = b.clone().try_inverse().ok_or_else(|| homlab::Error::NumericalDegeneracy("singular b(U)".into()))?;
        let tol = 1e-9 * lambda_max(&arith);
        pinching &= psd_leq(&harm, &a, tol) && psd_leq(&a, &arith, tol);
        dual &= psd_leq(&b_inv, &a, tol);
        by_scale.entry(scale).or_default().push((a, b_inv));
    }
    let mut levels = Vec::new();
    let mut stats = Vec::new();
    for (&scale, mats) in &by_scale {
        let n = mats.len();
        let a11: Vec<f64> = mats.iter().map(|(a, _)| a[(0, 0)]).collect();
        let (m, se) = mean_se(&a11);
        levels.push(level("a11", scale as f64, m, Some(se)));
        let mean_a = mats.iter().fold(DMatrix::zeros(dim, dim), |acc, (a, _)| acc + a) / n as f64;
        let mean_bi = mats.iter().fold(DMatrix::zeros(dim, dim), |acc, (_, b)| acc + b) / n as f64;
        let gap = mats.iter().map(|(a, b)| 0.5 * lambda_max(&(a - b))).fold(f64::NEG_INFINITY, f64::max);
        levels.push(level("max-sample-gap", scale as f64, gap, None));
        stats.push(EffmatScale {
            scale,
            samples: n,
            mean_a: mean_a.iter().copied().collect(),
            mean_b_inverse: mean_bi.iter().copied().collect(),
            max_sample_gap: gap,
        });
    }
    Ok(Parts {
        levels,
        fits: Vec::new(),
        checks: vec![
            check("pinching", pinching, "harmonic mean <= a(U) <= arithmetic mean on every sample"),
            check("dual-below-primal", dual, "b(U)^-1 <= a(U) on every sample"),
        ],
        statistics: to_json(&stats),
    })
}

fn sweep_parts(config: &ExperimentConfig, rows: &[SweepRow]) -> homlab::Result<Parts> {
    let series = ScaleSeries::from_rows(config.dim, config.m, rows)?;
    let s = summarize(&series)?;
    let mut levels = Vec::new();
    for sc in &s.scales {
        levels.push(level("stddev-nu-e1", sc.scale as f64, sc.var_nu[0].sqrt(), None));
        levels.push(level("gap", sc.scale as f64, sc.gap.value, Some(sc.gap.se)));
    }
    if let Some(t) = &s.defects {
        for r in &t.rows {
            levels.push(level("tau", r.scale as f64, r.tau.value, Some(r.tau.se)));
        }
    }
    let fits = s.fluctuation.as_ref().and_then(|f| f.fit.as_ref()).map(|f| vec![FitEntry::new("fluctuation-nu-e1", f)]).unwrap_or_default();
    Ok(Parts { levels, fits, checks: s.checks.clone(), statistics: to_json(&s) })
}

/// Reassembles per-(sample, scale) filtered averages of one ensemble and
/// direction, ordered by scale.
fn ensembles(rows: &[FilterRow], ensemble: &str, direction: usize) -> Vec<(f64, Vec<FilteredAverages>)> {
    let mut groups: BTreeMap<(u64, usize), Vec<Vec<f64>>> = BTreeMap::new();
    let mut scales: BTreeMap<u64, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ensemble == ensemble && r.direction == direction) {
        let key = r.scale.to_bits();
        scales.insert(key, r.scale);
        let mut v = vec![r.g1];
        v.extend(r.g2);
        v.extend(r.g3);
        groups.entry((key, r.sample_idx)).or_default().push(v);
    }
    let mut out: Vec<(f64, Vec<FilteredAverages>)> = scales
        .iter()
        .map(|(&key, &scale)| {
            let members = groups
                .range((key, 0)..=(key, usize::MAX))
                .map(|(_, values)| {
                    let dim = values[0].len();
                    let stddev = (0..dim).map(|k| sample_variance(&values.iter().map(|v| v[k]).collect::<Vec<_>>()).sqrt()).collect();
                    FilteredAverages { scale, values: values.clone(), stddev }
                })
                .collect();
            (scale, members)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[derive(Debug, Serialize)]
struct DecayStats {
    direction: usize,
    scales: Vec<f64>,
    stddev: Vec<f64>,
    fit: Option<ExponentFit>,
}

#[derive(Debug, Serialize)]
struct GrowthStats {
    direction: usize,
    radii: Vec<f64>,
    mean_variance: Vec<f64>,
    fit: Option<ExponentFit>,
}

fn decay(rows: &[FilterRow], ensemble: &str, direction: usize, component: usize) -> DecayStats {
    let groups = ensembles(rows, ensemble, direction);
    let scales: Vec<f64> = groups.iter().map(|g| g.0).collect();
    let stddev: Vec<f64> = groups.iter().map(|g| pooled_variance(&g.1, component).sqrt()).collect();
    let fit = if scales.len() >= 3 { fit_exponent(&scales, &stddev).ok() } else { None };
    DecayStats { direction, scales, stddev, fit }
}

fn corrector_parts(config: &ExperimentConfig, filtered: &[FilterRow], growth: &[GrowthRow]) -> homlab::Result<Parts> {
    if filtered.is_empty() && growth.is_empty() {
        return Err(homlab::Error::InvalidParameter("no corrector rows".into()));
    }
    let mut levels = Vec::new();
    let mut fits = Vec::new();
    let mut decays = Vec::new();
    let mut growths = Vec::new();
    for i in 0..config.dim {
        let d = decay(filtered, "corrector", i, i);
        for (s, v) in d.scales.iter().zip(&d.stddev) {
            levels.push(level(&format!("filtered-stddev-e{}", i + 1), *s, *v, None));
        }
        if let Some(f) = &d.fit {
            fits.push(FitEntry::new(format!("decay-e{}", i + 1), f));
        }
        decays.push(d);
        let mut by_radius: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
        for g in growth.iter().filter(|g| g.direction == i) {
            by_radius.entry(g.radius.to_bits()).or_insert_with(|| (g.radius, Vec::new())).1.push(g.variance);
        }
        let mut pts: Vec<(f64, f64)> = by_radius.values().map(|(r, v)| (*r, v.iter().sum::<f64>() / v.len() as f64)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let radii: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let mean_variance: Vec<f64> = pts.iter().map(|p| p.1).collect();
        for (r, v) in &pts {
            levels.push(level(&format!("growth-variance-e{}", i + 1), *r, *v, None));
        }
        let fit = if radii.len() >= 3 { log_growth_fit(&radii, &mean_variance).ok() } else { None };
        if let Some(f) = &fit {
            fits.push(FitEntry::new(format!("growth-log-e{}", i + 1), f));
        }
        growths.push(GrowthStats { direction: i, radii, mean_variance, fit });
    }
    let statistics = serde_json::json!({ "decay": to_json(&decays), "growth": to_json(&growths) });
    Ok(Parts { levels, fits, checks: Vec::new(), statistics })
}

fn gff_parts(config: &ExperimentConfig, rows: &[FilterRow]) -> homlab::Result<Parts> {
    let corr = ensembles(rows, "corrector", 0);
    let surr = ensembles(rows, "surrogate", 0);
    let c: Vec<Vec<FilteredAverages>> = corr.into_iter().map(|g| g.1).collect();
    let s: Vec<Vec<FilteredAverages>> = surr.into_iter().map(|g| g.1).collect();
    let table = compare_corrector_gff(&c, &s, Calibration::SmallestScale)?;
    let mut levels = Vec::new();
    let mut checks = Vec::new();
    for k in 0..config.dim {
        let comp: Vec<_> = table.iter().filter(|r| r.component == k && !r.degenerate).collect();
        for r in &comp {
            levels.push(level(&format!("variance-ratio-c{}", k + 1), r.scale, r.ratio, None));
        }
        let hi = comp.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
        let lo = comp.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let bounded = comp.is_empty() || hi <= 2.0 * lo;
        checks.push(check(&format!("ratio-bounded-c{}", k + 1), bounded, format!("variance ratio in [{lo:.4}, {hi:.4}] across scales, allowed factor 2")));
    }
    let mut fits = Vec::new();
    for (ens, name) in [("corrector", "corrector-decay-c1"), ("surrogate", "surrogate-decay-c1")] {
        if let Some(f) = decay(rows, ens, 0, 0).fit {
            fits.push(FitEntry::new(name, &f));
        }
    }
    Ok(Parts { levels, fits, checks, statistics: to_json(&table) })
}

fn error_parts(config: &ExperimentConfig, table: &CsvTable<ErrorRow>) -> homlab::Result<Parts> {
    if table.rows.is_empty() {
        return Err(homlab::Error::InvalidParameter("no error rows".into()));
    }
    let s = summarize_errors(&table.rows)?;
    let levels = s.levels.iter().map(|l| level("l2-error", 1.0 / l.eps_inv as f64, l.mean_l2, Some(l.se_l2))).collect();
    let mut fits = Vec::new();
    if let Some(f) = &s.fit {
        fits.push(FitEntry::new("l2-error-vs-eps", f));
    }
    if let Some(f) = &s.fit_log {
        fits.push(FitEntry::new("l2-error-vs-eps-log", f));
    }
    let mut checks = Vec::new();
    if config.dim >= 2 {
        let better = table.rows.iter().all(|r| match (r.h1_two_scale, r.h1_plain) {
            (Some(t), Some(p)) => t < p || p <= 1e-12,
            _ => false,
        });
        checks.push(check("two-scale-better", better, "interior H1 error of the two-scale expansion below the plain error on every seed"));
        let per_eps = |f: fn(&ErrorRow) -> Option<f64>| -> Vec<f64> {
            s.levels
                .iter()
                .map(|l| {
                    let xs: Vec<f64> = table.rows.iter().filter(|r| r.eps_inv == l.eps_inv).filter_map(f).collect();
                    xs.iter().sum::<f64>() / xs.len().max(1) as f64
                })
                .collect()
        };
        let weak = per_eps(|r| r.weak_gradient);
        let pointwise = per_eps(|r| r.pointwise);
        let decreasing = weak.windows(2).all(|w| w[1] <= w[0]);
        checks.push(check("weak-gradient-decreasing", decreasing, format!("windowed gradient discrepancy per level {weak:?}")));
        let floor = 0.1 * pointwise.first().copied().unwrap_or(0.0);
        let persists = pointwise.iter().all(|&p| p >= floor);
        checks.push(check("pointwise-persists", persists, format!("pointwise discrepancy per level {pointwise:?}, floor {floor:.4e}")));
    }
    let statistics = serde_json::json!({
        "scaling": to_json(&s),
        "abar": table.meta_value("abar"),
        "abar_halfwidth": table.meta_value("abar_halfwidth"),
    });
    Ok(Parts { levels, fits, checks, statistics })
}

#[derive(Debug, Serialize)]
struct RegularityScale {
    scale: usize,
    draws: usize,
    skipped: usize,
    max_ratio: f64,
    median_ratio: f64,
    q90_ratio: f64,
    max_caccioppoli_r1: f64,
    max_caccioppoli_r2: f64,
}

fn regularity_parts(config: &ExperimentConfig, table: &CsvTable<RegularityRow>) -> homlab::Result<Parts> {
    let skipped: BTreeMap<usize, usize> = table
        .meta_value("skipped")
        .unwrap_or("")
        .split_whitespace()
        .filter_map(|t| t.split_once(':').and_then(|(r, s)| Some((r.parse().ok()?, s.parse().ok()?))))
        .collect();
    let mut stats = Vec::new();
    let mut levels = Vec::new();
    for &r in &config.scales {
        let samples: Vec<RegularitySample> = table
            .rows
            .iter()
            .filter(|x| x.scale == r)
            .map(|x| RegularitySample { ratio: x.ratio, caccioppoli_r1: x.caccioppoli_r1, caccioppoli_r2: x.caccioppoli_r2 })
            .collect();
        if samples.is_empty() {
            continue;
        }
        let out = RegularityOutput { r, samples, skipped: skipped.get(&r).copied().unwrap_or(0) };
        levels.push(level("max-ratio", r as f64, out.max_ratio(), None));
        stats.push(RegularityScale {
            scale: r,
            draws: out.samples.len(),
            skipped: out.skipped,
            max_ratio: out.max_ratio(),
            median_ratio: out.quantile(0.5),
            q90_ratio: out.quantile(0.9),
            max_caccioppoli_r1: out.samples.iter().map(|s| s.caccioppoli_r1).fold(0.0, f64::max),
            max_caccioppoli_r2: out.samples.iter().map(|s| s.caccioppoli_r2).fold(0.0, f64::max),
        });
    }
    if stats.is_empty() {
        return Err(homlab::Error::InvalidParameter("no regularity draws".into()));
    }
    let first = stats[0].max_ratio;
    let last = stats[stats.len() - 1].max_ratio;
    let checks = vec![check("max-ratio-growth", last <= 2.0 * first, format!("max ratio {first:.4} at the smallest scale, {last:.4} at the largest"))];
    Ok(Parts { levels, fits: Vec::new(), checks, statistics: to_json(&stats) })
}
