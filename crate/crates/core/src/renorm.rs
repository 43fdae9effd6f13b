//! Multiscale Monte Carlo statistics of `ν` and `ν*`: per-scale mean
//! matrices, additivity defect `τ(r)`, duality gap, fluctuation exponents and
//! the `O_s` tail statistic.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energies::{cube_energies, polarization_directions, polarize};
use crate::error::{invalid, Error, Result};
use crate::fields::{sample_on_grid, CoefficientField, Cube};
use crate::seed::{task_seed, ExperimentKind};
use crate::solver::SolverOptions;
use crate::tensor::{frobenius, lambda_max};

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: usize,
    pub sample_idx: usize,
    pub direction: String,
    pub nu: f64,
    pub nu_star: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// A sample that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub scale: usize,
    pub sample_idx: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scales: Vec<usize>,
    pub samples: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(default)]
    pub options: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SampleFailure>,
    pub series: ScaleSeries,
}

/// Seed of realization `sample` at scale index `scale_index`.
pub fn sample_seed(master: u64, scale_index: usize, sample: usize) -> u64 {
    task_seed(master, ExperimentKind::Sweep.id(), scale_index as u64, sample as u64)
}

/// Cube `□_r` centred at the origin, shifted by half a unit for odd `r`.
pub fn centered_cube(dim: usize, r: usize) -> Cube {
    let lo = -((r / 2) as i64);
    Cube::at(&vec![lo; dim], r)
}

/// Independent realizations on `□_r` for every scale; results are identical
/// to sequential execution.
pub fn scale_sweep(field: &CoefficientField, config: &SweepConfig) -> Result<SweepOutput> {
    let (rows, failures) = sweep_rows(field, config)?;
    let series = ScaleSeries::from_rows(field.dim(), config.m, &rows)?;
    Ok(SweepOutput { rows, failures, series })
}

/// The raw rows of [`scale_sweep`] without aggregation; failed samples are
/// reported instead of aborting the sweep.
pub fn sweep_rows(field: &CoefficientField, config: &SweepConfig) -> Result<(Vec<SweepRow>, Vec<SampleFailure>)> {
    if config.samples < 8 {
        return invalid("a sweep needs at least 8 samples per scale");
    }
    if config.scales.is_empty() || config.scales.contains(&0) {
        return invalid("scales must be positive");
    }
    if config.scales.windows(2).any(|w| w[1] != 2 * w[0]) {
        return invalid("scales must form a dyadic ladder r, 2r, 4r, ...");
    }
    let tasks: Vec<(usize, usize, usize)> = config
        .scales
        .iter()
        .enumerate()
        .flat_map(|(si, &r)| (0..config.samples).map(move |k| (si, r, k)))
        .collect();
    let dim = field.dim();
    let results: Vec<std::result::Result<Vec<SweepRow>, SampleFailure>> = tasks
        .par_iter()
        .map(|&(si, r, k)| {
            let realization = field.with_seed(sample_seed(config.seed, si, k));
            let run = || -> Result<Vec<SweepRow>> {
                let grid = sample_on_grid(&realization, &centered_cube(dim, r), config.m)?;
                let e = cube_energies(&grid, config.options)?;
                Ok(e.directions
                    .into_iter()
                    .map(|d| SweepRow {
                        scale: r,
                        sample_idx: k,
                        direction: d.direction,
                        nu: d.nu,
                        nu_star: d.nu_star,
                        iterations: d.stats.iterations,
                        residual: d.stats.relative_residual,
                    })
                    .collect())
            };
            run().map_err(|e| SampleFailure { scale: r, sample_idx: k, message: e.to_string() })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut v) => rows.append(&mut v),
            Err(f) => failures.push(f),
        }
    }
    Ok((rows, failures))
}

/// Statistics of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleStats {
    pub scale: usize,
    pub samples: usize,
    /// `ν(□_r, direction)` per polarization direction, per sample.
    pub nu: Vec<Vec<f64>>,
    pub nu_star: Vec<Vec<f64>>,
    pub a_samples: Vec<DMatrix<f64>>,
    pub b_samples: Vec<DMatrix<f64>>,
    pub mean_a: DMatrix<f64>,
    pub mean_b: DMatrix<f64>,
    /// Entrywise standard errors of the means.
    pub se_a: DMatrix<f64>,
    pub se_b: DMatrix<f64>,
}

fn mean_and_se(samples: &[DMatrix<f64>], dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let mut mean = DMatrix::zeros(dim, dim);
    for s in samples {
        mean += s;
    }
    mean /= n;
    let mut var = DMatrix::zeros(dim, dim);
    for s in samples {
        let d = s - &mean;
        var += d.component_mul(&d);
    }
    let denom = if samples.len() > 1 { n - 1.0 } else { 1.0 };
    let se = (var / denom / n).map(f64::sqrt);
    (mean, se)
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

impl ScaleStats {
    pub fn nu_variance(&self, direction: usize) -> f64 {
        sample_variance(&self.nu[direction])
    }

    pub fn nu_star_variance(&self, direction: usize) -> f64 {
        sample_variance(&self.nu_star[direction])
    }

    /// `½λ_max(a_k − b_k⁻¹)` for every realization `k`. Unlike the gap on
    /// means, this carries no Jensen term and is exactly zero in one dimension.
    pub fn sample_gaps(&self) -> Result<Vec<f64>> {
        self.a_samples
            .iter()
            .zip(&self.b_samples)
            .map(|(a, b)| {
                let b_inv = b.clone().try_inverse().ok_or_else(|| Error::NumericalDegeneracy("singular dual form".into()))?;
                Ok(0.5 * lambda_max(&(a - b_inv)))
            })
            .collect()
    }
}

/// Per-scale statistics indexed by dyadic side length.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSeries {
    pub dim: usize,
    pub m: usize,
    pub scales: Vec<ScaleStats>,
}

impl ScaleSeries {
    /// Aggregates sweep rows. This is the only aggregation path, so summaries
    /// computed from a CSV equal the ones computed during the run.
    pub fn from_rows(dim: usize, m: usize, rows: &[SweepRow]) -> Result<Self> {
        let dirs = polarization_directions(dim);
        let nd = dirs.len();
        let mut scale_values: Vec<usize> = rows.iter().map(|r| r.scale).collect();
        scale_values.sort_unstable();
        scale_values.dedup();
        let mut scales = Vec::new();
        for r in scale_values {
            let mut per_sample: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>)> = Default::default();
            for row in rows.iter().filter(|x| x.scale == r) {
                let k = dirs
                    .iter()
                    .position(|(l, _)| *l == row.direction)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown direction label {}", row.direction)))?;
                let e = per_sample.entry(row.sample_idx).or_insert_with(|| (vec![f64::NAN; nd], vec![f64::NAN; nd]));
                e.0[k] = row.nu;
                e.1[k] = row.nu_star;
            }
            let mut nu = vec![Vec::new(); nd];
            let mut nu_star = vec![Vec::new(); nd];
            let mut a_samples = Vec::new();
            let mut b_samples = Vec::new();
            for (idx, (a, b)) in per_sample {
                if a.iter().chain(&b).any(|v| v.is_nan()) {
                    return invalid(format!("scale {r} sample {idx} is missing directions"));
                }
                for k in 0..nd {
                    nu[k].push(a[k]);
                    nu_star[k].push(b[k]);
                }
                a_samples.push(polarize(dim, &a)?);
                b_samples.push(polarize(dim, &b)?);
            }
            if a_samples.is_empty() {
                continue;
            }
            let (mean_a, se_a) = mean_and_se(&a_samples, dim);
            let (mean_b, se_b) = mean_and_se(&b_samples, dim);
            scales.push(ScaleStats { scale: r, samples: a_samples.len(), nu, nu_star, a_samples, b_samples, mean_a, mean_b, se_a, se_b });
        }
        Ok(ScaleSeries { dim, m, scales })
    }

    pub fn at(&self, r: usize) -> Result<&ScaleStats> {
        self.scales
            .iter()
            .find(|s| s.scale == r)
            .ok_or_else(|| Error::InvalidParameter(format!("scale {r} is not in the series")))
    }
}

/// A statistic with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

fn diff_se(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius(&a.zip_map(b, |x, y| (x * x + y * y).sqrt()))
}

/// `τ(r) = ½λ_max(Ā(r) − Ā(2r)) + ½λ_max(B̄(r) − B̄(2r))`.
pub fn additivity_defect(series: &ScaleSeries, r: usize) -> Result<Estimate> {
    let s1 = series.at(r)?;
    let s2 = series.at(2 * r)?;
    let value = 0.5 * lambda_max(&(&s1.mean_a - &s2.mean_a)) + 0.5 * lambda_max(&(&s1.mean_b - &s2.mean_b));
    let se = 0.5 * (diff_se(&s1.se_a, &s2.se_a) + diff_se(&s1.se_b, &s2.se_b));
    Ok(Estimate { value, se })
}

/// `½λ_max(Ā(r) − B̄(r)⁻¹)` on sample means.
pub fn duality_gap_at(series: &ScaleSeries, r: usize) -> Result<Estimate> {
    let s = series.at(r)?;
    let b_inv = s
        .mean_b
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalDegeneracy(format!("mean dual form at scale {r} is singular")))?;
    let value = 0.5 * lambda_max(&(&s.mean_a - &b_inv));
    let nb = crate::tensor::spectral_norm(&b_inv);
    let se = 0.5 * (frobenius(&s.se_a) + nb * nb * frobenius(&s.se_b));
    Ok(Estimate { value, se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRow {
    pub scale: usize,
    pub gap: Estimate,
    pub tau: Estimate,
    /// `gap(r)/τ(r)`, absent when `τ(r)` does not exceed its standard error.
    pub ratio: Option<f64>,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectTable {
    pub rows: Vec<DefectRow>,
    /// `max gap(r)/τ(r)` over reliable rows.
    pub c_emp: Option<f64>,
}

/// Duality gap against additivity defect at every scale that has a successor.
pub fn duality_vs_additivity(series: &ScaleSeries) -> Result<DefectTable> {
    if series.scales.len() < 3 {
        return invalid("need at least three scales");
    }
    let mut rows = Vec::new();
    for w in series.scales.windows(2) {
        let r = w[0].scale;
        if w[1].scale != 2 * r {
            continue;
        }
        let gap = duality_gap_at(series, r)?;
        let tau = additivity_defect(series, r)?;
        let floor = 1e-9 * lambda_max(&series.at(r)?.mean_a);
        let reliable = tau.value > tau.se && tau.value > floor;
        let ratio = reliable.then(|| gap.value / tau.value);
        rows.push(DefectRow { scale: r, gap, tau, ratio, reliable });
    }
    let c_emp = rows.iter().filter_map(|r| r.ratio).reduce(f64::max);
    Ok(DefectTable { rows, c_emp })
}

/// Ordinary least squares on `log y` against `log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r2: f64,
}

impl ExponentFit {
    /// 95% normal-approximation interval for the slope.
    pub fn interval(&self) -> (f64, f64) {
        (self.slope - 1.96 * self.stderr, self.slope + 1.96 * self.stderr)
    }
}

/// Linear least squares `y ≈ intercept + slope·x` with slope standard error.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<ExponentFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return invalid("a fit needs at least three (x, y) pairs");
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return invalid("abscissae are all equal");
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = if xs.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(ExponentFit { slope, intercept, stderr, r2 })
}

pub fn fit_exponent(xs: &[f64], ys: &[f64]) -> Result<ExponentFit> {
    if ys.iter().any(|&y| y.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return invalid("exponent fits need positive statistics");
    }
    if xs.iter().any(|&x| x.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return invalid("exponent fits need positive abscissae");
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Smallest `θ` with `mean exp((x/θ)₊^s) ≤ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStat {
    pub s: f64,
    pub theta: f64,
    /// All samples are nonpositive, so the condition holds for every `θ`.
    pub vacuous: bool,
    pub samples: Vec<f64>,
}

pub fn tail_mean(samples: &[f64], s: f64, theta: f64) -> f64 {
    samples.iter().map(|&x| if x > 0.0 { (x / theta).powf(s).exp() } else { 1.0 }).sum::<f64>() / samples.len() as f64
}

/// Bisection in `log θ`; stops once the bracket is narrower than `1e-12`
/// relative, well inside the 1% the statistic is defined to.
pub fn subgaussian_theta(samples: &[f64], s: f64) -> Result<TailStat> {
    if s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return invalid("tail exponent s must be positive");
    }
    if samples.len() < 16 {
        return invalid("tail statistic needs at least 16 samples");
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return invalid("samples must be finite");
    }
    let top = samples.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return Ok(TailStat { s, theta: 0.0, vacuous: true, samples: samples.to_vec() });
    }
    let ok = |t: f64| tail_mean(samples, s, t) <= 2.0;
    let mut hi = top;
    while !ok(hi) {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while ok(lo) {
        hi = lo;
        lo /= 2.0;
    }
    while hi / lo > 1.0 + 1e-12 {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(TailStat { s, theta: hi, vacuous: false, samples: samples.to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationFit {
    pub scales: Vec<usize>,
    pub stddev: Vec<f64>,
    /// `None` when some scale has zero variance.
    pub fit: Option<ExponentFit>,
    pub degenerate: bool,
}

/// Exponent of `stddev[ν(□_r, e₁)]` against `r`.
pub fn fluctuation_scaling(series: &ScaleSeries) -> Result<FluctuationFit> {
    if series.scales.len() < 3 {
        return invalid("need at least three scales");
    }
    let scales: Vec<usize> = series.scales.iter().map(|s| s.scale).collect();
    let stddev: Vec<f64> = series.scales.iter().map(|s| s.nu_variance(0).sqrt()).collect();
    if stddev.iter().any(|&s| s <= 0.0) {
        return Ok(FluctuationFit { scales, stddev, fit: None, degenerate: true });
    }
    let xs: Vec<f64> = scales.iter().map(|&r| r as f64).collect();
    let fit = fit_exponent(&xs, &stddev)?;
    Ok(FluctuationFit { scales, stddev, fit: Some(fit), degenerate: false })
}

/// `Ā(2r) ⪯ Ā(r) + 2·SE` and the same for `B̄`, for every consecutive pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub scale: usize,
    /// `λ_max(Ā(2r) − Ā(r))`; nonpositive for a decreasing sequence.
    pub a_increase: f64,
    pub b_increase: f64,
    pub se: f64,
    pub holds: bool,
}

pub fn mean_monotonicity(series: &ScaleSeries) -> Vec<MonotonicityCheck> {
    series
        .scales
        .windows(2)
        .filter(|w| w[1].scale == 2 * w[0].scale)
        .map(|w| {
            let a_increase = lambda_max(&(&w[1].mean_a - &w[0].mean_a));
            let b_increase = lambda_max(&(&w[1].mean_b - &w[0].mean_b));
            let se_a = diff_se(&w[0].se_a, &w[1].se_a);
            let se_b = diff_se(&w[0].se_b, &w[1].se_b);
            // Roundoff floor for ensembles with zero variance.
            let floor_a = 1e-12 * lambda_max(&w[0].mean_a).abs();
            let floor_b = 1e-12 * lambda_max(&w[0].mean_b).abs();
            MonotonicityCheck {
                scale: w[0].scale,
                a_increase,
                b_increase,
                se: se_a.max(se_b),
                holds: a_increase <= 2.0 * se_a + floor_a && b_increase <= 2.0 * se_b + floor_b,
            }
        })
        .collect()
}

/// Duality gap nonincreasing in `r` up to `2·SE`, for every consecutive pair.
pub fn gap_monotonicity(series: &ScaleSeries) -> Result<Vec<(usize, bool)>> {
    let mut out = Vec::new();
    for w in series.scales.windows(2) {
        let g0 = duality_gap_at(series, w[0].scale)?;
        let g1 = duality_gap_at(series, w[1].scale)?;
        let floor = 1e-12 * lambda_max(&w[0].mean_a).abs();
        out.push((w[0].scale, g1.value <= g0.value + 2.0 * (g0.se * g0.se + g1.se * g1.se).sqrt() + floor));
    }
    Ok(out)
}

/// Machine-readable sweep summary; a pure function of the sweep rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub dim: usize,
    pub m: usize,
    pub scales: Vec<ScaleSummary>,
    pub defects: Option<DefectTable>,
    pub fluctuation: Option<FluctuationFit>,
    pub monotonicity: Vec<MonotonicityCheck>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub scale: usize,
    pub samples: usize,
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub se_a: Vec<f64>,
    pub se_b: Vec<f64>,
    pub var_nu: Vec<f64>,
    pub var_nu_star: Vec<f64>,
    pub gap: Estimate,
    pub max_sample_gap: f64,
    pub min_sample_gap: f64,
}

/// A named pass/fail invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

pub fn summarize(series: &ScaleSeries) -> Result<SweepSummary> {
    let mut scales = Vec::new();
    let mut gap_nonneg = true;
    let mut sample_gap_nonneg = true;
    for s in &series.scales {
        let nd = s.nu.len();
        let gap = duality_gap_at(series, s.scale)?;
        gap_nonneg &= gap.value >= -2.0 * gap.se - 1e-12;
        let gaps = s.sample_gaps()?;
        sample_gap_nonneg &= gaps.iter().all(|&g| g >= -1e-9 * lambda_max(&s.mean_a));
        scales.push(ScaleSummary {
            scale: s.scale,
            samples: s.samples,
            mean_a: row_major(&s.mean_a),
            mean_b: row_major(&s.mean_b),
            se_a: row_major(&s.se_a),
            se_b: row_major(&s.se_b),
            var_nu: (0..nd).map(|k| s.nu_variance(k)).collect(),
            var_nu_star: (0..nd).map(|k| s.nu_star_variance(k)).collect(),
            gap,
            max_sample_gap: gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            min_sample_gap: gaps.iter().cloned().fold(f64::INFINITY, f64::min),
        });
    }
    let defects = if series.scales.len() >= 3 { Some(duality_vs_additivity(series)?) } else { None };
    let fluctuation = if series.scales.len() >= 3 { Some(fluctuation_scaling(series)?) } else { None };
    let monotonicity = mean_monotonicity(series);
    let mut checks = vec![
        Check { name: "gap-nonnegative".into(), passed: gap_nonneg, detail: "gap(r) >= -2 SE at every scale".into() },
        Check {
            name: "sample-gap-nonnegative".into(),
            passed: sample_gap_nonneg,
            detail: "a(U) - b(U)^-1 >= 0 on every realization".into(),
        },
        Check {
            name: "mean-monotone".into(),
            passed: monotonicity.iter().all(|c| c.holds),
            detail: "A(2r) <= A(r) + 2 SE and B(2r) <= B(r) + 2 SE".into(),
        },
    ];
    let gap_mono = gap_monotonicity(series)?;
    checks.push(Check {
        name: "gap-monotone".into(),
        passed: gap_mono.iter().all(|g| g.1),
        detail: "gap(2r) <= gap(r) + 2 SE".into(),
    });
    if let Some(t) = &defects {
        checks.push(Check {
            name: "tau-nonnegative".into(),
            passed: t.rows.iter().all(|r| r.tau.value >= -2.0 * r.tau.se - 1e-12),
            detail: "tau(r) >= -2 SE".into(),
        });
    }
    Ok(SweepSummary { dim: series.dim, m: series.m, scales, defects, fluctuation, monotonicity, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gen_checkerboard, gen_constant};
    use rand::Rng;

    #[test]
    fn constant_field_has_no_fluctuation_or_defect() {
        let f = gen_constant(2, 2.0).unwrap();
        let cfg = SweepConfig { scales: vec![2, 4, 8], samples: 8, m: 2, seed: 1, options: SolverOptions::default() };
        let out = scale_sweep(&f, &cfg).unwrap();
        assert!(out.failures.is_empty());
        for s in &out.series.scales {
            assert!(s.nu_variance(0) < 1e-24);
        }
        let t = duality_vs_additivity(&out.series).unwrap();
        for r in &t.rows {
            assert!(r.tau.value.abs() < 1e-9 && r.gap.value.abs() < 1e-9);
            assert!(r.ratio.is_none());
        }
        assert!(fluctuation_scaling(&out.series).unwrap().degenerate);
    }

    #[test]
    fn sweep_is_deterministic_and_validated() {
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 0).unwrap();
        let cfg = SweepConfig { scales: vec![2, 4], samples: 8, m: 2, seed: 11, options: SolverOptions::default() };
        let a = scale_sweep(&f, &cfg).unwrap();
        let b = scale_sweep(&f, &cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(ScaleSeries::from_rows(2, 2, &a.rows).unwrap(), a.series);
        let bad = SweepConfig { scales: vec![2, 6], ..cfg.clone() };
        assert!(scale_sweep(&f, &bad).is_err());
        let few = SweepConfig { samples: 4, ..cfg };
        assert!(scale_sweep(&f, &few).is_err());
    }

    #[test]
    fn one_dimensional_means_approach_harmonic_mean() {
        let f = gen_checkerboard(1, 1.0, 4.0, 0.5, 0).unwrap();
        let cfg = SweepConfig { scales: vec![16, 32, 64], samples: 32, m: 4, seed: 5, options: SolverOptions::default() };
        let out = scale_sweep(&f, &cfg).unwrap();
        let s = out.series.at(64).unwrap();
        assert!((s.mean_a[(0, 0)] - 1.6).abs() <= 2.0 * s.se_a[(0, 0)] + 1e-3);
        for s in &out.series.scales {
            assert!(s.sample_gaps().unwrap().iter().all(|g| g.abs() < 1e-8));
        }
        // The gap on means is the Jensen term ½(mean(a) − 1/mean(1/a)),
        // about ½·1.6³·Var(1/a)/r = 0.29/r for i.i.d. unit cells.
        for r in duality_vs_additivity(&out.series).unwrap().rows {
            assert!(r.gap.value >= 0.0 && r.gap.value < 0.6 / r.scale as f64, "{r:?}");
        }
    }

    #[test]
    fn fit_exponent_examples() {
        let xs = [8.0, 16.0, 32.0, 64.0];
        let f = fit_exponent(&xs, &xs.map(|x| 1.0 / x)).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let f = fit_exponent(&xs, &[3.0; 4]).unwrap();
        assert!(f.slope.abs() < 1e-12);
        let mut rng = crate::seed::rng_from(2);
        let noisy: Vec<f64> = xs.iter().map(|x| x.powf(-0.5) * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0))).collect();
        let f = fit_exponent(&xs, &noisy).unwrap();
        assert!((-0.55..=-0.45).contains(&f.slope));
        assert!(fit_exponent(&xs, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_exponent(&xs[..2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn tail_statistic_closed_forms() {
        let zeros = vec![-1.0; 20];
        let t = subgaussian_theta(&zeros, 2.0).unwrap();
        assert!(t.vacuous && t.theta == 0.0);
        let c = 0.7;
        let t = subgaussian_theta(&[c; 32], 1.0).unwrap();
        assert!((t.theta - c / std::f64::consts::LN_2).abs() < 1e-10);
        assert!(tail_mean(&t.samples, 1.0, t.theta) <= 2.0);
        assert!(tail_mean(&t.samples, 1.0, t.theta / 1.01) > 2.0);
        assert!(subgaussian_theta(&[1.0; 8], 1.0).is_err());
    }

    #[test]
    fn independent_cell_averages_follow_the_clt() {
        // No PDE: the per-cube average of i.i.d. unit-cell values.
        let mut rng = crate::seed::rng_from(99);
        let scales = [4usize, 8, 16, 32];
        let sd: Vec<f64> = scales
            .iter()
            .map(|&r| {
                let xs: Vec<f64> = (0..400)
                    .map(|_| (0..r * r).map(|_| if rng.random::<bool>() { 4.0 } else { 1.0 }).sum::<f64>() / (r * r) as f64)
                    .collect();
                sample_variance(&xs).sqrt()
            })
            .collect();
        let xs: Vec<f64> = scales.iter().map(|&r| r as f64).collect();
        let f = fit_exponent(&xs, &sd).unwrap();
        assert!((f.slope + 1.0).abs() < 0.1, "{}", f.slope);
    }
}
