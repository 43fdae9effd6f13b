//! First-order correctors on large cubes, their filtered gradients, the
//! Gaussian surrogate, and the large-scale regularity diagnostic.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{sample_on_grid, CellTensorGrid, CoefficientField, Cube, Geometry};
use crate::renorm::{linear_fit, ExponentFit};
use crate::seed::{derive, rng_from};
use crate::solver::{assemble_load, cell_gradient, ScalarField, Solver};
use crate::tensor::SymTensor;

pub const MIN_CORRECTOR_SIDE: usize = 16;

/// `φ_p` on `□_L` with zero boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub phi: ScalarField,
    pub p: Vec<f64>,
    pub side: usize,
    pub m: usize,
}

/// Corrector on any grid, without the minimum-size requirement. Solves
/// `∫∇w·a∇φ = −∫∇w·ap` with `φ = 0` on the boundary.
pub fn corrector_with(solver: &Solver, p: &[f64]) -> Result<CorrectorField> {
    let grid = solver.grid();
    let dim = grid.dim();
    if p.len() != dim {
        return invalid(format!("slope has {} components, grid dimension is {dim}", p.len()));
    }
    let geo = *grid.geometry();
    let mut pp = [0.0; 3];
    pp[..dim].copy_from_slice(p);
    let cells = grid.cells();
    let load = assemble_load(&geo, |c| {
        let f = cells[c].apply(dim, &pp);
        [-f[0], -f[1], -f[2]]
    });
    let zeros = vec![0.0; geo.num_nodes()];
    let phi = solver.dirichlet(&zeros, Some(&load))?;
    Ok(CorrectorField { phi, p: p.to_vec(), side: grid.side(), m: grid.cells_per_unit() })
}

pub fn solve_corrector(grid: &CellTensorGrid, p: &[f64]) -> Result<CorrectorField> {
    if grid.side() < MIN_CORRECTOR_SIDE {
        return invalid(format!("corrector cube side {} is below {MIN_CORRECTOR_SIDE}", grid.side()));
    }
    corrector_with(&Solver::new(grid), p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// `(1 − |x/r|²)²₊`.
    Bump,
    /// `exp(−|x|²/(2(r/3)²))` cut off at `|x| = r`.
    TruncatedGaussian,
}

/// Compactly supported averaging kernel of radius `scale`, normalized to unit
/// mass on the grid it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterKernel {
    pub kind: KernelKind,
    pub scale: f64,
}

impl FilterKernel {
    pub fn bump(scale: f64) -> Self {
        FilterKernel { kind: KernelKind::Bump, scale }
    }

    /// Unnormalized profile at squared distance `r2`.
    pub fn profile(&self, r2: f64) -> f64 {
        let t = r2 / (self.scale * self.scale);
        if t >= 1.0 {
            return 0.0;
        }
        match self.kind {
            KernelKind::Bump => (1.0 - t) * (1.0 - t),
            KernelKind::TruncatedGaussian => (-4.5 * t).exp(),
        }
    }

    /// Normalized weights `(cell, weight)` of the cells in the support around
    /// `center`; weights sum to 1.
    pub fn weights(&self, geo: &Geometry, center: &[f64; 3]) -> Vec<(usize, f64)> {
        let dim = geo.dim;
        let h = geo.spacing;
        let mut lo = [0usize; 3];
        let mut hi = [1usize; 3];
        for k in 0..dim {
            let a = ((center[k] - self.scale - geo.origin[k]) / h).floor().max(0.0) as usize;
            let b = (((center[k] + self.scale - geo.origin[k]) / h).ceil() as usize).min(geo.n);
            lo[k] = a;
            hi[k] = b.max(a);
        }
        let mut out = Vec::new();
        for c2 in lo[2]..hi[2] {
            for c1 in lo[1]..hi[1] {
                for c0 in lo[0]..hi[0] {
                    let idx = geo.cell_index([c0, c1, c2]);
                    let x = geo.cell_center(idx);
                    let r2: f64 = (0..dim).map(|k| (x[k] - center[k]).powi(2)).sum();
                    let w = self.profile(r2);
                    if w > 0.0 {
                        out.push((idx, w));
                    }
                }
            }
        }
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        for (_, w) in out.iter_mut() {
            *w /= total;
        }
        out
    }
}

/// Centres on a lattice of spacing `spacing` at distance at least `margin`
/// from the boundary of the grid.
pub fn window_centers(geo: &Geometry, margin: f64, spacing: f64) -> Vec<[f64; 3]> {
    let dim = geo.dim;
    let len = geo.side_length();
    let span = len - 2.0 * margin;
    if span < -1e-12 {
        return Vec::new();
    }
    let count = (span / spacing + 1e-9).floor() as usize + 1;
    let offset = margin + 0.5 * (span - (count - 1) as f64 * spacing);
    let total = count.pow(dim as u32);
    (0..total)
        .map(|mut i| {
            let mut c = [0.0; 3];
            for (k, ck) in c.iter_mut().enumerate().take(dim) {
                *ck = geo.origin[k] + offset + (i % count) as f64 * spacing;
                i /= count;
            }
            c
        })
        .collect()
}

/// Default windows for scale `r` on `□_L`: margin `max(r, L/8)`, spacing `r`.
pub fn default_windows(geo: &Geometry, r: f64) -> Vec<[f64; 3]> {
    let margin = r.max(geo.side_length() / 8.0);
    window_centers(geo, margin, r)
}

/// Filtered gradients at a set of centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredAverages {
    pub scale: f64,
    pub values: Vec<Vec<f64>>,
    /// Per-component sample standard deviation across centres.
    pub stddev: Vec<f64>,
}

/// `Σ_cells χ(x − cell) g(cell) h^d` for a cell-wise vector field `g`.
pub fn filter_cells(geo: &Geometry, g: &[[f64; 3]], kernel: &FilterKernel, centers: &[[f64; 3]]) -> Result<FilteredAverages> {
    let dim = geo.dim;
    for c in centers {
        for k in 0..dim {
            let lo = c[k] - geo.origin[k];
            let hi = geo.origin[k] + geo.side_length() - c[k];
            if lo < kernel.scale - 1e-12 || hi < kernel.scale - 1e-12 {
                return invalid("filter window reaches the boundary of the cube");
            }
        }
    }
    let values: Vec<Vec<f64>> = centers
        .iter()
        .map(|c| {
            let mut acc = vec![0.0; dim];
            for (idx, w) in kernel.weights(geo, c) {
                for k in 0..dim {
                    acc[k] += w * g[idx][k];
                }
            }
            acc
        })
        .collect();
    let stddev = (0..dim)
        .map(|k| crate::renorm::sample_variance(&values.iter().map(|v| v[k]).collect::<Vec<_>>()).sqrt())
        .collect();
    Ok(FilteredAverages { scale: kernel.scale, values, stddev })
}

pub fn filtered_gradient_average(corrector: &CorrectorField, kernel: &FilterKernel, centers: &[[f64; 3]]) -> Result<FilteredAverages> {
    filter_cells(&corrector.phi.geometry, &cell_gradient(&corrector.phi), kernel, centers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub radius: f64,
    pub nodes: usize,
    pub variance: f64,
    pub stddev: f64,
}

/// Spatial variance of the nodal values of `φ` in the centred ball `B_ρ`.
pub fn corrector_growth(corrector: &CorrectorField, radii: &[f64]) -> Result<Vec<GrowthPoint>> {
    let geo = corrector.phi.geometry;
    let len = geo.side_length();
    let dim = geo.dim;
    let mut centre = [0.0; 3];
    for k in 0..dim {
        centre[k] = geo.origin[k] + 0.5 * len;
    }
    radii
        .iter()
        .map(|&rho| {
            if rho > len / 4.0 + 1e-12 {
                return invalid(format!("radius {rho} exceeds a quarter of the cube side {len}"));
            }
            let vals: Vec<f64> = (0..geo.num_nodes())
                .filter(|&i| {
                    let x = geo.node_position(i);
                    (0..dim).map(|k| (x[k] - centre[k]).powi(2)).sum::<f64>() <= rho * rho
                })
                .map(|i| corrector.phi.values[i])
                .collect();
            let variance = crate::renorm::sample_variance(&vals);
            Ok(GrowthPoint { radius: rho, nodes: vals.len(), variance, stddev: variance.sqrt() })
        })
        .collect()
}

/// Fit of `variance ≈ c₀ + c₁ ln ρ`.
pub fn log_growth_fit(radii: &[f64], variance: &[f64]) -> Result<ExponentFit> {
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    linear_fit(&lx, variance)
}

/// Solves `−∇·ā∇ψ = ∇·(W p)` with `ψ = 0` on the boundary, for a cell-wise
/// vector white noise of variance `h^{-d}` per component, optionally
/// pre-smoothed with `smoothing`.
pub fn gaussian_surrogate(
    abar: &DMatrix<f64>,
    p: &[f64],
    geometry: &Geometry,
    smoothing: Option<&FilterKernel>,
    seed: u64,
) -> Result<ScalarField> {
    let dim = geometry.dim;
    if abar.nrows() != dim || p.len() != dim {
        return invalid("dimension mismatch in surrogate");
    }
    if crate::tensor::lambda_min(abar) <= 0.0 {
        return invalid("effective matrix must be positive definite");
    }
    let m = (1.0 / geometry.spacing).round() as usize;
    if m == 0 || geometry.n % m != 0 {
        return invalid("surrogate geometry must have an integral number of cells per unit");
    }
    let side = geometry.n / m;
    let mut corner = [0i64; 3];
    for k in 0..dim {
        corner[k] = geometry.origin[k].round() as i64;
    }
    let grid = CellTensorGrid::uniform(dim, side, m, SymTensor::from_matrix(abar))?.with_placement(&corner[..dim], None);
    let grid = grid.rescaled(geometry.spacing * m as f64, geometry.origin);
    let nc = geometry.num_cells();
    let pnorm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut noise = vec![[0.0; 3]; nc];
    if pnorm > 0.0 {
        let sd = geometry.spacing.powf(-(dim as f64) / 2.0);
        let mut rng = rng_from(derive(seed, &[0x6666]));
        for cell in noise.iter_mut() {
            for v in cell.iter_mut().take(dim) {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * sd * pnorm;
            }
        }
    }
    if let Some(kernel) = smoothing {
        let raw = noise.clone();
        for (c, out) in noise.iter_mut().enumerate() {
            let x = geometry.cell_center(c);
            let mut acc = [0.0; 3];
            for (idx, w) in kernel.weights(geometry, &x) {
                for k in 0..dim {
                    acc[k] += w * raw[idx][k];
                }
            }
            *out = acc;
        }
    }
    let load = assemble_load(geometry, |c| [-noise[c][0], -noise[c][1], -noise[c][2]]);
    let solver = Solver::new(&grid);
    let zeros = vec![0.0; geometry.num_nodes()];
    solver.dirichlet(&zeros, Some(&load))
}

/// How the surrogate's noise amplitude is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Calibration {
    /// Match variances at the smallest scale, per component.
    SmallestScale,
    /// Use a given squared amplitude.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GffRow {
    pub scale: f64,
    pub component: usize,
    pub var_corrector: f64,
    pub var_surrogate: f64,
    /// Squared noise amplitude applied to the surrogate.
    pub amplitude2: f64,
    pub ratio: f64,
    pub degenerate: bool,
}

/// Pools the filtered values of an ensemble into a per-component variance
/// about zero (the filtered gradient has zero mean in the bulk).
pub fn pooled_variance(ensemble: &[FilteredAverages], component: usize) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for e in ensemble {
        for v in &e.values {
            acc += v[component] * v[component];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Variance ratios per scale and component. `corrector[s]` and `surrogate[s]`
/// hold the ensembles of filtered averages at the `s`-th scale.
pub fn compare_corrector_gff(
    corrector: &[Vec<FilteredAverages>],
    surrogate: &[Vec<FilteredAverages>],
    calibration: Calibration,
) -> Result<Vec<GffRow>> {
    if corrector.len() != surrogate.len() || corrector.is_empty() {
        return invalid("corrector and surrogate must cover the same scales");
    }
    for (c, s) in corrector.iter().zip(surrogate) {
        if c.len() < 16 || s.len() < 16 {
            return invalid("comparison needs at least 16 realizations of each");
        }
    }
    let dim = corrector[0][0].stddev.len();
    let mut rows = Vec::new();
    for k in 0..dim {
        let vc0 = pooled_variance(&corrector[0], k);
        let vs0 = pooled_variance(&surrogate[0], k);
        let amp2 = match calibration {
            Calibration::SmallestScale => {
                if vs0 > 0.0 {
                    vc0 / vs0
                } else {
                    0.0
                }
            }
            Calibration::Fixed(a) => a,
        };
        for (c, s) in corrector.iter().zip(surrogate) {
            let vc = pooled_variance(c, k);
            let vs = amp2 * pooled_variance(s, k);
            let degenerate = vc == 0.0 || vs == 0.0;
            rows.push(GffRow {
                scale: c[0].scale,
                component: k,
                var_corrector: vc,
                var_surrogate: vs,
                amplitude2: amp2,
                ratio: if vs > 0.0 { vc / vs } else { 0.0 },
                degenerate,
            });
        }
    }
    Ok(rows)
}

/// One draw of the regularity diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularitySample {
    /// `⨍_{B₁}|∇u|² / ⨍_{□_r}|∇u|²`.
    pub ratio: f64,
    /// `⨍_{B₁}|∇u|² / (r^{-1} ⨍(u − ū)²)`.
    pub caccioppoli_r1: f64,
    /// `⨍_{B₁}|∇u|² / (r^{-2} ⨍(u − ū)²)`.
    pub caccioppoli_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityOutput {
    pub r: usize,
    pub samples: Vec<RegularitySample>,
    pub skipped: usize,
}

impl RegularityOutput {
    pub fn max_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.ratio).fold(0.0, f64::max)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s.ratio).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let idx = ((v.len() - 1) as f64 * q).round() as usize;
        v[idx]
    }
}

/// Gradient energies below this are treated as a constant solution.
const DEGENERATE_ENERGY: f64 = 1e-24;

/// Solves the `a`-harmonic Dirichlet problem on the centred cube with data
/// `g` and evaluates the energy ratios; `None` for a constant solution.
pub fn regularity_sample(solver: &Solver, g: impl Fn(&[f64]) -> f64) -> Result<Option<RegularitySample>> {
    let grid = solver.grid();
    let geo = *grid.geometry();
    let dim = geo.dim;
    let data = ScalarField::from_fn(geo, &g);
    let u = solver.dirichlet(&data.values, None)?;
    let grads = cell_gradient(&u);
    let sq: Vec<f64> = grads.iter().map(|v| v[..dim].iter().map(|x| x * x).sum()).collect();
    let total = sq.iter().sum::<f64>() / sq.len() as f64;
    if total < DEGENERATE_ENERGY {
        return Ok(None);
    }
    let mut centre = [0.0; 3];
    for k in 0..dim {
        centre[k] = geo.origin[k] + 0.5 * geo.side_length();
    }
    let (mut inner, mut count) = (0.0, 0usize);
    for (c, e) in sq.iter().enumerate() {
        let x = geo.cell_center(c);
        if (0..dim).map(|k| (x[k] - centre[k]).powi(2)).sum::<f64>() <= 1.0 {
            inner += e;
            count += 1;
        }
    }
    if count == 0 {
        return invalid("unit ball contains no cell centres");
    }
    let inner = inner / count as f64;
    let mean = u.volume_mean();
    let w = crate::solver::node_weights(&geo);
    let l2 = u.values.iter().zip(&w).map(|(v, w)| (v - mean).powi(2) * w).sum::<f64>() / geo.volume();
    let r = geo.side_length();
    Ok(Some(RegularitySample {
        ratio: inner / total,
        caccioppoli_r1: inner / (l2 / r),
        caccioppoli_r2: inner / (l2 / (r * r)),
    }))
}

/// Random smooth boundary data: an affine part plus `modes` low Fourier modes
/// per axis with gradients of unit order.
pub fn random_boundary_data(dim: usize, r: f64, modes: usize, seed: u64) -> impl Fn(&[f64]) -> f64 {
    let mut rng = rng_from(seed);
    let p: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut terms = Vec::new();
    for k in 1..=modes {
        for axis in 0..dim {
            let amp: f64 = rng.sample::<f64, _>(StandardNormal) * r / (std::f64::consts::PI * k as f64);
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            terms.push((axis, k as f64, amp, phase));
        }
    }
    move |x: &[f64]| {
        let mut v: f64 = p.iter().zip(x).map(|(a, b)| a * b).sum();
        for &(axis, k, amp, phase) in &terms {
            v += amp * (std::f64::consts::PI * k * x[axis] / r + phase).cos();
        }
        v
    }
}

/// `n` draws of the regularity ratio on `□_r` for one realization of `field`.
pub fn regularity_ratio(field: &CoefficientField, r: usize, n: usize, m: usize, seed: u64) -> Result<RegularityOutput> {
    if r < 4 {
        return invalid("regularity diagnostic needs r >= 4");
    }
    let dim = field.dim();
    let realization = field.with_seed(derive(seed, &[r as u64]));
    let grid = sample_on_grid(&realization, &Cube::centered(dim, r), m)?;
    let solver = Solver::new(&grid);
    let mut samples = Vec::new();
    let mut skipped = 0;
    for k in 0..n {
        let g = random_boundary_data(dim, r as f64, 2, derive(seed, &[r as u64, k as u64]));
        match regularity_sample(&solver, g)? {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    Ok(RegularityOutput { r, samples, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::gen_checkerboard;
    use crate::solver::solve_dirichlet_affine;

    fn two_phase_1d(side: usize, m: usize) -> CellTensorGrid {
        let cells = (0..side * m).map(|i| SymTensor::scalar(1, if (i / m) % 2 == 0 { 1.0 } else { 4.0 })).collect();
        CellTensorGrid::from_cells(1, side, m, cells).unwrap()
    }

    #[test]
    fn trivial_correctors() {
        let g = CellTensorGrid::uniform(2, 16, 2, SymTensor::scalar(2, 2.0)).unwrap();
        let c = solve_corrector(&g, &[1.0, 0.5]).unwrap();
        assert!(c.phi.values.iter().all(|v| v.abs() < 1e-10));
        let c = solve_corrector(&g, &[0.0, 0.0]).unwrap();
        assert!(c.phi.values.iter().all(|&v| v == 0.0));
        let small = CellTensorGrid::uniform(2, 8, 2, SymTensor::scalar(2, 2.0)).unwrap();
        assert!(solve_corrector(&small, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn one_dimensional_corrector_gradient() {
        let g = two_phase_1d(32, 4);
        let c = solve_corrector(&g, &[1.0]).unwrap();
        for (t, gr) in g.cells().iter().zip(cell_gradient(&c.phi)) {
            assert!((gr[0] - (1.6 / t.get(0, 0) - 1.0)).abs() < 1e-8);
        }
        let growth = corrector_growth(&c, &[2.0, 4.0, 8.0]).unwrap();
        assert!(growth.iter().all(|p| p.stddev <= 0.6));
        let geo = c.phi.geometry;
        let centre = [geo.side_length() / 2.0, 0.0, 0.0];
        let full = filtered_gradient_average(&c, &FilterKernel::bump(16.0), &[centre]).unwrap();
        assert!(full.values[0][0].abs() < 1e-2);
    }

    #[test]
    fn corrector_matches_dirichlet_minimizer_and_is_linear() {
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 21).unwrap();
        let g = sample_on_grid(&f, &Cube::centered(2, 16), 2).unwrap();
        let v = solve_dirichlet_affine(&g, &[0.3, 0.8]).unwrap();
        let l = ScalarField::affine(*g.geometry(), &[0.3, 0.8]);
        let c = solve_corrector(&g, &[0.3, 0.8]).unwrap();
        let scale = c.phi.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..v.values.len() {
            assert!((v.values[i] - l.values[i] - c.phi.values[i]).abs() <= 1e-8 * scale.max(1.0));
        }
        let c1 = solve_corrector(&g, &[1.0, 0.0]).unwrap();
        let c2 = solve_corrector(&g, &[0.0, 1.0]).unwrap();
        for i in 0..v.values.len() {
            let sum = 0.3 * c1.phi.values[i] + 0.8 * c2.phi.values[i];
            assert!((sum - c.phi.values[i]).abs() <= 1e-8 * scale.max(1.0));
        }
    }

    #[test]
    fn kernel_normalization_and_boundary_check() {
        let g = CellTensorGrid::uniform(2, 16, 2, SymTensor::scalar(2, 1.0)).unwrap();
        let geo = *g.geometry();
        let ones = vec![[1.0, 1.0, 0.0]; geo.num_cells()];
        for kind in [KernelKind::Bump, KernelKind::TruncatedGaussian] {
            let k = FilterKernel { kind, scale: 3.0 };
            let centers = default_windows(&geo, 3.0);
            assert!(!centers.is_empty());
            let f = filter_cells(&geo, &ones, &k, &centers).unwrap();
            assert!(f.values.iter().all(|v| (v[0] - 1.0).abs() < 1e-12));
        }
        assert!(filter_cells(&geo, &ones, &FilterKernel::bump(3.0), &[[1.0, 8.0, 0.0]]).is_err());
    }

    #[test]
    fn surrogate_trivial_cases() {
        let geo = Geometry { dim: 2, n: 32, spacing: 0.5, origin: [0.0; 3] };
        let abar = DMatrix::identity(2, 2) * 2.0;
        let psi = gaussian_surrogate(&abar, &[0.0, 0.0], &geo, None, 1).unwrap();
        assert!(psi.values.iter().all(|&v| v == 0.0));
        let psi = gaussian_surrogate(&abar, &[1.0, 0.0], &geo, Some(&FilterKernel::bump(1.0)), 1).unwrap();
        assert!(psi.values.iter().any(|&v| v != 0.0));
        assert!(gaussian_surrogate(&(-abar), &[1.0, 0.0], &geo, None, 1).is_err());
    }

    #[test]
    fn constant_coefficient_regularity() {
        let g = CellTensorGrid::uniform(2, 8, 2, SymTensor::scalar(2, 1.0)).unwrap().with_placement(&[-4, -4], None);
        let s = Solver::new(&g);
        let r = regularity_sample(&s, |x| 0.4 * x[0] - 1.2 * x[1]).unwrap().unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-9);
        assert!(regularity_sample(&s, |_| 3.0).unwrap().is_none());
    }

    #[test]
    fn growth_fit_on_logarithmic_data() {
        let radii = [8.0, 16.0, 32.0];
        let var: Vec<f64> = radii.iter().map(|r: &f64| 0.1 + 0.05 * r.ln()).collect();
        let f = log_growth_fit(&radii, &var).unwrap();
        assert!((f.slope - 0.05).abs() < 1e-12 && f.r2 > 0.999);
    }
}
