//! The oscillating problem `−∇·a(·/ε)∇u_ε = 0` on the unit box against its
//! homogenized limit: error rates, two-scale expansion and weak convergence.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::corrector_with;
use crate::error::{invalid, Result};
use crate::fields::{sample_on_grid, CellTensorGrid, CoefficientField, Cube};
use crate::renorm::{fit_exponent, ExponentFit, ScaleSeries};
use crate::seed::{task_seed, ExperimentKind};
use crate::solver::{cell_gradient, cell_norms, ScalarField, Solver};
use crate::tensor::SymTensor;

pub const MIN_CELLS_PER_EPS: usize = 2;

/// Closed-form boundary data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryData {
    /// `x₁ + x₂/2 + x₃/4`.
    Affine,
    /// `x₁² − x₂²` (`x²` in one dimension).
    Quadratic,
    /// `sin(πx₁) sinh(πx₂) / sinh(π)` (`sin(πx)` in one dimension).
    Sine,
}

impl BoundaryData {
    pub fn eval(self, x: &[f64]) -> f64 {
        let c = |k: usize| x.get(k).copied().unwrap_or(0.0);
        match self {
            BoundaryData::Affine => c(0) + 0.5 * c(1) + 0.25 * c(2),
            BoundaryData::Quadratic => c(0) * c(0) - c(1) * c(1),
            BoundaryData::Sine => {
                let pi = std::f64::consts::PI;
                if x.len() == 1 {
                    (pi * c(0)).sin()
                } else {
                    (pi * c(0)).sin() * (pi * c(1)).sinh() / pi.sinh()
                }
            }
        }
    }
}

/// Dirichlet problem on `(0,1)^d` with `1/ε` unit cells per axis and
/// `cells_per_eps` mesh cells per `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValueProblem {
    pub dim: usize,
    pub data: BoundaryData,
    pub eps_inv: usize,
    pub cells_per_eps: usize,
}

impl BoundaryValueProblem {
    pub fn new(dim: usize, data: BoundaryData, eps_inv: usize, cells_per_eps: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {dim}"));
        }
        if eps_inv == 0 {
            return invalid("1/ε must be a positive integer");
        }
        if cells_per_eps < MIN_CELLS_PER_EPS {
            return invalid(format!("mesh has {cells_per_eps} cells per ε, at least {MIN_CELLS_PER_EPS} are required"));
        }
        Ok(BoundaryValueProblem { dim, data, eps_inv, cells_per_eps })
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.eps_inv as f64
    }

    pub fn mesh_size(&self) -> f64 {
        self.eps() / self.cells_per_eps as f64
    }

    fn boundary_values(&self, grid: &CellTensorGrid) -> Vec<f64> {
        let geo = grid.geometry();
        let dim = self.dim;
        (0..geo.num_nodes()).map(|i| self.data.eval(&geo.node_position(i)[..dim])).collect()
    }
}

/// `a(x/ε)` sampled on the fine mesh of the unit box.
pub fn eps_grid(problem: &BoundaryValueProblem, field: &CoefficientField, seed: u64) -> Result<CellTensorGrid> {
    if field.dim() != problem.dim {
        return invalid("field and problem dimensions differ");
    }
    let grid = sample_on_grid(&field.with_seed(seed), &Cube::at(&vec![0; problem.dim], problem.eps_inv), problem.cells_per_eps)?;
    Ok(grid.rescaled(problem.eps(), [0.0; 3]))
}

pub fn solve_eps(problem: &BoundaryValueProblem, field: &CoefficientField, seed: u64) -> Result<ScalarField> {
    let grid = eps_grid(problem, field, seed)?;
    Solver::new(&grid).dirichlet(&problem.boundary_values(&grid), None)
}

fn homogenized_grid(abar: &DMatrix<f64>, problem: &BoundaryValueProblem) -> Result<CellTensorGrid> {
    if abar.nrows() != problem.dim || crate::tensor::lambda_min(abar) <= 0.0 {
        return invalid("homogenized matrix must be positive definite of the problem's dimension");
    }
    Ok(CellTensorGrid::uniform(problem.dim, problem.eps_inv, problem.cells_per_eps, SymTensor::from_matrix(abar))?
        .rescaled(problem.eps(), [0.0; 3]))
}

/// Constant-coefficient solve on the same mesh as [`solve_eps`].
pub fn solve_homogenized(abar: &DMatrix<f64>, problem: &BoundaryValueProblem) -> Result<ScalarField> {
    let grid = homogenized_grid(abar, problem)?;
    Solver::new(&grid).dirichlet(&problem.boundary_values(&grid), None)
}

/// Homogenized-matrix estimate from the largest scale of a sweep: the
/// midpoint of `B̄⁻¹` and `Ā`, with half the bracket width `½λ_max(Ā − B̄⁻¹)`.
pub fn abar_from_series(series: &ScaleSeries) -> Result<(DMatrix<f64>, f64)> {
    let s = series.scales.last().ok_or_else(|| crate::Error::InvalidParameter("empty series".into()))?;
    let b_inv = s
        .mean_b
        .clone()
        .try_inverse()
        .ok_or_else(|| crate::Error::NumericalDegeneracy("mean dual form is singular".into()))?;
    let mid = (&s.mean_a + &b_inv) * 0.5;
    let width = 0.5 * crate::tensor::lambda_max(&(&s.mean_a - &b_inv));
    Ok(((&mid + mid.transpose()) * 0.5, width))
}

/// `u_ε(x) = α + (β−α)·∫₀^x a(t/ε)⁻¹dt / ∫₀¹ a(t/ε)⁻¹dt` by exact quadrature of
/// the piecewise-constant coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle1d {
    pub alpha: f64,
    pub beta: f64,
    /// Breakpoints `0 = x₀ < … < x_n = 1`.
    pub knots: Vec<f64>,
    /// `u_ε` at the breakpoints.
    pub values: Vec<f64>,
}

impl Oracle1d {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len() - 1;
        let x = x.clamp(0.0, 1.0);
        let k = ((x * n as f64).floor() as usize).min(n - 1);
        let (x0, x1) = (self.knots[k], self.knots[k + 1]);
        let t = (x - x0) / (x1 - x0);
        self.values[k] * (1.0 - t) + self.values[k + 1] * t
    }

    /// Exact `‖u_ε − g‖_{L²(0,1)}` for `g` linear on each of `pieces` equal
    /// sub-intervals (a multiple of the oracle's own pieces).
    pub fn l2_distance(&self, g: impl Fn(f64) -> f64, pieces: usize) -> f64 {
        let n = pieces.max(self.knots.len() - 1);
        let mut acc = 0.0;
        for k in 0..n {
            let (x0, x1) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
            let d0 = self.eval(x0) - g(x0);
            let d1 = self.eval(x1) - g(x1);
            acc += (x1 - x0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
        }
        acc.sqrt()
    }
}

/// `q` sub-intervals per unit cell of the coefficient field.
pub fn oracle_1d(field: &CoefficientField, eps_inv: usize, alpha: f64, beta: f64, q: usize) -> Result<Oracle1d> {
    if field.dim() != 1 {
        return invalid("the closed-form oracle is one-dimensional");
    }
    if eps_inv == 0 || q == 0 {
        return invalid("1/ε and the quadrature resolution must be positive");
    }
    let n = eps_inv * q;
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0.0);
    let mut acc = 0.0;
    for k in 0..n {
        // coefficient at lattice coordinate (k + ½)/q, width ε/q in physical units
        let a = field.value_at(&[(k as f64 + 0.5) / q as f64]).get(0, 0);
        acc += 1.0 / (a * n as f64);
        cumulative.push(acc);
    }
    let total = acc;
    let knots = (0..=n).map(|k| k as f64 / n as f64).collect();
    let values = cumulative.iter().map(|c| alpha + (beta - alpha) * c / total).collect();
    Ok(Oracle1d { alpha, beta, knots, values })
}

/// Exact `‖u − v‖_{L²}` of two fields on the same mesh.
pub fn l2_error(u: &ScalarField, v: &ScalarField) -> Result<f64> {
    if u.geometry != v.geometry {
        return invalid("fields live on different meshes");
    }
    Ok(cell_norms(&u.axpy(-1.0, v), |_| true).0.sqrt())
}

/// Cells whose centre is at distance at least `margin` from `∂(0,1)^d`.
fn interior_cells(geo: &crate::fields::Geometry, margin: f64) -> impl Fn(usize) -> bool + '_ {
    move |c| {
        let x = geo.cell_center(c);
        (0..geo.dim).all(|k| x[k] >= geo.origin[k] + margin && x[k] <= geo.origin[k] + geo.side_length() - margin)
    }
}

/// `w_ε = ū + ε Σᵢ ∂ᵢū φ_{e_i}(·/ε)` and its interior gradient distance to `u_ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScale {
    pub w: ScalarField,
    /// `‖∇(u_ε − w_ε)‖` over the interior.
    pub h1_two_scale: f64,
    /// `‖∇(u_ε − ū)‖` over the same interior.
    pub h1_plain: f64,
}

/// Nodal gradient of `u`: the average of the gradients of adjacent cells.
fn nodal_gradient(u: &ScalarField) -> Vec<[f64; 3]> {
    let geo = u.geometry;
    let grads = cell_gradient(u);
    let mut acc = vec![[0.0; 3]; geo.num_nodes()];
    let mut count = vec![0usize; geo.num_nodes()];
    let mut nodes = [0usize; 8];
    let nloc = 1 << geo.dim;
    for (c, g) in grads.iter().enumerate() {
        geo.cell_nodes(c, &mut nodes);
        for &n in &nodes[..nloc] {
            for k in 0..3 {
                acc[n][k] += g[k];
            }
            count[n] += 1;
        }
    }
    for (a, &c) in acc.iter_mut().zip(&count) {
        for v in a.iter_mut() {
            *v /= c as f64;
        }
    }
    acc
}

/// Builds the expansion from correctors `φ_{e_i}` given on the same mesh
/// (nodal values in lattice units, zero on the boundary).
pub fn two_scale_expansion(
    u_eps: &ScalarField,
    ubar: &ScalarField,
    correctors: &[ScalarField],
    problem: &BoundaryValueProblem,
) -> Result<TwoScale> {
    let dim = problem.dim;
    if correctors.len() != dim {
        return invalid(format!("need {dim} correctors, got {}", correctors.len()));
    }
    let n = ubar.geometry.num_nodes();
    if u_eps.geometry != ubar.geometry || correctors.iter().any(|c| c.values.len() != n || c.geometry.n != ubar.geometry.n) {
        return invalid("corrector cube does not cover the domain mesh");
    }
    let eps = problem.eps();
    let grad = nodal_gradient(ubar);
    let mut w = ubar.clone();
    for (i, v) in w.values.iter_mut().enumerate() {
        for k in 0..dim {
            *v += eps * grad[i][k] * correctors[k].values[i];
        }
    }
    let geo = ubar.geometry;
    let inside = interior_cells(&geo, 2.0 * eps);
    let h1_two_scale = cell_norms(&u_eps.axpy(-1.0, &w), &inside).1.sqrt();
    let h1_plain = cell_norms(&u_eps.axpy(-1.0, ubar), &inside).1.sqrt();
    Ok(TwoScale { w, h1_two_scale, h1_plain })
}

/// Solves `u_ε`, `ū`, the correctors and the expansion for one realization.
pub fn two_scale_for_seed(
    problem: &BoundaryValueProblem,
    field: &CoefficientField,
    abar: &DMatrix<f64>,
    seed: u64,
) -> Result<(ScalarField, ScalarField, TwoScale)> {
    let grid = eps_grid(problem, field, seed)?;
    let solver = Solver::new(&grid);
    let u_eps = solver.dirichlet(&problem.boundary_values(&grid), None)?;
    let ubar = solve_homogenized(abar, problem)?;
    let lattice = grid.rescaled(1.0, [0.0; 3]);
    let lattice_solver = Solver::new(&lattice);
    let correctors = (0..problem.dim)
        .map(|k| {
            let mut e = vec![0.0; problem.dim];
            e[k] = 1.0;
            corrector_with(&lattice_solver, &e).map(|c| c.phi)
        })
        .collect::<Result<Vec<_>>>()?;
    let ts = two_scale_expansion(&u_eps, &ubar, &correctors, problem)?;
    Ok((u_eps, ubar, ts))
}

/// Windowed and pointwise discrepancies between `u_ε` and `ū`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakConvergence {
    pub rho: f64,
    pub windows: usize,
    /// RMS over windows of `|⨍_W ∇u_ε − ⨍_W ∇ū|`.
    pub gradient: f64,
    /// RMS over windows of `|⨍_W a∇u_ε − ⨍_W ā∇ū|`.
    pub flux: f64,
    /// `(⨍ |∇u_ε − ∇ū|²)^{1/2}` over interior cells.
    pub pointwise: f64,
}

/// Windows are the boxes of side `ρ` tiling the unit box that keep a
/// distance `2ε` from its boundary.
pub fn weak_convergence_check(
    u_eps: &ScalarField,
    grid_eps: &CellTensorGrid,
    ubar: &ScalarField,
    abar: &DMatrix<f64>,
    rho: f64,
    eps: f64,
) -> Result<WeakConvergence> {
    let geo = u_eps.geometry;
    let dim = geo.dim;
    if ubar.geometry != geo || grid_eps.geometry().n != geo.n {
        return invalid("fields live on different meshes");
    }
    if rho <= eps {
        return invalid("window must be larger than ε");
    }
    let per_axis = (1.0 / rho).round() as usize;
    if per_axis == 0 || ((per_axis as f64) * rho - 1.0).abs() > 1e-9 {
        return invalid("window side must divide the unit box");
    }
    let gu = cell_gradient(u_eps);
    let gb = cell_gradient(ubar);
    let abar_t = SymTensor::from_matrix(abar);
    let margin = 2.0 * eps;
    let nw = per_axis.pow(dim as u32);
    let mut sums = vec![([0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3], 0usize); nw];
    let (mut pointwise, mut interior) = (0.0, 0usize);
    for c in 0..geo.num_cells() {
        let x = geo.cell_center(c);
        let mut w = 0;
        let mut stride = 1;
        for k in 0..dim {
            let idx = ((x[k] / rho).floor() as usize).min(per_axis - 1);
            w += idx * stride;
            stride *= per_axis;
        }
        let fu = grid_eps.cells()[c].apply(dim, &gu[c]);
        let fb = abar_t.apply(dim, &gb[c]);
        let s = &mut sums[w];
        for k in 0..dim {
            s.0[k] += gu[c][k];
            s.1[k] += gb[c][k];
            s.2[k] += fu[k];
            s.3[k] += fb[k];
        }
        s.4 += 1;
        if (0..dim).all(|k| x[k] >= margin && x[k] <= 1.0 - margin) {
            pointwise += (0..dim).map(|k| (gu[c][k] - gb[c][k]).powi(2)).sum::<f64>();
            interior += 1;
        }
    }
    let mut keep = 0usize;
    let (mut gsum, mut fsum) = (0.0, 0.0);
    for (w, s) in sums.iter().enumerate() {
        let mut rem = w;
        let mut inside = true;
        for _ in 0..dim {
            let idx = rem % per_axis;
            rem /= per_axis;
            let (lo, hi) = (idx as f64 * rho, (idx + 1) as f64 * rho);
            inside &= lo >= margin - 1e-12 && hi <= 1.0 - margin + 1e-12;
        }
        if !inside || s.4 == 0 {
            continue;
        }
        let n = s.4 as f64;
        gsum += (0..dim).map(|k| ((s.0[k] - s.1[k]) / n).powi(2)).sum::<f64>();
        fsum += (0..dim).map(|k| ((s.2[k] - s.3[k]) / n).powi(2)).sum::<f64>();
        keep += 1;
    }
    if keep == 0 || interior == 0 {
        return invalid("no window lies inside the boundary margin");
    }
    Ok(WeakConvergence {
        rho,
        windows: keep,
        gradient: (gsum / keep as f64).sqrt(),
        flux: (fsum / keep as f64).sqrt(),
        pointwise: (pointwise / interior as f64).sqrt(),
    })
}

/// One `(ε, seed)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub d: usize,
    pub eps_inv: usize,
    pub seed_idx: usize,
    pub l2_error: f64,
    /// Absent on the one-dimensional oracle path.
    pub h1_two_scale: Option<f64>,
    pub h1_plain: Option<f64>,
    pub weak_gradient: Option<f64>,
    pub weak_flux: Option<f64>,
    pub pointwise: Option<f64>,
    pub mesh_h: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorLevel {
    pub eps_inv: usize,
    pub samples: usize,
    pub mean_l2: f64,
    pub se_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorScaling {
    pub levels: Vec<ErrorLevel>,
    /// Exponent of the mean error against `ε`; `None` when all errors vanish.
    pub fit: Option<ExponentFit>,
    /// Exponent against `ε|log ε|^{1/2}`, reported in two dimensions.
    pub fit_log: Option<ExponentFit>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorScalingConfig {
    pub dim: usize,
    pub data: BoundaryData,
    pub eps_inv: Vec<usize>,
    pub cells_per_eps: usize,
    pub samples: usize,
    pub seed: u64,
    /// Window side for the weak-convergence diagnostic.
    pub window: f64,
    /// Quadrature sub-intervals per unit cell on the one-dimensional path.
    pub oracle_resolution: usize,
}

pub fn error_seed(master: u64, level: usize, sample: usize) -> u64 {
    task_seed(master, ExperimentKind::ErrorScaling.id(), level as u64, sample as u64)
}

/// One `(ε, seed)` task. In one dimension `u_ε` comes from [`oracle_1d`] and
/// no mesh is involved; otherwise from [`solve_eps`] with the two-scale and
/// weak-convergence diagnostics.
pub fn error_task(config: &ErrorScalingConfig, field: &CoefficientField, abar: &DMatrix<f64>, level: usize, sample: usize) -> Result<ErrorRow> {
    let eps_inv = *config.eps_inv.get(level).ok_or_else(|| crate::Error::InvalidParameter(format!("no ε level {level}")))?;
    let seed = error_seed(config.seed, level, sample);
    let problem = BoundaryValueProblem::new(config.dim, config.data, eps_inv, config.cells_per_eps)?;
    if config.dim == 1 {
        let a = config.data.eval(&[0.0]);
        let b = config.data.eval(&[1.0]);
        let oracle = oracle_1d(&field.with_seed(seed), eps_inv, a, b, config.oracle_resolution)?;
        let l2 = oracle.l2_distance(|x| a + (b - a) * x, 1);
        return Ok(ErrorRow {
            d: 1,
            eps_inv,
            seed_idx: sample,
            l2_error: l2,
            h1_two_scale: None,
            h1_plain: None,
            weak_gradient: None,
            weak_flux: None,
            pointwise: None,
            mesh_h: 1.0 / (eps_inv * config.oracle_resolution) as f64,
            iterations: 0,
            residual: 0.0,
        });
    }
    let (u_eps, ubar, ts) = two_scale_for_seed(&problem, field, abar, seed)?;
    let grid = eps_grid(&problem, field, seed)?;
    let weak = weak_convergence_check(&u_eps, &grid, &ubar, abar, config.window, problem.eps())?;
    let stats = u_eps.stats.unwrap_or_default();
    Ok(ErrorRow {
        d: config.dim,
        eps_inv,
        seed_idx: sample,
        l2_error: l2_error(&u_eps, &ubar)?,
        h1_two_scale: Some(ts.h1_two_scale),
        h1_plain: Some(ts.h1_plain),
        weak_gradient: Some(weak.gradient),
        weak_flux: Some(weak.flux),
        pointwise: Some(weak.pointwise),
        mesh_h: problem.mesh_size(),
        iterations: stats.iterations,
        residual: stats.relative_residual,
    })
}

pub fn validate_error_config(config: &ErrorScalingConfig) -> Result<()> {
    if config.eps_inv.len() < 3 {
        return invalid("error scaling needs at least three values of ε");
    }
    if config.samples == 0 {
        return invalid("error scaling needs at least one sample");
    }
    Ok(())
}

/// Runs every `(ε, seed)` task with [`error_task`]; the first failure aborts.
pub fn error_rows(config: &ErrorScalingConfig, field: &CoefficientField, abar: &DMatrix<f64>) -> Result<Vec<ErrorRow>> {
    validate_error_config(config)?;
    let tasks: Vec<(usize, usize)> =
        (0..config.eps_inv.len()).flat_map(|li| (0..config.samples).map(move |k| (li, k))).collect();
    tasks.par_iter().map(|&(li, k)| error_task(config, field, abar, li, k)).collect()
}

/// Per-`ε` means and the fitted exponents; a pure function of the rows.
pub fn summarize_errors(rows: &[ErrorRow]) -> Result<ErrorScaling> {
    let mut eps: Vec<usize> = rows.iter().map(|r| r.eps_inv).collect();
    eps.sort_unstable();
    eps.dedup();
    let levels: Vec<ErrorLevel> = eps
        .iter()
        .map(|&e| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.eps_inv == e).map(|r| r.l2_error).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            ErrorLevel { eps_inv: e, samples: xs.len(), mean_l2: mean, se_l2: (crate::renorm::sample_variance(&xs) / n).sqrt() }
        })
        .collect();
    let dim = rows.first().map_or(1, |r| r.d);
    let scale = levels.iter().map(|l| l.mean_l2.abs()).fold(0.0, f64::max);
    let degenerate = levels.iter().any(|l| l.mean_l2 <= 1e-12 * scale.max(1.0));
    if degenerate || levels.len() < 3 {
        return Ok(ErrorScaling { levels, fit: None, fit_log: None, degenerate: true });
    }
    let xs: Vec<f64> = levels.iter().map(|l| 1.0 / l.eps_inv as f64).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.mean_l2).collect();
    let fit = fit_exponent(&xs, &ys)?;
    let fit_log = if dim == 2 {
        let xl: Vec<f64> = xs.iter().map(|e| e * e.ln().abs().sqrt()).collect();
        Some(fit_exponent(&xl, &ys)?)
    } else {
        None
    };
    Ok(ErrorScaling { levels, fit: Some(fit), fit_log, degenerate: false })
}

pub fn error_scaling(config: &ErrorScalingConfig, field: &CoefficientField, abar: &DMatrix<f64>) -> Result<(Vec<ErrorRow>, ErrorScaling)> {
    let rows = error_rows(config, field, abar)?;
    let summary = summarize_errors(&rows)?;
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gen_checkerboard, gen_constant};

    #[test]
    fn constant_field_reproduces_homogenized_solution() {
        let f = gen_constant(2, 2.0).unwrap();
        let abar = DMatrix::identity(2, 2) * 2.0;
        for eps_inv in [2, 4] {
            let p = BoundaryValueProblem::new(2, BoundaryData::Quadratic, eps_inv, 4).unwrap();
            let u = solve_eps(&p, &f, 1).unwrap();
            let ub = solve_homogenized(&abar, &p).unwrap();
            assert!(l2_error(&u, &ub).unwrap() < 1e-10);
        }
        let p = BoundaryValueProblem::new(2, BoundaryData::Affine, 4, 2).unwrap();
        let u = solve_eps(&p, &f, 1).unwrap();
        let geo = u.geometry;
        for i in 0..geo.num_nodes() {
            assert!((u.values[i] - BoundaryData::Affine.eval(&geo.node_position(i)[..2])).abs() < 1e-10);
        }
        assert!(BoundaryValueProblem::new(2, BoundaryData::Affine, 4, 1).is_err());
    }

    #[test]
    fn harmonic_data_is_reproduced_to_mesh_accuracy() {
        let abar = DMatrix::identity(2, 2) * 1.6;
        let p = BoundaryValueProblem::new(2, BoundaryData::Sine, 8, 4).unwrap();
        let ub = solve_homogenized(&abar, &p).unwrap();
        let exact = ScalarField::from_fn(ub.geometry, |x| BoundaryData::Sine.eval(x));
        assert!(l2_error(&ub, &exact).unwrap() < 1e-3);
        let p1 = BoundaryValueProblem::new(1, BoundaryData::Affine, 4, 2).unwrap();
        let ub = solve_homogenized(&(DMatrix::identity(1, 1) * 1.6), &p1).unwrap();
        for i in 0..ub.geometry.num_nodes() {
            assert!((ub.values[i] - ub.geometry.node_position(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_matches_fem_in_one_dimension() {
        let f = gen_checkerboard(1, 1.0, 4.0, 0.5, 3).unwrap();
        let o = oracle_1d(&gen_constant(1, 3.0).unwrap(), 4, 0.0, 2.0, 1).unwrap();
        assert!(o.values.iter().zip(&o.knots).all(|(v, x)| (v - 2.0 * x).abs() < 1e-14));
        for cells_per_eps in [2, 4, 8] {
            let p = BoundaryValueProblem::new(1, BoundaryData::Affine, 16, cells_per_eps).unwrap();
            let u = solve_eps(&p, &f, 3).unwrap();
            let o = oracle_1d(&f, 16, 0.0, 1.0, cells_per_eps).unwrap();
            let geo = u.geometry;
            let d = o.l2_distance(|x| u.values[((x / geo.spacing).round() as usize).min(geo.n)], geo.n);
            assert!(d <= geo.spacing, "{d}");
        }
    }

    #[test]
    fn maximum_principle_and_affine_shift() {
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 8).unwrap();
        let p = BoundaryValueProblem::new(2, BoundaryData::Quadratic, 4, 4).unwrap();
        let u = solve_eps(&p, &f, 2).unwrap();
        let geo = u.geometry;
        let bvals: Vec<f64> = (0..geo.num_nodes()).filter(|&i| geo.is_boundary_node(i)).map(|i| u.values[i]).collect();
        let (lo, hi) = bvals.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(u.values.iter().all(|&v| v >= lo - 1e-8 && v <= hi + 1e-8));

        // Data f + ℓ: u_ε splits as u_ε[f] + u_ε[ℓ] by linearity, and ū shifts by ℓ itself.
        let grid = eps_grid(&p, &f, 2).unwrap();
        let s = Solver::new(&grid);
        let ell = |x: &[f64]| 0.3 * x[0] - x[1];
        let nodes = |g: &dyn Fn(&[f64]) -> f64| (0..geo.num_nodes()).map(|i| g(&geo.node_position(i)[..2])).collect::<Vec<_>>();
        let sum = s.dirichlet(&nodes(&|x| BoundaryData::Quadratic.eval(x) + ell(x)), None).unwrap();
        let part = s.dirichlet(&nodes(&ell), None).unwrap();
        for i in 0..geo.num_nodes() {
            assert!((sum.values[i] - u.values[i] - part.values[i]).abs() < 1e-8);
        }
        let abar = DMatrix::identity(2, 2) * 2.0;
        let hgrid = homogenized_grid(&abar, &p).unwrap();
        let hs = Solver::new(&hgrid);
        let ub = hs.dirichlet(&nodes(&|x| BoundaryData::Quadratic.eval(x)), None).unwrap();
        let ub_shift = hs.dirichlet(&nodes(&|x| BoundaryData::Quadratic.eval(x) + ell(x)), None).unwrap();
        for i in 0..geo.num_nodes() {
            assert!((ub_shift.values[i] - ub.values[i] - ell(&geo.node_position(i)[..2])).abs() < 1e-8);
        }
    }

    #[test]
    fn two_scale_beats_plain_homogenization() {
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 0).unwrap();
        let p = BoundaryValueProblem::new(2, BoundaryData::Sine, 8, 4).unwrap();
        let abar = DMatrix::identity(2, 2) * 2.0;
        let (u, ub, ts) = two_scale_for_seed(&p, &f, &abar, 4).unwrap();
        assert!(ts.h1_two_scale < ts.h1_plain);
        let grid = eps_grid(&p, &f, 4).unwrap();
        let w = weak_convergence_check(&u, &grid, &ub, &abar, 0.25, p.eps()).unwrap();
        assert!(w.windows == 4 && w.gradient < w.pointwise);
        let c = gen_constant(2, 2.0).unwrap();
        let (_, _, ts) = two_scale_for_seed(&p, &c, &abar, 4).unwrap();
        assert!(ts.h1_two_scale < 1e-8 && ts.h1_plain < 1e-8);
    }

    #[test]
    fn constant_field_errors_are_degenerate() {
        let f = gen_constant(1, 2.0).unwrap();
        let cfg = ErrorScalingConfig {
            dim: 1,
            data: BoundaryData::Affine,
            eps_inv: vec![4, 8, 16],
            cells_per_eps: 2,
            samples: 2,
            seed: 0,
            window: 0.25,
            oracle_resolution: 1,
        };
        let (_, s) = error_scaling(&cfg, &f, &(DMatrix::identity(1, 1) * 2.0)).unwrap();
        assert!(s.degenerate && s.fit.is_none());
    }
}
