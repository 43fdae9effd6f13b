//! Subadditive energies `ν(U,p)`, `ν*(U,q)` and the matrices they define.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::CellTensorGrid;
use crate::solver::{mean_gradient, ScalarField, SolveStats, Solver, SolverOptions};
use crate::tensor::lambda_max;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// `a(U)` from the Dirichlet energy.
    DirichletA,
    /// `b(U)` from the Neumann energy; `a_*(U) = b(U)⁻¹`.
    NeumannDual,
    /// Estimate of the homogenized matrix.
    LimitEstimate,
}

/// Where a matrix came from: cube side, mesh and either the seed of a single
/// realization or the number of samples averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub side: usize,
    pub m: usize,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

impl Origin {
    pub fn of_grid(grid: &CellTensorGrid) -> Self {
        Origin { side: grid.side(), m: grid.cells_per_unit(), seed: grid.source().map(|s| s.seed), samples: None }
    }
}

/// Symmetric matrix with its provenance, serialized as a JSON row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMatrix {
    pub dim: usize,
    /// Row-major entries.
    pub entries: Vec<f64>,
    pub provenance: Provenance,
    pub origin: Origin,
    pub stats: SolveStats,
}

/// `b(U)` with `ν*(U,q) = ½ q·b(U)q`.
pub type DualForm = EffectiveMatrix;

impl EffectiveMatrix {
    pub fn new(matrix: &DMatrix<f64>, provenance: Provenance, origin: Origin, stats: SolveStats) -> Self {
        let dim = matrix.nrows();
        let entries = (0..dim * dim).map(|k| matrix[(k / dim, k % dim)]).collect();
        EffectiveMatrix { dim, entries, provenance, origin, stats }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    pub fn quadratic(&self, p: &[f64]) -> f64 {
        let m = self.matrix();
        let v = nalgebra::DVector::from_column_slice(p);
        v.dot(&(&m * &v))
    }
}

/// Canonical polarization directions: `e_1..e_d`, then `e_i + e_j` for `i < j`.
pub fn polarization_directions(dim: usize) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for i in 0..dim {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        out.push((format!("e{}", i + 1), v));
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v[j] = 1.0;
            out.push((format!("e{}+e{}", i + 1, j + 1), v));
        }
    }
    out
}

/// Matrix `M` with `½ v·Mv = values[k]` along the canonical directions.
pub fn polarize(dim: usize, values: &[f64]) -> Result<DMatrix<f64>> {
    if values.len() != dim * (dim + 1) / 2 {
        return invalid(format!("expected {} directional values, got {}", dim * (dim + 1) / 2, values.len()));
    }
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        m[(i, i)] = 2.0 * values[i];
    }
    let mut k = dim;
    for i in 0..dim {
        for j in i + 1..dim {
            let off = values[k] - values[i] - values[j];
            m[(i, j)] = off;
            m[(j, i)] = off;
            k += 1;
        }
    }
    Ok(m)
}

fn nu_with(solver: &Solver, p: &[f64]) -> Result<(f64, ScalarField)> {
    let v = solver.dirichlet_affine(p)?;
    Ok((solver.energy(&v), v))
}

fn nu_star_value(u: &ScalarField, q: &[f64]) -> f64 {
    0.5 * mean_gradient(u).iter().zip(q).map(|(g, q)| g * q).sum::<f64>()
}

fn nu_star_with(solver: &Solver, q: &[f64]) -> Result<(f64, ScalarField)> {
    let u = solver.neumann(q)?;
    Ok((nu_star_value(&u, q), u))
}

/// `ν(U,p)`, the volume-normalized Dirichlet energy with affine data, and its
/// minimizer.
pub fn nu(grid: &CellTensorGrid, p: &[f64]) -> Result<(f64, ScalarField)> {
    nu_with(&Solver::new(grid), p)
}

/// `ν*(U,q)` and its mean-zero maximizer.
pub fn nu_star(grid: &CellTensorGrid, q: &[f64]) -> Result<(f64, ScalarField)> {
    nu_star_with(&Solver::new(grid), q)
}

/// One polarization direction with both energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalEnergy {
    pub direction: String,
    pub nu: f64,
    pub nu_star: f64,
    /// Combined stats of the solves behind this row; superposed directions
    /// need no solve and carry zero iterations.
    pub stats: SolveStats,
}

/// Both quadratic forms of one cube together with the per-direction values.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeEnergies {
    pub a: EffectiveMatrix,
    pub b: DualForm,
    pub directions: Vec<DirectionalEnergy>,
}

/// Minimizers and maximizers along the coordinate directions; the mixed
/// directions follow by linearity (`v_{p+p'} = v_p + v_{p'}`).
struct BasisSolutions {
    dirichlet: Vec<(f64, ScalarField)>,
    neumann: Vec<(f64, ScalarField)>,
}

fn basis_solutions(solver: &Solver, want_a: bool, want_b: bool) -> Result<BasisSolutions> {
    let dim = solver.grid().dim();
    let mut out = BasisSolutions { dirichlet: Vec::new(), neumann: Vec::new() };
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        if want_a {
            out.dirichlet.push(nu_with(solver, &e)?);
        }
        if want_b {
            out.neumann.push(nu_star_with(solver, &e)?);
        }
    }
    Ok(out)
}

fn stats_of(f: &ScalarField) -> SolveStats {
    f.stats.unwrap_or_default()
}

fn directional_values(solver: &Solver, sol: &BasisSolutions) -> (Vec<f64>, Vec<f64>) {
    let dim = solver.grid().dim();
    let dirs = polarization_directions(dim);
    let mut nus = Vec::with_capacity(dirs.len());
    let mut stars = Vec::with_capacity(dirs.len());
    for (k, (_, q)) in dirs.iter().enumerate() {
        if k < dim {
            nus.push(sol.dirichlet.get(k).map_or(f64::NAN, |s| s.0));
            stars.push(sol.neumann.get(k).map_or(f64::NAN, |s| s.0));
            continue;
        }
        let idx: Vec<usize> = (0..dim).filter(|&i| q[i] != 0.0).collect();
        let (i, j) = (idx[0], idx[1]);
        if !sol.dirichlet.is_empty() {
            let v = sol.dirichlet[i].1.axpy(1.0, &sol.dirichlet[j].1);
            nus.push(solver.energy(&v));
        } else {
            nus.push(f64::NAN);
        }
        if !sol.neumann.is_empty() {
            let u = sol.neumann[i].1.axpy(1.0, &sol.neumann[j].1);
            stars.push(nu_star_value(&u, q));
        } else {
            stars.push(f64::NAN);
        }
    }
    (nus, stars)
}

fn total_stats(fields: &[(f64, ScalarField)]) -> SolveStats {
    fields.iter().fold(SolveStats::default(), |acc, (_, f)| acc.combine(stats_of(f)))
}

/// `a(U)` by polarization of `ν`.
pub fn effective_matrix(grid: &CellTensorGrid) -> Result<EffectiveMatrix> {
    let solver = Solver::new(grid);
    let sol = basis_solutions(&solver, true, false)?;
    let (nus, _) = directional_values(&solver, &sol);
    let m = polarize(grid.dim(), &nus)?;
    Ok(EffectiveMatrix::new(&m, Provenance::DirichletA, Origin::of_grid(grid), total_stats(&sol.dirichlet)))
}

/// `b(U)` by polarization of `ν*`.
pub fn dual_form(grid: &CellTensorGrid) -> Result<DualForm> {
    let solver = Solver::new(grid);
    let sol = basis_solutions(&solver, false, true)?;
    let (_, stars) = directional_values(&solver, &sol);
    let m = polarize(grid.dim(), &stars)?;
    Ok(EffectiveMatrix::new(&m, Provenance::NeumannDual, Origin::of_grid(grid), total_stats(&sol.neumann)))
}

/// `a(U)`, `b(U)` and the per-direction energies from `d` Dirichlet and `d`
/// Neumann solves on one assembled operator.
pub fn cube_energies(grid: &CellTensorGrid, options: SolverOptions) -> Result<CubeEnergies> {
    let solver = Solver::with_options(grid, options);
    let dim = grid.dim();
    let sol = basis_solutions(&solver, true, true)?;
    let (nus, stars) = directional_values(&solver, &sol);
    let origin = Origin::of_grid(grid);
    let a = EffectiveMatrix::new(&polarize(dim, &nus)?, Provenance::DirichletA, origin.clone(), total_stats(&sol.dirichlet));
    let b = EffectiveMatrix::new(&polarize(dim, &stars)?, Provenance::NeumannDual, origin, total_stats(&sol.neumann));
    let directions = polarization_directions(dim)
        .into_iter()
        .enumerate()
        .map(|(k, (label, _))| DirectionalEnergy {
            direction: label,
            nu: nus[k],
            nu_star: stars[k],
            stats: if k < dim {
                stats_of(&sol.dirichlet[k].1).combine(stats_of(&sol.neumann[k].1))
            } else {
                SolveStats::default()
            },
        })
        .collect();
    Ok(CubeEnergies { a, b, directions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subadditivity {
    /// Energy of the parent cube.
    pub lhs: f64,
    /// Mean energy of the `2^d` children.
    pub rhs: f64,
    pub defect: f64,
}

fn subadditivity_with(
    parent: &CellTensorGrid,
    v: &[f64],
    energy: impl Fn(&CellTensorGrid, &[f64]) -> Result<f64>,
) -> Result<Subadditivity> {
    let children = parent.dyadic_children()?;
    let lhs = energy(parent, v)?;
    let mut rhs = 0.0;
    for c in &children {
        rhs += energy(c, v)?;
    }
    rhs /= children.len() as f64;
    Ok(Subadditivity { lhs, rhs, defect: rhs - lhs })
}

/// `ν(parent,p)` against the mean of `ν` over the aligned dyadic children.
pub fn check_subadditivity(parent: &CellTensorGrid, p: &[f64]) -> Result<Subadditivity> {
    subadditivity_with(parent, p, |g, p| Ok(nu(g, p)?.0))
}

/// Same as [`check_subadditivity`] for `ν*`.
pub fn check_subadditivity_dual(parent: &CellTensorGrid, q: &[f64]) -> Result<Subadditivity> {
    subadditivity_with(parent, q, |g, q| Ok(nu_star(g, q)?.0))
}

fn inverse_dual(b: &DualForm) -> Result<DMatrix<f64>> {
    let m = b.matrix();
    if crate::tensor::lambda_min(&m) <= 0.0 {
        return Err(Error::NumericalDegeneracy("dual form is not positive definite".into()));
    }
    m.try_inverse().ok_or_else(|| Error::NumericalDegeneracy("dual form is singular".into()))
}

/// `½ p·(a(U) − b(U)⁻¹)p`.
pub fn duality_gap(a: &EffectiveMatrix, b: &DualForm, p: &[f64]) -> Result<f64> {
    if p.len() != a.dim || a.dim != b.dim {
        return invalid("dimension mismatch in duality gap");
    }
    let diff = a.matrix() - inverse_dual(b)?;
    let v = nalgebra::DVector::from_column_slice(p);
    Ok(0.5 * v.dot(&(&diff * &v)))
}

/// `sup_{|p|≤1} ½ p·(a(U) − b(U)⁻¹)p = ½ λ_max(a − b⁻¹)`.
pub fn duality_gap_max(a: &EffectiveMatrix, b: &DualForm) -> Result<f64> {
    if a.dim != b.dim {
        return invalid("dimension mismatch in duality gap");
    }
    Ok(0.5 * lambda_max(&(a.matrix() - inverse_dual(b)?)))
}
