//! Multilinear (Q1) conforming discretization of `∫ ∇u·a∇v` on a regular
//! grid with one constant tensor per cell, and Jacobi-preconditioned
//! conjugate gradients for the Dirichlet and Neumann problems.
//!
//! Quadrature is exact: affine functions lie in the discrete space, so the
//! mean-gradient identity, the flux identity and subadditivity hold exactly in
//! the discretization, up to the linear-solver tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{CellTensorGrid, Geometry};
use crate::tensor::SymTensor;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual at which CG stops.
    pub tolerance: f64,
    /// Iteration cap is `factor · (nodes per axis) · √Λ`.
    pub max_iter_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: DEFAULT_TOLERANCE, max_iter_factor: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

impl SolveStats {
    pub fn combine(self, other: SolveStats) -> SolveStats {
        SolveStats {
            iterations: self.iterations + other.iterations,
            relative_residual: self.relative_residual.max(other.relative_residual),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    /// Boundary values equal `p·x`.
    DirichletAffine(Vec<f64>),
    /// Boundary values prescribed by some other function.
    Dirichlet,
    /// Volume-weighted mean of the nodal values is zero.
    NeumannMeanZero,
    None,
}

/// Nodal values of a Q1 function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub geometry: Geometry,
    pub values: Vec<f64>,
    pub bc: BoundaryCondition,
    pub stats: Option<SolveStats>,
}

impl ScalarField {
    pub fn zeros(geometry: Geometry) -> Self {
        ScalarField { geometry, values: vec![0.0; geometry.num_nodes()], bc: BoundaryCondition::None, stats: None }
    }

    pub fn from_fn(geometry: Geometry, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = geometry.dim;
        let values = (0..geometry.num_nodes()).map(|i| f(&geometry.node_position(i)[..dim])).collect();
        ScalarField { geometry, values, bc: BoundaryCondition::None, stats: None }
    }

    /// Nodal interpolant of `ℓ_p(x) = p·x`.
    pub fn affine(geometry: Geometry, p: &[f64]) -> Self {
        let mut f = Self::from_fn(geometry, |x| x.iter().zip(p).map(|(a, b)| a * b).sum());
        f.bc = BoundaryCondition::DirichletAffine(p.to_vec());
        f
    }

    /// `self + t·other`, keeping this field's metadata.
    pub fn axpy(&self, t: f64, other: &ScalarField) -> ScalarField {
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += t * b;
        }
        out
    }

    pub fn scaled(&self, t: f64) -> ScalarField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= t);
        out
    }

    /// `⨍_U u` of the multilinear interpolant.
    pub fn volume_mean(&self) -> f64 {
        let w = node_weights(&self.geometry);
        let total: f64 = w.iter().sum();
        w.iter().zip(&self.values).map(|(a, b)| a * b).sum::<f64>() / total
    }
}

/// `∫ φ_i` for every nodal basis function.
pub fn node_weights(geo: &Geometry) -> Vec<f64> {
    let cv = geo.cell_volume();
    (0..geo.num_nodes())
        .map(|i| {
            let m = geo.node_multi(i);
            (0..geo.dim).fold(cv, |acc, k| if m[k] == 0 || m[k] == geo.n { acc * 0.5 } else { acc })
        })
        .collect()
}

#[inline]
fn sign(bit: usize) -> f64 {
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Reference-cell integrals for Q1 on `[0,1]^d`.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub dim: usize,
    pub nloc: usize,
    /// `k[i·d + j][a·nloc + b] = ∫ ∂_i φ_a ∂_j φ_b`.
    k: Vec<Vec<f64>>,
    /// `∂_k φ_b` at the cell centre.
    grad_center: Vec<[f64; 3]>,
}

impl ReferenceElement {
    pub fn new(dim: usize) -> Self {
        let nloc = 1 << dim;
        let mass = |a: usize, b: usize| if a == b { 1.0 / 3.0 } else { 1.0 / 6.0 };
        let mut k = vec![vec![0.0; nloc * nloc]; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                for a in 0..nloc {
                    for b in 0..nloc {
                        let mut v = 1.0;
                        for axis in 0..dim {
                            let (ba, bb) = (a >> axis & 1, b >> axis & 1);
                            v *= match (axis == i, axis == j) {
                                (true, true) => sign(ba) * sign(bb),
                                (true, false) => sign(ba) * 0.5,
                                (false, true) => sign(bb) * 0.5,
                                (false, false) => mass(ba, bb),
                            };
                        }
                        k[i * dim + j][a * nloc + b] = v;
                    }
                }
            }
        }
        let half_pow = 0.5_f64.powi(dim as i32 - 1);
        let grad_center = (0..nloc)
            .map(|b| {
                let mut g = [0.0; 3];
                for (axis, gk) in g.iter_mut().enumerate().take(dim) {
                    *gk = sign(b >> axis & 1) * half_pow;
                }
                g
            })
            .collect();
        ReferenceElement { dim, nloc, k, grad_center }
    }

    /// Element stiffness of a cell of side `h` with tensor `a`.
    pub fn stiffness(&self, a: &SymTensor, h: f64, out: &mut [f64]) {
        let dim = self.dim;
        let scale = h.powi(dim as i32 - 2);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..dim {
            for j in 0..dim {
                let c = a.get(i, j) * scale;
                if c == 0.0 {
                    continue;
                }
                for (o, r) in out.iter_mut().zip(&self.k[i * dim + j]) {
                    *o += c * r;
                }
            }
        }
    }

    /// Element mass matrix `∫ φ_a φ_b` of a cell of side `h`.
    pub fn mass(&self, h: f64, out: &mut [f64]) {
        let vol = h.powi(self.dim as i32);
        for a in 0..self.nloc {
            for b in 0..self.nloc {
                let mut v = vol;
                for axis in 0..self.dim {
                    v *= if (a >> axis & 1) == (b >> axis & 1) { 1.0 / 3.0 } else { 1.0 / 6.0 };
                }
                out[a * self.nloc + b] = v;
            }
        }
    }

    /// `∫_cell g·∇φ_b` for a constant vector `g`, cell side `h`.
    pub fn load(&self, g: &[f64; 3], h: f64, out: &mut [f64]) {
        let scale = h.powi(self.dim as i32);
        for (b, o) in out.iter_mut().enumerate().take(self.nloc) {
            *o = (0..self.dim).map(|k| g[k] * self.grad_center[b][k]).sum::<f64>() * scale / h;
        }
    }

    /// Gradient at the cell centre (equal to the cell average) from local values.
    pub fn gradient(&self, local: &[f64], h: f64) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (b, &u) in local.iter().enumerate().take(self.nloc) {
            for (k, gk) in g.iter_mut().enumerate().take(self.dim) {
                *gk += u * self.grad_center[b][k];
            }
        }
        for gk in g.iter_mut() {
            *gk /= h;
        }
        g
    }
}

/// Assembled stiffness matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct StiffnessOperator {
    geometry: Geometry,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    lambda: f64,
}

impl StiffnessOperator {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (row, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[row], self.row_ptr[row + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            *yi = acc;
        }
    }

    /// `y = A x`, returning `x·y`.
    fn apply_dot(&self, x: &[f64], y: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (row, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[row], self.row_ptr[row + 1]);
            let cols = &self.cols[s..e];
            let vals = &self.vals[s..e];
            let mut acc = 0.0;
            for (v, &c) in vals.iter().zip(cols) {
                acc += v * x[c as usize];
            }
            *yi = acc;
            total += acc * x[row];
        }
        total
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.diag.len();
        let mut entries = std::collections::HashMap::new();
        for row in 0..n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                entries.insert((row, self.cols[k] as usize), self.vals[k]);
            }
        }
        entries.iter().all(|(&(i, j), &v)| (entries.get(&(j, i)).copied().unwrap_or(0.0) - v).abs() <= tol)
    }

    /// `∫ ∇u·a∇v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut y = vec![0.0; u.len()];
        self.apply(v, &mut y);
        u.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    /// Volume-normalized Dirichlet energy `⨍ ½ ∇u·a∇u`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self.bilinear(u, u) / self.geometry.volume()
    }

    fn max_iterations(&self, opts: &SolverOptions) -> usize {
        (opts.max_iter_factor * self.geometry.nodes_per_axis() as f64 * self.lambda.sqrt()).ceil() as usize
    }
}

/// Assembles the stiffness operator of the discrete energy on `grid`.
pub fn assemble_energy(grid: &CellTensorGrid) -> StiffnessOperator {
    let geo = *grid.geometry();
    let dim = geo.dim;
    let elem = ReferenceElement::new(dim);
    let nloc = elem.nloc;
    let slots = 3usize.pow(dim as u32);
    let nn = geo.num_nodes();
    let mut stencil = vec![0.0; nn * slots];
    let mut ke = vec![0.0; nloc * nloc];
    let mut nodes = [0usize; 8];
    let h = geo.spacing;
    let mut last: Option<SymTensor> = None;
    for (c, t) in grid.cells().iter().enumerate() {
        if last.as_ref() != Some(t) {
            elem.stiffness(t, h, &mut ke);
            last = Some(*t);
        }
        geo.cell_nodes(c, &mut nodes);
        for a in 0..nloc {
            let row = nodes[a];
            for b in 0..nloc {
                let mut slot = 0;
                let mut pow3 = 1;
                for k in 0..dim {
                    let off = (b >> k & 1) as isize - (a >> k & 1) as isize;
                    slot += (off + 1) as usize * pow3;
                    pow3 *= 3;
                }
                stencil[row * slots + slot] += ke[a * nloc + b];
            }
        }
    }
    let np = geo.n + 1;
    let strides = [1isize, np as isize, (np * np) as isize];
    let mut row_ptr = Vec::with_capacity(nn + 1);
    let mut cols = Vec::with_capacity(nn * slots);
    let mut vals = Vec::with_capacity(nn * slots);
    let mut diag = vec![0.0; nn];
    row_ptr.push(0);
    for row in 0..nn {
        let m = geo.node_multi(row);
        for slot in 0..slots {
            let mut rem = slot;
            let mut col = row as isize;
            let mut inside = true;
            for k in 0..dim {
                let off = (rem % 3) as isize - 1;
                rem /= 3;
                let target = m[k] as isize + off;
                if target < 0 || target > geo.n as isize {
                    inside = false;
                    break;
                }
                col += off * strides[k];
            }
            if inside {
                let v = stencil[row * slots + slot];
                cols.push(col as u32);
                vals.push(v);
                if col as usize == row {
                    diag[row] = v;
                }
            }
        }
        row_ptr.push(cols.len());
    }
    StiffnessOperator { geometry: geo, row_ptr, cols, vals, diag, lambda: grid.lambda() }
}

/// How the linear system is constrained.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Values on boundary nodes are fixed; only interior nodes are unknown.
    PinnedBoundary,
    /// Singular Neumann system; iterates are kept volume-mean-zero.
    MeanZero,
}

/// A right-hand side together with the constraint it is solved under.
#[derive(Debug, Clone)]
pub struct LinearSystem<'a> {
    pub operator: &'a StiffnessOperator,
    pub rhs: Vec<f64>,
    pub constraint: Constraint,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearSystem<'_> {
    /// Preconditioned CG starting from `x`. For [`Constraint::PinnedBoundary`]
    /// the boundary entries of `x` are kept and `rhs` is only read on interior
    /// nodes. `ref_norm` is the residual norm the tolerance is relative to.
    pub fn solve(&self, x: &mut [f64], ref_norm: f64, opts: &SolverOptions) -> Result<SolveStats> {
        let op = self.operator;
        let geo = op.geometry;
        let n = x.len();
        let active: Vec<bool> = match self.constraint {
            Constraint::PinnedBoundary => (0..n).map(|i| !geo.is_boundary_node(i)).collect(),
            Constraint::MeanZero => vec![true; n],
        };
        let weights = match self.constraint {
            Constraint::MeanZero => Some(node_weights(&geo)),
            Constraint::PinnedBoundary => None,
        };
        let wsum: f64 = weights.as_ref().map_or(1.0, |w| w.iter().sum());
        let project_range = |r: &mut [f64]| {
            if weights.is_some() {
                let mean = r.iter().sum::<f64>() / r.len() as f64;
                r.iter_mut().for_each(|v| *v -= mean);
            }
        };
        let project_mean_zero = |z: &mut [f64]| {
            if let Some(w) = &weights {
                let mean = dot(w, z) / wsum;
                z.iter_mut().for_each(|v| *v -= mean);
            }
        };
        let mask: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        let inv_diag: Vec<f64> = op
            .diag
            .iter()
            .zip(&active)
            .map(|(&d, &a)| if a && d > 0.0 { 1.0 / d } else { 0.0 })
            .collect();

        if matches!(self.constraint, Constraint::MeanZero) {
            project_mean_zero(x);
        }
        let mut q = vec![0.0; n];
        op.apply(x, &mut q);
        let mut r: Vec<f64> = (0..n).map(|i| if active[i] { self.rhs[i] - q[i] } else { 0.0 }).collect();
        project_range(&mut r);
        if ref_norm == 0.0 {
            return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
        }
        let mut rel = dot(&r, &r).sqrt() / ref_norm;
        let max_iter = op.max_iterations(opts);
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        project_mean_zero(&mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut it = 0;
        while rel > opts.tolerance {
            if it >= max_iter {
                return Err(Error::SolverFailure { iterations: it, residual: rel });
            }
            let pq = op.apply_dot(&p, &mut q);
            if pq <= 0.0 {
                return Err(Error::SolverFailure { iterations: it, residual: rel });
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i] * mask[i];
            }
            project_range(&mut r);
            let rz_new = if weights.is_some() {
                for i in 0..n {
                    z[i] = r[i] * inv_diag[i];
                }
                project_mean_zero(&mut z);
                dot(&r, &z)
            } else {
                let mut acc = 0.0;
                for i in 0..n {
                    z[i] = r[i] * inv_diag[i];
                    acc += r[i] * z[i];
                }
                acc
            };
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            it += 1;
            rel = dot(&r, &r).sqrt() / ref_norm;
        }
        if matches!(self.constraint, Constraint::MeanZero) {
            project_mean_zero(x);
        }
        Ok(SolveStats { iterations: it, relative_residual: rel })
    }
}

/// Load vector `∫ g_c·∇φ_i` for a cell-wise constant vector field `g`.
pub fn assemble_load(geo: &Geometry, g: impl Fn(usize) -> [f64; 3]) -> Vec<f64> {
    let elem = ReferenceElement::new(geo.dim);
    let mut out = vec![0.0; geo.num_nodes()];
    let mut local = [0.0; 8];
    let mut nodes = [0usize; 8];
    for c in 0..geo.num_cells() {
        elem.load(&g(c), geo.spacing, &mut local);
        geo.cell_nodes(c, &mut nodes);
        for b in 0..elem.nloc {
            out[nodes[b]] += local[b];
        }
    }
    out
}

/// A grid together with its assembled operator; reuse it for several solves
/// on the same coefficients.
#[derive(Debug, Clone)]
pub struct Solver<'g> {
    grid: &'g CellTensorGrid,
    operator: StiffnessOperator,
    options: SolverOptions,
}

impl<'g> Solver<'g> {
    pub fn new(grid: &'g CellTensorGrid) -> Self {
        Self::with_options(grid, SolverOptions::default())
    }

    pub fn with_options(grid: &'g CellTensorGrid, options: SolverOptions) -> Self {
        Solver { grid, operator: assemble_energy(grid), options }
    }

    pub fn grid(&self) -> &'g CellTensorGrid {
        self.grid
    }

    pub fn operator(&self) -> &StiffnessOperator {
        &self.operator
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    /// Solves `∫∇w·a∇u = ∫ w·load` for interior test functions `w`, with
    /// `u = boundary` on boundary nodes. Interior entries of `boundary` are
    /// used as the initial guess.
    pub fn dirichlet(&self, boundary: &[f64], load: Option<&[f64]>) -> Result<ScalarField> {
        let geo = *self.grid.geometry();
        let n = geo.num_nodes();
        if boundary.len() != n || load.is_some_and(|l| l.len() != n) {
            return invalid("boundary/load vectors do not match the grid");
        }
        let zero_interior: Vec<f64> =
            (0..n).map(|i| if geo.is_boundary_node(i) { boundary[i] } else { 0.0 }).collect();
        let mut kg = vec![0.0; n];
        self.operator.apply(&zero_interior, &mut kg);
        let ref_norm = (0..n)
            .filter(|&i| !geo.is_boundary_node(i))
            .map(|i| {
                let v = load.map_or(0.0, |l| l[i]) - kg[i];
                v * v
            })
            .sum::<f64>()
            .sqrt();
        let rhs = load.map_or_else(|| vec![0.0; n], |l| l.to_vec());
        let mut x = boundary.to_vec();
        let system = LinearSystem { operator: &self.operator, rhs, constraint: Constraint::PinnedBoundary };
        let stats = if ref_norm == 0.0 {
            x = zero_interior;
            SolveStats::default()
        } else {
            system.solve(&mut x, ref_norm, &self.options)?
        };
        Ok(ScalarField { geometry: geo, values: x, bc: BoundaryCondition::Dirichlet, stats: Some(stats) })
    }

    /// Minimizer of the discrete energy over `ℓ_p + H¹₀`.
    pub fn dirichlet_affine(&self, p: &[f64]) -> Result<ScalarField> {
        let geo = *self.grid.geometry();
        if p.len() != geo.dim {
            return invalid(format!("slope has {} components, grid dimension is {}", p.len(), geo.dim));
        }
        let start = ScalarField::affine(geo, p);
        let mut out = self.dirichlet(&start.values, None)?;
        out.bc = BoundaryCondition::DirichletAffine(p.to_vec());
        Ok(out)
    }

    /// Mean-zero maximizer of `⨍(−½∇u·a∇u + q·∇u)`.
    pub fn neumann(&self, q: &[f64]) -> Result<ScalarField> {
        let geo = *self.grid.geometry();
        if q.len() != geo.dim {
            return invalid(format!("flux direction has {} components, grid dimension is {}", q.len(), geo.dim));
        }
        let mut g = [0.0; 3];
        g[..geo.dim].copy_from_slice(q);
        let rhs = assemble_load(&geo, |_| g);
        self.neumann_with_load(rhs, None)
    }

    /// Mean-zero solution of the singular system `K u = load` (the load must
    /// sum to zero). `guess` seeds the iteration.
    pub fn neumann_with_load(&self, load: Vec<f64>, guess: Option<&[f64]>) -> Result<ScalarField> {
        let geo = *self.grid.geometry();
        let ref_norm = dot(&load, &load).sqrt();
        let mut x = guess.map_or_else(|| vec![0.0; geo.num_nodes()], |g| g.to_vec());
        let system = LinearSystem { operator: &self.operator, rhs: load, constraint: Constraint::MeanZero };
        let stats = if ref_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            SolveStats::default()
        } else {
            system.solve(&mut x, ref_norm, &self.options)?
        };
        Ok(ScalarField { geometry: geo, values: x, bc: BoundaryCondition::NeumannMeanZero, stats: Some(stats) })
    }

    pub fn energy(&self, u: &ScalarField) -> f64 {
        self.operator.energy(&u.values)
    }
}

pub fn solve_dirichlet_affine(grid: &CellTensorGrid, p: &[f64]) -> Result<ScalarField> {
    Solver::new(grid).dirichlet_affine(p)
}

pub fn solve_neumann_dual(grid: &CellTensorGrid, q: &[f64]) -> Result<ScalarField> {
    Solver::new(grid).neumann(q)
}

/// Gradient of the multilinear interpolant at every cell centre; this is also
/// the exact cell average of the gradient.
pub fn cell_gradient(field: &ScalarField) -> Vec<[f64; 3]> {
    let geo = field.geometry;
    let elem = ReferenceElement::new(geo.dim);
    let mut nodes = [0usize; 8];
    let mut local = [0.0; 8];
    (0..geo.num_cells())
        .map(|c| {
            geo.cell_nodes(c, &mut nodes);
            for b in 0..elem.nloc {
                local[b] = field.values[nodes[b]];
            }
            elem.gradient(&local[..elem.nloc], geo.spacing)
        })
        .collect()
}

pub fn mean_gradient(field: &ScalarField) -> Vec<f64> {
    let dim = field.geometry.dim;
    let grads = cell_gradient(field);
    let n = grads.len() as f64;
    (0..dim).map(|k| grads.iter().map(|g| g[k]).sum::<f64>() / n).collect()
}

/// Volume-normalized discrete Dirichlet energy `⨍ ½ ∇u·a∇u`.
pub fn energy_of(grid: &CellTensorGrid, field: &ScalarField) -> f64 {
    assemble_energy(grid).energy(&field.values)
}

/// `⨍ a∇u`.
pub fn flux_average(grid: &CellTensorGrid, field: &ScalarField) -> Vec<f64> {
    let dim = grid.dim();
    let grads = cell_gradient(field);
    let mut acc = [0.0; 3];
    for (t, g) in grid.cells().iter().zip(&grads) {
        let f = t.apply(dim, g);
        for k in 0..dim {
            acc[k] += f[k];
        }
    }
    let n = grads.len() as f64;
    acc[..dim].iter().map(|v| v / n).collect()
}

/// Exact `∫ u²` and `∫ |∇u|²` of the multilinear interpolant over the cells
/// selected by `include`.
pub fn cell_norms(field: &ScalarField, include: impl Fn(usize) -> bool) -> (f64, f64) {
    let geo = field.geometry;
    let elem = ReferenceElement::new(geo.dim);
    let nloc = elem.nloc;
    let mut mass = vec![0.0; nloc * nloc];
    let mut stiff = vec![0.0; nloc * nloc];
    elem.mass(geo.spacing, &mut mass);
    elem.stiffness(&SymTensor::scalar(geo.dim, 1.0), geo.spacing, &mut stiff);
    let mut nodes = [0usize; 8];
    let mut local = [0.0; 8];
    let (mut l2, mut h1) = (0.0, 0.0);
    for c in (0..geo.num_cells()).filter(|&c| include(c)) {
        geo.cell_nodes(c, &mut nodes);
        for b in 0..nloc {
            local[b] = field.values[nodes[b]];
        }
        for a in 0..nloc {
            for b in 0..nloc {
                let uu = local[a] * local[b];
                l2 += mass[a * nloc + b] * uu;
                h1 += stiff[a * nloc + b] * uu;
            }
        }
    }
    (l2, h1)
}
