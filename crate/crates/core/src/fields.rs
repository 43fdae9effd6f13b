//! Random coefficient fields and their sampling on lattice-aligned cubes.
//!
//! A [`CoefficientField`] is a description (dimension, generator, master seed);
//! values are produced on demand. Everything random about lattice cell
//! `z ∈ ℤ^d` is drawn from the substream `cell_seed(seed, kind, z)`, so a
//! value at `x` depends only on the cells within distance one of `x` (three
//! for line inclusions) and sampling is a pure function of `(seed, region)`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::{cell_seed, rng_from};
use crate::tensor::SymTensor;

/// Generator parameters. The serialized form is the `[field]` table of an
/// experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        diagonal: Vec<f64>,
    },
    Checkerboard {
        a_lo: f64,
        a_hi: f64,
        prob_hi: f64,
    },
    PoissonInclusion {
        intensity: f64,
        radius: f64,
        a_in: f64,
        a_out: f64,
    },
    FilteredWhiteNoise {
        filter_scale: f64,
        contrast: f64,
    },
    LineInclusion {
        intensity: f64,
        segment_length: f64,
        thickness: f64,
        a_line: f64,
        a_bg: f64,
        orientation_spread: f64,
    },
}

impl FieldSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            FieldSpec::Constant { .. } => "constant",
            FieldSpec::Checkerboard { .. } => "checkerboard",
            FieldSpec::PoissonInclusion { .. } => "poisson-inclusion",
            FieldSpec::FilteredWhiteNoise { .. } => "filtered-white-noise",
            FieldSpec::LineInclusion { .. } => "line-inclusion",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            FieldSpec::Constant { .. } => 0,
            FieldSpec::Checkerboard { .. } => 1,
            FieldSpec::PoissonInclusion { .. } => 2,
            FieldSpec::FilteredWhiteNoise { .. } => 3,
            FieldSpec::LineInclusion { .. } => 4,
        }
    }

    /// Largest lattice distance (in cells) at which two values can be correlated.
    pub fn dependence_range(&self) -> usize {
        match self {
            FieldSpec::LineInclusion { .. } => 3,
            _ => 1,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

fn lambda_of(values: &[f64]) -> f64 {
    values.iter().fold(1.0_f64, |acc, &v| acc.max(v).max(1.0 / v))
}

/// Seeded stationary random coefficient field with unit range of dependence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    dim: usize,
    spec: FieldSpec,
    seed: u64,
    lambda: f64,
}

impl CoefficientField {
    pub fn new(dim: usize, spec: FieldSpec, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {dim}"));
        }
        let lambda = match &spec {
            FieldSpec::Constant { diagonal } => {
                if diagonal.len() != dim {
                    return invalid(format!(
                        "constant field needs {dim} diagonal entries, got {}",
                        diagonal.len()
                    ));
                }
                for &v in diagonal {
                    positive("diagonal entry", v)?;
                }
                lambda_of(diagonal)
            }
            &FieldSpec::Checkerboard { a_lo, a_hi, prob_hi } => {
                positive("a_lo", a_lo)?;
                positive("a_hi", a_hi)?;
                if a_lo > a_hi {
                    return invalid(format!("a_lo ({a_lo}) must not exceed a_hi ({a_hi})"));
                }
                if !(0.0..=1.0).contains(&prob_hi) {
                    return invalid(format!("prob_hi must lie in [0, 1], got {prob_hi}"));
                }
                lambda_of(&[a_lo, a_hi])
            }
            &FieldSpec::PoissonInclusion { intensity, radius, a_in, a_out } => {
                if !(intensity >= 0.0 && intensity.is_finite()) {
                    return invalid(format!("intensity must be nonnegative, got {intensity}"));
                }
                positive("radius", radius)?;
                if radius > 0.5 {
                    return invalid(format!(
                        "inclusion radius {radius} exceeds 1/2 and breaks the unit range of dependence"
                    ));
                }
                positive("a_in", a_in)?;
                positive("a_out", a_out)?;
                lambda_of(&[a_in, a_out])
            }
            &FieldSpec::FilteredWhiteNoise { filter_scale, contrast } => {
                positive("filter_scale", filter_scale)?;
                if filter_scale > 0.5 {
                    return invalid(format!(
                        "filter_scale {filter_scale} exceeds 1/2 and breaks the unit range of dependence"
                    ));
                }
                if !(0.0..1.0).contains(&contrast) {
                    return invalid(format!("contrast must lie in [0, 1), got {contrast}"));
                }
                lambda_of(&[1.0 + contrast, 1.0 - contrast])
            }
            &FieldSpec::LineInclusion {
                intensity,
                segment_length,
                thickness,
                a_line,
                a_bg,
                orientation_spread,
            } => {
                if dim != 2 {
                    return invalid("line inclusions are only defined in dimension 2");
                }
                if !(intensity >= 0.0 && intensity.is_finite()) {
                    return invalid(format!("intensity must be nonnegative, got {intensity}"));
                }
                positive("segment_length", segment_length)?;
                positive("thickness", thickness)?;
                if thickness > 0.5 {
                    return invalid(format!("thickness must be at most 1/2, got {thickness}"));
                }
                positive("a_line", a_line)?;
                positive("a_bg", a_bg)?;
                if !orientation_spread.is_finite() || orientation_spread < 0.0 {
                    return invalid("orientation_spread must be a nonnegative angle");
                }
                lambda_of(&[a_line, a_bg])
            }
        };
        Ok(CoefficientField { dim, spec, seed, lambda })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Ellipticity constant: every value satisfies `Λ⁻¹ ≤ a ≤ Λ`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same law, different realization.
    pub fn with_seed(&self, seed: u64) -> Self {
        CoefficientField { seed, ..self.clone() }
    }

    /// Point evaluation. Regenerates the neighbouring lattice cells on every
    /// call; use [`FieldSampler`] or [`sample_on_grid`] for bulk sampling.
    pub fn value_at(&self, x: &[f64]) -> SymTensor {
        FieldSampler::new(self).value_at(x)
    }
}

pub fn gen_constant(dim: usize, c: f64) -> Result<CoefficientField> {
    CoefficientField::new(dim, FieldSpec::Constant { diagonal: vec![c; dim] }, 0)
}

pub fn gen_checkerboard(dim: usize, a_lo: f64, a_hi: f64, prob_hi: f64, seed: u64) -> Result<CoefficientField> {
    CoefficientField::new(dim, FieldSpec::Checkerboard { a_lo, a_hi, prob_hi }, seed)
}

pub fn gen_poisson_inclusions(
    dim: usize,
    intensity: f64,
    radius: f64,
    a_in: f64,
    a_out: f64,
    seed: u64,
) -> Result<CoefficientField> {
    CoefficientField::new(dim, FieldSpec::PoissonInclusion { intensity, radius, a_in, a_out }, seed)
}

pub fn gen_filtered_white_noise(dim: usize, filter_scale: f64, contrast: f64, seed: u64) -> Result<CoefficientField> {
    CoefficientField::new(dim, FieldSpec::FilteredWhiteNoise { filter_scale, contrast }, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn gen_line_inclusions(
    intensity: f64,
    segment_length: f64,
    thickness: f64,
    a_line: f64,
    a_bg: f64,
    orientation_spread: f64,
    seed: u64,
) -> Result<CoefficientField> {
    CoefficientField::new(
        2,
        FieldSpec::LineInclusion { intensity, segment_length, thickness, a_line, a_bg, orientation_spread },
        seed,
    )
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: [f64; 2],
    b: [f64; 2],
}

impl Segment {
    fn distance_to(&self, x: [f64; 2]) -> f64 {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 {
            (((x[0] - self.a[0]) * d[0] + (x[1] - self.a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let px = self.a[0] + t * d[0] - x[0];
        let py = self.a[1] + t * d[1] - x[1];
        (px * px + py * py).sqrt()
    }

    /// Liang–Barsky clip to an axis-aligned box.
    fn clip(self, lo: [f64; 2], hi: [f64; 2]) -> Option<Segment> {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
        for k in 0..2 {
            for (p, q) in [(-d[k], self.a[k] - lo[k]), (d[k], hi[k] - self.a[k])] {
                if p == 0.0 {
                    if q < 0.0 {
                        return None;
                    }
                } else {
                    let t = q / p;
                    if p < 0.0 {
                        t0 = t0.max(t);
                    } else {
                        t1 = t1.min(t);
                    }
                }
            }
        }
        (t0 <= t1).then(|| Segment {
            a: [self.a[0] + t0 * d[0], self.a[1] + t0 * d[1]],
            b: [self.a[0] + t1 * d[0], self.a[1] + t1 * d[1]],
        })
    }
}

enum CellData {
    Phase(bool),
    Points(Vec<[f64; 3]>),
    Noise(Vec<f64>),
    Segments(Vec<Segment>),
}

/// Sub-lattice resolution of the white noise: at least four points per unit
/// length and at least two per filter radius.
fn noise_subdivisions(filter_scale: f64) -> usize {
    ((2.0 / filter_scale).ceil() as usize).clamp(4, 64)
}

/// ∫ (1 − |y|²)⁴₊ dy over ℝ^d.
fn bump_square_integral(dim: usize) -> f64 {
    match dim {
        1 => 256.0 / 315.0,
        2 => PI / 5.0,
        _ => 4.0 * PI * 128.0 / 3465.0,
    }
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive Poisson mean");
    let n: f64 = p.sample(rng);
    n as usize
}

/// Memoizes per-lattice-cell random data while sampling a region.
pub struct FieldSampler<'a> {
    field: &'a CoefficientField,
    cache: HashMap<[i64; 3], CellData>,
}

impl<'a> FieldSampler<'a> {
    pub fn new(field: &'a CoefficientField) -> Self {
        FieldSampler { field, cache: HashMap::new() }
    }

    fn generate(field: &CoefficientField, z: [i64; 3]) -> CellData {
        let dim = field.dim;
        let mut rng = rng_from(cell_seed(field.seed, field.spec.tag(), z));
        let origin = [z[0] as f64, z[1] as f64, z[2] as f64];
        match field.spec {
            FieldSpec::Constant { .. } => CellData::Phase(false),
            FieldSpec::Checkerboard { prob_hi, .. } => CellData::Phase(rng.random::<f64>() < prob_hi),
            FieldSpec::PoissonInclusion { intensity, .. } => {
                let n = poisson_count(&mut rng, intensity);
                let pts = (0..n)
                    .map(|_| {
                        let mut p = [0.0; 3];
                        for k in 0..dim {
                            p[k] = origin[k] + rng.random::<f64>();
                        }
                        p
                    })
                    .collect();
                CellData::Points(pts)
            }
            FieldSpec::FilteredWhiteNoise { filter_scale, .. } => {
                let k = noise_subdivisions(filter_scale);
                let count = k.pow(dim as u32);
                CellData::Noise((0..count).map(|_| rng.sample(StandardNormal)).collect())
            }
            FieldSpec::LineInclusion { intensity, segment_length, orientation_spread, .. } => {
                let n = poisson_count(&mut rng, intensity);
                let lo = [origin[0] - 1.0, origin[1] - 1.0];
                let hi = [origin[0] + 2.0, origin[1] + 2.0];
                let segs = (0..n)
                    .filter_map(|_| {
                        let c = [origin[0] + rng.random::<f64>(), origin[1] + rng.random::<f64>()];
                        let theta = 0.5 * PI + orientation_spread * (2.0 * rng.random::<f64>() - 1.0);
                        let half = 0.5 * segment_length;
                        let (dx, dy) = (half * theta.cos(), half * theta.sin());
                        Segment { a: [c[0] - dx, c[1] - dy], b: [c[0] + dx, c[1] + dy] }.clip(lo, hi)
                    })
                    .collect();
                CellData::Segments(segs)
            }
        }
    }

    fn cell(&mut self, z: [i64; 3]) -> &CellData {
        let field = self.field;
        self.cache.entry(z).or_insert_with(|| Self::generate(field, z))
    }

    /// Lattice cells within one unit of the cell containing `x`.
    fn neighbours(dim: usize, x: &[f64]) -> Vec<[i64; 3]> {
        let mut base = [0i64; 3];
        for k in 0..dim {
            base[k] = x[k].floor() as i64;
        }
        let mut out = Vec::with_capacity(3usize.pow(dim as u32));
        let span = |k: usize| if k < dim { -1..=1 } else { 0..=0 };
        for d2 in span(2) {
            for d1 in span(1) {
                for d0 in span(0) {
                    out.push([base[0] + d0, base[1] + d1, base[2] + d2]);
                }
            }
        }
        out
    }

    pub fn value_at(&mut self, x: &[f64]) -> SymTensor {
        let dim = self.field.dim;
        match self.field.spec.clone() {
            FieldSpec::Constant { diagonal } => SymTensor::diagonal(&diagonal),
            FieldSpec::Checkerboard { a_lo, a_hi, .. } => {
                let mut z = [0i64; 3];
                for k in 0..dim {
                    z[k] = x[k].floor() as i64;
                }
                match self.cell(z) {
                    CellData::Phase(true) => SymTensor::scalar(dim, a_hi),
                    _ => SymTensor::scalar(dim, a_lo),
                }
            }
            FieldSpec::PoissonInclusion { radius, a_in, a_out, .. } => {
                let r2 = radius * radius;
                let inside = Self::neighbours(dim, x).into_iter().any(|z| match self.cell(z) {
                    CellData::Points(pts) => pts.iter().any(|p| {
                        (0..dim).map(|k| (p[k] - x[k]) * (p[k] - x[k])).sum::<f64>() < r2
                    }),
                    _ => false,
                });
                SymTensor::scalar(dim, if inside { a_in } else { a_out })
            }
            FieldSpec::FilteredWhiteNoise { filter_scale, contrast } => {
                let k = noise_subdivisions(filter_scale);
                let step = 1.0 / k as f64;
                let inv_r2 = 1.0 / (filter_scale * filter_scale);
                let norm = ((k as f64).powi(dim as i32)
                    * bump_square_integral(dim)
                    * filter_scale.powi(dim as i32))
                .sqrt();
                let mut w = 0.0;
                for z in Self::neighbours(dim, x) {
                    if let CellData::Noise(xi) = self.cell(z) {
                        for (j, &v) in xi.iter().enumerate() {
                            let mut rem = j;
                            let mut r2 = 0.0;
                            for axis in 0..dim {
                                let idx = rem % k;
                                rem /= k;
                                let y = z[axis] as f64 + (idx as f64 + 0.5) * step;
                                r2 += (x[axis] - y) * (x[axis] - y);
                            }
                            let t = 1.0 - r2 * inv_r2;
                            if t > 0.0 {
                                w += v * t * t;
                            }
                        }
                    }
                }
                SymTensor::scalar(dim, 1.0 + contrast * (w / norm).tanh())
            }
            FieldSpec::LineInclusion { thickness, a_line, a_bg, .. } => {
                let half = 0.5 * thickness;
                let p = [x[0], x[1]];
                let hit = Self::neighbours(dim, x).into_iter().any(|z| match self.cell(z) {
                    CellData::Segments(segs) => segs.iter().any(|s| s.distance_to(p) <= half),
                    _ => false,
                });
                SymTensor::scalar(dim, if hit { a_line } else { a_bg })
            }
        }
    }
}

/// Physical layout of a regular grid of `n^d` cubic cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dim: usize,
    /// Cells per axis.
    pub n: usize,
    /// Cell side length.
    pub spacing: f64,
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn nodes_per_axis(&self) -> usize {
        self.n + 1
    }

    pub fn num_nodes(&self) -> usize {
        (self.n + 1).pow(self.dim as u32)
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn side_length(&self) -> f64 {
        self.n as f64 * self.spacing
    }

    pub fn volume(&self) -> f64 {
        self.side_length().powi(self.dim as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    #[inline]
    pub fn node_index(&self, i: [usize; 3]) -> usize {
        let np = self.n + 1;
        i[0] + np * (i[1] + np * i[2])
    }

    #[inline]
    pub fn node_multi(&self, mut idx: usize) -> [usize; 3] {
        let np = self.n + 1;
        let mut out = [0; 3];
        for slot in out.iter_mut().take(self.dim) {
            *slot = idx % np;
            idx /= np;
        }
        out
    }

    #[inline]
    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        c[0] + self.n * (c[1] + self.n * c[2])
    }

    #[inline]
    pub fn cell_multi(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for slot in out.iter_mut().take(self.dim) {
            *slot = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn node_position(&self, idx: usize) -> [f64; 3] {
        let m = self.node_multi(idx);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.origin[k] + m[k] as f64 * self.spacing;
        }
        x
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.cell_multi(idx);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.origin[k] + (c[k] as f64 + 0.5) * self.spacing;
        }
        x
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        let m = self.node_multi(idx);
        (0..self.dim).any(|k| m[k] == 0 || m[k] == self.n)
    }

    /// Global node indices of the `2^d` corners of a cell; bit `k` of the local
    /// index selects the upper node along axis `k`.
    #[inline]
    pub fn cell_nodes(&self, cell: usize, out: &mut [usize; 8]) {
        let c = self.cell_multi(cell);
        let base = self.node_index(c);
        let np = self.n + 1;
        let strides = [1, np, np * np];
        for (local, slot) in out.iter_mut().enumerate().take(1 << self.dim) {
            let mut idx = base;
            for (k, stride) in strides.iter().enumerate().take(self.dim) {
                if local >> k & 1 == 1 {
                    idx += stride;
                }
            }
            *slot = idx;
        }
    }
}

/// Provenance recorded with sampled grids and written into export headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSource {
    pub seed: u64,
    pub kind: String,
}

/// A lattice-aligned cube `corner + (0, r)^d` cut into `r·m` cells per axis,
/// one constant symmetric tensor per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTensorGrid {
    side: usize,
    m: usize,
    corner: [i64; 3],
    geometry: Geometry,
    cells: Vec<SymTensor>,
    source: Option<GridSource>,
}

impl CellTensorGrid {
    /// Grid from explicit cell tensors (x-fastest order). Tensors must be
    /// symmetric and positive definite.
    pub fn from_cells(dim: usize, side: usize, m: usize, cells: Vec<SymTensor>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {dim}"));
        }
        if side == 0 || m == 0 {
            return invalid("grid side and cells-per-unit must be positive");
        }
        let n = side * m;
        if cells.len() != n.pow(dim as u32) {
            return invalid(format!("expected {} cells, got {}", n.pow(dim as u32), cells.len()));
        }
        for (i, t) in cells.iter().enumerate() {
            let (lo, _) = t.eigen_range(dim);
            if !t.is_symmetric(dim) || lo.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return invalid(format!("cell {i} tensor is not symmetric positive definite"));
            }
        }
        let geometry = Geometry { dim, n, spacing: 1.0 / m as f64, origin: [0.0; 3] };
        Ok(CellTensorGrid { side, m, corner: [0; 3], geometry, cells, source: None })
    }

    pub fn uniform(dim: usize, side: usize, m: usize, tensor: SymTensor) -> Result<Self> {
        let n = side * m;
        Self::from_cells(dim, side, m, vec![tensor; n.pow(dim as u32)])
    }

    /// Places the cube at lattice `corner` (physical origin at the corner) and
    /// records where its cells came from.
    pub fn with_placement(mut self, corner: &[i64], source: Option<GridSource>) -> Self {
        for (k, &c) in corner.iter().enumerate().take(self.dim()) {
            self.corner[k] = c;
            self.geometry.origin[k] = c as f64;
        }
        self.source = source;
        self
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    /// Side length `r` in lattice units.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cells_per_unit(&self) -> usize {
        self.m
    }

    pub fn corner(&self) -> [i64; 3] {
        self.corner
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn cells(&self) -> &[SymTensor] {
        &self.cells
    }

    pub fn source(&self) -> Option<&GridSource> {
        self.source.as_ref()
    }

    /// Smallest `Λ ≥ 1` with `Λ⁻¹ ≤ a ≤ Λ` on every cell.
    pub fn lambda(&self) -> f64 {
        let dim = self.dim();
        let mut lam = 1.0_f64;
        let mut last: Option<SymTensor> = None;
        for t in &self.cells {
            if last.as_ref() == Some(t) {
                continue;
            }
            let (lo, hi) = t.eigen_range(dim);
            lam = lam.max(hi).max(1.0 / lo);
            last = Some(*t);
        }
        lam
    }

    /// Same cells, physical geometry scaled so that one lattice unit has
    /// length `unit` and the cube starts at `origin`.
    pub fn rescaled(&self, unit: f64, origin: [f64; 3]) -> Self {
        let mut g = self.clone();
        g.geometry.spacing = unit / self.m as f64;
        g.geometry.origin = origin;
        g
    }

    pub fn arithmetic_mean(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut acc = DMatrix::zeros(dim, dim);
        for t in &self.cells {
            acc += t.to_matrix(dim);
        }
        acc / self.cells.len() as f64
    }

    /// `(mean of a⁻¹)⁻¹`.
    pub fn harmonic_mean(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut acc = DMatrix::zeros(dim, dim);
        for t in &self.cells {
            acc += t.inverse(dim).expect("cell tensors are positive definite").to_matrix(dim);
        }
        (acc / self.cells.len() as f64).try_inverse().expect("mean of inverses is positive definite")
    }

    /// The aligned sub-cube of side `sub_side` whose lower corner sits
    /// `offset` lattice units from this grid's corner, sharing its cells.
    pub fn subcube(&self, offset: [usize; 3], sub_side: usize) -> Result<Self> {
        let dim = self.dim();
        for k in 0..dim {
            if offset[k] + sub_side > self.side {
                return invalid("sub-cube does not fit inside the parent cube");
            }
        }
        if sub_side == 0 {
            return invalid("sub-cube side must be positive");
        }
        let n = sub_side * self.m;
        let mut cells = Vec::with_capacity(n.pow(dim as u32));
        let span = |k: usize| if k < dim { n } else { 1 };
        for c2 in 0..span(2) {
            for c1 in 0..span(1) {
                for c0 in 0..span(0) {
                    let mut idx = [c0, c1, c2];
                    for k in 0..dim {
                        idx[k] += offset[k] * self.m;
                    }
                    cells.push(self.cells[self.geometry.cell_index(idx)]);
                }
            }
        }
        let mut origin = self.geometry.origin;
        let mut corner = self.corner;
        for k in 0..dim {
            origin[k] += (offset[k] * self.m) as f64 * self.geometry.spacing;
            corner[k] += offset[k] as i64;
        }
        Ok(CellTensorGrid {
            side: sub_side,
            m: self.m,
            corner,
            geometry: Geometry { dim, n, spacing: self.geometry.spacing, origin },
            cells,
            source: self.source.clone(),
        })
    }

    /// The `2^d` children of side `r/2`, in x-fastest order.
    pub fn dyadic_children(&self) -> Result<Vec<Self>> {
        if self.side % 2 != 0 {
            return invalid(format!("cube side {} is not divisible by 2", self.side));
        }
        let half = self.side / 2;
        let dim = self.dim();
        (0..1usize << dim)
            .map(|b| {
                let mut off = [0; 3];
                for (k, o) in off.iter_mut().enumerate().take(dim) {
                    *o = (b >> k & 1) * half;
                }
                self.subcube(off, half)
            })
            .collect()
    }
}

/// A cube `corner + (0, side)^d` in lattice coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub corner: Vec<f64>,
    pub side: f64,
}

impl Cube {
    /// `(−r/2, r/2)^d`, lattice aligned for even `r`.
    pub fn centered(dim: usize, side: usize) -> Self {
        Cube { corner: vec![-(side as f64) / 2.0; dim], side: side as f64 }
    }

    pub fn at(corner: &[i64], side: usize) -> Self {
        Cube { corner: corner.iter().map(|&c| c as f64).collect(), side: side as f64 }
    }
}

/// Samples `field` at the cell centres of a grid with `m` cells per unit
/// length covering `cube`.
pub fn sample_on_grid(field: &CoefficientField, cube: &Cube, m: usize) -> Result<CellTensorGrid> {
    let dim = field.dim();
    if cube.corner.len() != dim {
        return invalid(format!("cube corner has {} coordinates, field has dimension {dim}", cube.corner.len()));
    }
    if m < 1 {
        return invalid("cells per unit must be positive");
    }
    if cube.side <= 0.0 || cube.side.fract() != 0.0 {
        return invalid(format!("cube side {} is not a positive integer", cube.side));
    }
    let mut corner = [0i64; 3];
    for k in 0..dim {
        let c = cube.corner[k];
        if c.fract() != 0.0 || !c.is_finite() {
            return invalid(format!("cube corner {:?} is not lattice aligned", cube.corner));
        }
        corner[k] = c as i64;
    }
    let side = cube.side as usize;
    let n = side * m;
    let mut origin = [0.0; 3];
    for k in 0..dim {
        origin[k] = corner[k] as f64;
    }
    let geometry = Geometry { dim, n, spacing: 1.0 / m as f64, origin };
    let mut sampler = FieldSampler::new(field);
    let cells = (0..geometry.num_cells())
        .map(|i| {
            let x = geometry.cell_center(i);
            sampler.value_at(&x[..dim])
        })
        .collect();
    Ok(CellTensorGrid {
        side,
        m,
        corner,
        geometry,
        cells,
        source: Some(GridSource { seed: field.seed(), kind: field.spec().kind_name().to_string() }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac_hi(grid: &CellTensorGrid, hi: f64) -> f64 {
        grid.cells().iter().filter(|t| t.get(0, 0) == hi).count() as f64 / grid.cells().len() as f64
    }

    #[test]
    fn degenerate_checkerboard_is_identity() {
        let f = gen_checkerboard(2, 1.0, 1.0, 0.3, 99).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 5), 2).unwrap();
        assert!(g.cells().iter().all(|t| *t == SymTensor::scalar(2, 1.0)));
    }

    #[test]
    fn checkerboard_fraction_concentrates() {
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 7).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 100), 1).unwrap();
        // direct count of the per-cell draws
        let direct = (0..100)
            .flat_map(|j| (0..100).map(move |i| (i, j)))
            .filter(|&(i, j)| f.value_at(&[i as f64 + 0.5, j as f64 + 0.5]).get(0, 0) == 4.0)
            .count() as f64
            / 1e4;
        let frac = frac_hi(&g, 4.0);
        assert_eq!(frac, direct);
        assert!((0.48..=0.52).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn checkerboard_subcells_share_unit_value() {
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 3).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[-2, 1], 4), 4).unwrap();
        let geo = g.geometry();
        for (i, t) in g.cells().iter().enumerate() {
            let c = geo.cell_multi(i);
            let z = [(-2 + (c[0] / 4) as i64) as f64 + 0.5, (1 + (c[1] / 4) as i64) as f64 + 0.5];
            assert_eq!(*t, f.value_at(&z));
        }
    }

    #[test]
    fn nonpositive_parameters_rejected() {
        assert!(gen_checkerboard(2, 0.0, 1.0, 0.5, 1).is_err());
        assert!(gen_checkerboard(2, -1.0, 1.0, 0.5, 1).is_err());
        assert!(gen_poisson_inclusions(2, 1.0, 0.6, 2.0, 1.0, 1).is_err());
        assert!(gen_filtered_white_noise(2, 0.5, 1.0, 1).is_err());
        assert!(gen_line_inclusions(1.0, 2.0, 0.2, 0.0, 1.0, 0.1, 1).is_err());
        assert!(gen_checkerboard(4, 1.0, 2.0, 0.5, 1).is_err());
    }

    #[test]
    fn empty_poisson_process_is_constant() {
        let f = gen_poisson_inclusions(2, 0.0, 0.3, 5.0, 2.0, 1).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 6), 4).unwrap();
        assert!(g.cells().iter().all(|t| *t == SymTensor::scalar(2, 2.0)));
        let f = gen_poisson_inclusions(2, 3.0, 0.3, 2.0, 2.0, 1).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 6), 4).unwrap();
        assert!(g.cells().iter().all(|t| *t == SymTensor::scalar(2, 2.0)));
    }

    #[test]
    fn poisson_covered_fraction_matches_void_probability() {
        let f = gen_poisson_inclusions(2, 1.0, 0.2, 2.0, 1.0, 11).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 50), 20).unwrap();
        let covered = frac_hi(&g, 2.0);
        let expected = 1.0 - (-PI * 0.04_f64).exp();
        assert!((covered - expected).abs() <= 0.02, "covered {covered} vs {expected}");
    }

    #[test]
    fn zero_contrast_white_noise_is_identity() {
        let f = gen_filtered_white_noise(2, 0.5, 0.0, 4).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 4), 4).unwrap();
        assert!(g.cells().iter().all(|t| *t == SymTensor::scalar(2, 1.0)));
    }

    #[test]
    fn white_noise_respects_small_contrast_bounds() {
        let f = gen_filtered_white_noise(2, 0.5, 0.1, 4).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 25), 4).unwrap();
        assert_eq!(g.cells().len(), 10_000);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in g.cells() {
            let (a, b) = t.eigen_range(2);
            lo = lo.min(a);
            hi = hi.max(b);
        }
        assert!(lo >= 0.9 && hi <= 1.1, "range [{lo}, {hi}]");
        assert!(hi - lo > 0.05, "field is not actually random");
    }

    #[test]
    fn white_noise_decorrelates_at_lag_two() {
        let f = gen_filtered_white_noise(2, 0.5, 0.5, 21).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 102), 1).unwrap();
        let n = 102;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for j in 0..100 {
            for i in 0..100 {
                xs.push(g.cells()[i + n * j].get(0, 0));
                ys.push(g.cells()[i + 2 + n * j].get(0, 0));
            }
        }
        let corr = correlation(&xs, &ys);
        assert!(corr.abs() < 3.0 / (xs.len() as f64).sqrt(), "corr {corr}");
    }

    pub(crate) fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn line_inclusions_degenerate_cases() {
        let f = gen_line_inclusions(0.0, 2.0, 0.2, 1e-5, 1.0, 0.1, 5).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 6), 4).unwrap();
        assert!(g.cells().iter().all(|t| *t == SymTensor::scalar(2, 1.0)));
        let f = gen_line_inclusions(2.0, 2.0, 0.2, 3.0, 3.0, 0.1, 5).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 6), 4).unwrap();
        assert!(g.cells().iter().all(|t| *t == SymTensor::scalar(2, 3.0)));
    }

    #[test]
    fn line_inclusions_are_mostly_vertical() {
        let f = gen_line_inclusions(0.3, 2.5, 0.25, 1e-5, 1.0, 0.15, 8).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[0, 0], 20), 8).unwrap();
        let n = g.geometry().n;
        let low = |i: usize, j: usize| g.cells()[i + n * j].get(0, 0) < 0.5;
        // insulating cells continue vertically far more often than horizontally
        let (mut vert, mut horiz) = (0, 0);
        for j in 0..n - 4 {
            for i in 0..n - 4 {
                if low(i, j) {
                    vert += low(i, j + 4) as usize;
                    horiz += low(i + 4, j) as usize;
                }
            }
        }
        assert!(vert > 2 * horiz, "vertical {vert} horizontal {horiz}");
    }

    #[test]
    fn misaligned_cube_rejected() {
        let f = gen_checkerboard(2, 1.0, 2.0, 0.5, 1).unwrap();
        let cube = Cube { corner: vec![0.5, 0.0], side: 4.0 };
        assert!(sample_on_grid(&f, &cube, 4).is_err());
        let cube = Cube { corner: vec![0.0, 0.0], side: 2.5 };
        assert!(sample_on_grid(&f, &cube, 4).is_err());
    }

    #[test]
    fn children_tile_the_parent() {
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 12).unwrap();
        let g = sample_on_grid(&f, &Cube::centered(2, 8), 2).unwrap();
        let kids = g.dyadic_children().unwrap();
        assert_eq!(kids.len(), 4);
        for kid in &kids {
            let direct = sample_on_grid(&f, &Cube::at(&kid.corner()[..2], 4), 2).unwrap();
            assert_eq!(kid.cells(), direct.cells());
            assert_eq!(kid.geometry().origin, direct.geometry().origin);
        }
    }
}
