//! Continuous diffusion generators `Z = a_ij d_i d_j + b_i d_i`, their
//! formal adjoints, equilibrium densities and the example catalog.
//!
//! Coefficient conventions: `a` is the full (symmetric, non-negative
//! definite) matrix multiplying `d_i d_j` summed over all ordered pairs, so
//! in 1-D `Zf = a f'' + b f'`. There is no factor one half, which is why the
//! particle oracle uses `sigma = sqrt(2a)`.

mod catalog;
mod document;
mod function;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use catalog::{catalog_example, CatalogExample, CATALOG_NAMES};
pub use document::{CoefficientDoc, DomainDoc, GeneratorDoc, GibbsDoc, MatrixDoc, VectorDoc};
pub use function::{fd_jet, Analytic1d, Cubed, ExprField, GridSampled, Jet, Sampled, ScalarFn};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{BoundaryCondition, Grid, ScalarField};
use crate::numeric;

/// Eigenvalue floor for non-negative definiteness of `a(x)`.
pub const ELLIPTICITY_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    FullLineTruncated,
    HalfLineTruncated,
    Box,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub bounds: Vec<(f64, f64)>,
    pub boundary: BoundaryCondition,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, bounds: Vec<(f64, f64)>, boundary: BoundaryCondition) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Spec("domain needs at least one axis".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Spec(format!("invalid interval [{lo}, {hi}]")));
            }
        }
        match kind {
            DomainKind::HalfLineTruncated if bounds[0].0 <= 0.0 => {
                return Err(Error::Spec("half-line truncation needs lo > 0".into()))
            }
            DomainKind::FullLineTruncated | DomainKind::HalfLineTruncated if bounds.len() != 1 => {
                return Err(Error::Spec("line domains are one-dimensional".into()))
            }
            _ => {}
        }
        Ok(DomainSpec { kind, bounds, boundary })
    }

    pub fn interval(kind: DomainKind, lo: f64, hi: f64) -> Result<Self> {
        Self::new(kind, vec![(lo, hi)], BoundaryCondition::NoFlux)
    }

    pub fn with_boundary(mut self, boundary: BoundaryCondition) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_interior(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len() && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v > lo && v < hi)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len() && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Uniform grid with `n` nodes per axis over the domain box.
    pub fn grid(&self, n: usize) -> Result<Grid> {
        let counts = vec![n; self.bounds.len()];
        Grid::uniform_box(&self.bounds, &counts, self.boundary)
    }
}

/// Piecewise-linear coefficient table on a 1-D node set.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1d {
    nodes: Vec<f64>,
    values: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Table1d {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() || nodes.len() < 3 {
            return Err(Error::Spec("coefficient table needs >= 3 matching nodes and values".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spec("coefficient table nodes must increase".into()));
        }
        let d1 = numeric::gradient_1d(&values, &nodes);
        let d2 = numeric::gradient_1d(&d1, &nodes);
        Ok(Table1d { nodes, values, d1, d2 })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn interp(&self, ys: &[f64], x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return ys[0];
        }
        if x >= self.nodes[n - 1] {
            return ys[n - 1];
        }
        let k = self.nodes.partition_point(|&t| t <= x) - 1;
        let t = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        ys[k] * (1.0 - t) + ys[k + 1] * t
    }
}

/// A coefficient field: an expression with symbolic derivatives or a 1-D
/// table differentiated by finite differences.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Expr(ExprField),
    Table(Table1d),
}

impl Coefficient {
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        Ok(Coefficient::Expr(ExprField::parse(text, dim)?))
    }

    pub fn constant(v: f64, dim: usize) -> Self {
        Coefficient::Expr(ExprField::new(Expr::Num(v), dim).expect("constants have no variables"))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Expr(e) => e.eval(x),
            Coefficient::Table(t) => t.interp(&t.values, x[0]),
        }
    }

    pub fn jet(&self, x: &[f64]) -> Jet {
        match self {
            Coefficient::Expr(e) => e.exact_jet(x),
            Coefficient::Table(t) => Jet {
                value: t.interp(&t.values, x[0]),
                gradient: vec![t.interp(&t.d1, x[0])],
                hessian: vec![vec![t.interp(&t.d2, x[0])]],
            },
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, Coefficient::Expr(_))
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            Coefficient::Expr(e) => e.expr().as_constant() == Some(0.0),
            Coefficient::Table(t) => t.values.iter().all(|&v| v == 0.0),
        }
    }
}

/// Gibbs factorization `rho0 = c exp(-beta H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gibbs {
    pub beta: f64,
    pub energy: ExprField,
}

impl Gibbs {
    pub fn new(beta: f64, energy: ExprField) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Spec(format!("beta must be positive, got {beta}")));
        }
        Ok(Gibbs { beta, energy })
    }

    /// `exp(-beta H(x))`, unnormalized.
    pub fn weight(&self, x: &[f64]) -> f64 {
        (-self.beta * self.energy.eval(x)).exp()
    }

    /// Jet of `c exp(-beta H)`.
    pub fn density_jet(&self, scale: f64, x: &[f64]) -> Jet {
        let h = self.energy.exact_jet(x);
        let n = x.len();
        let rho = scale * (-self.beta * h.value).exp();
        let gradient: Vec<f64> = h.gradient.iter().map(|g| -self.beta * rho * g).collect();
        let hessian = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        rho * (self.beta * self.beta * h.gradient[i] * h.gradient[j] - self.beta * h.hessian[i][j])
                    })
                    .collect()
            })
            .collect();
        Jet { value: rho, gradient, hessian }
    }
}

/// Continuous generator `Z f = a_ij d_i d_j f + b_i d_i f` on a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    dimension: usize,
    a: Vec<Vec<Coefficient>>,
    b: Vec<Coefficient>,
    domain: DomainSpec,
    gibbs: Option<Gibbs>,
    label: String,
}

impl GeneratorSpec {
    pub fn new(a: Vec<Vec<Coefficient>>, b: Vec<Coefficient>, domain: DomainSpec) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::Spec("dimension must be positive".into()));
        }
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(Error::Spec(format!("a must be {n}x{n}")));
        }
        if domain.dimension() != n {
            return Err(Error::Spec(format!(
                "domain has {} axes, coefficients have {n}",
                domain.dimension()
            )));
        }
        let tables = a.iter().flatten().chain(&b).any(|c| matches!(c, Coefficient::Table(_)));
        if tables && n != 1 {
            return Err(Error::Spec("coefficient tables are only supported in 1-D".into()));
        }
        Ok(GeneratorSpec { dimension: n, a, b, domain, gibbs: None, label: String::new() })
    }

    /// 1-D generator from expression text.
    pub fn one_d(a: &str, b: &str, domain: DomainSpec) -> Result<Self> {
        Self::new(vec![vec![Coefficient::parse(a, 1)?]], vec![Coefficient::parse(b, 1)?], domain)
    }

    pub fn with_gibbs(mut self, gibbs: Gibbs) -> Self {
        self.gibbs = Some(gibbs);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_domain(mut self, domain: DomainSpec) -> Result<Self> {
        if domain.dimension() != self.dimension {
            return Err(Error::Spec("domain dimension mismatch".into()));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn gibbs(&self) -> Option<&Gibbs> {
        self.gibbs.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn a_coefficient(&self, i: usize, j: usize) -> &Coefficient {
        &self.a[i][j]
    }

    pub fn b_coefficient(&self, i: usize) -> &Coefficient {
        &self.b[i]
    }

    pub fn is_analytic(&self) -> bool {
        self.a.iter().flatten().chain(&self.b).all(Coefficient::is_analytic)
    }

    /// Symmetrized diffusion matrix at `x`.
    pub fn diffusion(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dimension;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| 0.5 * (self.a[i][j].eval(x) + self.a[j][i].eval(x)))
                    .collect()
            })
            .collect()
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        self.b.iter().map(|c| c.eval(x)).collect()
    }

    /// Smallest eigenvalue of the symmetrized diffusion matrix.
    pub fn min_eigenvalue(&self, x: &[f64]) -> f64 {
        min_eigenvalue(&self.diffusion(x))
    }

    pub fn has_off_diagonal_diffusion(&self, x: &[f64]) -> bool {
        let a = self.diffusion(x);
        (0..self.dimension).any(|i| (0..self.dimension).any(|j| i != j && a[i][j].abs() > 1e-14))
    }

    /// Checks finiteness and non-negative definiteness of the coefficients
    /// at every point.
    pub fn check_admissible<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        for x in points {
            let a = self.diffusion(x);
            let b = self.drift(x);
            if a.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::Spec(format!("non-finite coefficient at {x:?}")));
            }
            let lam = min_eigenvalue(&a);
            if lam < ELLIPTICITY_FLOOR {
                return Err(Error::NonEllipticCoefficient { point: x.to_vec(), min_eigenvalue: lam });
            }
        }
        Ok(())
    }

    pub fn check_admissible_on(&self, grid: &Grid) -> Result<()> {
        let points = grid.points();
        self.check_admissible(points.iter().map(Vec::as_slice))
    }

    fn require_interior(&self, x: &[f64]) -> Result<()> {
        if !self.domain.is_interior(x) {
            return Err(Error::Domain { point: x.to_vec() });
        }
        Ok(())
    }
}

pub fn min_eigenvalue(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 1 {
        return a[0][0];
    }
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[i][j] + a[j][i]));
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// `Z f (x) = a_ij(x) d_i d_j f(x) + b_i(x) d_i f(x)`.
pub fn apply_generator(spec: &GeneratorSpec, f: &dyn ScalarFn, x: &[f64]) -> Result<f64> {
    spec.require_interior(x)?;
    let jet = f.jet(x)?;
    Ok(generator_from_jet(spec, &jet, x))
}

fn generator_from_jet(spec: &GeneratorSpec, jet: &Jet, x: &[f64]) -> f64 {
    let n = spec.dimension;
    let mut terms = Vec::with_capacity(n * n + n);
    for i in 0..n {
        for j in 0..n {
            terms.push(spec.a[i][j].eval(x) * jet.hessian[i][j]);
        }
        terms.push(spec.b[i].eval(x) * jet.gradient[i]);
    }
    numeric::sum(terms)
}

/// `Z' rho = d_i d_j (a_ij rho) - d_i (b_i rho)`, expanded by the product
/// rule on coefficient and density jets.
pub fn apply_formal_adjoint(spec: &GeneratorSpec, rho: &dyn ScalarFn, x: &[f64]) -> Result<f64> {
    spec.require_interior(x)?;
    let jet = rho.jet(x)?;
    Ok(adjoint_from_jet(spec, &jet, x))
}

fn adjoint_from_jet(spec: &GeneratorSpec, r: &Jet, x: &[f64]) -> f64 {
    let n = spec.dimension;
    let mut terms = Vec::with_capacity(4 * n * n + 2 * n);
    for i in 0..n {
        for j in 0..n {
            let a = spec.a[i][j].jet(x);
            terms.push(a.hessian[i][j] * r.value);
            terms.push(a.gradient[i] * r.gradient[j]);
            terms.push(a.gradient[j] * r.gradient[i]);
            terms.push(a.value * r.hessian[i][j]);
        }
        let b = spec.b[i].jet(x);
        terms.push(-b.gradient[i] * r.value);
        terms.push(-b.value * r.gradient[i]);
    }
    numeric::sum(terms)
}

/// Density on grid nodes, optionally carrying its Gibbs factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumDensity {
    grid: Arc<Grid>,
    values: Vec<f64>,
    gibbs: Option<Gibbs>,
    scale: f64,
    normalized: bool,
    total_mass: f64,
}

impl EquilibriumDensity {
    /// Samples `c exp(-beta H)` on the grid. With `normalize`, `c` is chosen
    /// so the trapezoidal mass over the grid is one. `total_mass` records the
    /// mass of the unnormalized density over the untruncated domain
    /// (`f64::INFINITY` when non-integrable).
    pub fn from_gibbs(grid: Arc<Grid>, gibbs: Gibbs, normalize: bool, total_mass: f64) -> Result<Self> {
        let raw: Vec<f64> = grid.points().iter().map(|x| gibbs.weight(x)).collect();
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Spec("Gibbs weight is not finite on the grid".into()));
        }
        let scale = if normalize {
            1.0 / numeric::dot(&raw, &grid.weights())
        } else {
            1.0
        };
        let values = raw.iter().map(|v| v * scale).collect();
        Ok(EquilibriumDensity { grid, values, gibbs: Some(gibbs), scale, normalized: normalize, total_mass })
    }

    /// Nodal density without analytic form (e.g. a discrete invariant).
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape("density does not match grid".into()));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Spec(format!("density is negative or non-finite at node {i}")));
        }
        let mass = numeric::dot(&values, &grid.weights());
        let normalized = (mass - 1.0).abs() <= 1e-10;
        Ok(EquilibriumDensity { grid, values, gibbs: None, scale: 1.0, normalized, total_mass: mass })
    }

    pub fn from_field(field: &ScalarField) -> Result<Self> {
        Self::from_values(field.grid().clone(), field.values().to_vec())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gibbs(&self) -> Option<&Gibbs> {
        self.gibbs.as_ref()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_normalizable(&self) -> bool {
        self.total_mass.is_finite()
    }

    pub fn field(&self) -> ScalarField {
        ScalarField::new(self.grid.clone(), self.values.clone()).expect("lengths agree")
    }

    /// Mass over the grid.
    pub fn grid_mass(&self) -> f64 {
        numeric::dot(&self.values, &self.grid.weights())
    }

    /// Largest relative nodewise deviation from `c exp(-beta H)`.
    pub fn gibbs_mismatch(&self) -> Option<f64> {
        let g = self.gibbs.as_ref()?;
        let pts = self.grid.points();
        Some(
            self.values
                .iter()
                .zip(&pts)
                .map(|(v, x)| {
                    let exact = self.scale * g.weight(x);
                    (v - exact).abs() / exact.abs().max(f64::MIN_POSITIVE)
                })
                .fold(0.0, f64::max),
        )
    }
}

/// Max over interior nodes of `|Z' rho0|`.
///
/// With a Gibbs form and analytic coefficients the adjoint is evaluated
/// exactly; otherwise centered second-order differences of the products
/// `a_ij rho0` and `b_i rho0` on the grid are used.
pub fn residual_invariant(spec: &GeneratorSpec, rho0: &EquilibriumDensity) -> f64 {
    match rho0.gibbs() {
        Some(g) if spec.is_analytic() => {
            let grid = rho0.grid();
            (0..grid.len())
                .filter(|&i| !grid.is_boundary(i))
                .map(|i| {
                    let x = grid.point(i);
                    adjoint_from_jet(spec, &g.density_jet(rho0.scale(), &x), &x).abs()
                })
                .fold(0.0, f64::max)
        }
        _ => residual_invariant_fd(spec, rho0),
    }
}

/// Grid finite-difference residual, regardless of analytic data.
pub fn residual_invariant_fd(spec: &GeneratorSpec, rho0: &EquilibriumDensity) -> f64 {
    adjoint_on_grid(spec, rho0.grid(), rho0.values())
        .into_iter()
        .flatten()
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// `Z' u` at interior nodes by differences of products; `None` at boundary
/// nodes.
pub fn adjoint_on_grid(spec: &GeneratorSpec, grid: &Grid, u: &[f64]) -> Vec<Option<f64>> {
    let n = spec.dimension;
    let pts = grid.points();
    let prod = |c: &Coefficient| -> Vec<f64> { pts.iter().zip(u).map(|(x, v)| c.eval(x) * v).collect() };
    let a_prod: Vec<Vec<Vec<f64>>> = (0..n).map(|i| (0..n).map(|j| prod(&spec.a[i][j])).collect()).collect();
    let b_prod: Vec<Vec<f64>> = (0..n).map(|i| prod(&spec.b[i])).collect();
    (0..grid.len())
        .map(|flat| {
            if grid.is_boundary(flat) {
                return None;
            }
            let idx = grid.multi_index(flat);
            let mut terms = Vec::new();
            for i in 0..n {
                let (hl, hr) = grid.spacings(i, idx[i]);
                let (hl, hr) = (hl?, hr?);
                let s = grid.stride(i);
                let (m, p) = (flat - s, flat + s);
                let f = &a_prod[i][i];
                terms.push(2.0 * (f[p] * hl - f[flat] * (hl + hr) + f[m] * hr) / (hl * hr * (hl + hr)));
                let g = &b_prod[i];
                terms.push(-(g[p] - g[m]) / (hl + hr));
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let (kl, kr) = grid.spacings(j, idx[j]);
                    let (kl, kr) = (kl?, kr?);
                    let t = grid.stride(j);
                    let f = &a_prod[i][j];
                    let corner = |si: isize, sj: isize| {
                        let k = flat as isize + si * s as isize + sj * t as isize;
                        f[k as usize]
                    };
                    terms.push(
                        (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / ((hl + hr) * (kl + kr)),
                    );
                }
            }
            Some(numeric::sum(terms))
        })
        .collect()
}

/// `H_i = 2 (beta a_ij d_j H - d_j a_ij + b_i)` at every node, from the
/// Gibbs data of `rho0`.
pub fn compute_hi(spec: &GeneratorSpec, rho0: &EquilibriumDensity) -> Result<Vec<ScalarField>> {
    let gibbs = rho0.gibbs().ok_or(Error::MissingGibbsForm)?;
    let grid = rho0.grid();
    let n = spec.dimension;
    let pts = grid.points();
    let mut comps = vec![Vec::with_capacity(pts.len()); n];
    for x in &pts {
        let dh = gibbs.energy.exact_jet(x).gradient;
        for (i, comp) in comps.iter_mut().enumerate() {
            comp.push(hi_component(spec, x, i, |j| gibbs.beta * dh[j]));
        }
    }
    comps
        .into_iter()
        .map(|c| ScalarField::new(grid.clone(), c))
        .collect()
}

fn hi_component(spec: &GeneratorSpec, x: &[f64], i: usize, beta_dh: impl Fn(usize) -> f64) -> f64 {
    let n = spec.dimension;
    let mut terms = Vec::with_capacity(2 * n + 1);
    for j in 0..n {
        let a = spec.a[i][j].jet(x);
        terms.push(a.value * beta_dh(j));
        terms.push(-a.gradient[j]);
    }
    terms.push(spec.b[i].eval(x));
    2.0 * numeric::sum(terms)
}

/// `H_i` recovered from nodal values through `beta H := -ln(rho0 / max rho0)`,
/// differentiated on the grid. Nodes where `rho0 = 0` get NaN.
pub fn recover_hi(spec: &GeneratorSpec, rho0: &EquilibriumDensity) -> Result<Vec<ScalarField>> {
    let grid = rho0.grid();
    let max = rho0.values().iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Spec("density vanishes identically".into()));
    }
    let beta_h: Vec<f64> = rho0.values().iter().map(|v| -(v / max).ln()).collect();
    let grads = grid_gradient(grid, &beta_h);
    let pts = grid.points();
    let n = spec.dimension;
    (0..n)
        .map(|i| {
            let vals = pts
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    if rho0.values()[k] > 0.0 {
                        hi_component(spec, x, i, |j| grads[j][k])
                    } else {
                        f64::NAN
                    }
                })
                .collect();
            ScalarField::new(grid.clone(), vals)
        })
        .collect()
}

/// `compute_hi` when Gibbs data is present, `recover_hi` otherwise.
pub fn hi_field(spec: &GeneratorSpec, rho0: &EquilibriumDensity) -> Result<Vec<ScalarField>> {
    match rho0.gibbs() {
        Some(_) => compute_hi(spec, rho0),
        None => recover_hi(spec, rho0),
    }
}

/// Per-axis nodal gradient of grid values.
pub fn grid_gradient(grid: &Grid, values: &[f64]) -> Vec<Vec<f64>> {
    let shape = grid.shape();
    (0..grid.dimension())
        .map(|d| {
            let stride = grid.stride(d);
            let len = shape[d];
            let mut out = vec![0.0; values.len()];
            for flat in 0..values.len() {
                let idx = grid.multi_index(flat);
                if idx[d] != 0 {
                    continue;
                }
                let line: Vec<f64> = (0..len).map(|k| values[flat + k * stride]).collect();
                let g = numeric::gradient_1d(&line, grid.axis(d));
                for k in 0..len {
                    out[flat + k * stride] = g[k];
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> GeneratorSpec {
        GeneratorSpec::one_d(
            "1",
            "-x",
            DomainSpec::interval(DomainKind::FullLineTruncated, -8.0, 8.0).unwrap(),
        )
        .unwrap()
    }

    fn a2a() -> GeneratorSpec {
        catalog_example("appendix2a", 1.0).unwrap().spec
    }

    #[test]
    fn generator_on_linear_observable() {
        let f = ExprField::parse("x", 1).unwrap();
        assert_eq!(apply_generator(&a2a(), &f, &[1.0]).unwrap(), -1.0);
    }

    #[test]
    fn generator_annihilates_constants() {
        let one = ExprField::parse("1", 1).unwrap();
        for spec in [a2a(), ou()] {
            for x in [-2.0, 0.3, 4.0] {
                assert_eq!(apply_generator(&spec, &one, &[x]).unwrap(), 0.0);
            }
        }
        let sampled = Sampled(|_: &[f64]| 1.0);
        assert_eq!(apply_generator(&a2a(), &sampled, &[0.7]).unwrap(), 0.0);
    }

    #[test]
    fn ou_on_square() {
        let f = ExprField::parse("x^2", 1).unwrap();
        assert_eq!(apply_generator(&ou(), &f, &[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn generator_rejects_points_outside() {
        let f = ExprField::parse("x", 1).unwrap();
        assert!(matches!(apply_generator(&ou(), &f, &[9.0]), Err(Error::Domain { .. })));
        assert!(matches!(apply_generator(&ou(), &f, &[8.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn generator_propagates_missing_smoothness() {
        let grid = Arc::new(Grid::uniform(-8.0, 8.0, 17, Default::default()).unwrap());
        let vals = grid.axis(0).iter().map(|x| x * x).collect();
        let f = GridSampled::new(grid, vals).unwrap();
        assert_eq!(apply_generator(&ou(), &f, &[0.0]).unwrap(), 2.0);
        assert!(matches!(
            apply_generator(&ou(), &f, &[-7.0]),
            Err(Error::InsufficientSmoothness(_))
        ));
    }

    #[test]
    fn adjoint_kills_appendix2a_equilibrium() {
        let rho = ExprField::parse("(1 + x^2)^(-1.5)", 1).unwrap();
        for i in 0..=40 {
            let x = -9.5 + 0.475 * i as f64;
            let v = apply_formal_adjoint(&a2a(), &rho, &[x]).unwrap();
            assert!(v.abs() <= 1e-10, "x={x}: {v}");
        }
    }

    #[test]
    fn adjoint_kills_gaussian_under_ou() {
        let rho = ExprField::parse("exp(-x^2/2)", 1).unwrap();
        for x in [-3.0, -0.2, 0.0, 1.7, 5.0] {
            assert!(apply_formal_adjoint(&ou(), &rho, &[x]).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_of_pure_diffusion_is_laplacian() {
        let spec = catalog_example("pure-diffusion", 0.0).unwrap().spec;
        let rho = ExprField::parse("x^2", 1).unwrap();
        for x in [-1.0, 0.5, 3.0] {
            assert_eq!(apply_formal_adjoint(&spec, &rho, &[x]).unwrap(), 2.0);
        }
    }

    #[test]
    fn residuals() {
        let ex = catalog_example("appendix2b", 1.0).unwrap();
        let spec = ex.spec.clone().with_domain(DomainSpec::interval(DomainKind::HalfLineTruncated, 0.05, 20.0).unwrap()).unwrap();
        let grid = Arc::new(spec.domain().grid(400).unwrap());
        let rho = ex.equilibrium_on(grid).unwrap();
        assert!(residual_invariant(&spec, &rho) <= 1e-6);

        let spec = ou();
        let grid = Arc::new(spec.domain().grid(401).unwrap());
        let ex = catalog_example("ornstein-uhlenbeck", 0.0).unwrap();
        let rho = ex.equilibrium_on(grid.clone()).unwrap();
        assert!(residual_invariant(&spec, &rho) <= 1e-8);

        let ones = EquilibriumDensity::from_values(grid.clone(), vec![1.0; grid.len()]).unwrap();
        let r = residual_invariant(&spec, &ones);
        assert!((r - 1.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn fd_residual_is_second_order() {
        for name in ["ornstein-uhlenbeck", "appendix2a"] {
            let ex = catalog_example(name, 1.0).unwrap();
            let spec = ex.spec.clone().with_domain(DomainSpec::interval(DomainKind::FullLineTruncated, -6.0, 6.0).unwrap()).unwrap();
            let res: Vec<(f64, f64)> = [121usize, 241, 481]
                .iter()
                .map(|&n| {
                    let grid = Arc::new(spec.domain().grid(n).unwrap());
                    let h = grid.min_spacing();
                    let rho = ex.equilibrium_on(grid).unwrap();
                    (h, residual_invariant_fd(&spec, &rho))
                })
                .collect();
            // fitted constant C = r / h^2 must not grow under refinement
            let cs: Vec<f64> = res.iter().map(|(h, r)| r / (h * h)).collect();
            for w in cs.windows(2) {
                assert!(w[1] <= w[0] * 1.1, "{name}: {cs:?}");
            }
            let order = (res[1].1 / res[2].1).ln() / 2f64.ln();
            assert!(order > 1.8, "{name}: order {order}");
        }
    }

    #[test]
    fn hi_vanishes_on_catalog_pair() {
        for (name, lo, hi) in [("appendix2a", -10.0, 10.0), ("appendix2b", 0.05, 20.0)] {
            let ex = catalog_example(name, 1.0).unwrap();
            let kind = if lo > 0.0 { DomainKind::HalfLineTruncated } else { DomainKind::FullLineTruncated };
            let spec = ex.spec.clone().with_domain(DomainSpec::interval(kind, lo, hi).unwrap()).unwrap();
            let grid = Arc::new(spec.domain().grid(101).unwrap());
            let rho = ex.equilibrium_on(grid).unwrap();
            let h = compute_hi(&spec, &rho).unwrap();
            assert!(h[0].sup_norm() < 1e-12, "{name}: {}", h[0].sup_norm());
        }
    }

    #[test]
    fn hi_vanishes_for_flat_pure_diffusion() {
        let ex = catalog_example("pure-diffusion", 0.0).unwrap();
        let grid = Arc::new(ex.spec.domain().grid(21).unwrap());
        let rho = ex.equilibrium_on(grid).unwrap();
        assert_eq!(compute_hi(&ex.spec, &rho).unwrap()[0].sup_norm(), 0.0);
    }

    #[test]
    fn hi_requires_gibbs() {
        let grid = Arc::new(Grid::uniform(-1.0, 1.0, 5, Default::default()).unwrap());
        let rho = EquilibriumDensity::from_values(grid, vec![1.0; 5]).unwrap();
        assert_eq!(compute_hi(&ou(), &rho), Err(Error::MissingGibbsForm));
    }

    #[test]
    fn recovered_hi_close_to_analytic() {
        let ex = catalog_example("appendix2a", 1.0).unwrap();
        let spec = ex.spec.clone().with_domain(DomainSpec::interval(DomainKind::FullLineTruncated, -5.0, 5.0).unwrap()).unwrap();
        let grid = Arc::new(spec.domain().grid(2001).unwrap());
        let rho = ex.equilibrium_on(grid).unwrap();
        let plain = EquilibriumDensity::from_values(rho.grid().clone(), rho.values().to_vec()).unwrap();
        let h = recover_hi(&spec, &plain).unwrap();
        assert!(h[0].sup_norm() < 1e-3, "{}", h[0].sup_norm());
    }

    #[test]
    fn ellipticity_check() {
        let bad = GeneratorSpec::one_d("-1", "0", DomainSpec::interval(DomainKind::Box, 0.0, 1.0).unwrap()).unwrap();
        let grid = bad.domain().grid(5).unwrap();
        assert!(matches!(bad.check_admissible_on(&grid), Err(Error::NonEllipticCoefficient { .. })));
        assert!(ou().check_admissible_on(&ou().domain().grid(9).unwrap()).is_ok());
    }

    #[test]
    fn two_dimensional_eigen_floor() {
        let dom = DomainSpec::new(DomainKind::Box, vec![(-1.0, 1.0), (-1.0, 1.0)], BoundaryCondition::NoFlux).unwrap();
        let a = vec![
            vec![Coefficient::parse("1", 2).unwrap(), Coefficient::parse("2", 2).unwrap()],
            vec![Coefficient::parse("0", 2).unwrap(), Coefficient::parse("1", 2).unwrap()],
        ];
        let b = vec![Coefficient::constant(0.0, 2), Coefficient::constant(0.0, 2)];
        let spec = GeneratorSpec::new(a, b, dom).unwrap();
        // symmetrized off-diagonal is 1, eigenvalues 0 and 2
        assert!(spec.min_eigenvalue(&[0.0, 0.0]).abs() < 1e-12);
        assert!(spec.check_admissible(std::iter::once(&[0.0, 0.0][..])).is_ok());
    }
}
