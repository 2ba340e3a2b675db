//! Invariant densities and H-functionals.
//!
//! For a stochastic semigroup with invariant masses `p_i` and any convex `h`,
//! `H = sum_i h(m_i / p_i) p_i` never increases along `m_t = m_0 exp(tQ)`.
//! On a grid with quadrature weights `w_i` this is
//! `H = sum_i h(nu_i / pi_i) pi_i w_i` with densities `nu = m / w`,
//! `pi = p / w`, which is what [`h_function`] evaluates.

use std::path::Path;
use std::str::FromStr;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::discretize::DiscreteGenerator;
use crate::error::{Error, Result};
use crate::generator::{grid_gradient, hi_field, EquilibriumDensity, GeneratorSpec};
use crate::grid::ScalarField;
use crate::numeric::{self, Band};
use crate::semigroup::{self, fmt17, EvolutionResult};

/// Null space of `Q^T`, one density per closed communicating class.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSolution {
    /// Densities normalized to unit grid mass, ordered by their lowest node.
    pub basis: Vec<ScalarField>,
    pub unique: bool,
}

impl InvariantSolution {
    pub fn density(&self) -> &ScalarField {
        &self.basis[0]
    }

    pub fn equilibrium(&self) -> Result<EquilibriumDensity> {
        EquilibriumDensity::from_field(self.density())
    }
}

/// Solves `Q^T p = 0` for the invariant masses of each closed class.
///
/// Closed classes are the strongly connected components of the transition
/// graph with no outgoing edge. Each is solved by GTH elimination, which
/// keeps relative accuracy in the far tails.
pub fn solve_invariant(q: &DiscreteGenerator) -> Result<InvariantSolution> {
    let grid = q.grid();
    if !grid.is_lattice() && grid.boundary() == crate::grid::BoundaryCondition::Absorbing {
        return Err(Error::NoInvariantDensity);
    }
    let n = q.len();
    let m = q.matrix();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, m.nnz());
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for (j, v) in m.row(i) {
            if j != i && v > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut class_of = vec![usize::MAX; n];
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    for (k, c) in classes.iter().enumerate() {
        for &i in c {
            class_of[i] = k;
        }
    }
    let closed: Vec<bool> = classes
        .iter()
        .enumerate()
        .map(|(k, c)| c.iter().all(|&i| m.row(i).all(|(j, v)| j == i || v <= 0.0 || class_of[j] == k)))
        .collect();
    let mut closed_classes: Vec<Vec<usize>> = classes
        .drain(..)
        .zip(closed)
        .filter_map(|(c, keep)| keep.then_some(c))
        .collect();
    closed_classes.sort_by_key(|c| c[0]);
    let w = grid.weights();
    let basis = closed_classes
        .iter()
        .map(|class| {
            let mass = class_stationary(q, class)?;
            let mut values = vec![0.0; n];
            for (&i, p) in class.iter().zip(&mass) {
                values[i] = p / w[i];
            }
            ScalarField::new(grid.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    if basis.is_empty() {
        return Err(Error::NoInvariantDensity);
    }
    Ok(InvariantSolution { unique: basis.len() == 1, basis })
}

fn class_stationary(q: &DiscreteGenerator, class: &[usize]) -> Result<Vec<f64>> {
    if class.len() == 1 {
        return Ok(vec![1.0]);
    }
    let local = |i: usize| class.binary_search(&i).ok();
    let mut bw = 0;
    let mut entries = Vec::new();
    for (li, &i) in class.iter().enumerate() {
        for (j, v) in q.matrix().row(i) {
            if let Some(lj) = local(j) {
                if lj != li && v != 0.0 {
                    bw = bw.max(li.abs_diff(lj));
                    entries.push((li, lj, v));
                }
            }
        }
    }
    let mut band = Band::zeros(class.len(), bw, bw);
    for (i, j, v) in entries {
        band.set(i, j, v);
    }
    numeric::gth_stationary(band).ok_or(Error::NoInvariantDensity)
}

/// `max_j |sum_i p_i Q_ij|` for the masses `p = pi w`.
pub fn invariant_residual(q: &DiscreteGenerator, pi: &ScalarField) -> f64 {
    let w = q.grid().weights();
    let mass: Vec<f64> = pi.values().iter().zip(&w).map(|(p, w)| p * w).collect();
    numeric::sup_norm(&q.matrix().transpose().mul_vec(&mass))
}

/// Convex `h` on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HKind {
    /// `x ln x`, with `0 ln 0 = 0`.
    Xlogx,
    /// `x^2`.
    Square,
    /// `|x - 1|`.
    AbsDev,
    /// `(x - 1)^2`.
    SquareDev,
    /// Piecewise-linear through `(nodes, values)`, extended linearly.
    CustomTable { nodes: Vec<f64>, values: Vec<f64> },
}

/// `scale * h(x) + shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HFunctional {
    pub kind: HKind,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub shift: f64,
}

fn one() -> f64 {
    1.0
}

/// Number of probe points in [`HFunctional::convexity_defect`].
pub const CONVEXITY_PROBES: usize = 1000;

impl HFunctional {
    pub fn new(kind: HKind) -> Result<Self> {
        if let HKind::CustomTable { nodes, values } = &kind {
            if nodes.len() < 2 || nodes.len() != values.len() {
                return Err(Error::PreconditionViolated("h table needs at least two matching nodes".into()));
            }
            if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes[0] < 0.0 {
                return Err(Error::PreconditionViolated("h table nodes must be increasing and non-negative".into()));
            }
        }
        let h = HFunctional { kind, scale: 1.0, shift: 0.0 };
        let defect = h.convexity_defect();
        if defect < -1e-12 {
            return Err(Error::PreconditionViolated(format!("h is not convex (second difference {defect:e})")));
        }
        Ok(h)
    }

    pub fn xlogx() -> Self {
        HFunctional { kind: HKind::Xlogx, scale: 1.0, shift: 0.0 }
    }

    pub fn square() -> Self {
        HFunctional { kind: HKind::Square, scale: 1.0, shift: 0.0 }
    }

    pub fn abs_dev() -> Self {
        HFunctional { kind: HKind::AbsDev, scale: 1.0, shift: 0.0 }
    }

    pub fn square_dev() -> Self {
        HFunctional { kind: HKind::SquareDev, scale: 1.0, shift: 0.0 }
    }

    pub fn custom_table(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(HKind::CustomTable { nodes, values })
    }

    pub fn scaled(mut self, scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0) || !shift.is_finite() {
            return Err(Error::PreconditionViolated(format!("h scale must be positive, got {scale}")));
        }
        self.scale *= scale;
        self.shift = self.shift * scale + shift;
        Ok(self)
    }

    /// Shifted so that `h(0) = 0`.
    pub fn normalized_at_zero(mut self) -> Self {
        self.shift -= self.value(0.0);
        self
    }

    pub fn name(&self) -> String {
        let base = match &self.kind {
            HKind::Xlogx => "xlogx",
            HKind::Square => "square",
            HKind::AbsDev => "abs-dev",
            HKind::SquareDev => "square-dev",
            HKind::CustomTable { .. } => "custom-table",
        };
        if self.scale == 1.0 && self.shift == 0.0 {
            base.to_string()
        } else {
            format!("{}*{base}{:+}", self.scale, self.shift)
        }
    }

    fn raw(&self, x: f64) -> f64 {
        match &self.kind {
            HKind::Xlogx => {
                if x > 0.0 {
                    x * x.ln()
                } else {
                    0.0
                }
            }
            HKind::Square => x * x,
            HKind::AbsDev => (x - 1.0).abs(),
            HKind::SquareDev => (x - 1.0) * (x - 1.0),
            HKind::CustomTable { nodes, values } => {
                let k = segment(nodes, x);
                let s = (values[k + 1] - values[k]) / (nodes[k + 1] - nodes[k]);
                values[k] + s * (x - nodes[k])
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.scale * self.raw(x) + self.shift
    }

    /// `h'`; one-sided from the right at kinks.
    pub fn derivative(&self, x: f64) -> f64 {
        self.scale
            * match &self.kind {
                HKind::Xlogx => {
                    if x > 0.0 {
                        x.ln() + 1.0
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                HKind::Square => 2.0 * x,
                HKind::AbsDev => {
                    if x >= 1.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                HKind::SquareDev => 2.0 * (x - 1.0),
                HKind::CustomTable { nodes, values } => {
                    let k = segment(nodes, x);
                    (values[k + 1] - values[k]) / (nodes[k + 1] - nodes[k])
                }
            }
    }

    pub fn is_twice_differentiable(&self) -> bool {
        matches!(self.kind, HKind::Xlogx | HKind::Square | HKind::SquareDev)
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        let v = match &self.kind {
            HKind::Xlogx => 1.0 / x,
            HKind::Square | HKind::SquareDev => 2.0,
            _ => return Err(Error::NonSmoothH(self.name())),
        };
        Ok(self.scale * v)
    }

    /// Smallest scaled second difference of `h` over [`CONVEXITY_PROBES`]
    /// points spanning `[0, 4]` (or the table range).
    pub fn convexity_defect(&self) -> f64 {
        let hi = match &self.kind {
            HKind::CustomTable { nodes, .. } => nodes[nodes.len() - 1] * 1.25,
            _ => 4.0,
        };
        let h = hi / (CONVEXITY_PROBES - 1) as f64;
        (1..CONVEXITY_PROBES - 1)
            .map(|k| {
                let x = k as f64 * h;
                let (l, c, r) = (self.value(x - h), self.value(x), self.value(x + h));
                let d = l - 2.0 * c + r;
                d / (l.abs() + 2.0 * c.abs() + r.abs()).max(1.0)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment(nodes: &[f64], x: f64) -> usize {
    nodes.partition_point(|v| *v <= x).saturating_sub(1).min(nodes.len() - 2)
}

impl FromStr for HFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xlogx" => Ok(Self::xlogx()),
            "square" => Ok(Self::square()),
            "abs-dev" => Ok(Self::abs_dev()),
            "square-dev" => Ok(Self::square_dev()),
            other => Err(Error::Spec(format!("unknown h `{other}`"))),
        }
    }
}

/// `sum_i h(nu_i / rho_i) rho_i w_i`. Nodes with `rho_i = nu_i = 0`
/// contribute nothing.
pub fn h_function(rho: &ScalarField, nu: &ScalarField, h: &HFunctional) -> Result<f64> {
    if rho.len() != nu.len() {
        return Err(Error::Shape("reference and density differ in length".into()));
    }
    let w = rho.grid().weights();
    let mut terms = Vec::with_capacity(rho.len());
    for (i, ((r, v), w)) in rho.values().iter().zip(nu.values()).zip(&w).enumerate() {
        if *r <= 0.0 {
            if *v > 0.0 {
                return Err(Error::SupportViolation { node: i });
            }
            continue;
        }
        terms.push(h.value(v / r) * r * w);
    }
    Ok(numeric::sum(terms))
}

/// `H(t_k)` for one `h`, with optional dissipation and boundary diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct HCurve {
    pub h: HFunctional,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub dissipation: Option<Vec<f64>>,
    pub boundary: Option<Vec<f64>>,
    /// Running `max_{j <= k} (H(t_j) - H(t_{j-1}))^+`.
    pub max_increase_so_far: Vec<f64>,
}

impl HCurve {
    pub fn from_evolution(rho: &ScalarField, evo: &EvolutionResult, h: &HFunctional) -> Result<Self> {
        let values = evo.fields.iter().map(|nu| h_function(rho, nu, h)).collect::<Result<Vec<_>>>()?;
        let mut running = 0.0f64;
        let max_increase_so_far = std::iter::once(0.0)
            .chain(values.windows(2).map(|w| {
                running = running.max(w[1] - w[0]);
                running
            }))
            .take(values.len())
            .collect();
        Ok(HCurve {
            h: h.clone(),
            times: evo.times.clone(),
            values,
            dissipation: None,
            boundary: None,
            max_increase_so_far,
        })
    }

    pub fn max_increase(&self) -> f64 {
        self.max_increase_so_far.last().copied().unwrap_or(0.0)
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.max_increase() <= tol
    }

    /// Adds the dissipation rate (when `h` is smooth) and boundary flux at
    /// every sample, with `phi = nu / rho0`.
    pub fn with_diagnostics(mut self, spec: &GeneratorSpec, rho0: &EquilibriumDensity, evo: &EvolutionResult) -> Result<Self> {
        let phis = evo.fields.iter().map(|nu| relative_density(rho0, nu)).collect::<Result<Vec<_>>>()?;
        if self.h.is_twice_differentiable() {
            self.dissipation =
                Some(phis.iter().map(|p| dissipation_rate(spec, rho0, p, &self.h)).collect::<Result<Vec<_>>>()?);
        }
        self.boundary = Some(phis.iter().map(|p| boundary_term(spec, rho0, p, &self.h)).collect::<Result<Vec<_>>>()?);
        Ok(self)
    }

    /// `time, H, dissipation_rate, boundary_term, max_increase_so_far`;
    /// missing diagnostics are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time", "H", "dissipation_rate", "boundary_term", "max_increase_so_far"])?;
        let opt = |v: &Option<Vec<f64>>, k: usize| v.as_ref().map(|v| fmt17(v[k])).unwrap_or_default();
        for k in 0..self.times.len() {
            w.write_record([
                fmt17(self.times[k]),
                fmt17(self.values[k]),
                opt(&self.dissipation, k),
                opt(&self.boundary, k),
                fmt17(self.max_increase_so_far[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `phi = nu / rho0`, zero where both vanish.
pub fn relative_density(rho0: &EquilibriumDensity, nu: &ScalarField) -> Result<ScalarField> {
    let vals = rho0
        .values()
        .iter()
        .zip(nu.values())
        .enumerate()
        .map(|(i, (r, v))| {
            if *r > 0.0 {
                Ok(v / r)
            } else if *v > 0.0 {
                Err(Error::SupportViolation { node: i })
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    nu.with_values(vals)
}

/// H-curve against the discrete invariant density of `q`.
pub fn h_curve(q: &DiscreteGenerator, nu0: &ScalarField, h: &HFunctional, times: &[f64], tol: f64) -> Result<HCurve> {
    let pi = solve_invariant(q)?;
    let evo = semigroup::evolve_density_series(q, nu0, times, tol)?;
    HCurve::from_evolution(pi.density(), &evo, h)
}

/// Several H-curves sharing one evolution, against `reference`.
pub fn h_curves(
    q: &DiscreteGenerator,
    reference: &ScalarField,
    nu0: &ScalarField,
    hs: &[HFunctional],
    times: &[f64],
    tol: f64,
) -> Result<(EvolutionResult, Vec<HCurve>)> {
    let evo = semigroup::evolve_density_series(q, nu0, times, tol)?;
    let curves = hs.iter().map(|h| HCurve::from_evolution(reference, &evo, h)).collect::<Result<Vec<_>>>()?;
    Ok((evo, curves))
}

/// `-sum_i rho0_i h''(phi_i) a_jk(x_i) d_j phi d_k phi w_i`.
pub fn dissipation_rate(spec: &GeneratorSpec, rho0: &EquilibriumDensity, phi: &ScalarField, h: &HFunctional) -> Result<f64> {
    if !h.is_twice_differentiable() {
        return Err(Error::NonSmoothH(h.name()));
    }
    let grid = rho0.grid();
    if phi.len() != grid.len() {
        return Err(Error::Shape("phi does not match the density grid".into()));
    }
    let grads = grid_gradient(grid, phi.values());
    let w = grid.weights();
    let n = spec.dimension();
    let mut terms = Vec::with_capacity(grid.len());
    for (k, x) in grid.points().iter().enumerate() {
        let r = rho0.values()[k];
        if r <= 0.0 {
            continue;
        }
        let a = spec.diffusion(x);
        let mut quad = 0.0;
        for j in 0..n {
            for l in 0..n {
                quad += a[j][l] * grads[j][k] * grads[l][k];
            }
        }
        if quad == 0.0 {
            continue;
        }
        terms.push(-r * h.second_derivative(phi.values()[k])? * quad * w[k]);
    }
    Ok(numeric::sum(terms))
}

/// Largest `|rho0 a_ij d_j h(phi) + h(phi) H_i|` over boundary nodes, taken
/// along each axis on which the node lies on the boundary. Nodes where
/// `rho0` vanishes are skipped.
pub fn boundary_term(spec: &GeneratorSpec, rho0: &EquilibriumDensity, phi: &ScalarField, h: &HFunctional) -> Result<f64> {
    let grid = rho0.grid();
    if phi.len() != grid.len() {
        return Err(Error::Shape("phi does not match the density grid".into()));
    }
    let hi = hi_field(spec, rho0)?;
    let grads = grid_gradient(grid, phi.values());
    let shape = grid.shape();
    let n = spec.dimension();
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        let r = rho0.values()[k];
        if !grid.is_boundary(k) || r <= 0.0 {
            continue;
        }
        let idx = grid.multi_index(k);
        let x = grid.point(k);
        let a = spec.diffusion(&x);
        let p = phi.values()[k];
        let (hv, dh) = (h.value(p), h.derivative(p));
        for i in 0..n {
            if idx[i] != 0 && idx[i] + 1 != shape[i] {
                continue;
            }
            let flux_grad: f64 = (0..n).map(|j| a[i][j] * grads[j][k]).sum();
            let mut flux = hv * hi[i].values()[k];
            if flux_grad != 0.0 {
                flux += r * dh * flux_grad;
            }
            worst = worst.max(flux.abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DhDtReport {
    pub slope: f64,
    pub rate: f64,
    /// `|slope - rate| / |rate|`, or the absolute gap when `rate = 0`.
    pub gap: f64,
}

/// Centered `dH/dt` at `t` against [`dissipation_rate`] at `t`, both with
/// reference `rho0`.
#[allow(clippy::too_many_arguments)]
pub fn dh_dt_consistency(
    q: &DiscreteGenerator,
    spec: &GeneratorSpec,
    rho0: &EquilibriumDensity,
    nu0: &ScalarField,
    h: &HFunctional,
    t: f64,
    dt: f64,
    tol: f64,
) -> Result<DhDtReport> {
    if !(dt > 0.0) || t < dt {
        return Err(Error::PreconditionViolated(format!("need 0 < dt <= t, got t = {t}, dt = {dt}")));
    }
    let evo = semigroup::evolve_density_series(q, nu0, &[t - dt, t, t + dt], tol)?;
    let rho = rho0.field();
    let h_minus = h_function(&rho, &evo.fields[0], h)?;
    let h_plus = h_function(&rho, &evo.fields[2], h)?;
    let slope = (h_plus - h_minus) / (2.0 * dt);
    let rate = dissipation_rate(spec, rho0, &relative_density(rho0, &evo.fields[1])?, h)?;
    let diff = (slope - rate).abs();
    let gap = if rate != 0.0 { diff / rate.abs() } else { diff };
    Ok(DhDtReport { slope, rate, gap })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::discretize::{build_qmatrix, Scheme};
    use crate::generator::{catalog_example, DomainKind, DomainSpec};
    use crate::grid::Grid;

    fn two_state() -> DiscreteGenerator {
        DiscreteGenerator::from_dense(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap()
    }

    fn field(q: &DiscreteGenerator, v: Vec<f64>) -> ScalarField {
        ScalarField::new(q.grid().clone(), v).unwrap()
    }

    #[test]
    fn two_state_invariant() {
        let q = two_state();
        let sol = solve_invariant(&q).unwrap();
        assert!(sol.unique);
        assert_eq!(sol.density().values(), &[0.5, 0.5]);
    }

    #[test]
    fn reducible_chain() {
        let mut rows = vec![vec![0.0; 4]; 4];
        rows[0][0] = -1.0;
        rows[0][1] = 1.0;
        rows[1][0] = 2.0;
        rows[1][1] = -2.0;
        rows[2][2] = -3.0;
        rows[2][3] = 3.0;
        rows[3][2] = 1.0;
        rows[3][3] = -1.0;
        let q = DiscreteGenerator::from_dense(&rows).unwrap();
        let sol = solve_invariant(&q).unwrap();
        assert!(!sol.unique);
        assert_eq!(sol.basis.len(), 2);
        let (a, b) = (sol.basis[0].values(), sol.basis[1].values());
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15 && (a[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(&a[2..], &[0.0, 0.0]);
        assert!((b[2] - 0.25).abs() < 1e-15 && (b[3] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn transient_states_get_no_mass() {
        let q = DiscreteGenerator::from_dense(&[vec![-1.0, 1.0, 0.0], vec![0.0, -1.0, 1.0], vec![0.0, 1.0, -1.0]])
            .unwrap();
        let sol = solve_invariant(&q).unwrap();
        assert!(sol.unique);
        assert_eq!(sol.density().values()[0], 0.0);
        assert!((sol.density().values()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn absorbing_grid_has_no_invariant_density() {
        let spec = GeneratorSpec::one_d(
            "1",
            "0",
            DomainSpec::interval(DomainKind::Box, 0.0, 1.0)
                .unwrap()
                .with_boundary(crate::grid::BoundaryCondition::Absorbing),
        )
        .unwrap();
        let grid = Arc::new(spec.domain().grid(11).unwrap());
        let q = build_qmatrix(&spec, grid, Scheme::ExponentialFitting).unwrap();
        assert_eq!(solve_invariant(&q), Err(Error::NoInvariantDensity));
    }

    #[test]
    fn appendix2a_invariant_matches_analytic() {
        let ex = catalog_example("appendix2a", 1.0).unwrap();
        let spec = ex.on_interval(-10.0, 10.0).unwrap();
        let grid = Arc::new(spec.domain().grid(401).unwrap());
        let q = build_qmatrix(&spec, grid.clone(), Scheme::ExponentialFitting).unwrap();
        let sol = solve_invariant(&q).unwrap();
        assert!(sol.unique);
        assert!(invariant_residual(&q, sol.density()) <= 1e-10 * q.norm_inf());
        // int_{-10}^{10} (1 + x^2)^(-3/2) dx = 20 / sqrt(101)
        let c = 101f64.sqrt() / 20.0;
        let w = grid.weights();
        let l1: f64 = grid
            .points()
            .iter()
            .zip(sol.density().values())
            .zip(&w)
            .map(|((x, p), w)| (p - c * (1.0 + x[0] * x[0]).powf(-1.5)).abs() * w)
            .sum();
        assert!(l1 < 0.01, "{l1}");
    }

    #[test]
    fn h_function_examples() {
        let q = two_state();
        let pi = field(&q, vec![0.5, 0.5]);
        let nu = field(&q, vec![1.0, 0.0]);
        assert_eq!(h_function(&pi, &nu, &HFunctional::square()).unwrap(), 2.0);
        assert!(h_function(&pi, &nu, &HFunctional::xlogx()).unwrap().is_finite());
        for h in [HFunctional::xlogx(), HFunctional::square(), HFunctional::abs_dev(), HFunctional::square_dev()] {
            assert_eq!(h_function(&pi, &pi, &h).unwrap(), h.value(1.0));
        }
        let rho = field(&q, vec![1.0, 0.0]);
        let nu = field(&q, vec![0.5, 0.5]);
        assert_eq!(h_function(&rho, &nu, &HFunctional::square()), Err(Error::SupportViolation { node: 1 }));
    }

    #[test]
    fn two_state_curve() {
        let q = two_state();
        let times = [0.0, 0.5, 1.0];
        let curve = h_curve(&q, &field(&q, vec![1.0, 0.0]), &HFunctional::square(), &times, 1e-12).unwrap();
        for (t, v) in times.iter().zip(&curve.values) {
            assert!((v - (1.0 + (-4.0 * t).exp())).abs() < 1e-8);
        }
        assert!((curve.values[1] - 1.1353).abs() < 1e-4);
        assert!((curve.values[2] - 1.0183).abs() < 1e-4);
        assert!(curve.is_monotone(0.0));
    }

    #[test]
    fn h_family_is_convex_and_normalizes() {
        for h in [HFunctional::xlogx(), HFunctional::square(), HFunctional::abs_dev(), HFunctional::square_dev()] {
            assert!(h.convexity_defect() >= -1e-12, "{}", h.name());
        }
        assert_eq!(HFunctional::xlogx().value(0.0), 0.0);
        let h = HFunctional::square_dev().normalized_at_zero();
        assert_eq!(h.value(0.0), 0.0);
        assert_eq!(h.value(3.0), 3.0);
        let t = HFunctional::custom_table(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(t.value(0.5), 0.5);
        assert_eq!(t.value(3.0), 2.0);
        assert!(matches!(t.second_derivative(1.0), Err(Error::NonSmoothH(_))));
        assert!(HFunctional::custom_table(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).is_err());
        assert!(HFunctional::square().scaled(-1.0, 0.0).is_err());
        assert_eq!("square-dev".parse::<HFunctional>().unwrap(), HFunctional::square_dev());
    }

    fn ou_spec(lo: f64, hi: f64) -> GeneratorSpec {
        catalog_example("ornstein-uhlenbeck", 0.0).unwrap().on_interval(lo, hi).unwrap()
    }

    #[test]
    fn ou_dissipation_quadrature() {
        let spec = ou_spec(-8.0, 8.0);
        let grid = Arc::new(spec.domain().grid(401).unwrap());
        let rho0 = EquilibriumDensity::from_gibbs(grid.clone(), spec.gibbs().unwrap().clone(), false, f64::INFINITY)
            .unwrap();
        let phi = ScalarField::from_fn(grid.clone(), |x| 1.0 + 0.1 * x[0]);
        let rate = dissipation_rate(&spec, &rho0, &phi, &HFunctional::square()).unwrap();
        assert!((rate + 0.02 * (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-6, "{rate}");
        assert!((rate + 0.0501).abs() < 1e-4);
        let flat = ScalarField::constant(grid.clone(), 1.0);
        assert_eq!(dissipation_rate(&spec, &rho0, &flat, &HFunctional::square()).unwrap(), 0.0);
        assert!(matches!(
            dissipation_rate(&spec, &rho0, &phi, &HFunctional::abs_dev()),
            Err(Error::NonSmoothH(_))
        ));
        let drift_only = GeneratorSpec::one_d("0", "-x", spec.domain().clone()).unwrap();
        assert_eq!(dissipation_rate(&drift_only, &rho0, &phi, &HFunctional::square()).unwrap(), 0.0);
    }

    #[test]
    fn boundary_term_examples() {
        let ex = catalog_example("appendix2a", 1.0).unwrap();
        let spec = ex.on_interval(-10.0, 10.0).unwrap();
        let grid = Arc::new(spec.domain().grid(401).unwrap());
        let rho0 = ex.equilibrium_on(grid.clone()).unwrap();
        let bump = ScalarField::from_fn(grid.clone(), |x| 1.0 + (-x[0] * x[0]).exp());
        assert!(boundary_term(&spec, &rho0, &bump, &HFunctional::square()).unwrap() <= 1e-4);
        let flat = ScalarField::constant(grid.clone(), 1.0);
        assert_eq!(boundary_term(&spec, &rho0, &flat, &HFunctional::square_dev()).unwrap(), 0.0);
        // a density sloping into the wall carries flux through it
        let ramp = ScalarField::from_fn(grid.clone(), |x| 1.0 + x[0]);
        assert!(boundary_term(&spec, &rho0, &ramp, &HFunctional::square()).unwrap() > 1e-3);
    }

    #[test]
    fn equilibrium_curve_is_flat() {
        let ex = catalog_example("appendix2a", 1.0).unwrap();
        let spec = ex.on_interval(-10.0, 10.0).unwrap();
        let grid = Arc::new(spec.domain().grid(201).unwrap());
        let q = build_qmatrix(&spec, grid, Scheme::ExponentialFitting).unwrap();
        let pi = solve_invariant(&q).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let c = h_curve(&q, pi.density(), &HFunctional::xlogx(), &times, 1e-12).unwrap();
        for v in &c.values {
            assert!(v.abs() <= 1e-12);
        }
        let r = dh_dt_consistency(&q, &spec, &pi.equilibrium().unwrap(), pi.density(), &HFunctional::square(), 0.5, 1e-3, 1e-12)
            .unwrap();
        assert!(r.slope.abs() < 1e-9 && r.rate.abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn curve_csv_round_trip() {
        let q = two_state();
        let pi = field(&q, vec![0.5, 0.5]);
        let evo = semigroup::evolve_density_series(&q, &field(&q, vec![1.0, 0.0]), &[0.0, 0.3, 0.9], 1e-12).unwrap();
        let c = HCurve::from_evolution(&pi, &evo, &HFunctional::xlogx()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        c.write_csv(&path).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        assert_eq!(rdr.headers().unwrap(), vec!["time", "H", "dissipation_rate", "boundary_term", "max_increase_so_far"]);
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.unwrap();
            assert_eq!(rec[1].parse::<f64>().unwrap(), c.values[k]);
            assert_eq!(&rec[2], "");
        }
        let _ = Grid::states(2);
    }
}
