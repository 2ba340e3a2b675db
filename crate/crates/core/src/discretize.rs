//! Q-matrix assembly: a discrete Markov generator whose off-diagonal entries
//! are non-negative by construction.
//!
//! The 1-D exponential-fitting stencil at node `i` with left/right spacings
//! `h-`, `h+` and dual-cell width `w` is
//!
//! ```text
//! Q[i, i+1] = a / (w h+) * B(-b h+ / a)
//! Q[i, i-1] = a / (w h-) * B( b h- / a)        B(z) = z / (e^z - 1)
//! ```
//!
//! which reduces to `a/dx^2 B(-+b dx/a)` on a uniform grid. `B > 0`, so
//! every rate is non-negative for any drift/diffusion ratio. Where
//! `a <= 1e-14` the drift is upwinded instead. At a no-flux wall the node
//! keeps only its inward rate and its half cell, at an absorbing wall its
//! row is zero. Higher dimensions are assembled axis by axis.
//!
//! Because the wall nodes carry half cells, `Q` is symmetric with respect to
//! the weighted pairing `sum_i w_i f_i g_i` for pure diffusion, not in the
//! plain transpose sense; densities are always paired with grid weights.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::grid::{BoundaryCondition, Grid};
use crate::numeric;

/// Diffusion at or below this is treated as absent.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;
/// Off-diagonal entries above `-OFF_DIAGONAL_TOL` count as non-negative.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Row sums within this of zero count as conservative.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; duplicate columns are summed
    /// and explicit zeros kept.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                assert!(c < n_cols, "column {c} out of range");
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n_rows: row_ptr.len() - 1, n_cols, row_ptr, cols, vals }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape("ragged matrix rows".into()));
        }
        let rows = rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
            .collect();
        Ok(Self::from_rows(n_cols, rows))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = A x`. Each entry is an ordered sum over its row, so the result
    /// does not depend on how rows are split across threads.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        let row = |i: usize| {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            acc
        };
        if self.n_rows >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        CsrMatrix::from_rows(self.n_rows, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }

    /// `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// `c I + s A` for square `A`.
    pub fn shifted(&self, c: f64, s: f64) -> CsrMatrix {
        let rows = (0..self.n_rows)
            .map(|i| {
                let mut r: Vec<(usize, f64)> = self.row(i).map(|(j, v)| (j, s * v)).collect();
                r.push((i, c));
                r
            })
            .collect();
        CsrMatrix::from_rows(self.n_cols, rows)
    }
}

// Row count above which matrix-vector products go parallel.
const PAR_ROWS: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ExponentialFitting,
    Upwind,
    /// Matrix supplied directly rather than assembled from a generator.
    Given,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential-fitting" => Ok(Scheme::ExponentialFitting),
            "upwind" => Ok(Scheme::Upwind),
            "given" => Ok(Scheme::Given),
            other => Err(Error::Spec(format!("unknown scheme `{other}`"))),
        }
    }
}

/// A square matrix `Q` acting on observables, with its grid.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    q: CsrMatrix,
    grid: Arc<Grid>,
    scheme: Scheme,
    lambda_max: f64,
}

impl DiscreteGenerator {
    pub fn new(q: CsrMatrix, grid: Arc<Grid>, scheme: Scheme) -> Result<Self> {
        if q.n_rows() != q.n_cols() {
            return Err(Error::Shape(format!("Q is {}x{}", q.n_rows(), q.n_cols())));
        }
        if q.n_rows() != grid.len() {
            return Err(Error::Shape(format!("Q has {} rows, grid has {} nodes", q.n_rows(), grid.len())));
        }
        let lambda_max = (0..q.n_rows()).map(|i| q.get(i, i).abs()).fold(0.0, f64::max);
        Ok(DiscreteGenerator { q, grid, scheme, lambda_max })
    }

    /// A bare finite chain on the state lattice `0..n` (unit weights).
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("Q must be square".into()));
        }
        Self::new(CsrMatrix::from_dense(rows)?, Arc::new(Grid::states(n)), Scheme::Given)
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.q
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.q.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `max_i |Q_ii|`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `max_i sum_j |Q_ij|`.
    pub fn norm_inf(&self) -> f64 {
        (0..self.len())
            .map(|i| self.q.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `Q f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.q.mul_vec(f)
    }

    pub fn metadata(&self) -> QMetadata {
        QMetadata {
            n: self.len(),
            nnz: self.q.nnz(),
            scheme: self.scheme,
            lambda_max: self.lambda_max,
            grid: (*self.grid).clone(),
        }
    }

    /// Writes `row col value` lines, row-major, values with 17 significant
    /// digits.
    pub fn write_triplets(&self, mut out: impl Write) -> Result<()> {
        for (i, j, v) in self.q.triplets() {
            writeln!(out, "{i} {j} {v:.16e}")?;
        }
        Ok(())
    }

    /// `<stem>.triplets` and `<stem>.json` in `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join(format!("{stem}.triplets")))?;
        self.write_triplets(std::io::BufWriter::new(f))?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.metadata())?)?;
        Ok(())
    }

    /// Reads the triplet format back (used for round-trip checks).
    pub fn read_triplets(text: &str, grid: Arc<Grid>, scheme: Scheme) -> Result<Self> {
        let n = grid.len();
        let mut rows = vec![Vec::new(); n];
        for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let mut field = || it.next().ok_or_else(|| Error::Io(format!("line {}: missing field", k + 1)));
            let bad = |e: &dyn std::fmt::Display| Error::Io(format!("line {}: {e}", k + 1));
            let i: usize = field()?.parse().map_err(|e| bad(&e))?;
            let j: usize = field()?.parse().map_err(|e| bad(&e))?;
            let v: f64 = field()?.parse().map_err(|e| bad(&e))?;
            if i >= n || j >= n {
                return Err(Error::Io(format!("line {}: index out of range", k + 1)));
            }
            rows[i].push((j, v));
        }
        Self::new(CsrMatrix::from_rows(n, rows), grid, scheme)
    }
}

/// Sidecar document written next to an exported Q-matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMetadata {
    pub n: usize,
    pub nnz: usize,
    pub scheme: Scheme,
    pub lambda_max: f64,
    pub grid: Grid,
}

/// `B(z) = z / (e^z - 1)`, `B(0) = 1`.
pub fn bernoulli(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z / z.exp_m1()
    }
}

/// Assembles `Q` for `spec` on `grid`.
pub fn build_qmatrix(spec: &GeneratorSpec, grid: Arc<Grid>, scheme: Scheme) -> Result<DiscreteGenerator> {
    let dim = spec.dimension();
    if grid.dimension() != dim {
        return Err(Error::Shape(format!("grid is {}-D, generator is {dim}-D", grid.dimension())));
    }
    if scheme == Scheme::Given {
        return Err(Error::Spec("`given` is not an assembly scheme".into()));
    }
    for (d, &(lo, hi)) in spec.domain().bounds.iter().enumerate() {
        let axis = grid.axis(d);
        let slack = 1e-12 * (hi - lo);
        if axis[0] < lo - slack || axis[axis.len() - 1] > hi + slack {
            return Err(Error::Grid(format!("axis {d} extends outside [{lo}, {hi}]")));
        }
    }
    let points = grid.points();
    spec.check_admissible(points.iter().map(Vec::as_slice))?;
    if dim > 1 && points.iter().any(|x| spec.has_off_diagonal_diffusion(x)) {
        return Err(Error::UnsupportedTensor);
    }
    let absorbing = grid.boundary() == BoundaryCondition::Absorbing;
    let rows: Vec<Vec<(usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            if absorbing && grid.is_boundary(flat) {
                return Vec::new();
            }
            let x = &points[flat];
            let idx = grid.multi_index(flat);
            let drift = spec.drift(x);
            let diff = spec.diffusion(x);
            let mut row = Vec::with_capacity(2 * dim + 1);
            for d in 0..dim {
                let (a, b) = (diff[d][d].max(0.0), drift[d]);
                let w = grid.cell_width(d, idx[d]);
                let (hl, hr) = grid.spacings(d, idx[d]);
                let s = grid.stride(d);
                if let Some(h) = hr {
                    row.push((flat + s, rate(scheme, a, b, h, w)));
                }
                if let Some(h) = hl {
                    row.push((flat - s, rate(scheme, a, -b, h, w)));
                }
            }
            let diag = -snap_to_common_quantum(&mut row);
            row.push((flat, diag));
            row
        })
        .collect();
    DiscreteGenerator::new(CsrMatrix::from_rows(grid.len(), rows), grid, scheme)
}

// Rounds the rates of a row to multiples of one power of two, chosen so
// that every partial sum is representable. The diagonal then cancels the
// row exactly instead of up to an ulp of the largest rate.
fn snap_to_common_quantum(row: &mut [(usize, f64)]) -> f64 {
    let total: f64 = row.iter().map(|e| e.1).sum();
    if !(total > 0.0) || !total.is_finite() {
        return total;
    }
    let quantum = 2.0 * (f64::from_bits(total.to_bits() + 1) - total);
    for e in row.iter_mut() {
        e.1 = (e.1 / quantum).round() * quantum;
    }
    row.iter().map(|e| e.1).sum()
}

// Rate towards a neighbour at distance `h` when the drift component pointing
// at it is `b`.
fn rate(scheme: Scheme, a: f64, b: f64, h: f64, w: f64) -> f64 {
    if a <= DEGENERACY_THRESHOLD {
        return b.max(0.0) / w;
    }
    match scheme {
        Scheme::ExponentialFitting => a / (w * h) * bernoulli(-b * h / a),
        Scheme::Upwind => a / (w * h) + b.max(0.0) / w,
        Scheme::Given => unreachable!(),
    }
}

/// `Q^T`: evolves point masses, `dm/dt = Q^T m`. Columns sum to zero.
pub fn adjoint_qmatrix(q: &DiscreteGenerator) -> CsrMatrix {
    q.matrix().transpose()
}

/// Outcome of the discrete maximum-principle check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPrincipleReport {
    pub pass: bool,
    /// Most negative off-diagonal entry `(i, j, value)`, if any exist.
    pub worst_off_diagonal: Option<(usize, usize, f64)>,
    /// Row with the largest `|sum_j Q_ij|`.
    pub worst_row_sum: Option<(usize, f64)>,
}

/// Passes iff every off-diagonal entry is `>= -1e-12` and every row sums
/// to zero within `1e-10`. For a bump peaked at node `i`, `(Qf)_i <= 0`
/// exactly when row `i` has no negative off-diagonal entry.
pub fn maximum_principle_check(q: &DiscreteGenerator) -> MaxPrincipleReport {
    check_matrix(q.matrix())
}

/// Same check on a dense matrix; rejects non-square input.
pub fn maximum_principle_check_dense(rows: &[Vec<f64>]) -> Result<MaxPrincipleReport> {
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(Error::Shape("Q must be square".into()));
    }
    Ok(check_matrix(&CsrMatrix::from_dense(rows)?))
}

fn check_matrix(m: &CsrMatrix) -> MaxPrincipleReport {
    let mut worst_off: Option<(usize, usize, f64)> = None;
    let mut worst_row: Option<(usize, f64)> = None;
    for i in 0..m.n_rows() {
        let mut entries = Vec::new();
        for (j, v) in m.row(i) {
            entries.push(v);
            if j != i && worst_off.is_none_or(|w| v < w.2) {
                worst_off = Some((i, j, v));
            }
        }
        let s = numeric::sum(entries);
        if worst_row.is_none_or(|w| s.abs() > w.1.abs()) {
            worst_row = Some((i, s));
        }
    }
    let pass = worst_off.is_none_or(|w| w.2 >= -OFF_DIAGONAL_TOL) && worst_row.is_none_or(|w| w.1.abs() <= ROW_SUM_TOL);
    MaxPrincipleReport { pass, worst_off_diagonal: worst_off, worst_row_sum: worst_row }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{catalog_example, DomainKind, DomainSpec};

    fn line(a: &str, b: &str, lo: f64, hi: f64, n: usize) -> DiscreteGenerator {
        let dom = DomainSpec::interval(DomainKind::Box, lo, hi).unwrap();
        let spec = GeneratorSpec::one_d(a, b, dom).unwrap();
        let grid = Arc::new(spec.domain().grid(n).unwrap());
        build_qmatrix(&spec, grid, Scheme::ExponentialFitting).unwrap()
    }

    #[test]
    fn bernoulli_values() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-10) - (1.0 - 0.5e-10)).abs() < 1e-16);
        assert!((bernoulli(2.0) - 2.0 / (2f64.exp() - 1.0)).abs() < 1e-15);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-12);
        assert_eq!(bernoulli(800.0), 0.0);
        // B(-z) - B(z) = z
        for z in [-3.0, -0.1, 0.7, 5.0] {
            assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-13);
        }
    }

    #[test]
    fn laplacian_row() {
        let q = line("1", "0", 0.0, 4.0, 5);
        assert_eq!(q.matrix().get(2, 1), 1.0);
        assert_eq!(q.matrix().get(2, 2), -2.0);
        assert_eq!(q.matrix().get(2, 3), 1.0);
        assert_eq!(q.lambda_max(), 2.0);
    }

    #[test]
    fn pure_drift_is_upwind() {
        let q = line("0", "1", 0.0, 4.0, 5);
        assert_eq!(q.matrix().get(2, 1), 0.0);
        assert_eq!(q.matrix().get(2, 2), -1.0);
        assert_eq!(q.matrix().get(2, 3), 1.0);
        // the fitted rate at a = 1e-14 is already the upwind limit
        let fitted = 1e-14 / 1.0 * bernoulli(-1.0 / 1e-14);
        assert!((fitted - 1.0).abs() < 1e-12);
        let q = line("1e-14", "1", 0.0, 4.0, 5);
        assert_eq!(q.matrix().get(2, 3), 1.0);
    }

    #[test]
    fn appendix2a_is_a_q_matrix() {
        let ex = catalog_example("appendix2a", 1.0).unwrap();
        let spec = ex.on_interval(-10.0, 10.0).unwrap();
        let grid = Arc::new(spec.domain().grid(201).unwrap());
        let q = build_qmatrix(&spec, grid, Scheme::ExponentialFitting).unwrap();
        let r = maximum_principle_check(&q);
        assert!(r.pass, "{r:?}");
        assert_eq!(r.worst_row_sum.unwrap().1, 0.0);
        assert!(r.worst_off_diagonal.unwrap().2 >= 0.0);
    }

    #[test]
    fn dense_checks() {
        assert!(maximum_principle_check_dense(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap().pass);
        assert!(maximum_principle_check_dense(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap().pass);
        assert!(matches!(
            maximum_principle_check_dense(&[vec![-1.0, 1.0], vec![1.0]]),
            Err(Error::Shape(_))
        ));
        let r = maximum_principle_check_dense(&[vec![-1.0, 1.0], vec![1.0, -0.5]]).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_row_sum, Some((1, 0.5)));
    }

    #[test]
    fn central_differences_break_the_maximum_principle() {
        // hand-assembled 3-node central scheme for a = 0, b = 1, dx = 1
        let dx = 1.0;
        let b = 1.0;
        let rows = vec![
            vec![-b / dx, b / dx, 0.0],
            vec![-b / (2.0 * dx), 0.0, b / (2.0 * dx)],
            vec![0.0, 0.0, 0.0],
        ];
        let r = maximum_principle_check_dense(&rows).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_off_diagonal, Some((1, 0, -0.5)));
    }

    #[test]
    fn adjoint_is_transpose() {
        let q = DiscreteGenerator::from_dense(&[vec![-1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(adjoint_qmatrix(&q).to_dense(), vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
        // pure diffusion: W Q is symmetric, and Q^T = Q away from the walls
        let sym = line("2", "0", 0.0, 1.0, 9);
        let qt = adjoint_qmatrix(&sym).to_dense();
        let q = sym.matrix().to_dense();
        let w = sym.grid().weights();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(w[i] * q[i][j], w[j] * q[j][i]);
                if (1..8).contains(&i) && (1..8).contains(&j) {
                    assert_eq!(qt[i][j], q[i][j]);
                }
            }
        }
        let chain = DiscreteGenerator::from_dense(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(adjoint_qmatrix(&chain), *chain.matrix());
    }

    #[test]
    fn boundary_rows() {
        let q = line("1", "0", 0.0, 4.0, 5);
        // half cell at the wall doubles the inward rate
        assert_eq!(q.matrix().get(0, 1), 2.0);
        assert_eq!(q.matrix().get(0, 0), -2.0);
        let dom = DomainSpec::interval(DomainKind::Box, 0.0, 4.0).unwrap().with_boundary(BoundaryCondition::Absorbing);
        let spec = GeneratorSpec::one_d("1", "0", dom).unwrap();
        let grid = Arc::new(spec.domain().grid(5).unwrap());
        let q = build_qmatrix(&spec, grid, Scheme::Upwind).unwrap();
        assert_eq!(q.matrix().row(0).count(), 0);
        assert_eq!(q.matrix().row(4).count(), 0);
        assert_eq!(q.matrix().get(1, 0), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        let dom = DomainSpec::interval(DomainKind::Box, 0.0, 1.0).unwrap();
        let spec = GeneratorSpec::one_d("x - 0.5", "0", dom).unwrap();
        let grid = Arc::new(spec.domain().grid(11).unwrap());
        assert!(matches!(
            build_qmatrix(&spec, grid, Scheme::ExponentialFitting),
            Err(Error::NonEllipticCoefficient { .. })
        ));
        let text = r#"{"dimension": 2, "a": [["1", "0.5"], ["0.5", "1"]], "b": [0, 0],
                       "domain": {"kind": "box", "bounds": [[0, 1], [0, 1]]}}"#;
        let spec = GeneratorSpec::from_json(text).unwrap();
        let grid = Arc::new(spec.domain().grid(5).unwrap());
        assert_eq!(build_qmatrix(&spec, grid, Scheme::Upwind).unwrap_err(), Error::UnsupportedTensor);
    }

    #[test]
    fn two_dimensional_assembly() {
        let text = r#"{"dimension": 2, "a": [["1 + x1^2", 0], [0, "2"]], "b": ["-x1", "x2 - x1"],
                       "domain": {"kind": "box", "bounds": [[-1, 1], [-2, 2]]}}"#;
        let spec = GeneratorSpec::from_json(text).unwrap();
        let grid = Arc::new(Grid::uniform_box(&[(-1.0, 1.0), (-2.0, 2.0)], &[7, 9], BoundaryCondition::NoFlux).unwrap());
        for scheme in [Scheme::ExponentialFitting, Scheme::Upwind] {
            let q = build_qmatrix(&spec, grid.clone(), scheme).unwrap();
            assert!(maximum_principle_check(&q).pass);
            assert_eq!(q.matrix().bandwidth(), 9);
        }
    }

    #[test]
    fn triplet_round_trip() {
        let ex = catalog_example("ornstein-uhlenbeck", 0.0).unwrap();
        let grid = Arc::new(ex.spec.domain().grid(33).unwrap());
        let q = build_qmatrix(&ex.spec, grid.clone(), Scheme::ExponentialFitting).unwrap();
        let mut buf = Vec::new();
        q.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = DiscreteGenerator::read_triplets(&text, grid, q.scheme()).unwrap();
        assert_eq!(back.matrix(), q.matrix());
        let lines: Vec<(usize, usize)> = text
            .lines()
            .map(|l| {
                let mut it = l.split_whitespace();
                (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
            })
            .collect();
        assert!(lines.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn export_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let q = line("1", "0", 0.0, 1.0, 5);
        q.export(dir.path(), "q").unwrap();
        let meta: QMetadata = serde_json::from_str(&std::fs::read_to_string(dir.path().join("q.json")).unwrap()).unwrap();
        assert_eq!(meta.n, 5);
        assert_eq!(meta.scheme, Scheme::ExponentialFitting);
        assert_eq!(meta.lambda_max, q.lambda_max());
        assert_eq!(meta.grid, **q.grid());
    }
}
