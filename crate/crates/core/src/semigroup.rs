//! `T_t = exp(tQ)` by uniformization, plus the resolvent and the kernel-level
//! checks (Chapman-Kolmogorov, stochastic continuity, moment recovery).
//!
//! With `lambda = 1.05 max_i |Q_ii|` the matrix `P = I + Q/lambda` is
//! stochastic and
//!
//! ```text
//! exp(tQ) = sum_n e^(-lambda t) (lambda t)^n / n! P^n
//! ```
//!
//! is a convex combination of stochastic matrices. Truncating the Poisson
//! weights and renormalizing them keeps every iterate non-negative and every
//! row sum at one, whatever the truncation.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::discretize::{CsrMatrix, DiscreteGenerator};
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Grid, ScalarField};
use crate::numeric::{self, Band};

/// Safety factor on `lambda_max`; keeps the diagonal of `P` away from zero.
pub const LAMBDA_MARGIN: f64 = 1.05;
/// Largest accepted user tolerance.
pub const MAX_TOL: f64 = 1e-6;
/// Poisson mean per step used before squaring in [`transition_kernel`].
const SQUARING_MEAN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformizationOptions {
    /// Cap on series terms in one step.
    pub max_terms: usize,
    /// Split long horizons into equal sub-steps instead of failing.
    pub auto_split: bool,
    /// Cap on the number of sub-steps.
    pub max_substeps: usize,
}

impl Default for UniformizationOptions {
    fn default() -> Self {
        UniformizationOptions { max_terms: 1_000_000, auto_split: true, max_substeps: 1 << 16 }
    }
}

/// Truncated, renormalized Poisson weights `w[k]` for `n = left + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonWindow {
    pub left: usize,
    pub weights: Vec<f64>,
}

impl PoissonWindow {
    /// Index of the last term.
    pub fn right(&self) -> usize {
        self.left + self.weights.len() - 1
    }

    /// Window whose dropped mass on either side is below `tol / 4`.
    ///
    /// Weights are generated outward from the mode, where the relative
    /// weight is one, so nothing underflows before it is negligible. The
    /// tails are bounded by geometric series, since the ratio of consecutive
    /// weights is `mean / (n + 1)` to the right and `n / mean` to the left.
    pub fn new(mean: f64, tol: f64) -> Self {
        if mean <= 0.0 {
            return PoissonWindow { left: 0, weights: vec![1.0] };
        }
        let cut = 0.25 * tol;
        let mode = mean.floor() as usize;
        let mut right = vec![1.0];
        let mut total = 1.0;
        let mut n = mode;
        loop {
            let next = right[right.len() - 1] * mean / (n + 1) as f64;
            let r = mean / (n + 2) as f64;
            if next / (1.0 - r) < cut * total {
                break;
            }
            right.push(next);
            total += next;
            n += 1;
        }
        let mut left = Vec::new();
        let mut w = 1.0;
        let mut n = mode;
        while n > 0 {
            let next = w * n as f64 / mean;
            let r = (n - 1) as f64 / mean;
            if next / (1.0 - r) < cut * total {
                break;
            }
            left.push(next);
            total += next;
            w = next;
            n -= 1;
        }
        left.reverse();
        let start = mode - left.len();
        let mut weights = left;
        weights.extend(right);
        let s = numeric::sum(weights.iter().copied());
        weights.iter_mut().for_each(|v| *v /= s);
        PoissonWindow { left: start, weights }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Time(t));
    }
    Ok(())
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= MAX_TOL) {
        return Err(Error::PreconditionViolated(format!("tol must lie in (0, {MAX_TOL}], got {tol}")));
    }
    Ok(())
}

fn check_len(q: &DiscreteGenerator, v: &ScalarField) -> Result<()> {
    if v.len() != q.len() {
        return Err(Error::Shape(format!("field has {} values, Q has {} rows", v.len(), q.len())));
    }
    Ok(())
}

/// Uniformized chain `P = I + Q / lambda` and its transpose.
#[derive(Debug, Clone)]
pub struct Uniformized {
    pub lambda: f64,
    pub p: CsrMatrix,
    pub pt: CsrMatrix,
}

impl Uniformized {
    pub fn new(q: &DiscreteGenerator) -> Self {
        let lambda = LAMBDA_MARGIN * q.lambda_max();
        let p = if lambda > 0.0 {
            q.matrix().shifted(1.0, 1.0 / lambda)
        } else {
            CsrMatrix::identity(q.len())
        };
        let pt = p.transpose();
        Uniformized { lambda, p, pt }
    }

    /// `exp(tQ) v` (or `exp(tQ^T) v` with `transpose`).
    pub fn apply(&self, v: &[f64], t: f64, tol: f64, transpose: bool, opts: &UniformizationOptions) -> Result<Vec<f64>> {
        check_time(t)?;
        let m = if transpose { &self.pt } else { &self.p };
        let mean = self.lambda * t;
        if mean == 0.0 {
            return Ok(v.to_vec());
        }
        let mut steps = 1usize;
        let mut window = PoissonWindow::new(mean, tol);
        while window.right() + 1 > opts.max_terms {
            if !opts.auto_split {
                return Err(Error::TruncationBudgetExceeded { needed: window.right() + 1, budget: opts.max_terms });
            }
            steps *= 2;
            if steps > opts.max_substeps {
                return Err(Error::TruncationBudgetExceeded { needed: window.right() + 1, budget: opts.max_terms });
            }
            window = PoissonWindow::new(mean / steps as f64, tol / steps as f64);
        }
        let mut cur = v.to_vec();
        let mut scratch = vec![0.0; v.len()];
        let mut acc = vec![0.0; v.len()];
        for _ in 0..steps {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for n in 0..=window.right() {
                if n >= window.left {
                    let w = window.weights[n - window.left];
                    for (a, c) in acc.iter_mut().zip(&cur) {
                        *a += w * c;
                    }
                }
                if n < window.right() {
                    m.mul_vec_into(&cur, &mut scratch);
                    std::mem::swap(&mut cur, &mut scratch);
                }
            }
            std::mem::swap(&mut cur, &mut acc);
        }
        Ok(cur)
    }
}

/// `T_t f0 = exp(tQ) f0`.
pub fn evolve_observable(q: &DiscreteGenerator, f0: &ScalarField, t: f64, tol: f64) -> Result<ScalarField> {
    evolve_observable_with(q, f0, t, tol, &UniformizationOptions::default())
}

pub fn evolve_observable_with(
    q: &DiscreteGenerator,
    f0: &ScalarField,
    t: f64,
    tol: f64,
    opts: &UniformizationOptions,
) -> Result<ScalarField> {
    check_tol(tol)?;
    check_len(q, f0)?;
    let u = Uniformized::new(q);
    f0.with_values(u.apply(f0.values(), t, tol, false, opts)?)
}

/// Density evolution `nu_t`. The point masses `nu_i w_i` evolve under
/// `exp(tQ^T)`, so `sum_i nu_i w_i` is conserved.
pub fn evolve_density(q: &DiscreteGenerator, nu0: &ScalarField, t: f64, tol: f64) -> Result<ScalarField> {
    evolve_density_with(q, nu0, t, tol, &UniformizationOptions::default())
}

pub fn evolve_density_with(
    q: &DiscreteGenerator,
    nu0: &ScalarField,
    t: f64,
    tol: f64,
    opts: &UniformizationOptions,
) -> Result<ScalarField> {
    check_tol(tol)?;
    check_len(q, nu0)?;
    let u = Uniformized::new(q);
    let w = q.grid().weights();
    step_density(&u, nu0, &w, t, tol, opts)
}

fn step_density(
    u: &Uniformized,
    nu: &ScalarField,
    w: &[f64],
    t: f64,
    tol: f64,
    opts: &UniformizationOptions,
) -> Result<ScalarField> {
    let mass: Vec<f64> = nu.values().iter().zip(w).map(|(v, w)| v * w).collect();
    let out = u.apply(&mass, t, tol, true, opts)?;
    nu.with_values(out.iter().zip(w).map(|(m, w)| m / w).collect())
}

/// `sum_i nu_i w_i` over nodes that are not absorbing traps.
pub fn live_mass(nu: &ScalarField) -> f64 {
    let grid = nu.grid();
    if grid.boundary() != BoundaryCondition::Absorbing {
        return nu.integral();
    }
    let w = grid.weights();
    numeric::sum((0..nu.len()).filter(|&i| !grid.is_boundary(i)).map(|i| nu.values()[i] * w[i]))
}

/// Fields at a list of times with their mass, minimum and sup-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
    /// Live mass. Under absorbing walls the wall nodes are traps holding
    /// the absorbed mass, and are left out.
    pub mass: Vec<f64>,
    pub min_value: Vec<f64>,
    pub sup_norm: Vec<f64>,
}

impl EvolutionResult {
    fn from_fields(times: Vec<f64>, fields: Vec<ScalarField>) -> Self {
        let mass = fields.iter().map(live_mass).collect();
        let min_value = fields.iter().map(ScalarField::min).collect();
        let sup_norm = fields.iter().map(ScalarField::sup_norm).collect();
        EvolutionResult { times, fields, mass, min_value, sup_norm }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.fields[0].grid()
    }

    /// Largest `|mass(t) - mass(0)|`.
    pub fn mass_drift(&self) -> f64 {
        self.mass.iter().map(|m| (m - self.mass[0]).abs()).fold(0.0, f64::max)
    }

    /// True when mass falls by more than `tol` between consecutive samples,
    /// as expected with absorbing walls.
    pub fn loses_mass(&self, tol: f64) -> bool {
        self.mass.windows(2).any(|w| w[1] < w[0] - tol)
    }

    pub fn min_over_time(&self) -> f64 {
        self.min_value.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `time, node_index, x, value` (one `x` column per axis in n-D).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.grid().dimension();
        let mut header = vec!["time".to_string(), "node_index".to_string()];
        if dim == 1 {
            header.push("x".into());
        } else {
            header.extend((1..=dim).map(|d| format!("x{d}")));
        }
        header.push("value".into());
        w.write_record(&header)?;
        let points = self.grid().points();
        for (t, field) in self.times.iter().zip(&self.fields) {
            for (i, v) in field.values().iter().enumerate() {
                let mut rec = vec![fmt17(*t), i.to_string()];
                rec.extend(points[i].iter().map(|x| fmt17(*x)));
                rec.push(fmt17(*v));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `time, mass, min_value, sup_norm`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time", "mass", "min_value", "sup_norm"])?;
        for k in 0..self.times.len() {
            w.write_record([
                fmt17(self.times[k]),
                fmt17(self.mass[k]),
                fmt17(self.min_value[k]),
                fmt17(self.sup_norm[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_times(times: &[f64]) -> Result<()> {
    for &t in times {
        check_time(t)?;
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::PreconditionViolated("times must be a non-empty ascending list".into()));
    }
    Ok(())
}

/// `nu_t` at each of the ascending `times`, stepping from one to the next.
pub fn evolve_density_series(q: &DiscreteGenerator, nu0: &ScalarField, times: &[f64], tol: f64) -> Result<EvolutionResult> {
    check_tol(tol)?;
    check_len(q, nu0)?;
    check_times(times)?;
    let u = Uniformized::new(q);
    let w = q.grid().weights();
    let opts = UniformizationOptions::default();
    let mut fields = Vec::with_capacity(times.len());
    let mut cur = nu0.clone();
    let mut t_prev = 0.0;
    for &t in times {
        cur = step_density(&u, &cur, &w, t - t_prev, tol, &opts)?;
        t_prev = t;
        fields.push(cur.clone());
    }
    Ok(EvolutionResult::from_fields(times.to_vec(), fields))
}

/// `T_t f0` at each of the ascending `times`.
pub fn evolve_observable_series(q: &DiscreteGenerator, f0: &ScalarField, times: &[f64], tol: f64) -> Result<EvolutionResult> {
    check_tol(tol)?;
    check_len(q, f0)?;
    check_times(times)?;
    let u = Uniformized::new(q);
    let opts = UniformizationOptions::default();
    let mut fields = Vec::with_capacity(times.len());
    let mut cur = f0.values().to_vec();
    let mut t_prev = 0.0;
    for &t in times {
        cur = u.apply(&cur, t - t_prev, tol, false, &opts)?;
        t_prev = t;
        fields.push(f0.with_values(cur.clone())?);
    }
    Ok(EvolutionResult::from_fields(times.to_vec(), fields))
}

/// Row-stochastic `P(t)`, row `i` being `p(t, x_i, .)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    /// Stored transposed: column `i` of `pt` is row `i` of `P(t)`.
    pt: DMatrix<f64>,
    pub t: f64,
    pub tol: f64,
    /// Largest row-sum correction applied while squaring.
    pub squaring_defect: f64,
}

impl TransitionKernel {
    pub fn len(&self) -> usize {
        self.pt.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pt[(j, i)]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.pt.as_slice()[i * n..(i + 1) * n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).to_vec()).collect()
    }

    /// `max_i |sum_j P_ij - 1|`.
    pub fn row_sum_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (numeric::sum(self.row(i).iter().copied()) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.pt.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `P(t) P(s)`, kept in the same transposed layout.
    pub fn compose(&self, other: &TransitionKernel) -> TransitionKernel {
        TransitionKernel {
            pt: &other.pt * &self.pt,
            t: self.t + other.t,
            tol: self.tol + other.tol,
            squaring_defect: self.squaring_defect.max(other.squaring_defect),
        }
    }

    /// `max_i sum_j |A_ij - B_ij|`.
    pub fn distance(&self, other: &TransitionKernel) -> f64 {
        (0..self.len())
            .map(|i| numeric::sum(self.row(i).iter().zip(other.row(i)).map(|(a, b)| (a - b).abs())))
            .fold(0.0, f64::max)
    }
}

/// `P(t) = exp(tQ)`.
///
/// Short horizons (`lambda t <= 0.5`) are summed directly. Longer ones
/// compute `P(t / 2^k)` with `lambda t / 2^k <= 0.5` and square `k` times,
/// renormalizing rows after each product; the largest correction is kept in
/// [`TransitionKernel::squaring_defect`].
pub fn transition_kernel(q: &DiscreteGenerator, t: f64, tol: f64) -> Result<TransitionKernel> {
    check_tol(tol)?;
    check_time(t)?;
    let n = q.len();
    if t == 0.0 || q.lambda_max() == 0.0 {
        return Ok(TransitionKernel { pt: DMatrix::identity(n, n), t, tol, squaring_defect: 0.0 });
    }
    let u = Uniformized::new(q);
    let mean = u.lambda * t;
    let k = if mean <= SQUARING_MEAN { 0 } else { (mean / SQUARING_MEAN).log2().ceil() as u32 };
    let base_mean = mean / f64::powi(2.0, k as i32);
    // the base step feeds 2^k squarings, so it is summed to full precision
    let window = PoissonWindow::new(base_mean, f64::EPSILON * 1e-2);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let mut cur = DMatrix::<f64>::identity(n, n);
    let mut next = DMatrix::<f64>::zeros(n, n);
    for m in 0..=window.right() {
        if m >= window.left {
            acc += &cur * window.weights[m - window.left];
        }
        if m < window.right() {
            for c in 0..n {
                u.pt.mul_vec_into(cur.column(c).as_slice(), next.column_mut(c).as_mut_slice());
            }
            std::mem::swap(&mut cur, &mut next);
        }
    }
    let mut defect = 0.0f64;
    for _ in 0..k {
        acc = &acc * &acc;
        for mut col in acc.column_iter_mut() {
            let s = numeric::sum(col.iter().copied());
            defect = defect.max((s - 1.0).abs());
            col /= s;
        }
    }
    Ok(TransitionKernel { pt: acc, t, tol, squaring_defect: defect })
}

/// `max_i sum_j |P(t+s) - P(t) P(s)|_ij`.
pub fn chapman_kolmogorov_defect(q: &DiscreteGenerator, t: f64, s: f64, tol: f64) -> Result<f64> {
    let pt = transition_kernel(q, t, tol)?;
    let ps = transition_kernel(q, s, tol)?;
    let pts = transition_kernel(q, t + s, tol)?;
    Ok(pts.distance(&pt.compose(&ps)))
}

/// Solves `(lambda I - Q) f = g`. `lambda I - Q` is a strictly diagonally
/// dominant M-matrix, so elimination needs no pivoting and
/// `|lambda f|_inf <= |g|_inf`.
pub fn resolvent(q: &DiscreteGenerator, lambda: f64, g: &ScalarField) -> Result<ScalarField> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Spectrum(lambda));
    }
    check_len(q, g)?;
    let m = q.matrix();
    let bw = m.bandwidth();
    let mut band = Band::zeros(q.len(), bw, bw);
    for i in 0..q.len() {
        band.add(i, i, lambda);
        for (j, v) in m.row(i) {
            band.add(i, j, -v);
        }
    }
    let mut f = g.values().to_vec();
    band.solve_in_place(&mut f).ok_or(Error::Spectrum(lambda))?;
    g.with_values(f)
}

/// `(Qf)` at the first index where `f` is maximal.
pub fn generator_at_max(q: &DiscreteGenerator, f: &[f64]) -> f64 {
    let mut best = 0;
    for (i, v) in f.iter().enumerate() {
        if *v > f[best] {
            best = i;
        }
    }
    q.matrix().row(best).map(|(j, v)| v * f[j]).sum()
}

/// Raised when `lambda_max t` is too large for moments of `P(t)` to
/// approximate the generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentBiasWarning {
    pub lambda_max_t: f64,
    /// Largest interior `|b_hat - sum_j Q_ij (x_j - x_i)|`.
    pub drift_bias: f64,
    /// Largest interior `|a_hat - sum_j Q_ij (x_j - x_i)^2 / 2|`.
    pub diffusion_bias: f64,
}

impl std::fmt::Display for MomentBiasWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "MomentBiasWarning: lambda_max*t = {:.3e} > 0.1 (drift bias {:.3e}, diffusion bias {:.3e})",
            self.lambda_max_t, self.drift_bias, self.diffusion_bias
        )
    }
}

/// Drift, diffusion and third absolute moment read off a kernel.
#[derive(Debug, Clone)]
pub struct CoefficientRecovery {
    pub t: f64,
    pub b_hat: ScalarField,
    pub a_hat: ScalarField,
    /// `sum_j P_ij |x_j - x_i|^3 / t`.
    pub third_moment: ScalarField,
    pub warning: Option<MomentBiasWarning>,
}

/// Moment estimates from `P(t)` on a 1-D grid:
/// `b = sum_j P_ij (x_j - x_i) / t`, `a = sum_j P_ij (x_j - x_i)^2 / 2t`.
pub fn recover_coefficients(q: &DiscreteGenerator, t: f64) -> Result<CoefficientRecovery> {
    if !(t > 0.0) {
        return Err(Error::Time(t));
    }
    let kernel = transition_kernel(q, t, 1e-12)?;
    let mut rec = recover_from_kernel(&kernel, q.grid())?;
    let lt = q.lambda_max() * t;
    if lt > 0.1 {
        let x = q.grid().axis(0);
        let (mut db, mut da) = (0.0f64, 0.0f64);
        for i in 1..x.len() - 1 {
            let bq = numeric::sum(q.matrix().row(i).map(|(j, v)| v * (x[j] - x[i])));
            let aq = 0.5 * numeric::sum(q.matrix().row(i).map(|(j, v)| v * (x[j] - x[i]).powi(2)));
            db = db.max((rec.b_hat.values()[i] - bq).abs());
            da = da.max((rec.a_hat.values()[i] - aq).abs());
        }
        rec.warning = Some(MomentBiasWarning { lambda_max_t: lt, drift_bias: db, diffusion_bias: da });
    }
    Ok(rec)
}

pub fn recover_from_kernel(kernel: &TransitionKernel, grid: &Arc<Grid>) -> Result<CoefficientRecovery> {
    if grid.dimension() != 1 || grid.len() != kernel.len() {
        return Err(Error::Shape("moment recovery needs a 1-D grid matching the kernel".into()));
    }
    let t = kernel.t;
    let x = grid.axis(0);
    let mut b = Vec::with_capacity(x.len());
    let mut a = Vec::with_capacity(x.len());
    let mut c = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let row = kernel.row(i);
        b.push(numeric::sum(row.iter().zip(x).map(|(p, xj)| p * (xj - x[i]))) / t);
        a.push(numeric::sum(row.iter().zip(x).map(|(p, xj)| p * (xj - x[i]).powi(2))) / (2.0 * t));
        c.push(numeric::sum(row.iter().zip(x).map(|(p, xj)| p * (xj - x[i]).abs().powi(3))) / t);
    }
    Ok(CoefficientRecovery {
        t,
        b_hat: ScalarField::new(grid.clone(), b)?,
        a_hat: ScalarField::new(grid.clone(), a)?,
        third_moment: ScalarField::new(grid.clone(), c)?,
        warning: None,
    })
}

/// `1 - p(t, x_i, ball(x_i, r))` for each `t`, computed as the mass that
/// has left the ball so it is exactly zero at `t = 0`.
pub fn stochastic_continuity_defect(q: &DiscreteGenerator, i: usize, r: f64, times: &[f64], tol: f64) -> Result<Vec<f64>> {
    check_tol(tol)?;
    if i >= q.len() {
        return Err(Error::Shape(format!("node {i} out of range")));
    }
    let grid = q.grid();
    let xi = grid.point(i);
    let outside: Vec<bool> = (0..q.len())
        .map(|j| {
            let xj = grid.point(j);
            xi.iter().zip(&xj).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > r
        })
        .collect();
    let u = Uniformized::new(q);
    let opts = UniformizationOptions::default();
    let mut e = vec![0.0; q.len()];
    e[i] = 1.0;
    times
        .iter()
        .map(|&t| {
            let row = u.apply(&e, t, tol, true, &opts)?;
            Ok(numeric::sum(row.iter().zip(&outside).filter(|(_, o)| **o).map(|(p, _)| *p)))
        })
        .collect()
}

/// Max over interior nodes of [`stochastic_continuity_defect`], from full
/// kernels.
pub fn stochastic_continuity_uniform(q: &DiscreteGenerator, r: f64, times: &[f64], tol: f64) -> Result<Vec<f64>> {
    let grid = q.grid();
    let points = grid.points();
    times
        .iter()
        .map(|&t| {
            let k = transition_kernel(q, t, tol)?;
            Ok((0..q.len())
                .filter(|&i| !grid.is_boundary(i))
                .map(|i| {
                    let xi = &points[i];
                    numeric::sum(k.row(i).iter().zip(&points).filter_map(|(p, xj)| {
                        let d = xi.iter().zip(xj).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        (d > r).then_some(*p)
                    }))
                })
                .fold(0.0, f64::max))
        })
        .collect()
}
