//! Maximum-principle witnesses for differential operators of order three or
//! more.
//!
//! For `Z = sum_alpha c_alpha(x) d^alpha` with some `|alpha| = k >= 3` and
//! `c_alpha(x0) != 0`, the polynomial
//!
//! ```text
//! g(x) = -eps |x - x0|^2 + a (x - x0)^alpha
//! ```
//!
//! has a strict local maximum `g(x0) = 0`, yet
//! `Zg(x0) = -2 eps sum_i c_{2e_i}(x0) + alpha! a c_alpha(x0)`, which is
//! positive for a suitable `a`. A Markov generator must have `Zg(x0) <= 0` at
//! every local maximum, so such operators cannot generate one.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::generator::{apply_generator, min_eigenvalue, Coefficient, Cubed, GeneratorSpec, ScalarFn};
use crate::numeric;

/// Default quadratic weight `eps`.
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Directions sampled for the n-D validity radius.
pub const RADIUS_DIRECTIONS: usize = 10_000;
const SIGN_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: Vec<usize>,
    pub coefficient: f64,
}

/// Polynomial in `u = x - center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPoly {
    pub center: Vec<f64>,
    pub terms: Vec<Monomial>,
}

impl MultiPoly {
    pub fn zero(center: Vec<f64>) -> Self {
        MultiPoly { center, terms: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    pub fn add_term(&mut self, exponents: Vec<usize>, coefficient: f64) {
        if coefficient == 0.0 {
            return;
        }
        match self.terms.iter_mut().find(|m| m.exponents == exponents) {
            Some(m) => m.coefficient += coefficient,
            None => self.terms.push(Monomial { exponents, coefficient }),
        }
        self.terms.retain(|m| m.coefficient != 0.0);
    }

    /// Highest total degree.
    pub fn degree(&self) -> usize {
        self.terms.iter().map(|m| m.exponents.iter().sum::<usize>()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        numeric::sum(self.terms.iter().map(|m| {
            m.coefficient
                * m.exponents
                    .iter()
                    .zip(x.iter().zip(&self.center))
                    .map(|(&e, (x, c))| (x - c).powi(e as i32))
                    .product::<f64>()
        }))
    }

    pub fn derivative(&self, alpha: &[usize]) -> MultiPoly {
        let mut out = MultiPoly::zero(self.center.clone());
        for m in &self.terms {
            if m.exponents.iter().zip(alpha).any(|(e, a)| a > e) {
                continue;
            }
            let mut c = m.coefficient;
            for (&e, &a) in m.exponents.iter().zip(alpha) {
                c *= falling(e, a);
            }
            let exps = m.exponents.iter().zip(alpha).map(|(e, a)| e - a).collect();
            out.add_term(exps, c);
        }
        out
    }

    pub fn eval_derivative(&self, alpha: &[usize], x: &[f64]) -> f64 {
        self.derivative(alpha).eval(x)
    }

    pub fn mul(&self, other: &MultiPoly) -> MultiPoly {
        let mut out = MultiPoly::zero(self.center.clone());
        for a in &self.terms {
            for b in &other.terms {
                let e = a.exponents.iter().zip(&b.exponents).map(|(x, y)| x + y).collect();
                out.add_term(e, a.coefficient * b.coefficient);
            }
        }
        out
    }
}

fn falling(e: usize, a: usize) -> f64 {
    (0..a).map(|j| (e - j) as f64).product()
}

fn factorial(alpha: &[usize]) -> f64 {
    alpha.iter().map(|&a| falling(a, a)).product()
}

impl fmt::Display for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, m) in self.terms.iter().enumerate() {
            let c = m.coefficient;
            match (k, c < 0.0) {
                (0, _) => write!(f, "{c}")?,
                (_, true) => write!(f, " - {}", -c)?,
                (_, false) => write!(f, " + {c}")?,
            }
            for (d, &e) in m.exponents.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let c = self.center[d];
                let var = match c {
                    c if c == 0.0 => format!("x{}", d + 1),
                    c if c < 0.0 => format!("(x{} + {})", d + 1, -c),
                    c => format!("(x{} - {c})", d + 1),
                };
                if e == 1 {
                    write!(f, "*{var}")?;
                } else {
                    write!(f, "*{var}^{e}")?;
                }
            }
        }
        Ok(())
    }
}

/// `sum_alpha c_alpha(x) d^alpha` with `|alpha| >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedOperator {
    dim: usize,
    terms: BTreeMap<Vec<usize>, Coefficient>,
}

impl TruncatedOperator {
    pub fn new(dim: usize, terms: Vec<(Vec<usize>, Coefficient)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Spec("operator dimension must be positive".into()));
        }
        let mut map = BTreeMap::new();
        for (alpha, c) in terms {
            if alpha.len() != dim {
                return Err(Error::Shape(format!("multi-index {alpha:?} is not of length {dim}")));
            }
            if alpha.iter().sum::<usize>() == 0 {
                return Err(Error::Spec("operators have no zeroth-order term".into()));
            }
            if map.insert(alpha.clone(), c).is_some() {
                return Err(Error::Spec(format!("multi-index {alpha:?} given twice")));
            }
        }
        map.retain(|_, c: &mut Coefficient| !c.is_identically_zero());
        if map.is_empty() {
            return Err(Error::Spec("operator has no non-zero coefficient".into()));
        }
        Ok(TruncatedOperator { dim, terms: map })
    }

    /// 1-D operator from `(order, coefficient expression)` pairs.
    pub fn one_d(terms: &[(usize, &str)]) -> Result<Self> {
        let terms = terms
            .iter()
            .map(|&(k, s)| Ok((vec![k], Coefficient::parse(s, 1)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(1, terms)
    }

    /// The second-order operator of a generator spec; mixed terms collect
    /// `a_ij + a_ji`.
    pub fn from_spec(spec: &GeneratorSpec) -> Result<Self> {
        let n = spec.dimension();
        let mut terms = Vec::new();
        let unit = |i: usize| -> Vec<usize> { (0..n).map(|d| usize::from(d == i)).collect() };
        for i in 0..n {
            terms.push((unit(i), spec.b_coefficient(i).clone()));
            for j in i..n {
                let alpha: Vec<usize> = unit(i).iter().zip(unit(j)).map(|(a, b)| a + b).collect();
                let c = if i == j {
                    spec.a_coefficient(i, i).clone()
                } else {
                    match (spec.a_coefficient(i, j), spec.a_coefficient(j, i)) {
                        (Coefficient::Expr(p), Coefficient::Expr(q)) => Coefficient::Expr(
                            crate::generator::ExprField::new(crate::expr::Expr::add(p.expr().clone(), q.expr().clone()), n)?,
                        ),
                        _ => return Err(Error::Spec("mixed coefficients must be expressions".into())),
                    }
                };
                terms.push((alpha, c));
            }
        }
        terms.retain(|(_, c)| !c.is_identically_zero());
        if terms.is_empty() {
            // the zero generator is a legitimate (trivial) second-order operator
            terms.push((unit(0), Coefficient::constant(0.0, n)));
            return Ok(TruncatedOperator { dim: n, terms: terms.into_iter().collect() });
        }
        Self::new(n, terms)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Largest `|alpha|` with a coefficient that is not identically zero.
    pub fn order(&self) -> usize {
        self.terms.keys().map(|a| a.iter().sum::<usize>()).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<usize>, &Coefficient)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, alpha: &[usize]) -> Option<&Coefficient> {
        self.terms.get(alpha)
    }

    /// `(Zg)(x)` for a polynomial `g`, differentiated exactly.
    pub fn apply_to_poly(&self, g: &MultiPoly, x: &[f64]) -> f64 {
        numeric::sum(self.terms.iter().map(|(alpha, c)| c.eval(x) * g.eval_derivative(alpha, x)))
    }

    fn unit(&self, i: usize) -> Vec<usize> {
        (0..self.dim).map(|d| if d == i { 2 } else { 0 }).collect()
    }

    /// `sum_i c_{2e_i}(x)`.
    fn pure_second_trace(&self, x: &[f64]) -> f64 {
        (0..self.dim).map(|i| self.terms.get(&self.unit(i)).map_or(0.0, |c| c.eval(x))).sum()
    }

    /// Symmetric second-order coefficient matrix at `x`.
    pub fn second_order_matrix(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim;
        let mut a = vec![vec![0.0; n]; n];
        for (alpha, c) in &self.terms {
            if alpha.iter().sum::<usize>() != 2 {
                continue;
            }
            let idx: Vec<usize> = (0..n).filter(|&d| alpha[d] > 0).collect();
            let v = c.eval(x);
            if idx.len() == 1 {
                a[idx[0]][idx[0]] = v;
            } else {
                a[idx[0]][idx[1]] = 0.5 * v;
                a[idx[1]][idx[0]] = 0.5 * v;
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub epsilon: f64,
    /// Fixed amplitude; chosen from the coefficients when `None`.
    pub amplitude: Option<f64>,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions { epsilon: DEFAULT_EPSILON, amplitude: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PawulaCertificate {
    pub x0: Vec<f64>,
    pub epsilon: f64,
    pub amplitude: f64,
    /// Multi-index of the high-order term the witness targets.
    pub multi_index: Vec<usize>,
    /// The witness `g`.
    pub polynomial: MultiPoly,
    pub polynomial_text: String,
    /// `Zg(x0)`, evaluated through [`TruncatedOperator::apply_to_poly`].
    pub value: f64,
    /// Radius of the ball around `x0` on which `g <= 0`; `None` when `g <= 0`
    /// everywhere.
    pub validity_radius: Option<f64>,
    pub verified_local_max: bool,
}

/// Builds the witness at `x0` with default options.
pub fn pawula_counterexample(op: &TruncatedOperator, x0: &[f64]) -> Result<PawulaCertificate> {
    pawula_counterexample_with(op, x0, &CertificateOptions::default())
}

/// Targets the highest-order term with `c_alpha(x0) != 0`, falling back to
/// lower orders down to three.
pub fn pawula_counterexample_with(op: &TruncatedOperator, x0: &[f64], opts: &CertificateOptions) -> Result<PawulaCertificate> {
    if x0.len() != op.dim {
        return Err(Error::Shape(format!("x0 has {} coordinates, operator has {}", x0.len(), op.dim)));
    }
    let k = op.order();
    if k <= 2 {
        return Err(Error::OrderTooLow(k));
    }
    if !(opts.epsilon > 0.0) {
        return Err(Error::PreconditionViolated(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    let target = op
        .terms
        .iter()
        .filter(|(alpha, _)| alpha.iter().sum::<usize>() >= 3)
        .map(|(alpha, c)| (alpha, c.eval(x0)))
        .filter(|(_, v)| *v != 0.0 && v.is_finite())
        .max_by_key(|(alpha, _)| alpha.iter().sum::<usize>());
    let Some((alpha, c_alpha)) = target else {
        return Err(Error::NoViolationAtPoint { point: x0.to_vec() });
    };
    let eps = opts.epsilon;
    let fact = factorial(alpha);
    let c2 = op.pure_second_trace(x0);
    let amplitude = match opts.amplitude {
        Some(a) => a,
        None => c_alpha.signum() * (2.0 * eps * c2.abs() + 1.0) / (fact * c_alpha.abs()),
    };
    let mut g = MultiPoly::zero(x0.to_vec());
    for i in 0..op.dim {
        g.add_term(op.unit(i), -eps);
    }
    g.add_term(alpha.clone(), amplitude);
    let value = op.apply_to_poly(&g, x0);
    if !(value > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "amplitude {amplitude} gives Zg(x0) = {value}, which is not a violation"
        )));
    }
    let order = alpha.iter().sum::<usize>();
    let validity_radius = if op.dim == 1 {
        radius_1d(eps, amplitude, order)
    } else {
        radius_sampled(eps, amplitude, alpha)
    };
    let mut cert = PawulaCertificate {
        x0: x0.to_vec(),
        epsilon: eps,
        amplitude,
        multi_index: alpha.clone(),
        polynomial_text: g.to_string(),
        polynomial: g,
        value,
        validity_radius,
        verified_local_max: false,
    };
    cert.verified_local_max = verify_local_max(&cert);
    Ok(cert)
}

// g(u) = u^2 (a u^(k-2) - eps) <= 0 iff a u^(k-2) <= eps.
fn radius_1d(eps: f64, a: f64, k: usize) -> Option<f64> {
    let m = k - 2;
    if m % 2 == 0 && a <= 0.0 {
        return None;
    }
    Some((eps / a.abs()).powf(1.0 / m as f64))
}

// Along a unit direction theta, g(r theta) = r^2 (a theta^alpha r^(k-2) - eps).
fn radius_sampled(eps: f64, a: f64, alpha: &[usize]) -> Option<f64> {
    let k = alpha.iter().sum::<usize>();
    let n = alpha.len();
    let mut worst: Option<f64> = None;
    let mut dir = vec![0.0; n];
    for s in 1..=RADIUS_DIRECTIONS {
        halton_direction(s, &mut dir);
        let lead = a * alpha.iter().zip(&dir).map(|(&e, t)| t.powi(e as i32)).product::<f64>();
        if lead > 0.0 {
            let r = (eps / lead).powf(1.0 / (k - 2) as f64);
            worst = Some(worst.map_or(r, |w: f64| w.min(r)));
        }
    }
    worst
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

// Halton point pushed through the normal quantile, then normalized: a
// quasi-uniform direction on the sphere.
fn halton_direction(i: usize, out: &mut [f64]) {
    for (d, o) in out.iter_mut().enumerate() {
        let u = radical_inverse(i as u64, PRIMES[d % PRIMES.len()]).clamp(1e-12, 1.0 - 1e-12);
        *o = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    out.iter_mut().for_each(|v| *v /= norm);
}

/// Checks `g(x0) = 0` and that `g` drops below zero, with negative second
/// differences, along every axis and diagonal at a step well inside the
/// validity radius.
pub fn verify_local_max(cert: &PawulaCertificate) -> bool {
    let g = &cert.polynomial;
    let x0 = &cert.x0;
    if g.eval(x0) != 0.0 {
        return false;
    }
    let n = x0.len();
    let h = 1e-3 * cert.validity_radius.unwrap_or(1.0).min(1.0);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        dirs.push((0..n).map(|d| f64::from(u8::from(d == i))).collect());
        for j in i + 1..n {
            for s in [1.0, -1.0] {
                dirs.push((0..n).map(|d| if d == i { 1.0 } else if d == j { s } else { 0.0 }).collect());
            }
        }
    }
    dirs.iter().all(|d| {
        let at = |t: f64| -> f64 {
            let x: Vec<f64> = x0.iter().zip(d).map(|(x, v)| x + t * v).collect();
            g.eval(&x)
        };
        let (l, r) = (at(-h), at(h));
        l < 0.0 && r < 0.0 && (l + r) / (h * h) < 0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignCheck {
    pub pass: bool,
    /// Point and eigenvalue of the most negative second-order form.
    pub worst: Option<(Vec<f64>, f64)>,
    /// At a failing point, `g = -(l . u)^2 - delta |u|^2` with `l` the bad
    /// eigenvector; it has a local max at the point and `Zg > 0` there.
    pub witness: Option<MultiPoly>,
    pub witness_value: Option<f64>,
}

/// Passes iff the second-order form is nonnegative (to `-1e-12`) at every
/// point.
pub fn second_order_sign_check<'a>(op: &TruncatedOperator, points: impl IntoIterator<Item = &'a [f64]>) -> Result<SignCheck> {
    if op.order() > 2 {
        return Err(Error::PreconditionViolated(format!("operator has order {}", op.order())));
    }
    let mut worst: Option<(Vec<f64>, f64)> = None;
    for x in points {
        let m = min_eigenvalue(&op.second_order_matrix(x));
        if worst.as_ref().is_none_or(|(_, w)| m < *w) {
            worst = Some((x.to_vec(), m));
        }
    }
    let pass = worst.as_ref().is_none_or(|(_, m)| *m >= SIGN_FLOOR);
    let (witness, witness_value) = match (&worst, pass) {
        (Some((x, _)), false) => {
            let g = sign_witness(op, x);
            let v = op.apply_to_poly(&g, x);
            (Some(g), Some(v))
        }
        _ => (None, None),
    };
    Ok(SignCheck { pass, worst, witness, witness_value })
}

fn sign_witness(op: &TruncatedOperator, x: &[f64]) -> MultiPoly {
    let a = op.second_order_matrix(x);
    let n = a.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let k = eig.eigenvalues.imin();
    let mu = eig.eigenvalues[k];
    let l: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let trace: f64 = (0..n).map(|i| a[i][i]).sum();
    // Zg = -2 mu - 2 delta tr(a) >= |mu| for this delta
    let delta = mu.abs() / (2.0 * (trace.abs() + 1.0));
    let mut g = MultiPoly::zero(x.to_vec());
    for i in 0..n {
        for j in 0..n {
            let mut e = vec![0; n];
            e[i] += 1;
            e[j] += 1;
            g.add_term(e, -l[i] * l[j] - if i == j { delta } else { 0.0 });
        }
    }
    g
}

/// `Z(A^3)(x0)` for a generator spec; zero for every second-order operator
/// since `d(A^3)` and `d^2(A^3)` vanish where `A` does.
pub fn cube_test(spec: &GeneratorSpec, a: &dyn ScalarFn, x0: &[f64]) -> Result<f64> {
    let v = a.value(x0);
    if v.abs() > 1e-12 {
        return Err(Error::PreconditionViolated(format!("A(x0) = {v:e}, expected 0")));
    }
    apply_generator(spec, &Cubed(a), x0)
}

/// `Z(A^3)(x0)` with `A` polynomial, so any order can be applied.
pub fn cube_test_poly(op: &TruncatedOperator, a: &MultiPoly, x0: &[f64]) -> Result<f64> {
    let v = a.eval(x0);
    if v.abs() > 1e-12 {
        return Err(Error::PreconditionViolated(format!("A(x0) = {v:e}, expected 0")));
    }
    Ok(op.apply_to_poly(&a.mul(a).mul(a), x0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanOutcome {
    /// Lowest-index point with a certificate.
    Violation { index: usize, certificate: Box<PawulaCertificate> },
    NoViolation,
}

/// Tries the certificate at every point; operators of order two or less
/// have nothing to find.
pub fn scan(op: &TruncatedOperator, points: &[Vec<f64>], opts: &CertificateOptions) -> Result<ScanOutcome> {
    if op.order() <= 2 {
        return Ok(ScanOutcome::NoViolation);
    }
    let found = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| match pawula_counterexample_with(op, x, opts) {
            Ok(c) => Ok(Some((i, c))),
            Err(Error::NoViolationAtPoint { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .find_first(|r| !matches!(r, Ok(None)));
    match found {
        None => Ok(ScanOutcome::NoViolation),
        Some(Ok(Some((index, c)))) => Ok(ScanOutcome::Violation { index, certificate: Box::new(c) }),
        Some(Err(e)) => Err(e),
        Some(Ok(None)) => unreachable!("filtered by find_first"),
    }
}
