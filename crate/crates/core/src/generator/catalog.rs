//! Analytic example generators with known equilibria.

use std::sync::Arc;

use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::{DomainKind, DomainSpec, EquilibriumDensity, ExprField, GeneratorSpec, Gibbs};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::Grid;

pub const CATALOG_NAMES: [&str; 4] = ["appendix2a", "appendix2b", "ornstein-uhlenbeck", "pure-diffusion"];

/// Probability mass allowed outside the default truncation box.
pub const TAIL_MASS: f64 = 1e-6;

// Default boxes when the density is not integrable, so no tail criterion
// applies.
const FLAT_BOX: (f64, f64) = (-10.0, 10.0);
const HALF_LINE_BOX: (f64, f64) = (0.05, 20.0);
// Upper limit on a default truncation radius; slowly decaying tails near
// the integrability threshold would otherwise ask for absurd boxes.
const MAX_RADIUS: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct CatalogExample {
    pub name: String,
    pub alpha: f64,
    /// Generator on the default truncation box.
    pub spec: GeneratorSpec,
    pub gibbs: Gibbs,
    /// Integral of `exp(-beta H)` over the untruncated domain; infinite when
    /// the equilibrium is not normalizable.
    pub total_mass: f64,
}

impl CatalogExample {
    pub fn is_normalizable(&self) -> bool {
        self.total_mass.is_finite()
    }

    /// The equilibrium sampled on `grid`, normalized to unit mass over it.
    pub fn equilibrium_on(&self, grid: Arc<Grid>) -> Result<EquilibriumDensity> {
        EquilibriumDensity::from_gibbs(grid, self.gibbs.clone(), true, self.total_mass)
    }

    /// Same example on a different box.
    pub fn on_interval(&self, lo: f64, hi: f64) -> Result<GeneratorSpec> {
        let domain = DomainSpec::interval(self.spec.domain().kind, lo, hi)?
            .with_boundary(self.spec.domain().boundary);
        self.spec.clone().with_domain(domain)
    }
}

fn check_alpha(name: &str, alpha: f64) -> Result<()> {
    if !(alpha >= -0.5) {
        return Err(Error::ParameterOutOfRange(format!("{name} needs alpha >= -1/2, got {alpha}")));
    }
    Ok(())
}

/// Builds one of [`CATALOG_NAMES`]. `alpha` is ignored by the
/// Ornstein-Uhlenbeck and pure-diffusion entries.
pub fn catalog_example(name: &str, alpha: f64) -> Result<CatalogExample> {
    let x = Expr::var(0);
    let (a, b, beta_h, total_mass, kind, bounds) = match name {
        "appendix2a" => {
            check_alpha(name, alpha)?;
            let a = Expr::add(Expr::num(1.0), Expr::pow(x.clone(), Expr::num(2.0)));
            let b = Expr::mul(Expr::num(-(2.0 * alpha - 1.0)), x.clone());
            let h = Expr::mul(Expr::num(alpha + 0.5), Expr::ln(a.clone()));
            let mass = if alpha > 0.0 {
                (0.5 * std::f64::consts::PI.ln() + ln_gamma(alpha) - ln_gamma(alpha + 0.5)).exp()
            } else {
                f64::INFINITY
            };
            let bounds = if alpha > 0.0 {
                // two tails, each below int_L^inf x^(-2 alpha - 1) = L^(-2 alpha) / (2 alpha)
                let l = (1.0 / (alpha * TAIL_MASS * mass)).powf(0.5 / alpha).clamp(1.0, MAX_RADIUS);
                (-l, l)
            } else {
                FLAT_BOX
            };
            (a, b, h, mass, DomainKind::FullLineTruncated, bounds)
        }
        "appendix2b" => {
            check_alpha(name, alpha)?;
            let a = Expr::pow(x.clone(), Expr::num(2.0));
            let b = Expr::sub(Expr::num(1.0), Expr::mul(Expr::num(2.0 * alpha - 1.0), x.clone()));
            let h = Expr::add(
                Expr::mul(Expr::num(2.0 * alpha + 1.0), Expr::ln(x.clone())),
                Expr::div(Expr::num(1.0), x.clone()),
            );
            let (mass, bounds) = if alpha > 0.0 {
                // with u = 1/x the density becomes u^(2 alpha - 1) e^(-u) du
                let s = 2.0 * alpha;
                let u_hi = bisect_log(|u| 0.5 * TAIL_MASS - gamma_ur(s, u), 1e-8, 1e4);
                let u_lo = bisect_log(|u| gamma_lr(s, u) - 0.5 * TAIL_MASS, 1e-300, 1e4);
                (ln_gamma(s).exp(), (1.0 / u_hi, (1.0 / u_lo).min(MAX_RADIUS)))
            } else {
                (f64::INFINITY, HALF_LINE_BOX)
            };
            (a, b, h, mass, DomainKind::HalfLineTruncated, bounds)
        }
        "ornstein-uhlenbeck" => {
            let h = Expr::div(Expr::pow(x.clone(), Expr::num(2.0)), Expr::num(2.0));
            let l = std::f64::consts::SQRT_2 * erfc_inv(TAIL_MASS);
            (
                Expr::num(1.0),
                Expr::neg(x.clone()),
                h,
                (2.0 * std::f64::consts::PI).sqrt(),
                DomainKind::FullLineTruncated,
                (-l, l),
            )
        }
        "pure-diffusion" => (
            Expr::num(1.0),
            Expr::num(0.0),
            Expr::num(0.0),
            f64::INFINITY,
            DomainKind::FullLineTruncated,
            FLAT_BOX,
        ),
        other => return Err(Error::UnknownExample(other.to_string())),
    };
    let domain = DomainSpec::interval(kind, bounds.0, bounds.1)?;
    let gibbs = Gibbs::new(1.0, ExprField::new(beta_h, 1)?)?;
    let spec = GeneratorSpec::new(
        vec![vec![super::Coefficient::Expr(ExprField::new(a, 1)?)]],
        vec![super::Coefficient::Expr(ExprField::new(b, 1)?)],
        domain,
    )?
    .with_gibbs(gibbs.clone())
    .with_label(name);
    Ok(CatalogExample { name: name.to_string(), alpha, spec, gibbs, total_mass })
}

// Root of an increasing function on [lo, hi], bisected in log space.
fn bisect_log(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix2a_alpha_one() {
        let ex = catalog_example("appendix2a", 1.0).unwrap();
        let x = [1.5];
        assert_eq!(ex.spec.diffusion(&x)[0][0], 1.0 + 2.25);
        assert_eq!(ex.spec.drift(&x)[0], -1.5);
        let rho = ex.gibbs.weight(&x);
        assert!((rho - (1.0f64 + 2.25).powf(-1.5)).abs() < 1e-15);
        assert!(ex.is_normalizable());
        assert!((ex.total_mass - 2.0).abs() < 1e-12);
    }

    #[test]
    fn appendix2a_alpha_zero_is_not_normalizable() {
        let ex = catalog_example("appendix2a", 0.0).unwrap();
        assert!(!ex.is_normalizable());
        assert!((ex.gibbs.weight(&[2.0]) - 5f64.powf(-0.5)).abs() < 1e-15);
        assert_eq!(ex.spec.drift(&[2.0])[0], 2.0);
    }

    #[test]
    fn ou_entry() {
        let ex = catalog_example("ornstein-uhlenbeck", f64::NAN).unwrap();
        assert_eq!(ex.spec.diffusion(&[3.0])[0][0], 1.0);
        assert_eq!(ex.spec.drift(&[3.0])[0], -3.0);
        assert!((ex.gibbs.weight(&[1.0]) - (-0.5f64).exp()).abs() < 1e-15);
        let (lo, hi) = ex.spec.domain().bounds[0];
        assert!((statrs::function::erf::erfc(hi / 2f64.sqrt()) - 1e-6).abs() < 1e-12);
        assert_eq!(lo, -hi);
    }

    #[test]
    fn default_boxes_leave_small_tails() {
        // numerical tail integrals of the normalized densities
        for (name, alpha) in [("appendix2a", 1.0), ("appendix2a", 2.5), ("appendix2b", 1.0), ("appendix2b", 0.75)] {
            let ex = catalog_example(name, alpha).unwrap();
            let (lo, hi) = ex.spec.domain().bounds[0];
            let inside = simpson(&|x| ex.gibbs.weight(&[x]), lo, hi, 2_000_000) / ex.total_mass;
            let outside = 1.0 - inside;
            assert!(outside < 1.05e-6 && outside > 0.5e-6, "{name} {alpha}: {outside}");
        }
    }

    fn simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        // integrate in log coordinates for the heavy tails
        if lo < 0.0 && hi > 0.0 {
            return simpson(&|x| f(-x), 0.0, -lo, n) + simpson(f, 0.0, hi, n);
        }
        let g = |t: f64| {
            let x = t.exp() - 1.0 + lo.max(0.0);
            f(x) * (x - lo.max(0.0) + 1.0)
        };
        let (a, b) = (0.0, (hi - lo.max(0.0) + 1.0).ln());
        let h = (b - a) / n as f64;
        let mut s = g(a) + g(b);
        for i in 1..n {
            s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn appendix2b_mass_is_gamma() {
        let ex = catalog_example("appendix2b", 1.0).unwrap();
        assert!((ex.total_mass - 1.0).abs() < 1e-12);
        let ex = catalog_example("appendix2b", 1.5).unwrap();
        assert!((ex.total_mass - 2.0).abs() < 1e-12);
        assert!(!catalog_example("appendix2b", -0.5).unwrap().is_normalizable());
    }

    #[test]
    fn errors() {
        assert!(matches!(catalog_example("lorenz", 1.0), Err(Error::UnknownExample(_))));
        assert!(matches!(catalog_example("appendix2a", -0.6), Err(Error::ParameterOutOfRange(_))));
        assert!(matches!(catalog_example("appendix2b", f64::NAN), Err(Error::ParameterOutOfRange(_))));
        assert!(catalog_example("appendix2a", -0.5).is_ok());
    }
}
