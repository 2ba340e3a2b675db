//! The subcommands. Each returns a [`Report`]; errors propagate to `main`,
//! which maps them to exit codes.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use kinetic_core::discretize::{build_qmatrix, maximum_principle_check, DiscreteGenerator, OFF_DIAGONAL_TOL, ROW_SUM_TOL};
use kinetic_core::generator::{CoefficientDoc, EquilibriumDensity, GeneratorSpec};
use kinetic_core::htheorem::{dh_dt_consistency, invariant_residual, solve_invariant, HCurve, InvariantSolution};
use kinetic_core::oracle::{empirical_density, l1_distance, moment_estimates_with, simulate_snapshots, SimulationOptions};
use kinetic_core::pawula::{pawula_counterexample_with, scan, second_order_sign_check, CertificateOptions, ScanOutcome, TruncatedOperator, DEFAULT_EPSILON};
use kinetic_core::semigroup::{evolve_density_series, fmt17, recover_coefficients, UniformizationOptions};
use kinetic_core::{numeric, BoundaryCondition, Error, Grid, Result, ScalarField};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::report::Report;
use crate::scenario::{parse_document, read_text, GeneratorRef, InitialDoc, Scenario};

/// A generator assembled on its grid, with the densities checks refer to.
struct Model {
    spec: GeneratorSpec,
    grid: Arc<Grid>,
    q: DiscreteGenerator,
    invariant: Option<InvariantSolution>,
    /// Normalized Gibbs density on the grid, when the generator has one.
    analytic: Option<EquilibriumDensity>,
}

impl Model {
    /// Reference for H: the discrete invariant density if solved, else the
    /// analytic one. Under absorbing walls neither is invariant for the
    /// killed evolution, so there is none.
    fn reference(&self) -> Option<ScalarField> {
        match (&self.invariant, &self.analytic) {
            (Some(inv), _) => Some(inv.density().clone()),
            (None, Some(a)) if self.grid.boundary() == BoundaryCondition::NoFlux => Some(a.field()),
            _ => None,
        }
    }

    fn discrete_equilibrium(&self) -> Result<Option<EquilibriumDensity>> {
        self.invariant.as_ref().map(InvariantSolution::equilibrium).transpose()
    }
}

fn prepare(sc: &Scenario, rep: &mut Report, need_invariant: bool) -> Result<Model> {
    let spec = sc.spec()?;
    let grid = sc.build_grid(&spec)?;
    let q = build_qmatrix(&spec, grid.clone(), sc.scheme)?;
    if !spec.label().is_empty() {
        rep.meta("generator", spec.label());
    }
    rep.meta("dimension", spec.dimension());
    rep.meta("nodes", grid.len());
    rep.meta("scheme", sc.scheme);
    rep.meta("boundary", grid.boundary());
    rep.meta("lambda_max", q.lambda_max());

    let mp = maximum_principle_check(&q);
    let worst_off = mp.worst_off_diagonal.map_or(0.0, |(_, _, v)| v.min(0.0));
    let worst_row = mp.worst_row_sum.map_or(0.0, |(_, v)| v.abs());
    rep.at_least("q_min_off_diagonal", worst_off, -OFF_DIAGONAL_TOL);
    rep.at_most("q_row_sum", worst_row, ROW_SUM_TOL);

    let wants = need_invariant || sc.checks.invariant.unwrap_or(grid.boundary() == BoundaryCondition::NoFlux);
    let invariant = if wants {
        let inv = solve_invariant(&q)?;
        let pi = inv.density();
        let rel = invariant_residual(&q, pi) / (q.norm_inf() * pi.sup_norm()).max(f64::MIN_POSITIVE);
        rep.at_most("invariant_residual_rel", rel, 1e-10);
        rep.meta("invariant_unique", inv.unique);
        rep.meta("invariant_classes", inv.basis.len());
        if !inv.unique {
            rep.warnings.push(format!("chain has {} closed classes; the invariant density is not unique", inv.basis.len()));
        }
        Some(inv)
    } else {
        None
    };

    let analytic = match spec.gibbs() {
        Some(g) => Some(EquilibriumDensity::from_gibbs(grid.clone(), g.clone(), true, f64::INFINITY)?),
        None => None,
    };
    if let (Some(inv), Some(a)) = (&invariant, &analytic) {
        let d = l1_distance(inv.density(), &a.field())?;
        rep.meta("equilibrium_l1", d);
        if let Some(limit) = sc.checks.equilibrium_l1 {
            rep.at_most("equilibrium_l1", d, limit);
        }
    }
    Ok(Model { spec, grid, q, invariant, analytic })
}

fn initial_density<'a>(sc: &'a Scenario, m: &Model) -> Result<(&'a InitialDoc, ScalarField)> {
    let init = sc.initial.as_ref().ok_or_else(|| Error::Spec("scenario needs an `initial` density".into()))?;
    let nu0 = init.density(&m.grid, m.invariant.as_ref().map(InvariantSolution::density))?;
    Ok((init, nu0))
}

fn truncation_note(rep: &mut Report, q: &DiscreteGenerator, t_end: f64, tol: f64) {
    let lambda = 1.05 * q.lambda_max();
    let opts = UniformizationOptions::default();
    rep.notes.push(format!(
        "uniformization at rate {lambda:.6e}, mean jump count {:.6e} by t = {t_end}; Poisson tails dropped below tol/4 = {:.1e} per side, time split when more than {} terms are needed",
        lambda * t_end,
        tol / 4.0,
        opts.max_terms
    ));
}

fn slug(name: &str, taken: &mut BTreeSet<String>) -> String {
    let base: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    let mut s = base.clone();
    let mut k = 2;
    while !taken.insert(s.clone()) {
        s = format!("{base}_{k}");
        k += 1;
    }
    s
}

/// `run` and `hcurve`: evolve the initial density and check positivity,
/// mass and the H-theorem. `diagnostics` adds the dissipation and boundary
/// budget to every H-curve.
pub fn run(sc: &Scenario, out: &Path, diagnostics: bool) -> Result<Report> {
    let mut rep = Report::new(if diagnostics { "hcurve" } else { "run" }, &sc.name);
    let need_pi = matches!(sc.initial, Some(InitialDoc::Equilibrium));
    let m = prepare(sc, &mut rep, need_pi)?;
    let (_, nu0) = initial_density(sc, &m)?;
    let times = sc.times.schedule()?;
    rep.meta("tol", sc.tol);
    rep.meta("samples", times.len());
    truncation_note(&mut rep, &m.q, *times.last().expect("schedule is non-empty"), sc.tol);

    let evo = evolve_density_series(&m.q, &nu0, &times, sc.tol)?;
    rep.at_least("min_density", evo.min_over_time(), -sc.checks.min_tol);
    if m.grid.boundary() == BoundaryCondition::NoFlux {
        rep.at_most("mass_drift", evo.mass_drift(), sc.checks.mass_tol);
    } else {
        let rise = evo.mass.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        rep.at_most("mass_increase", rise, sc.checks.mass_tol);
        rep.meta("mass_final", *evo.mass.last().expect("non-empty"));
    }
    evo.write_csv(&out.join("evolution.csv"))?;
    evo.write_summary_csv(&out.join("summary.csv"))?;
    rep.artifact("evolution.csv");
    rep.artifact("summary.csv");

    let hs = sc.h_functionals()?;
    let reference = m.reference();
    let diag_rho = match &m.analytic {
        Some(a) => Some(a.clone()),
        None => m.discrete_equilibrium()?,
    };
    if !hs.is_empty() && reference.is_none() {
        rep.notes.push("no invariant or Gibbs density to measure H against; H-curves skipped".into());
    }
    let mut taken = BTreeSet::new();
    if let Some(reference) = &reference {
        for h in &hs {
            let name = h.name();
            let mut curve = HCurve::from_evolution(reference, &evo, h)?;
            if diagnostics {
                if let Some(rho) = &diag_rho {
                    curve = curve.with_diagnostics(&m.spec, rho, &evo)?;
                    if let Some(d) = &curve.dissipation {
                        rep.at_most(format!("dissipation_sign[{name}]"), d.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0.0);
                    }
                    if let (Some(b), Some(limit)) = (&curve.boundary, sc.checks.boundary_tol) {
                        rep.at_most(format!("boundary_term[{name}]"), numeric::sup_norm(b), limit);
                    }
                }
            }
            rep.at_most(format!("h_increase[{name}]"), curve.max_increase(), sc.checks.monotone_tol);
            let file = format!("hcurve_{}.csv", slug(&name, &mut taken));
            curve.write_csv(&out.join(&file))?;
            rep.artifact(&file);
        }
    }

    if let Some(c) = &sc.consistency {
        let rho = m.discrete_equilibrium()?.or_else(|| m.analytic.clone());
        match rho {
            Some(rho) => {
                for h in hs.iter().filter(|h| h.is_twice_differentiable()) {
                    let r = dh_dt_consistency(&m.q, &m.spec, &rho, &nu0, h, c.t, c.dt, sc.tol)?;
                    rep.meta(&format!("dh_dt[{}]", h.name()), r);
                    rep.at_most(format!("dh_dt_gap[{}]", h.name()), r.gap, c.max_gap);
                }
            }
            None => rep.notes.push("no reference density; dH/dt consistency skipped".into()),
        }
    }
    Ok(rep)
}

/// `invariant`: solve for the stationary density and compare it with the
/// Gibbs form when one is known.
pub fn invariant(sc: &Scenario, out: &Path) -> Result<Report> {
    let mut rep = Report::new("invariant", &sc.name);
    let m = prepare(sc, &mut rep, true)?;
    let inv = m.invariant.as_ref().expect("requested above");
    rep.meta("grid_mass", inv.density().integral());
    if let Some(a) = &m.analytic {
        let pi = inv.density().values();
        let worst = pi
            .iter()
            .zip(a.values())
            .filter(|(_, r)| **r > 0.0)
            .map(|(p, r)| (p / r - 1.0).abs())
            .fold(0.0, f64::max);
        rep.meta("max_relative_gap", worst);
    }

    let mut w = csv::Writer::from_path(out.join("invariant.csv")).map_err(|e| Error::Io(e.to_string()))?;
    let dim = m.grid.dimension();
    let mut header = vec!["node_index".to_string()];
    if dim == 1 {
        header.push("x".into());
    } else {
        header.extend((1..=dim).map(|d| format!("x{d}")));
    }
    header.push("pi".into());
    header.extend((1..inv.basis.len()).map(|k| format!("pi_{k}")));
    if m.analytic.is_some() {
        header.push("gibbs".into());
    }
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for i in 0..m.grid.len() {
        let mut rec = vec![i.to_string()];
        rec.extend(m.grid.point(i).into_iter().map(fmt17));
        rec.extend(inv.basis.iter().map(|b| fmt17(b.values()[i])));
        if let Some(a) = &m.analytic {
            rec.push(fmt17(a.values()[i]));
        }
        w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    rep.artifact("invariant.csv");
    Ok(rep)
}

#[derive(Debug, Serialize)]
struct MomentRow {
    x: Vec<f64>,
    b_exact: Vec<f64>,
    a_exact: Vec<f64>,
    particles: kinetic_core::oracle::MomentEstimate,
    b_grid: Option<f64>,
    a_grid: Option<f64>,
    third_grid: Option<f64>,
}

/// `oracle-compare`: the grid evolution against an Euler-Maruyama particle
/// ensemble, plus short-time moment estimates.
pub fn oracle_compare(sc: &Scenario, out: &Path) -> Result<Report> {
    let mut rep = Report::new("oracle-compare", &sc.name);
    let o = sc.oracle.as_ref().ok_or_else(|| Error::Spec("scenario needs an `oracle` section".into()))?;
    let need_pi = matches!(sc.initial, Some(InitialDoc::Equilibrium));
    let m = prepare(sc, &mut rep, need_pi)?;
    let (init, nu0) = initial_density(sc, &m)?;
    rep.meta("seed", o.seed);
    rep.meta("particles", o.particles);
    rep.meta("dt", o.dt);
    rep.meta("tol", sc.tol);

    let evo = evolve_density_series(&m.q, &nu0, &o.times, sc.tol)?;
    let sampler = init.sampler(&m.spec, &nu0)?;
    let snaps = simulate_snapshots(&m.spec, sampler.as_ref(), o.particles, o.dt, &o.times, o.seed, &SimulationOptions::default())?;
    let absorbing = m.grid.boundary() == BoundaryCondition::Absorbing;
    for (k, (t, ens)) in o.times.iter().zip(&snaps).enumerate() {
        let d = if absorbing {
            // compare sub-probability densities: live particles over all
            // particles against the grid density off the wall traps
            let survived = ens.alive() as f64 / ens.len() as f64;
            rep.meta(&format!("survival[t={t}]"), (evo.mass[k], survived));
            let emp = match empirical_density(ens, &m.grid) {
                Ok(e) => e.values().iter().map(|v| v * survived).collect(),
                Err(Error::EmptyEnsemble) => vec![0.0; m.grid.len()],
                Err(e) => return Err(e),
            };
            let live: Vec<f64> = evo.fields[k]
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| if m.grid.is_boundary(i) { 0.0 } else { *v })
                .collect();
            l1_distance(&ScalarField::new(m.grid.clone(), emp)?, &ScalarField::new(m.grid.clone(), live)?)?
        } else {
            l1_distance(&empirical_density(ens, &m.grid)?, &evo.fields[k])?
        };
        rep.at_most(format!("l1[t={t}]"), d, o.l1_budget);
        if o.write_ensembles {
            let file = format!("ensemble_{k}.csv");
            ens.write_csv(&out.join(&file))?;
            rep.artifact(&file);
        }
    }

    if let Some(mo) = &o.moments {
        let recovery = if m.grid.dimension() == 1 { Some(recover_coefficients(&m.q, mo.t)?) } else { None };
        if let Some(w) = recovery.as_ref().and_then(|r| r.warning.as_ref()) {
            rep.warnings.push(w.to_string());
        }
        let mut rows = Vec::new();
        for x in &mo.points {
            let est = moment_estimates_with(&m.spec, x, mo.t, mo.particles, o.seed, mo.steps)?;
            let node = m.grid.nearest(x);
            let pick = |f: fn(&kinetic_core::semigroup::CoefficientRecovery) -> &ScalarField| {
                recovery.as_ref().map(|r| f(r).values()[node])
            };
            rows.push(MomentRow {
                x: x.clone(),
                b_exact: m.spec.drift(x).into_iter().map(|v| v + 0.0).collect(),
                a_exact: (0..x.len()).map(|i| m.spec.diffusion(x)[i][i]).collect(),
                particles: est,
                b_grid: pick(|r| &r.b_hat),
                a_grid: pick(|r| &r.a_hat),
                third_grid: pick(|r| &r.third_moment),
            });
        }
        rep.meta("moments", rows);
    }
    Ok(rep)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    /// Multi-index; `order` is shorthand for `[order]` in 1-D.
    #[serde(default)]
    alpha: Option<Vec<usize>>,
    #[serde(default)]
    order: Option<usize>,
    c: CoefficientDoc,
}

/// Either explicit terms `c_alpha(x) D^alpha` or a generator whose
/// second-order operator is checked.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorDoc {
    #[serde(default)]
    name: String,
    #[serde(default)]
    dimension: Option<usize>,
    #[serde(default)]
    terms: Option<Vec<TermDoc>>,
    #[serde(default)]
    generator: Option<Value>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    points: Option<Vec<Vec<f64>>>,
    /// Nodes per axis when scanning a generator's domain.
    #[serde(default = "default_scan_samples")]
    samples: usize,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default)]
    amplitude: Option<f64>,
}

fn default_scan_samples() -> usize {
    101
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn build_operator(doc: &OperatorDoc, origin: &str, base: &Path) -> Result<(TruncatedOperator, Option<GeneratorSpec>)> {
    match (&doc.terms, &doc.generator) {
        (Some(terms), None) => {
            let dim = doc
                .dimension
                .or_else(|| terms.iter().find_map(|t| t.alpha.as_ref().map(Vec::len)))
                .unwrap_or(1);
            let mut built = Vec::with_capacity(terms.len());
            for (k, t) in terms.iter().enumerate() {
                let alpha = match (&t.alpha, t.order) {
                    (Some(a), None) => a.clone(),
                    (None, Some(o)) if dim == 1 => vec![o],
                    (None, Some(_)) => return Err(Error::Spec(format!("{origin}: terms[{k}]: `order` needs dimension 1"))),
                    _ => return Err(Error::Spec(format!("{origin}: terms[{k}]: give exactly one of `alpha` and `order`"))),
                };
                built.push((alpha, t.c.build(dim)?));
            }
            Ok((TruncatedOperator::new(dim, built)?, None))
        }
        (None, Some(g)) => {
            let spec = GeneratorRef::from_value(g, origin, "generator")?.resolve(base)?;
            Ok((TruncatedOperator::from_spec(&spec)?, Some(spec)))
        }
        _ => Err(Error::Spec(format!("{origin}: give exactly one of `terms` and `generator`"))),
    }
}

fn probe_points(doc: &OperatorDoc, spec: Option<&GeneratorSpec>, origin: &str) -> Result<Vec<Vec<f64>>> {
    if let Some(x0) = &doc.x0 {
        return Ok(vec![x0.clone()]);
    }
    if let Some(p) = &doc.points {
        return Ok(p.clone());
    }
    match spec {
        Some(spec) => {
            let grid = spec.domain().grid(doc.samples)?;
            Ok(grid.points().into_iter().filter(|x| spec.domain().is_interior(x)).collect())
        }
        None => Err(Error::Spec(format!("{origin}: give `x0` or `points`"))),
    }
}

/// `pawula`: for order >= 3, search for a certificate that the operator
/// breaks the positive maximum principle; for order <= 2, check the sign
/// of the second-order part.
pub fn pawula(path: &Path, out: &Path) -> Result<Report> {
    let origin = path.display().to_string();
    let doc: OperatorDoc = parse_document(&read_text(path)?, &origin)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("operator");
    let name = if doc.name.is_empty() { stem.to_string() } else { doc.name.clone() };
    let mut rep = Report::new("pawula", &name);
    let (op, spec) = build_operator(&doc, &origin, &base)?;
    let points = probe_points(&doc, spec.as_ref(), &origin)?;
    if points.iter().any(|p| p.len() != op.dimension()) {
        return Err(Error::Shape(format!("probe points must have {} coordinates", op.dimension())));
    }
    rep.meta("order", op.order());
    rep.meta("dimension", op.dimension());
    rep.meta("points", points.len());

    if op.order() <= 2 {
        let sign = second_order_sign_check(&op, points.iter().map(Vec::as_slice))?;
        let worst = sign.worst.as_ref().map_or(0.0, |(_, v)| *v);
        rep.at_least("second_order_min_eigenvalue", worst.min(0.0), -1e-12);
        if let Some(g) = &sign.witness {
            rep.notes.push(format!("witness g = {g}"));
        }
        rep.meta("sign_check", &sign);
        return Ok(rep);
    }

    let opts = CertificateOptions { epsilon: doc.epsilon, amplitude: doc.amplitude };
    let cert = if points.len() == 1 {
        match pawula_counterexample_with(&op, &points[0], &opts) {
            Ok(c) => Some(c),
            Err(Error::NoViolationAtPoint { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        match scan(&op, &points, &opts)? {
            ScanOutcome::Violation { certificate, .. } => Some(*certificate),
            ScanOutcome::NoViolation => None,
        }
    };
    match cert {
        Some(cert) => {
            rep.notes.push(format!("witness g = {} has a local max at x0 = {:?}", cert.polynomial_text, cert.x0));
            rep.at_most("Zg_at_local_max", cert.value, 0.0);
            rep.meta("verified_local_max", cert.verified_local_max);
            std::fs::write(out.join("certificate.json"), serde_json::to_string_pretty(&cert)? + "\n")?;
            rep.artifact("certificate.json");
            rep.meta("certificate", cert);
        }
        None => rep.notes.push("order-k coefficients vanish at every probe point; no certificate".into()),
    }
    Ok(rep)
}
