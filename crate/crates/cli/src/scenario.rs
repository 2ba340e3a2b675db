//! Scenario documents: what to evolve, on which grid, and what to check.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use kinetic_core::discretize::Scheme;
use kinetic_core::generator::{catalog_example, ExprField, GeneratorDoc, GeneratorSpec};
use kinetic_core::htheorem::HFunctional;
use kinetic_core::oracle::{GridDensity, PointMass, Sampler, TruncatedGaussian, UniformBox};
use kinetic_core::{numeric, BoundaryCondition, Error, Grid, Result, ScalarField};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_GRID_N: usize = 401;

/// Parses `text` into `T`, reporting the JSON path of the offending field or
/// the line and column of a syntax error.
pub fn parse_document<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            Error::Spec(format!("{origin}: {inner}"))
        } else {
            Error::Spec(format!("{origin}: at `{path}`: {inner}"))
        }
    })
}

fn from_value<T: DeserializeOwned>(value: &Value, origin: &str, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let full = if path == "." { prefix.to_string() } else { format!("{prefix}.{path}") };
        Error::Spec(format!("{origin}: at `{full}`: {inner}"))
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogRef {
    pub catalog: String,
    #[serde(default)]
    pub alpha: f64,
    /// 1-D box replacing the catalog default.
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
    #[serde(default)]
    pub bc: Option<BoundaryCondition>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: PathBuf,
}

/// A generator given by catalog name, by a separate document, or inline.
#[derive(Debug, Clone)]
pub enum GeneratorRef {
    Catalog(CatalogRef),
    File(FileRef),
    Inline(Box<GeneratorDoc>),
}

impl GeneratorRef {
    pub fn from_value(value: &Value, origin: &str, prefix: &str) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Spec(format!("{origin}: at `{prefix}`: expected an object")))?;
        if obj.contains_key("catalog") {
            Ok(GeneratorRef::Catalog(from_value(value, origin, prefix)?))
        } else if obj.contains_key("file") {
            Ok(GeneratorRef::File(from_value(value, origin, prefix)?))
        } else {
            Ok(GeneratorRef::Inline(Box::new(from_value(value, origin, prefix)?)))
        }
    }

    /// The generator, with relative `file` paths taken against `base`.
    pub fn resolve(&self, base: &Path) -> Result<GeneratorSpec> {
        match self {
            GeneratorRef::Catalog(c) => {
                let ex = catalog_example(&c.catalog, c.alpha)?;
                let mut spec = match c.bounds {
                    Some([lo, hi]) => ex.on_interval(lo, hi)?,
                    None => ex.spec.clone(),
                };
                if let Some(bc) = c.bc {
                    let domain = spec.domain().clone().with_boundary(bc);
                    spec = spec.with_domain(domain)?;
                }
                Ok(spec)
            }
            GeneratorRef::File(f) => {
                let path = base.join(&f.file);
                let text = read_text(&path)?;
                let doc: GeneratorDoc = parse_document(&text, &path.display().to_string())?;
                doc.to_spec()
            }
            GeneratorRef::Inline(doc) => doc.to_spec(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Counts {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    pub n: Counts,
}

impl Default for GridDoc {
    fn default() -> Self {
        GridDoc { n: Counts::Uniform(DEFAULT_GRID_N) }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialDoc {
    Gaussian { mean: Vec<f64>, sd: f64 },
    Delta { at: Vec<f64> },
    Bump { center: Vec<f64>, radius: f64 },
    Uniform { bounds: Vec<[f64; 2]> },
    Expression { density: String },
    Equilibrium,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum HDoc {
    Named(String),
    Full(HFunctional),
}

impl HDoc {
    pub fn build(&self) -> Result<HFunctional> {
        match self {
            HDoc::Named(name) => name.parse(),
            HDoc::Full(h) => HFunctional::new(h.kind.clone())?.scaled(h.scale, h.shift),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TimesDoc {
    List(Vec<f64>),
    Range { end: f64, samples: usize },
}

impl TimesDoc {
    pub fn schedule(&self) -> Result<Vec<f64>> {
        let times = match self {
            TimesDoc::List(v) => v.clone(),
            TimesDoc::Range { end, samples } => {
                if *samples == 0 {
                    return Err(Error::Spec("times.samples must be positive".into()));
                }
                (0..=*samples).map(|k| end * k as f64 / *samples as f64).collect()
            }
        };
        if times.is_empty() || times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Spec("times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spec("times must be strictly increasing".into()));
        }
        Ok(times)
    }
}

impl Default for TimesDoc {
    fn default() -> Self {
        TimesDoc::Range { end: 1.0, samples: 100 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksDoc {
    #[serde(default = "default_monotone_tol")]
    pub monotone_tol: f64,
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    #[serde(default = "default_min_tol")]
    pub min_tol: f64,
    /// Require an invariant density. Defaults to on for no-flux walls.
    #[serde(default)]
    pub invariant: Option<bool>,
    /// Bound on the boundary term of the H-budget, when set.
    #[serde(default)]
    pub boundary_tol: Option<f64>,
    /// Bound on the L1 gap between the discrete and analytic equilibria.
    #[serde(default)]
    pub equilibrium_l1: Option<f64>,
}

fn default_monotone_tol() -> f64 {
    1e-10
}
fn default_mass_tol() -> f64 {
    1e-9
}
fn default_min_tol() -> f64 {
    1e-10
}

impl Default for ChecksDoc {
    fn default() -> Self {
        ChecksDoc {
            monotone_tol: default_monotone_tol(),
            mass_tol: default_mass_tol(),
            min_tol: default_min_tol(),
            invariant: None,
            boundary_tol: None,
            equilibrium_l1: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyDoc {
    pub t: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_gap")]
    pub max_gap: f64,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_max_gap() -> f64 {
    0.02
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsDoc {
    pub points: Vec<Vec<f64>>,
    pub t: f64,
    #[serde(default = "default_moment_particles")]
    pub particles: usize,
    #[serde(default = "default_moment_steps")]
    pub steps: usize,
}

fn default_moment_particles() -> usize {
    100_000
}
fn default_moment_steps() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleDoc {
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    pub times: Vec<f64>,
    #[serde(default = "default_l1_budget")]
    pub l1_budget: f64,
    #[serde(default)]
    pub moments: Option<MomentsDoc>,
    #[serde(default = "yes")]
    pub write_ensembles: bool,
}

fn default_particles() -> usize {
    100_000
}
fn default_l1_budget() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    generator: Value,
    #[serde(default)]
    grid: GridDoc,
    #[serde(default)]
    scheme: Scheme,
    #[serde(default)]
    initial: Option<InitialDoc>,
    #[serde(default)]
    h: Vec<HDoc>,
    /// Shift every H-functional so that `h(0) = 0`.
    #[serde(default)]
    h_zero_at_origin: bool,
    #[serde(default)]
    times: Option<TimesDoc>,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default)]
    checks: ChecksDoc,
    #[serde(default)]
    consistency: Option<ConsistencyDoc>,
    #[serde(default)]
    oracle: Option<OracleDoc>,
    #[serde(default)]
    output: Option<PathBuf>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

/// A parsed scenario, with its generator reference checked but not built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub generator: GeneratorRef,
    pub grid: GridDoc,
    pub scheme: Scheme,
    pub initial: Option<InitialDoc>,
    pub h: Vec<HDoc>,
    pub h_zero_at_origin: bool,
    pub times: TimesDoc,
    pub tol: f64,
    pub checks: ChecksDoc,
    pub consistency: Option<ConsistencyDoc>,
    pub oracle: Option<OracleDoc>,
    pub output: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    pub base: PathBuf,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
        Self::parse(&text, &path.display().to_string(), base, &stem)
    }

    pub fn parse(text: &str, origin: &str, base: PathBuf, stem: &str) -> Result<Self> {
        let raw: RawScenario = parse_document(text, origin)?;
        let generator = GeneratorRef::from_value(&raw.generator, origin, "generator")?;
        Ok(Scenario {
            name: if raw.name.is_empty() { stem.to_string() } else { raw.name },
            generator,
            grid: raw.grid,
            scheme: raw.scheme,
            initial: raw.initial,
            h: raw.h,
            h_zero_at_origin: raw.h_zero_at_origin,
            times: raw.times.unwrap_or_default(),
            tol: raw.tol,
            checks: raw.checks,
            consistency: raw.consistency,
            oracle: raw.oracle,
            output: raw.output.map(|p| base.join(p)),
            base,
        })
    }

    pub fn spec(&self) -> Result<GeneratorSpec> {
        self.generator.resolve(&self.base)
    }

    pub fn build_grid(&self, spec: &GeneratorSpec) -> Result<Arc<Grid>> {
        let domain = spec.domain();
        let dim = domain.dimension();
        let counts = match &self.grid.n {
            Counts::Uniform(n) => vec![*n; dim],
            Counts::PerAxis(v) => v.clone(),
        };
        if counts.len() != dim {
            return Err(Error::Spec(format!("grid.n has {} entries for a {dim}-D domain", counts.len())));
        }
        Ok(Arc::new(Grid::uniform_box(&domain.bounds, &counts, domain.boundary)?))
    }

    pub fn h_functionals(&self) -> Result<Vec<HFunctional>> {
        self.h
            .iter()
            .map(|d| {
                let h = d.build()?;
                Ok(if self.h_zero_at_origin { h.normalized_at_zero() } else { h })
            })
            .collect()
    }
}

fn check_dim(what: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Spec(format!("initial.{what} has {} entries for a {dim}-D domain", v.len())));
    }
    Ok(())
}

fn normalized(grid: &Arc<Grid>, values: Vec<f64>) -> Result<ScalarField> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Spec("initial density must be finite and non-negative on the grid".into()));
    }
    let mass = numeric::dot(&values, &grid.weights());
    if !(mass > 0.0) {
        return Err(Error::Spec("initial density has zero mass on the grid".into()));
    }
    ScalarField::new(grid.clone(), values.into_iter().map(|v| v / mass).collect())
}

impl InitialDoc {
    /// Unit-mass density on `grid`. `equilibrium` supplies the discrete
    /// invariant density for the `equilibrium` variant.
    pub fn density(&self, grid: &Arc<Grid>, equilibrium: Option<&ScalarField>) -> Result<ScalarField> {
        let dim = grid.dimension();
        let pts = grid.points();
        let values: Vec<f64> = match self {
            InitialDoc::Gaussian { mean, sd } => {
                check_dim("mean", mean, dim)?;
                if !(*sd > 0.0) {
                    return Err(Error::Spec("initial.sd must be positive".into()));
                }
                pts.iter()
                    .map(|x| {
                        let r2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                        (-r2 / (2.0 * sd * sd)).exp()
                    })
                    .collect()
            }
            InitialDoc::Delta { at } => {
                check_dim("at", at, dim)?;
                let k = grid.nearest(at);
                let mut v = vec![0.0; grid.len()];
                v[k] = 1.0;
                v
            }
            InitialDoc::Bump { center, radius } => {
                check_dim("center", center, dim)?;
                if !(*radius > 0.0) {
                    return Err(Error::Spec("initial.radius must be positive".into()));
                }
                pts.iter()
                    .map(|x| {
                        let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (radius * radius);
                        if r2 < 1.0 {
                            (1.0 - r2).powi(2)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            InitialDoc::Uniform { bounds } => {
                if bounds.len() != dim {
                    return Err(Error::Spec(format!("initial.bounds has {} entries for a {dim}-D domain", bounds.len())));
                }
                pts.iter()
                    .map(|x| {
                        let inside = x.iter().zip(bounds).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi);
                        if inside {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            InitialDoc::Expression { density } => {
                let f = ExprField::parse(density, dim)?;
                pts.iter().map(|x| f.eval(x)).collect()
            }
            InitialDoc::Equilibrium => {
                let pi = equilibrium.ok_or(Error::NoInvariantDensity)?;
                pi.values().to_vec()
            }
        };
        normalized(grid, values)
    }

    /// Particle sampler matching [`InitialDoc::density`] as closely as the
    /// samplers allow; falls back to sampling the grid density.
    pub fn sampler(&self, spec: &GeneratorSpec, grid_density: &ScalarField) -> Result<Box<dyn Sampler>> {
        let bounds = spec.domain().bounds.clone();
        Ok(match self {
            InitialDoc::Gaussian { mean, sd } => Box::new(TruncatedGaussian { mean: mean.clone(), sd: *sd, bounds }),
            InitialDoc::Delta { at } => Box::new(PointMass(at.clone())),
            InitialDoc::Uniform { bounds: b } => Box::new(UniformBox(b.iter().map(|[lo, hi]| (*lo, *hi)).collect())),
            _ => Box::new(GridDensity::new(grid_density)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario> {
        Scenario::parse(text, "test.json", PathBuf::new(), "test")
    }

    #[test]
    fn minimal_catalog_scenario() {
        let s = parse(r#"{"generator": {"catalog": "appendix2a", "alpha": 1}}"#).unwrap();
        assert_eq!(s.name, "test");
        assert!(matches!(s.generator, GeneratorRef::Catalog(_)));
        let spec = s.spec().unwrap();
        let grid = s.build_grid(&spec).unwrap();
        assert_eq!(grid.len(), DEFAULT_GRID_N);
        assert_eq!(s.times.schedule().unwrap().len(), 101);
    }

    #[test]
    fn unknown_field_names_its_path() {
        let err = parse(r#"{"generator": {"catalog": "appendix2a", "alfa": 1}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("generator"), "{msg}");
        assert!(msg.contains("alfa"), "{msg}");
        let err = parse(r#"{"generator": {"catalog": "appendix2a"}, "checks": {"monotone": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("checks"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse("{\n  \"generator\": {\n    \"catalog\": \"appendix2a\",\n  }\n}").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn inline_generator_with_bad_domain_is_rejected() {
        let text = r#"{"generator": {"dimension": 1, "a": 1, "b": 0,
                       "domain": {"kind": "box", "bounds": [[1, -1]]}}}"#;
        let s = parse(text).unwrap();
        assert!(s.spec().is_err());
    }

    #[test]
    fn initial_densities_have_unit_mass() {
        let grid = Arc::new(Grid::uniform(-5.0, 5.0, 201, BoundaryCondition::NoFlux).unwrap());
        let docs = [
            InitialDoc::Gaussian { mean: vec![1.0], sd: 0.5 },
            InitialDoc::Delta { at: vec![0.3] },
            InitialDoc::Bump { center: vec![0.0], radius: 1.0 },
            InitialDoc::Uniform { bounds: vec![[-1.0, 2.0]] },
            InitialDoc::Expression { density: "exp(-x^2)".into() },
        ];
        for d in &docs {
            let f = d.density(&grid, None).unwrap();
            assert!((f.integral() - 1.0).abs() < 1e-12, "{d:?}");
            assert!(f.min() >= 0.0);
        }
        assert_eq!(InitialDoc::Equilibrium.density(&grid, None).unwrap_err(), Error::NoInvariantDensity);
        assert!(InitialDoc::Gaussian { mean: vec![0.0, 0.0], sd: 1.0 }.density(&grid, None).is_err());
    }

    #[test]
    fn times_must_increase() {
        assert!(TimesDoc::List(vec![0.0, 0.5, 0.5]).schedule().is_err());
        assert!(TimesDoc::List(vec![-1.0]).schedule().is_err());
        assert_eq!(TimesDoc::Range { end: 1.0, samples: 4 }.schedule().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn h_documents() {
        assert_eq!(HDoc::Named("xlogx".into()).build().unwrap(), HFunctional::xlogx());
        assert!(HDoc::Named("cosh".into()).build().is_err());
        let doc: HDoc = serde_json::from_str(r#"{"kind": "square", "scale": 2}"#).unwrap();
        assert_eq!(doc.build().unwrap().value(3.0), 18.0);
    }
}
