//! JSON document form of a generator.
//!
//! ```json
//! {
//!   "dimension": 1,
//!   "a": "(1 + (x1 ^ 2))",
//!   "b": "((-1) * x1)",
//!   "domain": { "kind": "full-line-truncated", "bounds": [[-10, 10]], "bc": "no-flux" },
//!   "gibbs": { "beta": 1, "H": "(1.5 * ln((1 + (x1 ^ 2))))" }
//! }
//! ```
//!
//! A coefficient is an expression string, a number, or a 1-D table
//! `{"nodes": [...], "values": [...]}`. In n-D, `a` is an n x n array and
//! `b` an n-array of coefficients; in 1-D both may be bare coefficients.

use serde::{Deserialize, Serialize};

use super::{Coefficient, DomainKind, DomainSpec, ExprField, GeneratorSpec, Gibbs, Table1d};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::BoundaryCondition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientDoc {
    Number(f64),
    Expr(String),
    Table { nodes: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixDoc {
    Matrix(Vec<Vec<CoefficientDoc>>),
    Scalar(CoefficientDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorDoc {
    Vector(Vec<CoefficientDoc>),
    Scalar(CoefficientDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDoc {
    pub kind: DomainKind,
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub bc: BoundaryCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsDoc {
    pub beta: f64,
    #[serde(rename = "H")]
    pub h: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDoc {
    pub dimension: usize,
    pub a: MatrixDoc,
    pub b: VectorDoc,
    pub domain: DomainDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs: Option<GibbsDoc>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

impl CoefficientDoc {
    pub fn build(&self, dim: usize) -> Result<Coefficient> {
        Ok(match self {
            CoefficientDoc::Number(v) => Coefficient::constant(*v, dim),
            CoefficientDoc::Expr(s) => Coefficient::parse(s, dim)?,
            CoefficientDoc::Table { nodes, values } => Coefficient::Table(Table1d::new(nodes.clone(), values.clone())?),
        })
    }

    fn of(c: &Coefficient) -> Self {
        match c {
            Coefficient::Expr(e) => CoefficientDoc::Expr(e.expr().to_string()),
            Coefficient::Table(t) => CoefficientDoc::Table { nodes: t.nodes().to_vec(), values: t.values().to_vec() },
        }
    }
}

impl GeneratorDoc {
    pub fn to_spec(&self) -> Result<GeneratorSpec> {
        let n = self.dimension;
        if n == 0 {
            return Err(Error::Spec("dimension must be positive".into()));
        }
        let a = match &self.a {
            MatrixDoc::Scalar(c) if n == 1 => vec![vec![c.build(1)?]],
            MatrixDoc::Scalar(_) => return Err(Error::Spec(format!("`a` must be a {n}x{n} array"))),
            MatrixDoc::Matrix(rows) => rows
                .iter()
                .map(|row| row.iter().map(|c| c.build(n)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
        };
        let b = match &self.b {
            VectorDoc::Scalar(c) if n == 1 => vec![c.build(1)?],
            VectorDoc::Scalar(_) => return Err(Error::Spec(format!("`b` must be an array of {n}"))),
            VectorDoc::Vector(v) => v.iter().map(|c| c.build(n)).collect::<Result<Vec<_>>>()?,
        };
        let bounds = self.domain.bounds.iter().map(|&[lo, hi]| (lo, hi)).collect();
        let domain = DomainSpec::new(self.domain.kind, bounds, self.domain.bc)?;
        let mut spec = GeneratorSpec::new(a, b, domain)?.with_label(self.label.clone());
        if let Some(g) = &self.gibbs {
            spec = spec.with_gibbs(Gibbs::new(g.beta, ExprField::new(Expr::parse(&g.h)?, n)?)?);
        }
        Ok(spec)
    }

    pub fn from_spec(spec: &GeneratorSpec) -> Self {
        let n = spec.dimension();
        let (a, b) = if n == 1 {
            (
                MatrixDoc::Scalar(CoefficientDoc::of(spec.a_coefficient(0, 0))),
                VectorDoc::Scalar(CoefficientDoc::of(spec.b_coefficient(0))),
            )
        } else {
            (
                MatrixDoc::Matrix(
                    (0..n)
                        .map(|i| (0..n).map(|j| CoefficientDoc::of(spec.a_coefficient(i, j))).collect())
                        .collect(),
                ),
                VectorDoc::Vector((0..n).map(|i| CoefficientDoc::of(spec.b_coefficient(i))).collect()),
            )
        };
        let d = spec.domain();
        GeneratorDoc {
            dimension: n,
            a,
            b,
            domain: DomainDoc { kind: d.kind, bounds: d.bounds.iter().map(|&(l, h)| [l, h]).collect(), bc: d.boundary },
            gibbs: spec.gibbs().map(|g| GibbsDoc { beta: g.beta, h: g.energy.expr().to_string() }),
            label: spec.label().to_string(),
        }
    }
}

impl GeneratorSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GeneratorDoc::from_spec(self)).expect("documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: GeneratorDoc = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Spec(format!("{}: {}", e.path(), e.inner())))?;
        doc.to_spec()
    }
}
