//! Scalar functions with optional exact derivatives.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr};
use crate::grid::Grid;
use crate::numeric;

/// Value, gradient and Hessian of a function at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
}

impl Jet {
    pub fn constant(value: f64, dim: usize) -> Self {
        Jet { value, gradient: vec![0.0; dim], hessian: vec![vec![0.0; dim]; dim] }
    }
}

/// A twice-differentiable scalar function on R^n.
///
/// The default [`ScalarFn::jet`] differentiates [`ScalarFn::value`] with
/// fourth-order central differences; implementors with closed-form
/// derivatives override it.
pub trait ScalarFn: Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        Ok(fd_jet(|p| self.value(p), x))
    }
}

/// Fourth-order finite-difference jet.
pub fn fd_jet(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Jet {
    let n = x.len();
    let mut gradient = vec![0.0; n];
    let mut hessian = vec![vec![0.0; n]; n];
    let mut p = x.to_vec();
    for i in 0..n {
        let h = numeric::fd_step(x[i]);
        let (d1, d2) = numeric::fd4(
            |t| {
                let mut q = x.to_vec();
                q[i] = t;
                f(&q)
            },
            x[i],
            h,
        );
        gradient[i] = d1;
        hessian[i][i] = d2;
    }
    const C: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    for i in 0..n {
        for j in i + 1..n {
            let (hi, hj) = (numeric::fd_step(x[i]), numeric::fd_step(x[j]));
            let mut acc = 0.0;
            for &(si, ci) in &C {
                for &(sj, cj) in &C {
                    p.copy_from_slice(x);
                    p[i] += si * hi;
                    p[j] += sj * hj;
                    acc += ci * cj * f(&p);
                }
            }
            let v = acc / (144.0 * hi * hj);
            hessian[i][j] = v;
            hessian[j][i] = v;
        }
    }
    Jet { value: f(x), gradient, hessian }
}

/// Expression with its symbolic first and second derivatives precomputed.
#[derive(Debug, Clone)]
pub struct ExprField {
    expr: Expr,
    compiled: CompiledExpr,
    gradient: Vec<CompiledExpr>,
    hessian: Vec<Vec<CompiledExpr>>,
    dim: usize,
}

impl PartialEq for ExprField {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr && self.dim == other.dim
    }
}

impl ExprField {
    pub fn new(expr: Expr, dim: usize) -> Result<Self> {
        if expr.arity() > dim {
            return Err(Error::Expression(format!(
                "`{expr}` uses x{} but the dimension is {dim}",
                expr.arity()
            )));
        }
        let first: Vec<Expr> = (0..dim).map(|i| expr.diff(i)).collect();
        let hessian = first
            .iter()
            .map(|d| (0..dim).map(|j| d.diff(j).compile()).collect())
            .collect();
        Ok(ExprField {
            compiled: expr.compile(),
            gradient: first.iter().map(Expr::compile).collect(),
            hessian,
            expr,
            dim,
        })
    }

    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        Self::new(Expr::parse(text)?, dim)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.compiled.eval(x)
    }

    pub fn exact_jet(&self, x: &[f64]) -> Jet {
        Jet {
            value: self.compiled.eval(x),
            gradient: self.gradient.iter().map(|g| g.eval(x)).collect(),
            hessian: self
                .hessian
                .iter()
                .map(|row| row.iter().map(|h| h.eval(x)).collect())
                .collect(),
        }
    }
}

impl ScalarFn for ExprField {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        Ok(self.exact_jet(x))
    }
}

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One-dimensional function with hand-supplied derivatives.
#[derive(Clone)]
pub struct Analytic1d {
    f: Fn1,
    df: Fn1,
    d2f: Fn1,
}

impl Analytic1d {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Analytic1d { f: Arc::new(f), df: Arc::new(df), d2f: Arc::new(d2f) }
    }
}

impl std::fmt::Debug for Analytic1d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Analytic1d")
    }
}

impl ScalarFn for Analytic1d {
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x[0])
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        Ok(Jet {
            value: (self.f)(x[0]),
            gradient: vec![(self.df)(x[0])],
            hessian: vec![vec![(self.d2f)(x[0])]],
        })
    }
}

/// A closure sampled freely, differentiated by finite differences.
pub struct Sampled<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarFn for Sampled<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Values known only at the nodes of a 1-D grid. Derivatives come from the
/// five-point stencil of grid neighbours, so only nodes with two neighbours
/// on each side can be differentiated.
#[derive(Debug, Clone)]
pub struct GridSampled {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridSampled {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if grid.dimension() != 1 || values.len() != grid.len() {
            return Err(Error::Shape("grid-sampled functions are 1-D and match the grid".into()));
        }
        Ok(GridSampled { grid, values })
    }

    fn node_of(&self, x: f64) -> Option<usize> {
        let axis = self.grid.axis(0);
        let i = self.grid.nearest(&[x]);
        let tol = 1e-12 * x.abs().max(1.0);
        ((axis[i] - x).abs() <= tol).then_some(i)
    }
}

impl ScalarFn for GridSampled {
    fn value(&self, x: &[f64]) -> f64 {
        match self.node_of(x[0]) {
            Some(i) => self.values[i],
            None => f64::NAN,
        }
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let axis = self.grid.axis(0);
        let i = self.node_of(x[0]).ok_or_else(|| {
            Error::InsufficientSmoothness(format!("{} is not a node of the sampling grid", x[0]))
        })?;
        if i < 2 || i + 2 >= axis.len() {
            return Err(Error::InsufficientSmoothness(format!(
                "node {i} lacks the two neighbours per side needed for a fourth-order stencil"
            )));
        }
        let h = axis[i + 1] - axis[i];
        let uniform = (i - 2..i + 2).all(|k| ((axis[k + 1] - axis[k]) - h).abs() <= 1e-9 * h);
        if !uniform {
            return Err(Error::InsufficientSmoothness("stencil spacing is not uniform".into()));
        }
        let f = &self.values;
        let d1 = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
        let d2 = (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]) / (12.0 * h * h);
        Ok(Jet { value: f[i], gradient: vec![d1], hessian: vec![vec![d2]] })
    }
}

/// `A^3`, with derivatives from the chain rule on the jet of `A`.
pub struct Cubed<'a>(pub &'a dyn ScalarFn);

impl ScalarFn for Cubed<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x).powi(3)
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let a = self.0.jet(x)?;
        let n = a.gradient.len();
        let v = a.value;
        let gradient = a.gradient.iter().map(|g| 3.0 * v * v * g).collect();
        let hessian = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| 6.0 * v * a.gradient[i] * a.gradient[j] + 3.0 * v * v * a.hessian[i][j])
                    .collect()
            })
            .collect();
        Ok(Jet { value: v * v * v, gradient, hessian })
    }
}
