//! Tensor-product grids and fields sampled on them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    #[default]
    NoFlux,
    Absorbing,
}

/// Tensor-product grid with row-major node numbering (last axis fastest).
///
/// Quadrature weights are trapezoidal: each node carries the length of its
/// dual cell, half a spacing at the ends. A *state lattice* (see
/// [`Grid::states`]) is the degenerate case used for bare finite chains:
/// nodes `0..n` with unit weights and no spacing requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
    boundary: BoundaryCondition,
    lattice: bool,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>, boundary: BoundaryCondition) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Grid("grid needs at least one axis".into()));
        }
        for (d, axis) in axes.iter().enumerate() {
            if axis.len() < 3 {
                return Err(Error::Grid(format!("axis {d} has {} nodes, need at least 3", axis.len())));
            }
            if axis.iter().any(|x| !x.is_finite()) {
                return Err(Error::Grid(format!("axis {d} has non-finite coordinates")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Grid(format!("axis {d} is not strictly increasing")));
            }
        }
        Ok(Grid { axes, boundary, lattice: false })
    }

    /// Uniform 1-D grid with `n` nodes on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize, boundary: BoundaryCondition) -> Result<Self> {
        Self::uniform_box(&[(lo, hi)], &[n], boundary)
    }

    pub fn uniform_box(bounds: &[(f64, f64)], counts: &[usize], boundary: BoundaryCondition) -> Result<Self> {
        if bounds.len() != counts.len() {
            return Err(Error::Grid("bounds and node counts differ in length".into()));
        }
        let axes = bounds
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), &n)| {
                if !(lo < hi) {
                    return Err(Error::Grid(format!("empty interval [{lo}, {hi}]")));
                }
                let n = n.max(1);
                let h = (hi - lo) / (n.saturating_sub(1).max(1)) as f64;
                Ok((0..n)
                    .map(|i| if i + 1 == n { hi } else { lo + i as f64 * h })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(axes, boundary)
    }

    /// Index lattice for a bare `n`-state chain: coordinates `0, 1, ..., n-1`
    /// and unit weights.
    pub fn states(n: usize) -> Self {
        Grid {
            axes: vec![(0..n).map(|i| i as f64).collect()],
            boundary: BoundaryCondition::NoFlux,
            lattice: true,
        }
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, d: usize) -> &[f64] {
        &self.axes[d]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.boundary
    }

    pub fn is_lattice(&self) -> bool {
        self.lattice
    }

    pub fn with_boundary(mut self, boundary: BoundaryCondition) -> Self {
        self.boundary = boundary;
        self
    }

    /// Per-axis multi-index of a flat node index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            let n = self.axes[d].len();
            idx[d] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    /// Row-major stride of axis `d`.
    pub fn stride(&self, d: usize) -> usize {
        self.axes[d + 1..].iter().map(Vec::len).product()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis[i])
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Spacing to the left and right neighbor along axis `d` (`None` at ends).
    pub fn spacings(&self, d: usize, i: usize) -> (Option<f64>, Option<f64>) {
        let axis = &self.axes[d];
        let left = (i > 0).then(|| axis[i] - axis[i - 1]);
        let right = (i + 1 < axis.len()).then(|| axis[i + 1] - axis[i]);
        (left, right)
    }

    /// Dual-cell length of node `i` on axis `d`.
    pub fn cell_width(&self, d: usize, i: usize) -> f64 {
        if self.lattice {
            return 1.0;
        }
        let (l, r) = self.spacings(d, i);
        0.5 * (l.unwrap_or(0.0) + r.unwrap_or(0.0))
    }

    /// Trapezoidal quadrature weights (unit weights on a state lattice).
    pub fn weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|flat| {
                self.multi_index(flat)
                    .iter()
                    .enumerate()
                    .map(|(d, &i)| self.cell_width(d, i))
                    .product()
            })
            .collect()
    }

    /// True when the node touches the boundary along any axis.
    pub fn is_boundary(&self, flat: usize) -> bool {
        if self.lattice {
            return false;
        }
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, axis)| i == 0 || i + 1 == axis.len())
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the node nearest to `x` (per-axis nearest).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = self
            .axes
            .iter()
            .zip(x)
            .map(|(axis, &v)| {
                let pos = axis.partition_point(|&a| a < v);
                match pos {
                    0 => 0,
                    p if p >= axis.len() => axis.len() - 1,
                    p => {
                        if v - axis[p - 1] <= axis[p] - v {
                            p - 1
                        } else {
                            p
                        }
                    }
                }
            })
            .collect();
        self.flat_index(&idx)
    }
}

/// Real values attached to the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        ScalarField { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), values)
    }

    /// Quadrature of the field against the grid weights.
    pub fn integral(&self) -> f64 {
        let w = self.grid.weights();
        crate::numeric::dot(&self.values, &w)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let g = Grid::uniform(-1.0, 3.0, 9, BoundaryCondition::NoFlux).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 4.0).abs() < 1e-14);
        assert_eq!(g.weights()[0], 0.25);
    }

    #[test]
    fn index_roundtrip_2d() {
        let g = Grid::uniform_box(&[(0.0, 1.0), (0.0, 2.0)], &[4, 5], BoundaryCondition::NoFlux).unwrap();
        for flat in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(flat)), flat);
        }
        assert_eq!(g.stride(0), 5);
        assert_eq!(g.point(7), vec![1.0 / 3.0, 1.0]);
    }

    #[test]
    fn rejects_short_or_unsorted_axes() {
        assert!(Grid::new(vec![vec![0.0, 1.0]], BoundaryCondition::NoFlux).is_err());
        assert!(Grid::new(vec![vec![0.0, 2.0, 1.0]], BoundaryCondition::NoFlux).is_err());
    }

    #[test]
    fn nearest_node() {
        let g = Grid::uniform(0.0, 1.0, 11, BoundaryCondition::NoFlux).unwrap();
        assert_eq!(g.nearest(&[0.31]), 3);
        assert_eq!(g.nearest(&[-5.0]), 0);
        assert_eq!(g.nearest(&[7.0]), 10);
    }
}
