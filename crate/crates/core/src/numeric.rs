//! Small numerical kernels shared by the modules: compensated sums,
//! finite-difference stencils, and banded elimination.

/// Neumaier-compensated sum. Order-dependent but deterministic.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    sum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fourth-order central first and second derivatives of a 1-D function.
pub fn fd4(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (fm2, fm1, f0, fp1, fp2) = (f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h));
    let d1 = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h);
    let d2 = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / (12.0 * h * h);
    (d1, d2)
}

/// Default step for [`fd4`] at `x`.
pub fn fd_step(x: f64) -> f64 {
    2e-3 * x.abs().max(1.0)
}

/// Nodal gradient of grid values along one axis: centered in the interior,
/// second-order one-sided at the ends. `coords` must be uniform or nearly so.
pub fn gradient_1d(values: &[f64], coords: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut g = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let s = (values[1] - values[0]) / (coords[1] - coords[0]);
            g[0] = s;
            g[1] = s;
        }
        return g;
    }
    for i in 1..n - 1 {
        let (hl, hr) = (coords[i] - coords[i - 1], coords[i + 1] - coords[i]);
        // three-point formula, exact for quadratics on non-uniform spacing;
        // written in differences so constants give exactly zero
        g[i] = hr / (hl * (hl + hr)) * (values[i] - values[i - 1])
            + hl / (hr * (hl + hr)) * (values[i + 1] - values[i]);
    }
    g[0] = one_sided(values[0], values[1], values[2], coords[1] - coords[0], coords[2] - coords[1]);
    g[n - 1] = -one_sided(
        values[n - 1],
        values[n - 2],
        values[n - 3],
        coords[n - 1] - coords[n - 2],
        coords[n - 2] - coords[n - 3],
    );
    g
}

// derivative at x0 from samples at x0, x0 + h1, x0 + h1 + h2
fn one_sided(f0: f64, f1: f64, f2: f64, h1: f64, h2: f64) -> f64 {
    let s = h1 + h2;
    s / (h1 * h2) * (f1 - f0) - h1 / (h2 * s) * (f2 - f0)
}

/// Square band matrix stored row by row, `lower`/`upper` diagonals wide.
#[derive(Debug, Clone)]
pub struct Band {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl Band {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Band { n, lower, upper, data: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.lower < i || j > i + self.upper {
            return None;
        }
        Some(i * (self.lower + self.upper + 1) + (j + self.lower - i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Panics when `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).expect("entry outside band");
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).expect("entry outside band");
        self.data[k] += v;
    }

    /// Solves `A x = b` by LU without pivoting. Valid for diagonally dominant
    /// M-matrices such as `lambda I - Q`; the band is overwritten.
    pub fn solve_in_place(mut self, b: &mut [f64]) -> Option<()> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.get(k, k);
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            let row_end = (k + self.lower + 1).min(n);
            let col_end = (k + self.upper + 1).min(n);
            for i in k + 1..row_end {
                let m = self.get(i, k) / pivot;
                if m == 0.0 {
                    continue;
                }
                self.set(i, k, 0.0);
                for j in k + 1..col_end {
                    let v = self.get(k, j);
                    if v != 0.0 {
                        self.add(i, j, -m * v);
                    }
                }
                b[i] -= m * b[k];
            }
        }
        for k in (0..n).rev() {
            let col_end = (k + self.upper + 1).min(n);
            let mut acc = b[k];
            for j in k + 1..col_end {
                acc -= self.get(k, j) * b[j];
            }
            b[k] = acc / self.get(k, k);
        }
        Some(())
    }
}

/// Stationary distribution of an irreducible generator by the
/// Grassmann-Taksar-Heyman elimination, which never subtracts and so keeps
/// full relative accuracy. Only off-diagonal entries of `q` are read.
/// Returns `None` when a state has no outflow to lower-indexed states
/// during elimination (the chain restricted to `q` is reducible).
pub fn gth_stationary(mut q: Band) -> Option<Vec<f64>> {
    let n = q.n();
    let bw = q.lower.max(q.upper);
    let mut s_out = vec![0.0; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(bw);
        let s = sum((lo..k).map(|j| q.get(k, j)));
        if !(s > 0.0) {
            return None;
        }
        s_out[k] = s;
        for i in lo..k {
            let v = q.get(i, k) / s;
            q.set(i, k, v);
        }
        for i in lo..k {
            let qik = q.get(i, k);
            if qik == 0.0 {
                continue;
            }
            for j in lo..k {
                if j != i {
                    let qkj = q.get(k, j);
                    if qkj != 0.0 {
                        q.add(i, j, qik * qkj);
                    }
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(bw);
        pi[k] = sum((lo..k).map(|i| pi[i] * q.get(i, k)));
    }
    let total = sum(pi.iter().copied());
    pi.iter_mut().for_each(|p| *p /= total);
    Some(pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(v), 2.0);
    }

    #[test]
    fn fd4_on_polynomial_is_exact() {
        let (d1, d2) = fd4(|x| x.powi(4) - 3.0 * x, 0.7, 0.01);
        assert!((d1 - (4.0 * 0.343 - 3.0)).abs() < 1e-9);
        assert!((d2 - 12.0 * 0.49).abs() < 1e-7);
    }

    #[test]
    fn gradient_exact_for_quadratics() {
        let x: Vec<f64> = (0..7).map(|i| (i as f64).powf(1.3)).collect();
        let f: Vec<f64> = x.iter().map(|v| 2.0 * v * v - v + 1.0).collect();
        let g = gradient_1d(&f, &x);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - (4.0 * xi - 1.0)).abs() < 1e-9, "{gi} vs {}", 4.0 * xi - 1.0);
        }
    }

    #[test]
    fn band_solve_tridiagonal() {
        // [[2,-1,0],[-1,2,-1],[0,-1,2]] x = [1,0,1] -> x = [1,1,1]
        let mut a = Band::zeros(3, 1, 1);
        for i in 0..3 {
            a.set(i, i, 2.0);
            if i > 0 {
                a.set(i, i - 1, -1.0);
                a.set(i - 1, i, -1.0);
            }
        }
        let mut b = vec![1.0, 0.0, 1.0];
        a.solve_in_place(&mut b).unwrap();
        for v in b {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gth_three_state_cycle() {
        // 0 -> 1 at rate 1, 1 -> 2 at rate 2, 2 -> 0 at rate 4: pi ~ (1/1, 1/2, 1/4)
        let mut q = Band::zeros(3, 2, 2);
        q.set(0, 1, 1.0);
        q.set(1, 2, 2.0);
        q.set(2, 0, 4.0);
        let pi = gth_stationary(q).unwrap();
        let z = 1.0 + 0.5 + 0.25;
        assert!((pi[0] - 1.0 / z).abs() < 1e-15);
        assert!((pi[1] - 0.5 / z).abs() < 1e-15);
        assert!((pi[2] - 0.25 / z).abs() < 1e-15);
    }
}
