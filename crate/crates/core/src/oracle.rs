//! Euler-Maruyama particles for the SDE behind a generator.
//!
//! The generator is `a_ij d_i d_j + b_i d_i` with no factor 1/2, so the
//! matching SDE is `dX = b dt + sqrt(2a) dW`. Using `sqrt(a)` here would
//! halve the diffusion.
//!
//! Each particle owns a ChaCha8 stream (`seed`, stream = particle id), so a
//! trajectory does not depend on how particles are split across threads.
//! Reductions run over fixed chunks of [`CHUNK`] particles whose partial
//! sums are combined in order.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, ELLIPTICITY_FLOOR};
use crate::grid::{BoundaryCondition, Grid, ScalarField};
use crate::numeric;
use crate::semigroup::fmt17;

/// Particles per reduction chunk.
pub const CHUNK: usize = 4096;
/// Points per axis used to bound `|grad b|` for the step-size check.
const DRIFT_PROBES: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WallHandling {
    Reflect,
    Absorb,
}

impl From<BoundaryCondition> for WallHandling {
    fn from(bc: BoundaryCondition) -> Self {
        match bc {
            BoundaryCondition::NoFlux => WallHandling::Reflect,
            BoundaryCondition::Absorbing => WallHandling::Absorb,
        }
    }
}

/// Initial positions. Implementations must draw only from the given stream.
pub trait Sampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMass(pub Vec<f64>);

impl Sampler for PointMass {
    fn sample(&self, _: &mut ChaCha8Rng, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Independent normal coordinates, redrawn until they land in `bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGaussian {
    pub mean: Vec<f64>,
    pub sd: f64,
    pub bounds: Vec<(f64, f64)>,
}

impl Sampler for TruncatedGaussian {
    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.bounds[d];
            *o = loop {
                let z: f64 = rng.sample(StandardNormal);
                let x = self.mean[d] + self.sd * z;
                if x >= lo && x <= hi {
                    break x;
                }
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformBox(pub Vec<(f64, f64)>);

impl Sampler for UniformBox {
    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (o, (lo, hi)) in out.iter_mut().zip(&self.0) {
            *o = lo + (hi - lo) * rng.random::<f64>();
        }
    }
}

/// Draws a node with probability `nu_i w_i`, then a uniform point in its
/// dual cell.
#[derive(Debug, Clone)]
pub struct GridDensity {
    grid: std::sync::Arc<Grid>,
    cumulative: Vec<f64>,
}

impl GridDensity {
    pub fn new(nu: &ScalarField) -> Result<Self> {
        let w = nu.grid().weights();
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(nu.len());
        for (v, w) in nu.values().iter().zip(&w) {
            if *v < 0.0 {
                return Err(Error::PreconditionViolated("sampling density is negative".into()));
            }
            acc += v * w;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::PreconditionViolated("sampling density has no mass".into()));
        }
        cumulative.iter_mut().for_each(|c| *c /= acc);
        Ok(GridDensity { grid: nu.grid().clone(), cumulative })
    }
}

impl Sampler for GridDensity {
    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let u: f64 = rng.random();
        let node = self.cumulative.partition_point(|c| *c < u).min(self.cumulative.len() - 1);
        let idx = self.grid.multi_index(node);
        for (d, o) in out.iter_mut().enumerate() {
            let axis = self.grid.axis(d);
            let i = idx[d];
            let lo = if i == 0 { axis[0] } else { 0.5 * (axis[i - 1] + axis[i]) };
            let hi = if i + 1 == axis.len() { axis[i] } else { 0.5 * (axis[i] + axis[i + 1]) };
            *o = lo + (hi - lo) * rng.random::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    /// Row-major, `dim` coordinates per particle.
    positions: Vec<f64>,
    absorbed: Vec<bool>,
    pub seed: u64,
    pub time: f64,
    pub dt: f64,
    pub walls: WallHandling,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.absorbed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.absorbed.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn is_absorbed(&self, i: usize) -> bool {
        self.absorbed[i]
    }

    pub fn alive(&self) -> usize {
        self.absorbed.iter().filter(|a| !**a).count()
    }

    /// Mean and unbiased variance of coordinate `d` over live particles.
    pub fn moments(&self, d: usize) -> Result<(f64, f64)> {
        let n = self.alive();
        if n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let xs: Vec<f64> = (0..self.len()).filter(|&i| !self.absorbed[i]).map(|i| self.position(i)[d]).collect();
        let mean = chunked_sum(&xs, |x| x) / n as f64;
        let var = chunked_sum(&xs, |x| (x - mean) * (x - mean)) / (n as f64 - 1.0).max(1.0);
        Ok((mean, var))
    }

    /// `particle_id, x, absorbed_flag` (`x1..xn` in n-D).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["particle_id".to_string()];
        if self.dim == 1 {
            header.push("x".into());
        } else {
            header.extend((1..=self.dim).map(|d| format!("x{d}")));
        }
        header.push("absorbed_flag".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.position(i).iter().map(|x| fmt17(*x)));
            rec.push(u8::from(self.absorbed[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn chunked_sum(xs: &[f64], f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let parts: Vec<f64> = xs.par_chunks(CHUNK).map(|c| numeric::sum(c.iter().map(|x| f(*x)))).collect();
    numeric::sum(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimulationOptions {
    /// Skip the `dt <= 0.1 / max|grad b|` check.
    pub skip_step_check: bool,
    pub walls: Option<WallHandling>,
}

/// `max |d_j b_i|` over a probe grid of the domain.
pub fn max_drift_gradient(spec: &GeneratorSpec) -> f64 {
    let n = spec.dimension();
    let per_axis = if n == 1 { DRIFT_PROBES } else { 21 };
    let counts = vec![per_axis; n];
    let Ok(grid) = Grid::uniform_box(&spec.domain().bounds, &counts, BoundaryCondition::NoFlux) else {
        return 0.0;
    };
    let mut worst = 0.0f64;
    for x in grid.points() {
        for i in 0..n {
            let g = spec.b_coefficient(i).jet(&x).gradient;
            worst = g.iter().fold(worst, |m, v| m.max(v.abs()));
        }
    }
    worst
}

fn check_step(spec: &GeneratorSpec, dt: f64, opts: &SimulationOptions) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::PreconditionViolated(format!("dt must be positive, got {dt}")));
    }
    if !opts.skip_step_check {
        let g = max_drift_gradient(spec);
        if g > 0.0 && dt > 0.1 / g {
            return Err(Error::PreconditionViolated(format!(
                "dt = {dt} exceeds 0.1 / max|grad b| = {:e}",
                0.1 / g
            )));
        }
    }
    Ok(())
}

/// One Euler-Maruyama step in place; returns true when the particle is
/// absorbed.
struct Stepper<'a> {
    spec: &'a GeneratorSpec,
    bounds: &'a [(f64, f64)],
    walls: WallHandling,
}

impl Stepper<'_> {
    fn step(&self, x: &mut [f64], h: f64, rng: &mut ChaCha8Rng, scratch: &mut [f64]) -> Result<bool> {
        let n = x.len();
        let sq = h.sqrt();
        if n == 1 {
            let a = self.spec.a_coefficient(0, 0).eval(x);
            if a < ELLIPTICITY_FLOOR {
                return Err(Error::NonEllipticCoefficient { point: x.to_vec(), min_eigenvalue: a });
            }
            let b = self.spec.b_coefficient(0).eval(x);
            let z: f64 = rng.sample(StandardNormal);
            x[0] += b * h + (2.0 * a.max(0.0)).sqrt() * sq * z;
        } else {
            let a = self.spec.diffusion(x);
            let b = self.spec.drift(x);
            for s in scratch.iter_mut() {
                *s = rng.sample(StandardNormal);
            }
            let noise = sqrt_2a_times(&a, scratch, x)?;
            for i in 0..n {
                x[i] += b[i] * h + sq * noise[i];
            }
        }
        self.walls(x)
    }

    fn walls(&self, x: &mut [f64]) -> Result<bool> {
        for (v, &(lo, hi)) in x.iter_mut().zip(self.bounds) {
            if *v >= lo && *v <= hi {
                continue;
            }
            if !v.is_finite() {
                return Err(Error::PreconditionViolated("particle position diverged".into()));
            }
            match self.walls {
                WallHandling::Absorb => {
                    *v = v.clamp(lo, hi);
                    return Ok(true);
                }
                WallHandling::Reflect => {
                    // fold onto the period-2w sawtooth, which handles
                    // overshoots of several widths
                    let w = hi - lo;
                    let r = (*v - lo).rem_euclid(2.0 * w);
                    *v = if r <= w { lo + r } else { hi - (r - w) };
                }
            }
        }
        Ok(false)
    }
}

fn sqrt_2a_times(a: &[Vec<f64>], z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let n = z.len();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[i][j] == 0.0));
    if diagonal {
        return (0..n)
            .map(|i| {
                if a[i][i] < ELLIPTICITY_FLOOR {
                    Err(Error::NonEllipticCoefficient { point: x.to_vec(), min_eigenvalue: a[i][i] })
                } else {
                    Ok((2.0 * a[i][i].max(0.0)).sqrt() * z[i])
                }
            })
            .collect();
    }
    let m = DMatrix::from_fn(n, n, |i, j| 2.0 * a[i][j]);
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min() * 0.5;
    if min < ELLIPTICITY_FLOOR {
        return Err(Error::NonEllipticCoefficient { point: x.to_vec(), min_eigenvalue: min });
    }
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    Ok((0..n).map(|i| (0..n).map(|j| root[(i, j)] * z[j]).sum()).collect())
}

/// Ensemble at time `t_end`.
pub fn simulate(
    spec: &GeneratorSpec,
    sampler: &dyn Sampler,
    n: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let mut snaps = simulate_snapshots(spec, sampler, n, dt, &[t_end], seed, &SimulationOptions::default())?;
    Ok(snaps.pop().expect("one snapshot per requested time"))
}

/// Ensembles at each of the ascending `times`. Steps have length `dt`
/// except the last one before each snapshot, which is shortened to land on
/// it.
pub fn simulate_snapshots(
    spec: &GeneratorSpec,
    sampler: &dyn Sampler,
    n: usize,
    dt: f64,
    times: &[f64],
    seed: u64,
    opts: &SimulationOptions,
) -> Result<Vec<ParticleEnsemble>> {
    check_step(spec, dt, opts)?;
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::PreconditionViolated("snapshot times must be ascending and non-negative".into()));
    }
    let dim = spec.dimension();
    let walls = opts.walls.unwrap_or_else(|| spec.domain().boundary.into());
    let stepper = Stepper { spec, bounds: &spec.domain().bounds, walls };
    let k = times.len();
    // per particle: k snapshots of (dim coordinates, absorbed flag)
    let tracks: Vec<Result<(Vec<f64>, Vec<bool>)>> = (0..n)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64);
            let mut x = vec![0.0; dim];
            sampler.sample(&mut rng, &mut x);
            let mut scratch = vec![0.0; dim];
            let mut pos = Vec::with_capacity(k * dim);
            let mut flags = Vec::with_capacity(k);
            let mut absorbed = false;
            let mut now = 0.0;
            for &target in times {
                while !absorbed && now < target {
                    let h = dt.min(target - now);
                    absorbed = stepper.step(&mut x, h, &mut rng, &mut scratch)?;
                    now = if target - now <= dt { target } else { now + dt };
                }
                pos.extend_from_slice(&x);
                flags.push(absorbed);
            }
            Ok((pos, flags))
        })
        .collect();
    let mut out: Vec<ParticleEnsemble> = times
        .iter()
        .map(|&t| ParticleEnsemble {
            dim,
            positions: Vec::with_capacity(n * dim),
            absorbed: Vec::with_capacity(n),
            seed,
            time: t,
            dt,
            walls,
        })
        .collect();
    for track in tracks {
        let (pos, flags) = track?;
        for (s, ens) in out.iter_mut().enumerate() {
            ens.positions.extend_from_slice(&pos[s * dim..(s + 1) * dim]);
            ens.absorbed.push(flags[s]);
        }
    }
    Ok(out)
}

/// Histogram over the dual cells of `grid`, normalized so that
/// `sum_i nu_i w_i = 1` over live particles.
pub fn empirical_density(ens: &ParticleEnsemble, grid: &std::sync::Arc<Grid>) -> Result<ScalarField> {
    if ens.dimension() != grid.dimension() {
        return Err(Error::Shape("ensemble and grid dimensions differ".into()));
    }
    let alive = ens.alive();
    if alive == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let counts = (0..ens.len())
        .into_par_iter()
        .with_min_len(CHUNK)
        .fold(
            || vec![0u64; grid.len()],
            |mut acc, i| {
                if !ens.is_absorbed(i) {
                    acc[grid.nearest(ens.position(i))] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let w = grid.weights();
    let vals = counts.iter().zip(&w).map(|(c, w)| *c as f64 / (alive as f64 * w)).collect();
    ScalarField::new(grid.clone(), vals)
}

/// `sum_i |p_i - q_i| w_i`.
pub fn l1_distance(p: &ScalarField, q: &ScalarField) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape("fields differ in length".into()));
    }
    let w = p.grid().weights();
    Ok(numeric::sum(p.values().iter().zip(q.values()).zip(&w).map(|((a, b), w)| (a - b).abs() * w)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub t: f64,
    pub n: usize,
    /// `E[dX] / t` per axis.
    pub b_hat: Vec<f64>,
    pub b_se: Vec<f64>,
    /// `E[dX_i^2] / 2t` per axis.
    pub a_hat: Vec<f64>,
    pub a_se: Vec<f64>,
    /// `E[|dX|^3] / t`.
    pub third: f64,
    pub third_se: f64,
}

/// Moments of the displacement after one window `t` from `x0`, taken in
/// `steps` Euler steps.
pub fn moment_estimates(spec: &GeneratorSpec, x0: &[f64], t: f64, n: usize, seed: u64) -> Result<MomentEstimate> {
    moment_estimates_with(spec, x0, t, n, seed, 1)
}

pub fn moment_estimates_with(
    spec: &GeneratorSpec,
    x0: &[f64],
    t: f64,
    n: usize,
    seed: u64,
    steps: usize,
) -> Result<MomentEstimate> {
    if n < 2 || steps == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if x0.len() != spec.dimension() || !spec.domain().contains(x0) {
        return Err(Error::Domain { point: x0.to_vec() });
    }
    let opts = SimulationOptions::default();
    let ens = simulate_snapshots(spec, &PointMass(x0.to_vec()), n, t / steps as f64, &[t], seed, &opts)?
        .pop()
        .expect("one snapshot");
    let dim = x0.len();
    let disp: Vec<Vec<f64>> = (0..dim)
        .map(|d| (0..n).map(|i| ens.position(i)[d] - x0[d]).collect())
        .collect();
    let stats = |vals: &[f64]| -> (f64, f64) {
        let mean = chunked_sum(vals, |v| v) / n as f64;
        let var = chunked_sum(vals, |v| (v - mean) * (v - mean)) / (n as f64 - 1.0);
        (mean, (var / n as f64).sqrt())
    };
    let mut b_hat = Vec::with_capacity(dim);
    let mut b_se = Vec::with_capacity(dim);
    let mut a_hat = Vec::with_capacity(dim);
    let mut a_se = Vec::with_capacity(dim);
    for d in &disp {
        let (m, s) = stats(d);
        b_hat.push(m / t);
        b_se.push(s / t);
        let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
        let (m, s) = stats(&sq);
        a_hat.push(m / (2.0 * t));
        a_se.push(s / (2.0 * t));
    }
    let cubes: Vec<f64> = (0..n)
        .map(|i| (0..dim).map(|d| disp[d][i] * disp[d][i]).sum::<f64>().sqrt().powi(3))
        .collect();
    let (m, s) = stats(&cubes);
    Ok(MomentEstimate { t, n, b_hat, b_se, a_hat, a_se, third: m / t, third_se: s / t })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::generator::{catalog_example, DomainKind, DomainSpec};

    fn ou() -> GeneratorSpec {
        catalog_example("ornstein-uhlenbeck", 0.0).unwrap().on_interval(-8.0, 8.0).unwrap()
    }

    #[test]
    fn ou_relaxes_to_unit_variance() {
        let n = 20_000;
        let ens = simulate(&ou(), &PointMass(vec![2.0]), n, 1e-2, 5.0, 7).unwrap();
        let (m, v) = ens.moments(0).unwrap();
        // 2e-2 step bias on the variance of the Euler chain is about dt
        assert!(m.abs() < 3.0 / (n as f64).sqrt() + 2.0 * (-5.0f64).exp(), "{m}");
        assert!((v - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt() + 1e-2, "{v}");
    }

    #[test]
    fn frozen_particles() {
        let spec = GeneratorSpec::one_d("0", "0", DomainSpec::interval(DomainKind::Box, -1.0, 1.0).unwrap()).unwrap();
        let ens = simulate(&spec, &UniformBox(vec![(-1.0, 1.0)]), 100, 0.1, 3.0, 1).unwrap();
        let start = simulate(&spec, &UniformBox(vec![(-1.0, 1.0)]), 100, 0.1, 0.0, 1).unwrap();
        assert_eq!(ens.positions(), start.positions());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&ou(), &PointMass(vec![1.0]), 5000, 1e-2, 0.5, 42).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert_ne!(a, simulate(&ou(), &PointMass(vec![1.0]), 5000, 1e-2, 0.5, 43).unwrap());
    }

    #[test]
    fn reflection_conserves_particles() {
        let spec = GeneratorSpec::one_d("1", "0", DomainSpec::interval(DomainKind::Box, 0.0, 1.0).unwrap()).unwrap();
        let ens = simulate(&spec, &PointMass(vec![0.5]), 2000, 1e-3, 1.0, 3).unwrap();
        assert_eq!(ens.alive(), 2000);
        assert!(ens.positions().iter().all(|x| (0.0..=1.0).contains(x)));
        let absorbing = GeneratorSpec::one_d(
            "1",
            "0",
            DomainSpec::interval(DomainKind::Box, 0.0, 1.0).unwrap().with_boundary(BoundaryCondition::Absorbing),
        )
        .unwrap();
        let ens = simulate(&absorbing, &PointMass(vec![0.5]), 2000, 1e-3, 1.0, 3).unwrap();
        assert!(ens.alive() < 2000);
    }

    #[test]
    fn rejects_negative_diffusion_and_big_steps() {
        let spec = GeneratorSpec::one_d("-1", "0", DomainSpec::interval(DomainKind::Box, 0.0, 1.0).unwrap()).unwrap();
        assert!(matches!(
            simulate(&spec, &PointMass(vec![0.5]), 10, 1e-3, 0.01, 0),
            Err(Error::NonEllipticCoefficient { .. })
        ));
        assert!(matches!(
            simulate(&ou(), &PointMass(vec![0.5]), 10, 0.5, 1.0, 0),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn histograms() {
        let grid = Arc::new(Grid::uniform(0.0, 1.0, 11, BoundaryCondition::NoFlux).unwrap());
        let spec = GeneratorSpec::one_d("0", "0", DomainSpec::interval(DomainKind::Box, 0.0, 1.0).unwrap()).unwrap();
        let ens = simulate(&spec, &PointMass(vec![0.3]), 50, 0.1, 0.0, 0).unwrap();
        let d = empirical_density(&ens, &grid).unwrap();
        assert_eq!(d.values()[3], 1.0 / 0.1);
        assert_eq!(d.values().iter().filter(|v| **v != 0.0).count(), 1);
        let n = 200_000;
        let ens = simulate(&spec, &UniformBox(vec![(0.0, 1.0)]), n, 0.1, 0.0, 5).unwrap();
        let d = empirical_density(&ens, &grid).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-12);
        for v in d.values() {
            // each cell holds about n/10 (n/20 at the ends) particles
            assert!((v - 1.0).abs() < 5.0 * (10.0 / n as f64).sqrt() * 1.5, "{v}");
        }
        let empty = ParticleEnsemble { absorbed: vec![true], positions: vec![0.0], ..ens.clone() };
        assert_eq!(empirical_density(&empty, &grid), Err(Error::EmptyEnsemble));
    }

    #[test]
    fn ou_moments_at_origin() {
        let est = moment_estimates(&ou(), &[0.0], 1e-2, 200_000, 11).unwrap();
        assert!(est.b_hat[0].abs() <= 3.0 * est.b_se[0]);
        assert!((est.a_hat[0] - 1.0).abs() <= 3.0 * est.a_se[0]);
        let ex = catalog_example("appendix2a", 1.0).unwrap();
        let est = moment_estimates(&ex.spec, &[2.0], 1e-2, 200_000, 11).unwrap();
        // one Euler step: E[dX^2] / 2t = a + b^2 t / 2
        assert!((est.b_hat[0] + 2.0).abs() <= 3.0 * est.b_se[0]);
        assert!((est.a_hat[0] - 5.0 - 0.02).abs() <= 3.0 * est.a_se[0]);
    }

    #[test]
    fn grid_density_sampler() {
        let grid = Arc::new(Grid::uniform(-1.0, 1.0, 5, BoundaryCondition::NoFlux).unwrap());
        let nu = ScalarField::new(grid.clone(), vec![0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let s = GridDensity::new(&nu).unwrap();
        let spec = GeneratorSpec::one_d("0", "0", DomainSpec::interval(DomainKind::Box, -1.0, 1.0).unwrap()).unwrap();
        let ens = simulate(&spec, &s, 100, 0.1, 0.0, 0).unwrap();
        assert!(ens.positions().iter().all(|x| (-0.25..=0.25).contains(x)));
    }

    #[test]
    fn ensemble_csv() {
        let ens = simulate(&ou(), &PointMass(vec![1.0]), 20, 1e-2, 0.1, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.csv");
        ens.write_csv(&path).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        assert_eq!(rdr.headers().unwrap(), vec!["particle_id", "x", "absorbed_flag"]);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.unwrap();
            assert_eq!(rec[1].parse::<f64>().unwrap(), ens.position(i)[0]);
            assert_eq!(&rec[2], "0");
        }
    }

    #[test]
    fn two_dimensional_walk() {
        let spec = GeneratorSpec::new(
            vec![
                vec![crate::generator::Coefficient::constant(1.0, 2), crate::generator::Coefficient::constant(0.5, 2)],
                vec![crate::generator::Coefficient::constant(0.5, 2), crate::generator::Coefficient::constant(1.0, 2)],
            ],
            vec![crate::generator::Coefficient::constant(0.0, 2); 2],
            DomainSpec::new(DomainKind::Box, vec![(-50.0, 50.0), (-50.0, 50.0)], BoundaryCondition::NoFlux).unwrap(),
        )
        .unwrap();
        let est = moment_estimates(&spec, &[0.0, 0.0], 0.1, 50_000, 2).unwrap();
        for d in 0..2 {
            assert!((est.a_hat[d] - 1.0).abs() < 3.0 * est.a_se[d] + 1e-9, "{est:?}");
        }
    }
}
