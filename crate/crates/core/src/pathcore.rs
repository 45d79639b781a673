//! Time grids, standardized noise, state paths and the discrete Gaussian prior.
//!
//! Noise is stored in standardized coordinates: the entry `z[i]` drives the
//! step from `t_i` to `t_{i+1}` and corresponds to the physical white noise
//! `eta_i = z[i] / sqrt(dt)`. With this scaling the prior on `z` is a unit
//! isotropic Gaussian at every resolution, and the Euclidean inner product on
//! `z` coincides with the `L^2([0,T])` inner product on `eta`:
//!
//! ```text
//! sum_i |eta_i|^2 dt = sum_i |z_i|^2
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Uniform time discretization of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("number of time steps must be at least 1"));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.dt.sqrt()
    }

    /// Time of grid node `i` (0..=steps).
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }
}

pub fn make_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// Standardized noise realization, `steps x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl NoiseVector {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.steps() * dim],
        }
    }

    pub fn from_vec(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.steps() * dim {
            return Err(Error::invalid(format!(
                "noise buffer has {} entries, expected {} x {}",
                values.len(),
                grid.steps(),
                dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("noise entries must be finite"));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Physical noise value `eta_ij = z_ij / sqrt(dt)`.
    pub fn physical(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j] / self.grid.sqrt_dt()
    }

    pub fn same_shape(&self, other: &NoiseVector) -> bool {
        self.dim == other.dim && self.grid == other.grid
    }

    fn check_shape(&self, other: &NoiseVector) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "noise shape mismatch: {}x{} vs {}x{}",
                self.grid.steps(),
                self.dim,
                other.grid.steps(),
                other.dim
            )))
        }
    }

    pub fn inner(&self, other: &NoiseVector) -> Result<f64> {
        self.check_shape(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &NoiseVector) -> Result<()> {
        self.check_shape(other)?;
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// `a * self + b * other` as a new vector.
    pub fn lincomb(&self, a: f64, b: f64, other: &NoiseVector) -> Result<NoiseVector> {
        self.check_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(NoiseVector {
            grid: self.grid,
            dim: self.dim,
            values,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inner(a: &NoiseVector, b: &NoiseVector) -> Result<f64> {
    a.inner(b)
}

/// Unnormalized log density of the standardized prior, `-|z|^2 / 2`.
pub fn log_prior_density(z: &NoiseVector) -> f64 {
    -0.5 * dot(z.as_slice(), z.as_slice())
}

/// Discrete trajectory, `(steps + 1) x dim`, row-major. Row 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
}

impl StatePath {
    pub fn from_vec(grid: TimeGrid, dim: usize, states: Vec<f64>) -> Result<Self> {
        if states.len() != (grid.steps() + 1) * dim {
            return Err(Error::invalid(format!(
                "path buffer has {} entries, expected {} x {}",
                states.len(),
                grid.steps() + 1,
                dim
            )));
        }
        Ok(Self { grid, dim, states })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (`steps + 1`).
    pub fn len(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.grid.steps())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.states
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.states
    }

    /// Time series of a single state component.
    pub fn component(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().skip(j).step_by(self.dim).copied()
    }
}

/// Seeded, reproducible source of randomness owned by one chain.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for chain `index`, derived from the same seed.
    pub fn for_chain(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(index + 1);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.rng.sample(StandardNormal);
        }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

pub fn sample_prior(grid: &TimeGrid, dim: usize, rng: &mut RandomStream) -> NoiseVector {
    let mut z = NoiseVector::zeros(*grid, dim);
    rng.fill_normal(z.as_mut_slice());
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_examples() {
        assert_eq!(make_grid(1.0, 4).unwrap().dt(), 0.25);
        assert_eq!(make_grid(50.0, 200).unwrap().dt(), 0.25);
        assert!(matches!(make_grid(1.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_grid(0.0, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_grid(-1.0, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn grid_dt_consistent() {
        for (t, n) in [(1.0, 3), (50.0, 200), (0.7, 1001), (13.3, 7)] {
            let g = make_grid(t, n).unwrap();
            assert!((g.dt() * n as f64 - t).abs() <= f64::EPSILON * t);
        }
    }

    #[test]
    fn prior_moments() {
        let grid = make_grid(1.0, 1000).unwrap();
        let mut rng = RandomStream::new(11);
        let z = sample_prior(&grid, 1000, &mut rng);
        let n = z.len() as f64;
        let mean = z.as_slice().iter().sum::<f64>() / n;
        let var = z.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = z.as_slice().iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        assert!(
            (m4 / (var * var) - 3.0).abs() < 0.1,
            "kurtosis {}",
            m4 / (var * var)
        );
    }

    #[test]
    fn prior_reproducible() {
        let grid = make_grid(1.0, 64).unwrap();
        let a = sample_prior(&grid, 3, &mut RandomStream::new(5));
        let b = sample_prior(&grid, 3, &mut RandomStream::new(5));
        assert_eq!(a, b);
        let c = sample_prior(&grid, 3, &mut RandomStream::for_chain(5, 1));
        assert_ne!(a, c);
    }

    #[test]
    fn inner_and_prior_examples() {
        let grid = make_grid(1.0, 4).unwrap();
        let ones = NoiseVector::from_vec(grid, 1, vec![1.0; 4]).unwrap();
        let zero = NoiseVector::zeros(grid, 1);
        assert_eq!(inner(&ones, &ones).unwrap(), 4.0);
        assert_eq!(inner(&ones, &zero).unwrap(), 0.0);
        assert_eq!(log_prior_density(&zero), 0.0);
        assert_eq!(log_prior_density(&ones), -2.0);

        let other = NoiseVector::zeros(grid, 2);
        assert!(matches!(
            inner(&ones, &other),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rejects_non_finite_noise() {
        let grid = make_grid(1.0, 2).unwrap();
        assert!(NoiseVector::from_vec(grid, 1, vec![0.0, f64::NAN]).is_err());
        assert!(NoiseVector::from_vec(grid, 1, vec![0.0]).is_err());
    }

    fn noise_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(-10.0..10.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn inner_is_bilinear_symmetric_positive((a, b, c) in noise_pair(), s in -3.0..3.0f64) {
            let grid = make_grid(2.0, a.len()).unwrap();
            let a = NoiseVector::from_vec(grid, 1, a).unwrap();
            let b = NoiseVector::from_vec(grid, 1, b).unwrap();
            let c = NoiseVector::from_vec(grid, 1, c).unwrap();
            let ab = inner(&a, &b).unwrap();
            prop_assert!((ab - inner(&b, &a).unwrap()).abs() <= 1e-12 * (1.0 + ab.abs()));
            let lhs = inner(&a.lincomb(s, 1.0, &b).unwrap(), &c).unwrap();
            let rhs = s * inner(&a, &c).unwrap() + inner(&b, &c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            if a.as_slice().iter().any(|v| *v != 0.0) {
                prop_assert!(inner(&a, &a).unwrap() > 0.0);
            }
            prop_assert_eq!(log_prior_density(&a), {
                let mut neg = a.clone();
                neg.scale(-1.0);
                log_prior_density(&neg)
            });
        }

        #[test]
        fn standardization_matches_l2(seed in any::<u64>(), steps in 1usize..200, t in 0.1..20.0f64) {
            let grid = make_grid(t, steps).unwrap();
            let z = sample_prior(&grid, 2, &mut RandomStream::new(seed));
            let l2: f64 = (0..steps)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| z.physical(i, j).powi(2) * grid.dt())
                .sum();
            let zz = inner(&z, &z).unwrap();
            prop_assert!((l2 - zz).abs() <= 1e-12 * zz.max(1.0));
        }
    }
}
