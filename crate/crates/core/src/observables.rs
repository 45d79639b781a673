//! Trajectory functionals `f(path)` and their gradients with respect to the
//! discrete states.
//!
//! Time integrals are left-point Riemann sums over nodes `1..=N`; node 0 is
//! the fixed initial state and its gradient row is always zero.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pathcore::StatePath;

pub trait Observable: Send + Sync {
    fn name(&self) -> &str;

    /// Rejects state dimensions the observable cannot act on.
    fn check_state_dim(&self, n: usize) -> Result<()>;

    fn value(&self, path: &StatePath) -> Result<f64>;

    /// Row-major `(N + 1) x n` gradient of `value` with respect to the states.
    fn state_gradient(&self, path: &StatePath) -> Result<Vec<f64>>;

    /// Whether `value` is affine in the path.
    fn is_affine(&self) -> bool {
        false
    }
}

type ReducerFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type ReducerGradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Reducer {
    Component(usize),
    Custom {
        value: Arc<ReducerFn>,
        grad: Arc<ReducerGradFn>,
        affine: bool,
    },
}

/// `f(path) = g(x_N)`.
#[derive(Clone)]
pub struct EndpointObservable {
    reducer: Reducer,
}

impl fmt::Debug for EndpointObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reducer {
            Reducer::Component(c) => write!(f, "EndpointObservable(component {c})"),
            Reducer::Custom { .. } => write!(f, "EndpointObservable(custom)"),
        }
    }
}

impl EndpointObservable {
    pub fn component(index: usize) -> Self {
        Self {
            reducer: Reducer::Component(index),
        }
    }

    /// Endpoint reducer `g` with its gradient `grad_g(x, out)`.
    pub fn with_reducer<G, D>(value: G, grad: D) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            reducer: Reducer::Custom {
                value: Arc::new(value),
                grad: Arc::new(grad),
                affine: false,
            },
        }
    }

    /// Linear reducer `g(x) = <weights, x>`.
    pub fn linear(weights: Vec<f64>) -> Self {
        let w = Arc::new(weights);
        let w2 = Arc::clone(&w);
        Self {
            reducer: Reducer::Custom {
                value: Arc::new(move |x| x.iter().zip(w.iter()).map(|(a, b)| a * b).sum()),
                grad: Arc::new(move |_, out| out.copy_from_slice(&w2)),
                affine: true,
            },
        }
    }
}

impl Observable for EndpointObservable {
    fn name(&self) -> &str {
        "endpoint"
    }

    fn check_state_dim(&self, n: usize) -> Result<()> {
        match self.reducer {
            Reducer::Component(c) if c >= n => Err(Error::invalid(format!(
                "endpoint component {c} out of range for state dimension {n}"
            ))),
            _ => Ok(()),
        }
    }

    fn value(&self, path: &StatePath) -> Result<f64> {
        self.check_state_dim(path.dim())?;
        let x = path.final_state();
        Ok(match &self.reducer {
            Reducer::Component(c) => x[*c],
            Reducer::Custom { value, .. } => value(x),
        })
    }

    fn state_gradient(&self, path: &StatePath) -> Result<Vec<f64>> {
        self.check_state_dim(path.dim())?;
        let n = path.dim();
        let steps = path.grid().steps();
        let mut g = vec![0.0; (steps + 1) * n];
        let row = &mut g[steps * n..];
        match &self.reducer {
            Reducer::Component(c) => row[*c] = 1.0,
            Reducer::Custom { grad, .. } => grad(path.final_state(), row),
        }
        if steps == 0 {
            g.fill(0.0);
        }
        Ok(g)
    }

    fn is_affine(&self) -> bool {
        match self.reducer {
            Reducer::Component(_) => true,
            Reducer::Custom { affine, .. } => affine,
        }
    }
}

fn require_scalar(name: &str, n: usize) -> Result<()> {
    if n == 1 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} observable needs a scalar state, got dimension {n}"
        )))
    }
}

/// `(1/T) int sign(phi) |phi|^alpha dt`.
#[derive(Debug, Clone, Copy)]
pub struct PowerMeanObservable {
    alpha: f64,
}

impl PowerMeanObservable {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::invalid("power-mean exponent must be finite"));
        }
        if alpha < 1.0 {
            return Err(Error::Unsupported(format!(
                "power-mean exponent {alpha} < 1 has a non-differentiable integrand"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Observable for PowerMeanObservable {
    fn name(&self) -> &str {
        "power_mean"
    }

    fn check_state_dim(&self, n: usize) -> Result<()> {
        require_scalar("power_mean", n)
    }

    fn value(&self, path: &StatePath) -> Result<f64> {
        self.check_state_dim(path.dim())?;
        let grid = path.grid();
        let w = grid.dt() / grid.horizon();
        let sum: f64 = path.as_slice()[1..]
            .iter()
            .map(|&x| x.signum() * x.abs().powf(self.alpha))
            .sum();
        Ok(w * sum)
    }

    fn state_gradient(&self, path: &StatePath) -> Result<Vec<f64>> {
        self.check_state_dim(path.dim())?;
        let grid = path.grid();
        let w = grid.dt() / grid.horizon();
        let a = self.alpha;
        let mut g: Vec<f64> = path
            .as_slice()
            .iter()
            .map(|&x| {
                if a == 1.0 {
                    w
                } else if x == 0.0 {
                    0.0
                } else {
                    w * a * x.abs().powf(a - 1.0)
                }
            })
            .collect();
        g[0] = 0.0;
        Ok(g)
    }

    fn is_affine(&self) -> bool {
        self.alpha == 1.0
    }
}

/// `int |phi|^2 dt`, summed over state components.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquareIntegralObservable;

impl Observable for SquareIntegralObservable {
    fn name(&self) -> &str {
        "square_integral"
    }

    fn check_state_dim(&self, _n: usize) -> Result<()> {
        Ok(())
    }

    fn value(&self, path: &StatePath) -> Result<f64> {
        let n = path.dim();
        let dt = path.grid().dt();
        Ok(dt * path.as_slice()[n..].iter().map(|x| x * x).sum::<f64>())
    }

    fn state_gradient(&self, path: &StatePath) -> Result<Vec<f64>> {
        let n = path.dim();
        let dt = path.grid().dt();
        let mut g: Vec<f64> = path.as_slice().iter().map(|x| 2.0 * dt * x).collect();
        g[..n].fill(0.0);
        Ok(g)
    }
}

/// Itô Lévy area `1/2 int (X1 dX2 - X2 dX1)`, left-point discretization.
#[derive(Debug, Clone, Copy, Default)]
pub struct LevyAreaObservable;

impl Observable for LevyAreaObservable {
    fn name(&self) -> &str {
        "levy_area"
    }

    fn check_state_dim(&self, n: usize) -> Result<()> {
        if n == 2 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "levy_area observable needs a planar state, got dimension {n}"
            )))
        }
    }

    fn value(&self, path: &StatePath) -> Result<f64> {
        self.check_state_dim(path.dim())?;
        let s = path.as_slice();
        let steps = path.grid().steps();
        let mut area = 0.0;
        for i in 0..steps {
            let (x1, x2) = (s[2 * i], s[2 * i + 1]);
            let (y1, y2) = (s[2 * i + 2], s[2 * i + 3]);
            area += x1 * (y2 - x2) - x2 * (y1 - x1);
        }
        Ok(0.5 * area)
    }

    fn state_gradient(&self, path: &StatePath) -> Result<Vec<f64>> {
        self.check_state_dim(path.dim())?;
        let s = path.as_slice();
        let steps = path.grid().steps();
        let mut g = vec![0.0; s.len()];
        // Each summand reduces to x1_i x2_{i+1} - x2_i x1_{i+1}.
        for i in 0..steps {
            g[2 * i] += 0.5 * s[2 * i + 3];
            g[2 * i + 1] -= 0.5 * s[2 * i + 2];
            g[2 * i + 2] -= 0.5 * s[2 * i + 1];
            g[2 * i + 3] += 0.5 * s[2 * i];
        }
        g[0] = 0.0;
        g[1] = 0.0;
        Ok(g)
    }
}

/// `max_i x_i - min_i x_i` with the first-occurrence subgradient.
#[derive(Debug, Clone, Copy, Default)]
pub struct RangeObservable;

impl RangeObservable {
    fn extrema(path: &StatePath) -> (usize, usize) {
        let s = path.as_slice();
        let (mut imax, mut imin) = (0, 0);
        for (i, &x) in s.iter().enumerate() {
            if x > s[imax] {
                imax = i;
            }
            if x < s[imin] {
                imin = i;
            }
        }
        (imax, imin)
    }
}

impl Observable for RangeObservable {
    fn name(&self) -> &str {
        "range"
    }

    fn check_state_dim(&self, n: usize) -> Result<()> {
        require_scalar("range", n)
    }

    fn value(&self, path: &StatePath) -> Result<f64> {
        self.check_state_dim(path.dim())?;
        let (imax, imin) = Self::extrema(path);
        Ok(path.as_slice()[imax] - path.as_slice()[imin])
    }

    fn state_gradient(&self, path: &StatePath) -> Result<Vec<f64>> {
        self.check_state_dim(path.dim())?;
        let (imax, imin) = Self::extrema(path);
        let mut g = vec![0.0; path.as_slice().len()];
        g[imax] += 1.0;
        g[imin] -= 1.0;
        g[0] = 0.0;
        Ok(g)
    }
}

/// Turbulent mass `dx * sum_j q_j` at the final time, for states laid out
/// as `[q_0..q_{N_x-1}, u_0..u_{N_x-1}]`.
#[derive(Debug, Clone, Copy)]
pub struct IntegratedMassObservable {
    points: usize,
    dx: f64,
}

impl IntegratedMassObservable {
    pub fn new(points: usize, length: f64) -> Result<Self> {
        if points == 0 || !(length > 0.0 && length.is_finite()) {
            return Err(Error::invalid(
                "turbulent mass needs a non-empty grid of positive length",
            ));
        }
        Ok(Self {
            points,
            dx: length / points as f64,
        })
    }
}

impl Observable for IntegratedMassObservable {
    fn name(&self) -> &str {
        "turbulent_mass"
    }

    fn check_state_dim(&self, n: usize) -> Result<()> {
        if n == 2 * self.points {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "turbulent_mass expects a (q, u) state of dimension {}, got {n}",
                2 * self.points
            )))
        }
    }

    fn value(&self, path: &StatePath) -> Result<f64> {
        self.check_state_dim(path.dim())?;
        Ok(self.dx * path.final_state()[..self.points].iter().sum::<f64>())
    }

    fn state_gradient(&self, path: &StatePath) -> Result<Vec<f64>> {
        self.check_state_dim(path.dim())?;
        let n = path.dim();
        let steps = path.grid().steps();
        let mut g = vec![0.0; (steps + 1) * n];
        if steps > 0 {
            g[steps * n..steps * n + self.points].fill(self.dx);
        }
        Ok(g)
    }

    fn is_affine(&self) -> bool {
        true
    }
}
