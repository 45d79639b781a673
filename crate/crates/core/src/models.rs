//! Concrete models: planar/scalar Brownian motion, Ornstein–Uhlenbeck, a
//! pseudo-spectral stochastic KdV equation and the Barkley pipe-flow model.
//!
//! The two PDEs are discretized in space on a periodic grid, so the generic
//! SDE engine in [`crate::dynamics`] applies to them unchanged.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dynamics::{integrate_forward, Model};
use crate::error::{Error, Result};
use crate::pathcore::{NoiseVector, TimeGrid};

/// Periodic spatial grid `x_j = j * dx`, `j = 0..points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    length: f64,
    points: usize,
    dx: f64,
}

impl SpatialGrid {
    pub fn new(length: f64, points: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(format!(
                "domain length must be positive, got {length}"
            )));
        }
        if points < 8 {
            return Err(Error::invalid(format!(
                "spatial grid needs at least 8 points, got {points}"
            )));
        }
        Ok(Self {
            length,
            points,
            dx: length / points as f64,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }
}

/// `dX = dW` in `n` dimensions, `X_0 = 0`.
#[derive(Debug, Clone)]
pub struct BrownianModel {
    x0: Vec<f64>,
}

impl BrownianModel {
    pub fn new(n: usize) -> Self {
        Self { x0: vec![0.0; n] }
    }
}

pub fn brownian_model(n: usize) -> BrownianModel {
    BrownianModel::new(n)
}

impl Model for BrownianModel {
    fn name(&self) -> &str {
        "brownian"
    }
    fn state_dim(&self) -> usize {
        self.x0.len()
    }
    fn noise_dim(&self) -> usize {
        self.x0.len()
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }
    fn drift(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn drift_jac_t(&self, _x: &[f64], _mu: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion(&self, _x: &[f64], w: &[f64], out: &mut [f64]) {
        out.copy_from_slice(w);
    }
    fn diffusion_t(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// `dX = -X dt + sqrt(eps) dW`, `X_0 = 0`.
#[derive(Debug, Clone)]
pub struct OuModel {
    scale: f64,
    x0: [f64; 1],
}

impl OuModel {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "OU noise strength must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            scale: epsilon.sqrt(),
            x0: [0.0],
        })
    }
}

pub fn ou_model(epsilon: f64) -> Result<OuModel> {
    OuModel::new(epsilon)
}

impl Model for OuModel {
    fn name(&self) -> &str {
        "ou"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0];
    }
    fn drift_jac_t(&self, _x: &[f64], mu: &[f64], out: &mut [f64]) {
        out[0] = -mu[0];
    }
    fn diffusion(&self, _x: &[f64], w: &[f64], out: &mut [f64]) {
        out[0] = self.scale * w[0];
    }
    fn diffusion_t(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.scale * u[0];
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// Stochastic KdV `phi_t = kappa phi_xxx + alpha phi_xx - phi phi_x + eta`,
/// forced only in the largest-scale Fourier mode (`m = 2`: cosine and sine
/// amplitudes). Derivatives are evaluated spectrally.
#[derive(Clone)]
pub struct KdvModel {
    grid: SpatialGrid,
    kappa: f64,
    alpha: f64,
    x0: Vec<f64>,
    /// Symbol of `kappa d^3 + alpha d^2`.
    linear_symbol: Vec<Complex64>,
    /// Symbol of `d/dx` with the Nyquist mode removed.
    deriv_symbol: Vec<Complex64>,
    forcing_cos: Vec<f64>,
    forcing_sin: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for KdvModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KdvModel")
            .field("grid", &self.grid)
            .field("kappa", &self.kappa)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl KdvModel {
    pub fn new(grid: SpatialGrid, kappa: f64, alpha: f64) -> Result<Self> {
        let n = grid.points();
        if !n.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "spectral KdV needs an even number of points, got {n}"
            )));
        }
        if !(kappa.is_finite() && kappa > 0.0 && alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(
                "KdV dispersion and diffusion coefficients must be positive",
            ));
        }
        Ok(Self::build(grid, kappa, alpha))
    }

    /// Same as [`KdvModel::new`] but allowing zero coefficients (pure advection).
    pub fn with_coefficients(grid: SpatialGrid, kappa: f64, alpha: f64) -> Result<Self> {
        if !grid.points().is_multiple_of(2) || kappa < 0.0 || alpha < 0.0 {
            return Err(Error::invalid(
                "KdV needs an even grid and non-negative coefficients",
            ));
        }
        Ok(Self::build(grid, kappa, alpha))
    }

    fn build(grid: SpatialGrid, kappa: f64, alpha: f64) -> Self {
        let n = grid.points();
        let k0 = 2.0 * PI / grid.length();
        let mut linear_symbol = Vec::with_capacity(n);
        let mut deriv_symbol = Vec::with_capacity(n);
        for j in 0..n {
            let k = if j <= n / 2 {
                j as f64
            } else {
                j as f64 - n as f64
            } * k0;
            if j == n / 2 {
                // Odd derivatives of the Nyquist mode are not representable.
                linear_symbol.push(Complex64::new(-alpha * k * k, 0.0));
                deriv_symbol.push(Complex64::new(0.0, 0.0));
            } else {
                linear_symbol.push(Complex64::new(-alpha * k * k, -kappa * k * k * k));
                deriv_symbol.push(Complex64::new(0.0, k));
            }
        }
        let forcing_cos = (0..n).map(|j| (k0 * grid.x(j)).cos()).collect();
        let forcing_sin = (0..n).map(|j| (k0 * grid.x(j)).sin()).collect();
        let mut planner = FftPlanner::new();
        Self {
            grid,
            kappa,
            alpha,
            x0: vec![0.0; n],
            linear_symbol,
            deriv_symbol,
            forcing_cos,
            forcing_sin,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of the inverse transform of `spec * symbol` (or its conjugate).
    fn apply_symbol(
        &self,
        spec: &[Complex64],
        symbol: &[Complex64],
        conjugate: bool,
        out: &mut [f64],
    ) {
        let mut buf: Vec<Complex64> = spec
            .iter()
            .zip(symbol)
            .map(|(s, m)| if conjugate { s * m.conj() } else { s * m })
            .collect();
        self.inverse.process(&mut buf);
        let norm = 1.0 / self.grid.points() as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * norm;
        }
    }

    /// Spectral first derivative.
    pub fn derivative(&self, x: &[f64], out: &mut [f64]) {
        let spec = self.spectrum(x);
        self.apply_symbol(&spec, &self.deriv_symbol, false, out);
    }
}

pub fn kdv_model(grid: SpatialGrid, kappa: f64, alpha_diff: f64) -> Result<KdvModel> {
    KdvModel::new(grid, kappa, alpha_diff)
}

impl Model for KdvModel {
    fn name(&self) -> &str {
        "kdv"
    }
    fn state_dim(&self) -> usize {
        self.grid.points()
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let spec = self.spectrum(x);
        let mut dx = vec![0.0; x.len()];
        self.apply_symbol(&spec, &self.linear_symbol, false, out);
        self.apply_symbol(&spec, &self.deriv_symbol, false, &mut dx);
        for ((o, xi), di) in out.iter_mut().zip(x).zip(&dx) {
            *o -= xi * di;
        }
    }

    fn drift_jac_t(&self, x: &[f64], mu: &[f64], out: &mut [f64]) {
        // J = L - diag(D x) - diag(x) D, and D^T = -D.
        let n = x.len();
        let mu_spec = self.spectrum(mu);
        self.apply_symbol(&mu_spec, &self.linear_symbol, true, out);
        let mut dx = vec![0.0; n];
        self.derivative(x, &mut dx);
        let xmu: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a * b).collect();
        let mut d_xmu = vec![0.0; n];
        self.derivative(&xmu, &mut d_xmu);
        for j in 0..n {
            out[j] += -dx[j] * mu[j] + d_xmu[j];
        }
    }

    fn diffusion(&self, _x: &[f64], w: &[f64], out: &mut [f64]) {
        for j in 0..out.len() {
            out[j] = w[0] * self.forcing_cos[j] + w[1] * self.forcing_sin[j];
        }
    }

    fn diffusion_t(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.forcing_cos.iter().zip(u).map(|(a, b)| a * b).sum();
        out[1] = self.forcing_sin.iter().zip(u).map(|(a, b)| a * b).sum();
    }

    fn max_stable_dt(&self) -> Option<f64> {
        // Explicit Euler on i kappa k^3 - alpha k^2 at the highest resolved wavenumber.
        let kmax = PI / self.grid.dx();
        let dispersive = 2.0 * self.alpha / (self.kappa * self.kappa * kmax.powi(4));
        let diffusive = 2.0 / (self.alpha * kmax * kmax);
        Some(dispersive.min(diffusive))
    }
}

/// Parameters of the Barkley pipe-flow model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarkleyParams {
    pub r: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub delta: f64,
    pub eps_u: f64,
    pub kappa: f64,
    pub u0: f64,
    pub ubar: f64,
    pub diffusion: f64,
}

impl Default for BarkleyParams {
    fn default() -> Self {
        Self {
            r: 0.7,
            sigma: 0.25,
            zeta: 0.79,
            delta: 0.1,
            eps_u: 0.1,
            kappa: 2.15,
            u0: 2.0,
            ubar: 1.0,
            diffusion: 0.5,
        }
    }
}

impl BarkleyParams {
    fn validate(&self) -> Result<()> {
        let all = [
            self.r,
            self.sigma,
            self.zeta,
            self.delta,
            self.eps_u,
            self.kappa,
            self.u0,
            self.ubar,
            self.diffusion,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Barkley parameters must be finite"));
        }
        if self.r <= 0.0
            || self.sigma < 0.0
            || self.eps_u <= 0.0
            || self.u0 <= 0.0
            || self.diffusion <= 0.0
        {
            return Err(Error::invalid(
                "Barkley r, eps_u, U0, D must be positive and sigma non-negative",
            ));
        }
        if self.delta < 0.0 || self.kappa < 0.0 {
            return Err(Error::invalid(
                "Barkley delta and kappa must be non-negative",
            ));
        }
        Ok(())
    }

    /// Local reaction `f_r(q, u)` and its partials.
    fn reaction(&self, q: f64, u: f64) -> (f64, f64, f64) {
        let c = self.r + self.delta;
        let bracket = self.r + u - self.u0 - c * (q - 1.0) * (q - 1.0);
        (q * bracket, bracket - 2.0 * c * q * (q - 1.0), q)
    }
}

/// Barkley model with multiplicative noise on `q` only.
///
/// State layout: `[q_0..q_{N-1}, u_0..u_{N-1}]`; noise dimension `N`.
/// Advection uses first-order upwinding on the sign of the local velocity,
/// diffusion second-order central differences, and the noise is scaled by
/// `1/sqrt(dx)` to approximate spatial white noise.
#[derive(Debug, Clone)]
pub struct BarkleyModel {
    grid: SpatialGrid,
    params: BarkleyParams,
    x0: Vec<f64>,
    noise_scale: f64,
}

impl BarkleyModel {
    pub fn new(grid: SpatialGrid, params: BarkleyParams) -> Result<Self> {
        params.validate()?;
        let x0 = puff_initial_condition(&grid, &params);
        Ok(Self {
            grid,
            params,
            x0,
            noise_scale: params.sigma / grid.dx().sqrt(),
        })
    }

    pub fn with_initial_state(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != 2 * self.grid.points() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "Barkley initial state must be a finite (q, u) vector",
            ));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn params(&self) -> &BarkleyParams {
        &self.params
    }

    /// The laminar fixed point `(q, u) = (0, U0)`.
    pub fn laminar_state(&self) -> Vec<f64> {
        let n = self.grid.points();
        let mut x = vec![0.0; 2 * n];
        x[n..].fill(self.params.u0);
        x
    }
}

#[allow(clippy::too_many_arguments)]
pub fn barkley_model(
    grid: SpatialGrid,
    r: f64,
    sigma_noise: f64,
    zeta: f64,
    delta_b: f64,
    eps_u: f64,
    kappa_b: f64,
    u0: f64,
    ubar: f64,
    diffusion: f64,
) -> Result<BarkleyModel> {
    BarkleyModel::new(
        grid,
        BarkleyParams {
            r,
            sigma: sigma_noise,
            zeta,
            delta: delta_b,
            eps_u,
            kappa: kappa_b,
            u0,
            ubar,
            diffusion,
        },
    )
}

impl Model for BarkleyModel {
    fn name(&self) -> &str {
        "barkley"
    }
    fn state_dim(&self) -> usize {
        2 * self.grid.points()
    }
    fn noise_dim(&self) -> usize {
        self.grid.points()
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let n = self.grid.points();
        let p = &self.params;
        let (dx, d) = (
            self.grid.dx(),
            p.diffusion / (self.grid.dx() * self.grid.dx()),
        );
        let (q, u) = x.split_at(n);
        for j in 0..n {
            let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
            let a = u[j] - p.zeta;
            let dq = if a > 0.0 {
                (q[j] - q[jm]) / dx
            } else {
                (q[jp] - q[j]) / dx
            };
            let du = if u[j] > 0.0 {
                (u[j] - u[jm]) / dx
            } else {
                (u[jp] - u[j]) / dx
            };
            let (fr, _, _) = p.reaction(q[j], u[j]);
            out[j] = -a * dq + fr + d * (q[jp] - 2.0 * q[j] + q[jm]);
            out[n + j] = -u[j] * du + p.eps_u * ((p.u0 - u[j]) + p.kappa * (p.ubar - u[j]) * q[j]);
        }
    }

    fn drift_jac_t(&self, x: &[f64], mu: &[f64], out: &mut [f64]) {
        let n = self.grid.points();
        let p = &self.params;
        let (dx, d) = (
            self.grid.dx(),
            p.diffusion / (self.grid.dx() * self.grid.dx()),
        );
        let (q, u) = x.split_at(n);
        out.fill(0.0);
        // Scatter row j of the Jacobian, weighted by mu[row], into the columns.
        for j in 0..n {
            let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
            let (mq, mu_u) = (mu[j], mu[n + j]);

            let a = u[j] - p.zeta;
            let (_, fq, fu) = p.reaction(q[j], u[j]);
            out[j] += mq * (fq - 2.0 * d);
            out[jm] += mq * d;
            out[jp] += mq * d;
            if a > 0.0 {
                out[j] -= mq * a / dx;
                out[jm] += mq * a / dx;
                out[n + j] += mq * (fu - (q[j] - q[jm]) / dx);
            } else {
                out[j] += mq * a / dx;
                out[jp] -= mq * a / dx;
                out[n + j] += mq * (fu - (q[jp] - q[j]) / dx);
            }

            let relax = -p.eps_u - p.eps_u * p.kappa * q[j];
            out[j] += mu_u * p.eps_u * p.kappa * (p.ubar - u[j]);
            if u[j] > 0.0 {
                let du = (u[j] - u[jm]) / dx;
                out[n + j] += mu_u * (-du - u[j] / dx + relax);
                out[n + jm] += mu_u * u[j] / dx;
            } else {
                let du = (u[jp] - u[j]) / dx;
                out[n + j] += mu_u * (-du + u[j] / dx + relax);
                out[n + jp] -= mu_u * u[j] / dx;
            }
        }
    }

    fn diffusion(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.grid.points();
        for j in 0..n {
            out[j] = self.noise_scale * x[j] * w[j];
        }
        out[n..].fill(0.0);
    }

    fn diffusion_t(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        for j in 0..out.len() {
            out[j] = self.noise_scale * x[j] * u[j];
        }
    }

    fn diffusion_state_jac_t(&self, _x: &[f64], w: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.grid.points();
        for j in 0..n {
            out[j] = self.noise_scale * w[j] * u[j];
        }
        out[n..].fill(0.0);
    }

    fn is_additive(&self) -> bool {
        false
    }

    fn max_stable_dt(&self) -> Option<f64> {
        let dx = self.grid.dx();
        let speed = self.params.u0.max(self.params.zeta).max(1e-12);
        Some((0.2 * dx * dx / self.params.diffusion).min(0.5 * dx / speed))
    }
}

/// Smooth turbulent bump `q = 1.5 sin^2(pi (x - 15) / 15)` on `[15, 30]`, with
/// the mean flow depressed proportionally inside it.
pub fn puff_initial_condition(grid: &SpatialGrid, params: &BarkleyParams) -> Vec<f64> {
    const LEFT: f64 = 15.0;
    const WIDTH: f64 = 15.0;
    const PEAK: f64 = 1.5;
    let n = grid.points();
    let mut x = vec![0.0; 2 * n];
    for j in 0..n {
        let s = grid.x(j) - LEFT;
        let q = if s > 0.0 && s < WIDTH {
            PEAK * (PI * s / WIDTH).sin().powi(2)
        } else {
            0.0
        };
        x[j] = q;
        x[n + j] = params.u0 - 0.8 * (params.u0 - params.ubar) * q / PEAK;
    }
    x
}

/// Noise-free evolution of `model` from its initial state for `duration`,
/// using `steps` Euler steps. Returns the final state.
pub fn free_run(model: &dyn Model, duration: f64, steps: usize) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(duration, steps)?;
    let path = integrate_forward(model, &NoiseVector::zeros(grid, model.noise_dim()))?;
    Ok(path.final_state().to_vec())
}
