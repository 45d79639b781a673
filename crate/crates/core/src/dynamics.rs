//! Forward Euler–Maruyama integration of the controlled dynamics and the
//! exact discrete adjoint of that recursion.
//!
//! The forward map is
//!
//! ```text
//! x_{i+1} = x_i + b(x_i) dt + sigma(x_i) z_i sqrt(dt),    x_0 fixed
//! ```
//!
//! and the backward sweep is its transpose-linearization, so `normal` is the
//! gradient of the *discrete* noise-to-event map `z -> f(x(z))` to rounding.

use crate::error::{Error, Result};
use crate::observables::Observable;
use crate::pathcore::{dot, NoiseVector, RandomStream, StatePath, TimeGrid};

/// Drift, diffusion and their transpose-Jacobian actions for one SDE/SPDE.
///
/// All `*_into` style methods overwrite `out` completely. Implementations must
/// be reentrant: chains share one model across threads.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    /// State dimension `n`.
    fn state_dim(&self) -> usize;

    /// Noise dimension `m`; may be smaller than `n` (degenerate noise).
    fn noise_dim(&self) -> usize;

    fn initial_state(&self) -> &[f64];

    /// `out = b(x)`.
    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// `out = (grad b(x))^T mu`.
    fn drift_jac_t(&self, x: &[f64], mu: &[f64], out: &mut [f64]);

    /// `out = sigma(x) w`, `w` of length `m`, `out` of length `n`.
    fn diffusion(&self, x: &[f64], w: &[f64], out: &mut [f64]);

    /// `out = sigma(x)^T u`, `u` of length `n`, `out` of length `m`.
    fn diffusion_t(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// `out = (d/dx [sigma(x) w])^T u`. Zero for additive noise.
    fn diffusion_state_jac_t(&self, _x: &[f64], _w: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    /// Whether `sigma` is state independent.
    fn is_additive(&self) -> bool {
        true
    }

    /// Whether the noise-to-path map is affine (linear drift, additive noise).
    fn is_affine(&self) -> bool {
        false
    }

    /// Largest time step for which explicit stepping is expected to be stable.
    fn max_stable_dt(&self) -> Option<f64> {
        None
    }
}

/// Value, constraint normal and forward path of the noise-to-event map.
#[derive(Debug, Clone)]
pub struct AdjointResult {
    pub value: f64,
    /// `dF/dz` in standardized noise coordinates.
    pub normal: NoiseVector,
    pub path: StatePath,
}

fn check_dims(model: &dyn Model, z: &NoiseVector) -> Result<()> {
    if z.dim() != model.noise_dim() {
        return Err(Error::invalid(format!(
            "model {} expects noise dimension {}, got {}",
            model.name(),
            model.noise_dim(),
            z.dim()
        )));
    }
    if model.initial_state().len() != model.state_dim() {
        return Err(Error::invalid(format!(
            "model {} has inconsistent initial state",
            model.name()
        )));
    }
    Ok(())
}

pub fn integrate_forward(model: &dyn Model, z: &NoiseVector) -> Result<StatePath> {
    check_dims(model, z)?;
    if !z.is_finite() {
        return Err(Error::invalid("noise entries must be finite"));
    }
    let grid = *z.grid();
    let n = model.state_dim();
    let (dt, sqdt) = (grid.dt(), grid.sqrt_dt());
    let mut states = vec![0.0; (grid.steps() + 1) * n];
    states[..n].copy_from_slice(model.initial_state());
    let mut b = vec![0.0; n];
    let mut s = vec![0.0; n];
    for i in 0..grid.steps() {
        let (head, tail) = states.split_at_mut((i + 1) * n);
        let x = &head[i * n..];
        let next = &mut tail[..n];
        model.drift(x, &mut b);
        model.diffusion(x, z.row(i), &mut s);
        let mut finite = true;
        for k in 0..n {
            next[k] = x[k] + b[k] * dt + s[k] * sqdt;
            finite &= next[k].is_finite();
        }
        if !finite {
            return Err(Error::Diverged { step: i + 1 });
        }
    }
    StatePath::from_vec(grid, n, states)
}

/// Observable value only; one forward solve.
pub fn evaluate(model: &dyn Model, obs: &dyn Observable, z: &NoiseVector) -> Result<f64> {
    let path = integrate_forward(model, z)?;
    obs.value(&path)
}

pub fn adjoint_gradient(
    model: &dyn Model,
    obs: &dyn Observable,
    z: &NoiseVector,
) -> Result<AdjointResult> {
    let path = integrate_forward(model, z)?;
    let value = obs.value(&path)?;
    let g = obs.state_gradient(&path)?;

    let grid = *z.grid();
    let (n, m) = (model.state_dim(), model.noise_dim());
    let (dt, sqdt) = (grid.dt(), grid.sqrt_dt());
    let steps = grid.steps();

    let mut normal = NoiseVector::zeros(grid, m);
    // mu holds mu_{i+1} at the top of iteration i.
    let mut mu = g[steps * n..(steps + 1) * n].to_vec();
    let mut jb = vec![0.0; n];
    let mut js = vec![0.0; n];
    let mut col = vec![0.0; m];
    let additive = model.is_additive();
    for i in (0..steps).rev() {
        let x = path.state(i);
        model.diffusion_t(x, &mu, &mut col);
        for (o, c) in normal.row_mut(i).iter_mut().zip(&col) {
            *o = sqdt * c;
        }
        model.drift_jac_t(x, &mu, &mut jb);
        if additive {
            js.fill(0.0);
        } else {
            model.diffusion_state_jac_t(x, z.row(i), &mu, &mut js);
        }
        let gi = &g[i * n..(i + 1) * n];
        let mut finite = true;
        for k in 0..n {
            mu[k] += dt * jb[k] + sqdt * js[k] + gi[k];
            finite &= mu[k].is_finite();
        }
        if !finite {
            return Err(Error::Diverged { step: i });
        }
    }
    Ok(AdjointResult {
        value,
        normal,
        path,
    })
}

/// Central finite-difference gradient of `z -> F(z)`; `2 * steps * m` forward solves.
pub fn fd_gradient(
    model: &dyn Model,
    obs: &dyn Observable,
    z: &NoiseVector,
    h: f64,
) -> Result<NoiseVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut grad = NoiseVector::zeros(*z.grid(), z.dim());
    let mut probe = z.clone();
    for k in 0..z.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let fp = evaluate(model, obs, &probe)?;
        probe.as_mut_slice()[k] = orig - h;
        let fm = evaluate(model, obs, &probe)?;
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Componentwise relative discrepancy between two gradients.
///
/// Each component is compared relative to its own magnitude, floored at
/// `1e-3` of the reference sup-norm so that components that vanish in exact
/// arithmetic do not produce spurious ratios.
pub fn relative_discrepancy(candidate: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return candidate.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    }
    let floor = 1e-3 * scale;
    candidate
        .iter()
        .zip(reference)
        .map(|(c, r)| (c - r).abs() / r.abs().max(floor))
        .fold(0.0f64, |a, v| {
            if v.is_nan() || a.is_nan() {
                f64::NAN
            } else {
                a.max(v)
            }
        })
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub trials: usize,
    pub steps: usize,
    /// Per-trial discrepancy; `NaN` where either gradient could not be computed.
    pub discrepancies: Vec<f64>,
    pub max_discrepancy: f64,
}

impl GradientReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_discrepancy.is_finite() && self.max_discrepancy <= tol
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Compare the adjoint gradient with finite differences at `trials` prior draws.
pub fn gradient_check(
    model: &dyn Model,
    obs: &dyn Observable,
    trials: usize,
    grid: &TimeGrid,
    rng: &mut RandomStream,
) -> GradientReport {
    let mut discrepancies = Vec::with_capacity(trials);
    for _ in 0..trials {
        let z = crate::pathcore::sample_prior(grid, model.noise_dim(), rng);
        let d = match (
            adjoint_gradient(model, obs, &z),
            fd_gradient(model, obs, &z, FD_STEP),
        ) {
            (Ok(adj), Ok(fd)) => relative_discrepancy(adj.normal.as_slice(), fd.as_slice()),
            _ => f64::NAN,
        };
        discrepancies.push(d);
    }
    let max_discrepancy = discrepancies.iter().fold(0.0f64, |a, &v| {
        if v.is_nan() || a.is_nan() {
            f64::NAN
        } else {
            a.max(v)
        }
    });
    GradientReport {
        trials,
        steps: grid.steps(),
        discrepancies,
        max_discrepancy,
    }
}

/// `<sigma(x) w, u> - <w, sigma(x)^T u>`, for adjoint-pairing checks.
pub fn diffusion_pairing_defect(model: &dyn Model, x: &[f64], w: &[f64], u: &[f64]) -> f64 {
    let mut sw = vec![0.0; model.state_dim()];
    let mut stu = vec![0.0; model.noise_dim()];
    model.diffusion(x, w, &mut sw);
    model.diffusion_t(x, u, &mut stu);
    dot(&sw, u) - dot(w, &stu)
}

/// `<(grad b)^T mu, v>` against a central difference of `<mu, b(x + h v)>`.
pub fn drift_jacobian_defect(model: &dyn Model, x: &[f64], mu: &[f64], v: &[f64], h: f64) -> f64 {
    let n = model.state_dim();
    let mut jt = vec![0.0; n];
    model.drift_jac_t(x, mu, &mut jt);
    let analytic = dot(&jt, v);
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let (mut bp, mut bm) = (vec![0.0; n], vec![0.0; n]);
    model.drift(&xp, &mut bp);
    model.drift(&xm, &mut bm);
    let fd = (dot(mu, &bp) - dot(mu, &bm)) / (2.0 * h);
    analytic - fd
}

/// Same check for the state derivative of the diffusion action.
pub fn diffusion_jacobian_defect(
    model: &dyn Model,
    x: &[f64],
    w: &[f64],
    u: &[f64],
    v: &[f64],
    h: f64,
) -> f64 {
    let n = model.state_dim();
    let mut jt = vec![0.0; n];
    model.diffusion_state_jac_t(x, w, u, &mut jt);
    let analytic = dot(&jt, v);
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let (mut sp, mut sm) = (vec![0.0; n], vec![0.0; n]);
    model.diffusion(&xp, w, &mut sp);
    model.diffusion(&xm, w, &mut sm);
    analytic - (dot(u, &sp) - dot(u, &sm)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BrownianModel, OuModel};
    use crate::observables::{EndpointObservable, LevyAreaObservable, PowerMeanObservable};
    use crate::pathcore::{make_grid, sample_prior};

    #[test]
    fn ou_hand_recursion() {
        struct OuFrom1(OuModel, Vec<f64>);
        impl Model for OuFrom1 {
            fn name(&self) -> &str {
                "ou1"
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn noise_dim(&self) -> usize {
                1
            }
            fn initial_state(&self) -> &[f64] {
                &self.1
            }
            fn drift(&self, x: &[f64], out: &mut [f64]) {
                self.0.drift(x, out)
            }
            fn drift_jac_t(&self, x: &[f64], mu: &[f64], out: &mut [f64]) {
                self.0.drift_jac_t(x, mu, out)
            }
            fn diffusion(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
                self.0.diffusion(x, w, out)
            }
            fn diffusion_t(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
                self.0.diffusion_t(x, u, out)
            }
        }
        let model = OuFrom1(OuModel::new(0.1).unwrap(), vec![1.0]);
        let grid = make_grid(1.0, 2).unwrap();
        let path = integrate_forward(&model, &NoiseVector::zeros(grid, 1)).unwrap();
        assert_eq!(path.as_slice(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn ou_fixed_point_and_brownian_increments() {
        let grid = make_grid(1.0, 50).unwrap();
        let ou = OuModel::new(0.3).unwrap();
        let path = integrate_forward(&ou, &NoiseVector::zeros(grid, 1)).unwrap();
        assert!(path.as_slice().iter().all(|&v| v == 0.0));

        let bm = BrownianModel::new(2);
        let z = sample_prior(&grid, 2, &mut RandomStream::new(3));
        let path = integrate_forward(&bm, &z).unwrap();
        for i in 0..grid.steps() {
            for j in 0..2 {
                let inc = path.state(i + 1)[j] - path.state(i)[j];
                assert!((inc - z.row(i)[j] * grid.sqrt_dt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn brownian_endpoint_normal_is_sqrt_dt() {
        let grid = make_grid(2.0, 16).unwrap();
        let z = sample_prior(&grid, 1, &mut RandomStream::new(1));
        let res = adjoint_gradient(
            &BrownianModel::new(1),
            &EndpointObservable::component(0),
            &z,
        )
        .unwrap();
        for v in res.normal.as_slice() {
            assert!((v - grid.sqrt_dt()).abs() < 1e-15);
        }
        let fd = fd_gradient(
            &BrownianModel::new(1),
            &EndpointObservable::component(0),
            &z,
            1e-3,
        )
        .unwrap();
        assert!(relative_discrepancy(res.normal.as_slice(), fd.as_slice()) <= 1e-9);
    }

    #[test]
    fn fd_rejects_zero_step() {
        let grid = make_grid(1.0, 4).unwrap();
        let z = NoiseVector::zeros(grid, 1);
        let r = fd_gradient(
            &BrownianModel::new(1),
            &EndpointObservable::component(0),
            &z,
            0.0,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ou_power_mean_stationary_at_zero() {
        let grid = make_grid(1.0, 16).unwrap();
        let res = adjoint_gradient(
            &OuModel::new(0.1).unwrap(),
            &PowerMeanObservable::new(3.0).unwrap(),
            &NoiseVector::zeros(grid, 1),
        )
        .unwrap();
        assert_eq!(res.value, 0.0);
        assert!(res.normal.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn levy_area_fd_second_order() {
        // Independent check of the oracle itself: halving h should shrink the
        // gap to the adjoint by roughly 4x until rounding dominates.
        let grid = make_grid(1.0, 8).unwrap();
        let z = sample_prior(&grid, 2, &mut RandomStream::new(8));
        let model = BrownianModel::new(2);
        let obs = LevyAreaObservable;
        let adj = adjoint_gradient(&model, &obs, &z).unwrap();
        for h in [1e-4, 1e-5] {
            let fd = fd_gradient(&model, &obs, &z, h).unwrap();
            assert!(relative_discrepancy(adj.normal.as_slice(), fd.as_slice()) <= 1e-5);
        }
    }

    #[test]
    fn directional_derivative_is_second_order() {
        let grid = make_grid(50.0, 200).unwrap();
        let model = OuModel::new(0.1).unwrap();
        let obs = PowerMeanObservable::new(3.0).unwrap();
        let mut rng = RandomStream::new(21);
        let z = sample_prior(&grid, 1, &mut rng);
        let mut u = sample_prior(&grid, 1, &mut rng);
        let un = u.norm();
        u.scale(1.0 / un);
        let adj = adjoint_gradient(&model, &obs, &z).unwrap();
        let dir = adj.normal.inner(&u).unwrap();
        let err = |eps: f64| {
            let fp = evaluate(&model, &obs, &z.lincomb(1.0, eps, &u).unwrap()).unwrap();
            let fm = evaluate(&model, &obs, &z.lincomb(1.0, -eps, &u).unwrap()).unwrap();
            ((fp - fm) / (2.0 * eps) - dir).abs()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!(e2 < e1 / 3.0, "expected O(eps^2) decay: {e1} -> {e2}");
    }

    #[test]
    fn blow_up_reports_step() {
        struct Explode;
        impl Model for Explode {
            fn name(&self) -> &str {
                "explode"
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn noise_dim(&self) -> usize {
                1
            }
            fn initial_state(&self) -> &[f64] {
                &[1.0]
            }
            fn drift(&self, x: &[f64], out: &mut [f64]) {
                out[0] = x[0] * x[0] * 1e150;
            }
            fn drift_jac_t(&self, x: &[f64], mu: &[f64], out: &mut [f64]) {
                out[0] = 2.0 * x[0] * mu[0] * 1e150;
            }
            fn diffusion(&self, _: &[f64], w: &[f64], out: &mut [f64]) {
                out[0] = w[0];
            }
            fn diffusion_t(&self, _: &[f64], u: &[f64], out: &mut [f64]) {
                out[0] = u[0];
            }
        }
        let grid = make_grid(1.0, 10).unwrap();
        let r = integrate_forward(&Explode, &NoiseVector::zeros(grid, 1));
        assert!(matches!(r, Err(Error::Diverged { step }) if (1..=10).contains(&step)));
    }

    #[test]
    fn gradient_check_linear_case() {
        let grid = make_grid(1.0, 16).unwrap();
        let rep = gradient_check(
            &BrownianModel::new(1),
            &EndpointObservable::component(0),
            10,
            &grid,
            &mut RandomStream::new(2),
        );
        assert!(rep.passes(1e-9), "{rep:?}");
        let grid = make_grid(1.0, 32).unwrap();
        let rep = gradient_check(
            &OuModel::new(0.1).unwrap(),
            &PowerMeanObservable::new(1.0).unwrap(),
            10,
            &grid,
            &mut RandomStream::new(2),
        );
        assert!(rep.passes(1e-6), "{rep:?}");
    }
}
