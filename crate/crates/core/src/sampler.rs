//! Metropolis–Hastings on the level set `{z : F(z) = z*}`.
//!
//! A move draws a tangent step, projects back onto the level set with Newton
//! iterations along the current normal, checks that the reverse move would
//! recover the current point, and accepts with a ratio that includes the
//! co-dimension one volume factor `1 / |grad F|`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{adjoint_gradient, AdjointResult, Model};
use crate::error::{Error, Result};
use crate::observables::Observable;
use crate::pathcore::{log_prior_density, sample_prior, NoiseVector, RandomStream, StatePath};

/// A chain state: noise with its cached path, value and constraint normal.
#[derive(Debug, Clone)]
pub struct ManifoldPoint {
    pub z: NoiseVector,
    pub path: StatePath,
    pub value: f64,
    pub normal: NoiseVector,
    pub normal_norm: f64,
}

impl ManifoldPoint {
    /// Evaluate the forward and adjoint solves at `z`.
    pub fn evaluate(model: &dyn Model, obs: &dyn Observable, z: NoiseVector) -> Result<Self> {
        let adj = adjoint_gradient(model, obs, &z)?;
        Self::from_adjoint(z, adj)
    }

    pub fn from_adjoint(z: NoiseVector, adj: AdjointResult) -> Result<Self> {
        let normal_norm = adj.normal.norm();
        if !(normal_norm > 0.0 && normal_norm.is_finite()) || !adj.value.is_finite() {
            return Err(Error::DegenerateNormal);
        }
        Ok(Self {
            z,
            path: adj.path,
            value: adj.value,
            normal: adj.normal,
            normal_norm,
        })
    }

    pub fn residual(&self, z_target: f64) -> f64 {
        (self.value - z_target).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Proposal {
    /// Gaussian step of scale `step` in the tangent hyperplane.
    TangentRw { step: f64 },
    /// Preconditioned Crank–Nicolson on an affine level set.
    PcnFlat { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub z_target: f64,
    pub proposal: Proposal,
    pub newton_tol: f64,
    pub newton_maxiter: usize,
    pub reversibility_tol: f64,
    /// Total number of MH steps, burn-in included.
    pub chain_length: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Iteration cap of [`find_initial_point`] when a chain initializes itself.
    pub init_maxiter: usize,
}

impl SamplerConfig {
    pub fn new(z_target: f64, proposal: Proposal) -> Self {
        Self {
            z_target,
            proposal,
            newton_tol: default_newton_tol(z_target),
            newton_maxiter: 20,
            reversibility_tol: 1e-8,
            chain_length: 1000,
            burn_in: 0,
            thin: 1,
            seed: 0,
            init_maxiter: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.z_target.is_finite() {
            return Err(Error::invalid("target value must be finite"));
        }
        match self.proposal {
            Proposal::TangentRw { step } if !(step > 0.0 && step.is_finite()) => {
                return Err(Error::invalid(format!(
                    "tangent step must be positive, got {step}"
                )));
            }
            Proposal::PcnFlat { beta } if !(beta > 0.0 && beta <= 1.0) => {
                return Err(Error::invalid(format!(
                    "pCN beta must lie in (0, 1], got {beta}"
                )));
            }
            _ => {}
        }
        if !(self.newton_tol > 0.0 && self.reversibility_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.newton_maxiter == 0 {
            return Err(Error::invalid("newton_maxiter must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        Ok(())
    }

    /// Number of samples a chain of this configuration retains.
    pub fn retained(&self) -> usize {
        self.chain_length.saturating_sub(self.burn_in) / self.thin
    }
}

pub fn default_newton_tol(z_target: f64) -> f64 {
    1e-10 * z_target.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepReason {
    Accepted,
    MhReject,
    NewtonFailForward,
    ReversibilityFail,
    BlowUp,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub accepted: bool,
    pub reason: StepReason,
    pub point: ManifoldPoint,
    /// Newton iterations of the forward projection (0 if it never started).
    pub newton_iters: usize,
}

impl StepOutcome {
    fn reject(point: ManifoldPoint, reason: StepReason, newton_iters: usize) -> Self {
        Self {
            accepted: false,
            reason,
            point,
            newton_iters,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub steps: usize,
    pub accepted: usize,
    pub reject_mh: usize,
    pub reject_newton: usize,
    pub reject_reversibility: usize,
    pub blow_up: usize,
    pub newton_iters: usize,
    pub wall_seconds: f64,
    pub seed: u64,
}

impl ChainStats {
    pub fn record(&mut self, outcome: &StepOutcome) {
        self.steps += 1;
        self.newton_iters += outcome.newton_iters;
        match outcome.reason {
            StepReason::Accepted => self.accepted += 1,
            StepReason::MhReject => self.reject_mh += 1,
            StepReason::NewtonFailForward => self.reject_newton += 1,
            StepReason::ReversibilityFail => self.reject_reversibility += 1,
            StepReason::BlowUp => self.blow_up += 1,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    pub fn mean_newton_iters(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.newton_iters as f64 / self.steps as f64
        }
    }

    /// Sum of counts over several chains; wall time is the maximum.
    pub fn merge(&mut self, other: &ChainStats) {
        self.steps += other.steps;
        self.accepted += other.accepted;
        self.reject_mh += other.reject_mh;
        self.reject_newton += other.reject_newton;
        self.reject_reversibility += other.reject_reversibility;
        self.blow_up += other.blow_up;
        self.newton_iters += other.newton_iters;
        self.wall_seconds = self.wall_seconds.max(other.wall_seconds);
    }
}

/// `v - (<n, v> / <n, n>) n`.
pub fn tangent_project(v: &NoiseVector, normal: &NoiseVector) -> Result<NoiseVector> {
    let nn = normal.inner(normal)?;
    if !(nn > 0.0 && nn.is_finite()) {
        return Err(Error::DegenerateNormal);
    }
    let coef = normal.inner(v)? / nn;
    let mut out = v.clone();
    out.axpy(-coef, normal)?;
    Ok(out)
}

/// Tangent random-walk proposal and its unnormalized log density.
pub fn propose_tangent_rw(
    x: &ManifoldPoint,
    step: f64,
    rng: &mut RandomStream,
) -> Result<(NoiseVector, f64)> {
    let xi = sample_prior(x.z.grid(), x.z.dim(), rng);
    let mut v = tangent_project(&xi, &x.normal)?;
    v.scale(step);
    let log_q = tangent_log_density(&v, step);
    Ok((v, log_q))
}

fn tangent_log_density(v: &NoiseVector, step: f64) -> f64 {
    let r = v.norm() / step;
    -0.5 * r * r
}

/// Whether the level sets of `obs` composed with `model` are affine hyperplanes.
pub fn is_flat(model: &dyn Model, obs: &dyn Observable) -> bool {
    model.is_affine() && obs.is_affine()
}

/// pCN candidate for an affine level set. The component of `x.z` along the
/// normal is fixed; the tangential part is autoregressed towards zero.
pub fn propose_pcn_flat(
    model: &dyn Model,
    obs: &dyn Observable,
    x: &ManifoldPoint,
    beta: f64,
    rng: &mut RandomStream,
) -> Result<NoiseVector> {
    if !is_flat(model, obs) {
        return Err(Error::Unsupported(format!(
            "pCN proposal needs an affine model and observable, got {} / {}",
            model.name(),
            obs.name()
        )));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!(
            "pCN beta must lie in (0, 1], got {beta}"
        )));
    }
    let tangential = tangent_project(&x.z, &x.normal)?;
    let xi = sample_prior(x.z.grid(), x.z.dim(), rng);
    let fresh = tangent_project(&xi, &x.normal)?;
    let rho = (1.0 - beta * beta).sqrt();
    // y = z_par + rho * (x.z - z_par) + beta * fresh, with x.z - z_par = tangential.
    let mut y = x.z.clone();
    y.axpy(rho - 1.0, &tangential)?;
    y.axpy(beta, &fresh)?;
    Ok(y)
}

/// Result of a successful Newton projection.
#[derive(Debug, Clone)]
pub struct Projection {
    pub alpha: f64,
    pub iterations: usize,
    pub point: ManifoldPoint,
}

/// Solve `F(base + alpha * direction) = z_target` for `alpha` by Newton's method.
///
/// Fails with [`Error::ProjectionFailure`] on non-convergence or a vanishing
/// directional derivative, and with [`Error::Diverged`] if a forward or
/// adjoint solve blows up.
pub fn newton_backproject(
    model: &dyn Model,
    obs: &dyn Observable,
    base: &NoiseVector,
    direction: &NoiseVector,
    z_target: f64,
    tol: f64,
    maxiter: usize,
) -> Result<Projection> {
    let dnorm = direction.norm();
    if !(dnorm > 0.0 && dnorm.is_finite()) {
        return Err(Error::DegenerateNormal);
    }
    let mut alpha = 0.0;
    let mut iterations = 0;
    loop {
        let z = base.lincomb(1.0, alpha, direction)?;
        let adj = adjoint_gradient(model, obs, &z)?;
        let residual = adj.value - z_target;
        if !residual.is_finite() {
            return Err(Error::Diverged { step: 0 });
        }
        if residual.abs() <= tol {
            let point = ManifoldPoint::from_adjoint(z, adj).map_err(|_| {
                Error::ProjectionFailure("degenerate normal at the projected point".into())
            })?;
            return Ok(Projection {
                alpha,
                iterations,
                point,
            });
        }
        if iterations >= maxiter {
            return Err(Error::ProjectionFailure(format!(
                "no convergence in {maxiter} iterations (residual {:e})",
                residual.abs()
            )));
        }
        let slope = adj.normal.inner(direction)?;
        if !(slope.abs() >= 1e-14 * adj.normal.norm() * dnorm) || slope == 0.0 {
            return Err(Error::ProjectionFailure(
                "directional derivative vanishes".into(),
            ));
        }
        alpha -= residual / slope;
        if !alpha.is_finite() {
            return Err(Error::Diverged { step: 0 });
        }
        iterations += 1;
    }
}

/// One Metropolis–Hastings transition.
///
/// All numerical failures become rejection reasons; the only errors are
/// configuration errors (a pCN proposal on a curved level set, or a point of
/// the wrong shape).
pub fn mh_step(
    x: ManifoldPoint,
    model: &dyn Model,
    obs: &dyn Observable,
    cfg: &SamplerConfig,
    rng: &mut RandomStream,
) -> Result<StepOutcome> {
    mh_step_offset(x, model, obs, cfg, rng, 0.0)
}

/// [`mh_step`] with a constant added to both proposal log densities.
fn mh_step_offset(
    x: ManifoldPoint,
    model: &dyn Model,
    obs: &dyn Observable,
    cfg: &SamplerConfig,
    rng: &mut RandomStream,
    log_q_offset: f64,
) -> Result<StepOutcome> {
    if x.z.dim() != model.noise_dim() {
        return Err(Error::invalid(
            "chain state does not match the model noise dimension",
        ));
    }
    match cfg.proposal {
        Proposal::TangentRw { step } => {
            tangent_rw_step(x, model, obs, cfg, step, rng, log_q_offset)
        }
        Proposal::PcnFlat { beta } => pcn_step(x, model, obs, cfg, beta, rng),
    }
}

fn failure_reason(err: &Error) -> StepReason {
    match err {
        Error::Diverged { .. } => StepReason::BlowUp,
        _ => StepReason::NewtonFailForward,
    }
}

fn tangent_rw_step(
    x: ManifoldPoint,
    model: &dyn Model,
    obs: &dyn Observable,
    cfg: &SamplerConfig,
    step: f64,
    rng: &mut RandomStream,
    log_q_offset: f64,
) -> Result<StepOutcome> {
    let (v, log_q_fwd) = propose_tangent_rw(&x, step, rng)?;
    let log_q_fwd = log_q_fwd + log_q_offset;

    let base = x.z.lincomb(1.0, 1.0, &v)?;
    let fwd = match newton_backproject(
        model,
        obs,
        &base,
        &x.normal,
        cfg.z_target,
        cfg.newton_tol,
        cfg.newton_maxiter,
    ) {
        Ok(p) => p,
        Err(e) => {
            let reason = failure_reason(&e);
            return Ok(StepOutcome::reject(x, reason, newton_iters_hint(&e, cfg)));
        }
    };
    let iters = fwd.iterations;
    let y = fwd.point;

    let back = x.z.lincomb(1.0, -1.0, &y.z)?;
    let v_rev = tangent_project(&back, &y.normal)?;
    let log_q_rev = tangent_log_density(&v_rev, step) + log_q_offset;

    let rev_base = y.z.lincomb(1.0, 1.0, &v_rev)?;
    let rev = newton_backproject(
        model,
        obs,
        &rev_base,
        &y.normal,
        cfg.z_target,
        cfg.newton_tol,
        cfg.newton_maxiter,
    );
    let recovered = match rev {
        Ok(p) => {
            let gap = p.point.z.lincomb(1.0, -1.0, &x.z)?.norm();
            gap <= cfg.reversibility_tol * x.z.norm().max(1.0)
        }
        Err(_) => false,
    };
    if !recovered {
        return Ok(StepOutcome::reject(x, StepReason::ReversibilityFail, iters));
    }

    let log_ratio = (log_prior_density(&y.z) + log_q_rev - y.normal_norm.ln())
        - (log_prior_density(&x.z) + log_q_fwd - x.normal_norm.ln());
    if rng.uniform().ln() < log_ratio {
        Ok(StepOutcome {
            accepted: true,
            reason: StepReason::Accepted,
            point: y,
            newton_iters: iters,
        })
    } else {
        Ok(StepOutcome::reject(x, StepReason::MhReject, iters))
    }
}

fn newton_iters_hint(err: &Error, cfg: &SamplerConfig) -> usize {
    match err {
        Error::ProjectionFailure(_) => cfg.newton_maxiter,
        _ => 0,
    }
}

fn pcn_step(
    x: ManifoldPoint,
    model: &dyn Model,
    obs: &dyn Observable,
    cfg: &SamplerConfig,
    beta: f64,
    rng: &mut RandomStream,
) -> Result<StepOutcome> {
    let candidate = propose_pcn_flat(model, obs, &x, beta, rng)?;
    // The candidate is on the level set up to rounding; Newton only polishes.
    match newton_backproject(
        model,
        obs,
        &candidate,
        &x.normal,
        cfg.z_target,
        cfg.newton_tol,
        cfg.newton_maxiter,
    ) {
        Ok(p) => Ok(StepOutcome {
            accepted: true,
            reason: StepReason::Accepted,
            point: p.point,
            newton_iters: p.iterations,
        }),
        Err(e) => {
            let reason = failure_reason(&e);
            Ok(StepOutcome::reject(x, reason, newton_iters_hint(&e, cfg)))
        }
    }
}

/// Outcome of [`find_initial_point`].
#[derive(Debug, Clone)]
pub struct Initialization {
    pub point: ManifoldPoint,
    pub iterations: usize,
}

/// Damped Gauss–Newton flow `z <- z - lambda (F - z*) n / |n|^2` from `start`.
/// `lambda` is halved whenever the residual grows and restored on success.
pub fn find_initial_point_from(
    model: &dyn Model,
    obs: &dyn Observable,
    z_target: f64,
    start: NoiseVector,
    tol: f64,
    maxiter: usize,
) -> Result<Initialization> {
    let mut current = ManifoldPoint::evaluate(model, obs, start)?;
    let mut residual = current.value - z_target;
    let mut lambda: f64 = 1.0;
    let mut iterations = 0;
    while residual.abs() > tol {
        if iterations >= maxiter || lambda < 1e-12 {
            return Err(Error::InitializationFailure {
                iterations,
                residual: residual.abs(),
            });
        }
        iterations += 1;
        let coef = -lambda * residual / (current.normal_norm * current.normal_norm);
        let z = current.z.lincomb(1.0, coef, &current.normal)?;
        match ManifoldPoint::evaluate(model, obs, z) {
            Ok(next) if (next.value - z_target).abs() < residual.abs() => {
                residual = next.value - z_target;
                current = next;
                lambda = (2.0 * lambda).min(1.0);
            }
            _ => lambda *= 0.5,
        }
    }
    Ok(Initialization {
        point: current,
        iterations,
    })
}

/// Start from `z = 0`; if the normal vanishes there or the flow stalls, retry
/// from a prior draw.
pub fn find_initial_point(
    model: &dyn Model,
    obs: &dyn Observable,
    z_target: f64,
    grid: &crate::pathcore::TimeGrid,
    rng: &mut RandomStream,
    tol: f64,
    maxiter: usize,
) -> Result<Initialization> {
    let zero = NoiseVector::zeros(*grid, model.noise_dim());
    match find_initial_point_from(model, obs, z_target, zero, tol, maxiter) {
        Ok(init) => Ok(init),
        Err(first) => {
            let start = sample_prior(grid, model.noise_dim(), rng);
            find_initial_point_from(model, obs, z_target, start, tol, maxiter).map_err(
                |e| match e {
                    Error::InitializationFailure { .. } => e,
                    _ => first,
                },
            )
        }
    }
}

/// Run one chain from `start`, calling `visit(step, point)` on every retained
/// state. `step` is the 1-based index of the transition that produced it.
pub fn run_chain_from<F>(
    start: ManifoldPoint,
    model: &dyn Model,
    obs: &dyn Observable,
    cfg: &SamplerConfig,
    rng: &mut RandomStream,
    mut visit: F,
) -> Result<(ManifoldPoint, ChainStats)>
where
    F: FnMut(usize, &ManifoldPoint),
{
    cfg.validate()?;
    if let Proposal::PcnFlat { .. } = cfg.proposal {
        if !is_flat(model, obs) {
            return Err(Error::Unsupported(
                "pCN proposal on a curved level set".into(),
            ));
        }
    }
    let clock = Instant::now();
    let mut stats = ChainStats {
        seed: rng.seed(),
        ..ChainStats::default()
    };
    let mut x = start;
    for k in 1..=cfg.chain_length {
        let outcome = mh_step(x, model, obs, cfg, rng)?;
        stats.record(&outcome);
        x = outcome.point;
        if k > cfg.burn_in && (k - cfg.burn_in).is_multiple_of(cfg.thin) {
            visit(k, &x);
        }
    }
    stats.wall_seconds = clock.elapsed().as_secs_f64();
    Ok((x, stats))
}

/// Initialize on the level set and run one chain, returning retained points.
pub fn run_chain(
    model: &dyn Model,
    obs: &dyn Observable,
    grid: &crate::pathcore::TimeGrid,
    cfg: &SamplerConfig,
    rng: &mut RandomStream,
) -> Result<(Vec<ManifoldPoint>, ChainStats)> {
    cfg.validate()?;
    let init = find_initial_point(
        model,
        obs,
        cfg.z_target,
        grid,
        rng,
        cfg.newton_tol,
        cfg.init_maxiter,
    )?;
    let mut samples = Vec::with_capacity(cfg.retained());
    let (_, stats) = run_chain_from(init.point, model, obs, cfg, rng, |_, p| {
        samples.push(p.clone())
    })?;
    Ok((samples, stats))
}

/// Retained samples of one chain, reduced by a caller-supplied summary.
#[derive(Debug, Clone)]
pub struct ChainRun<T> {
    pub chain: usize,
    pub samples: Vec<(usize, T)>,
    pub stats: ChainStats,
}

/// Run `chains` independent chains in parallel on the current rayon pool.
///
/// Chain `c` draws from `RandomStream::for_chain(cfg.seed, c)`. If `start` is
/// given every chain begins there; otherwise each initializes independently.
pub fn run_chains<T, S>(
    model: &dyn Model,
    obs: &dyn Observable,
    grid: &crate::pathcore::TimeGrid,
    cfg: &SamplerConfig,
    chains: usize,
    start: Option<&ManifoldPoint>,
    summarize: S,
) -> Result<Vec<ChainRun<T>>>
where
    T: Send,
    S: Fn(&ManifoldPoint) -> T + Sync,
{
    cfg.validate()?;
    (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RandomStream::for_chain(cfg.seed, c as u64);
            let init = match start {
                Some(p) => p.clone(),
                None => {
                    find_initial_point(
                        model,
                        obs,
                        cfg.z_target,
                        grid,
                        &mut rng,
                        cfg.newton_tol,
                        cfg.init_maxiter,
                    )?
                    .point
                }
            };
            let mut samples = Vec::with_capacity(cfg.retained());
            let (_, mut stats) = run_chain_from(init, model, obs, cfg, &mut rng, |k, p| {
                samples.push((k, summarize(p)))
            })?;
            stats.seed = cfg.seed;
            Ok(ChainRun {
                chain: c,
                samples,
                stats,
            })
        })
        .collect()
}

/// Adapt the tangent step towards an acceptance rate inside `[low, high]`.
///
/// Runs up to `rounds` pilot batches of `batch` steps from `start`, scaling
/// the step by the ratio of observed to mid-band acceptance. Returns the
/// tuned step and the last pilot state.
#[allow(clippy::too_many_arguments)]
pub fn tune_step(
    start: ManifoldPoint,
    model: &dyn Model,
    obs: &dyn Observable,
    cfg: &SamplerConfig,
    band: (f64, f64),
    rounds: usize,
    batch: usize,
    rng: &mut RandomStream,
) -> Result<(f64, ManifoldPoint)> {
    let Proposal::TangentRw { mut step } = cfg.proposal else {
        return Err(Error::invalid(
            "step tuning applies to the tangent random walk only",
        ));
    };
    let (low, high) = band;
    if !(0.0 < low && low < high && high < 1.0) || batch == 0 {
        return Err(Error::invalid(
            "tuning band must satisfy 0 < low < high < 1 and batch > 0",
        ));
    }
    let target = 0.5 * (low + high);
    let mut x = start;
    for _ in 0..rounds {
        let pilot = SamplerConfig {
            proposal: Proposal::TangentRw { step },
            chain_length: batch,
            burn_in: 0,
            thin: 1,
            ..cfg.clone()
        };
        let (last, stats) = run_chain_from(x, model, obs, &pilot, rng, |_, _| {})?;
        x = last;
        let rate = stats.acceptance_rate();
        if (low..=high).contains(&rate) {
            break;
        }
        step *= (rate.max(0.01) / target).clamp(0.2, 3.0);
    }
    Ok((step, x))
}
