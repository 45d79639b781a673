//! Reference distributions and post-processing of sampler output.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::BrownianModel;
use crate::observables::EndpointObservable;
use crate::pathcore::{sample_prior, RandomStream, TimeGrid};
use crate::sampler::{find_initial_point_from, run_chain_from, Proposal, SamplerConfig};

/// Below this the range CDF is reported as 0; the series does not converge at 0.
pub const RANGE_CDF_XMIN: f64 = 1e-6;

/// CDF of the range of a standard Brownian bridge on `[0, 1]`,
/// `sum_{|k| <= k_max} (1 - 4 k^2 x^2) exp(-2 k^2 x^2)`.
pub fn analytic_range_cdf(x: f64, k_max: usize) -> f64 {
    analytic_range_cdf_with_bound(x, k_max).0
}

/// The truncated series together with the magnitude of its last retained
/// term, a proxy for the truncation error.
///
/// For `x < 1` the direct series converges slowly and cancels badly, so the
/// equivalent Jacobi-transformed series
/// `sqrt(2) pi^{5/2} x^{-3} sum_{k >= 1} k^2 exp(-pi^2 k^2 / (2 x^2))`
/// is summed instead, with the same number of terms.
pub fn analytic_range_cdf_with_bound(x: f64, k_max: usize) -> (f64, f64) {
    if !(x > RANGE_CDF_XMIN) {
        return (0.0, 0.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let k_max = k_max.max(1);
    let x2 = x * x;
    let (mut sum, mut last) = (0.0, 0.0);
    if x >= 1.0 {
        sum = 1.0;
        for k in 1..=k_max {
            let k2 = (k * k) as f64;
            let decay = (-2.0 * k2 * x2).exp();
            let term = 2.0 * (1.0 - 4.0 * k2 * x2) * decay;
            sum += term;
            last = term.abs();
            if decay == 0.0 {
                break;
            }
        }
    } else {
        let pi = std::f64::consts::PI;
        let scale = std::f64::consts::SQRT_2 * pi.powf(2.5) / (x2 * x);
        for k in 1..=k_max {
            let k2 = (k * k) as f64;
            let term = scale * k2 * (-pi * pi * k2 / (2.0 * x2)).exp();
            sum += term;
            last = term;
            if last == 0.0 {
                break;
            }
        }
    }
    (sum, last)
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empirical CDF of an empty sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("empirical CDF input contains NaN"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest sample whose CDF value is at least `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let idx = ((p.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.sorted[idx]
    }
}

pub fn empirical_cdf(values: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::new(values)
}

/// Kolmogorov–Smirnov distance `sup |F_n - F|`, evaluated on both sides of
/// every jump. The reference is clamped to `[0, 1]`.
pub fn ks_distance<F: Fn(f64) -> f64>(empirical: &EmpiricalCdf, reference: F) -> f64 {
    let n = empirical.len() as f64;
    let s = empirical.sorted();
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = reference(s[i]).clamp(0.0, 1.0);
        let below = i as f64 / n;
        let above = (j + 1) as f64 / n;
        d = d.max((f - below).abs()).max((above - f).abs());
        i = j + 1;
    }
    d
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &EmpiricalCdf, b: &EmpiricalCdf) -> f64 {
    let (sa, sb) = (a.sorted(), b.sorted());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Sample mean, variance (unbiased) and excess kurtosis.
pub fn moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    let var = m2 / (n - 1.0);
    let kurt = (m4 / n) / (m2 / n).powi(2) - 3.0;
    (mean, var, kurt)
}

/// Histogram with equal-width bins over `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Normalized so that the histogram integrates to 1.
    pub fn density(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, w)| c as f64 / (total as f64 * (w[1] - w[0])))
            .collect()
    }
}

/// Freedman–Diaconis bin count, `range / (2 IQR n^{-1/3})`, at least 1.
pub fn freedman_diaconis_bins(values: &[f64]) -> Result<usize> {
    let cdf = EmpiricalCdf::new(values)?;
    let s = cdf.sorted();
    let range = s[s.len() - 1] - s[0];
    let iqr = cdf.quantile(0.75) - cdf.quantile(0.25);
    if range == 0.0 || iqr == 0.0 {
        return Ok(1);
    }
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    Ok(((range / width).ceil() as usize).clamp(1, 10_000))
}

pub fn histogram(values: &[f64], bins: Option<usize>) -> Result<Histogram> {
    let bins = match bins {
        Some(0) => return Err(Error::invalid("histogram needs at least one bin")),
        Some(b) => b,
        None => freedman_diaconis_bins(values)?,
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("histogram input must be finite"));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Rotate a planar path (rows of `(x, y)`) about the origin so that its
/// endpoint lies on the positive first axis. Paths ending at the origin are
/// returned unchanged.
pub fn rotate_to_axis(path: &[f64]) -> Result<Vec<f64>> {
    if !path.len().is_multiple_of(2) || path.is_empty() {
        return Err(Error::invalid("planar path must hold (x, y) pairs"));
    }
    let (ex, ey) = (path[path.len() - 2], path[path.len() - 1]);
    let r = ex.hypot(ey);
    if r == 0.0 {
        return Ok(path.to_vec());
    }
    let (c, s) = (ex / r, ey / r);
    Ok(path
        .chunks_exact(2)
        .flat_map(|p| [c * p[0] + s * p[1], -s * p[0] + c * p[1]])
        .collect())
}

/// Width (in samples) of the shortest contiguous window carrying at least
/// `fraction` of `sum |w|`.
pub fn concentration_width(weights: &[f64], fraction: f64) -> usize {
    let total: f64 = weights.iter().map(|w| w.abs()).sum();
    if total == 0.0 || weights.is_empty() {
        return weights.len();
    }
    let need = fraction * total;
    let mut best = weights.len();
    let (mut lo, mut acc) = (0, 0.0);
    for hi in 0..weights.len() {
        acc += weights[hi].abs();
        while acc - weights[lo].abs() >= need && lo < hi {
            acc -= weights[lo].abs();
            lo += 1;
        }
        if acc >= need {
            best = best.min(hi - lo + 1);
        }
    }
    best
}

/// One row of the acceptance-scaling table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub proposal: Proposal,
    pub steps: usize,
    pub acceptance_rate: f64,
}

/// Settings for [`acceptance_scaling_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub horizon: f64,
    pub chain_length: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            chain_length: 2000,
            burn_in: 200,
            seed: 1,
        }
    }
}

/// Acceptance rates on the Brownian-bridge level set `B_T = 0` for each
/// proposal at each discretization, with proposal parameters held fixed.
/// Chains start from an exact draw of the conditioned law.
pub fn acceptance_scaling_benchmark(
    proposals: &[Proposal],
    steps_list: &[usize],
    cfg: &ScalingConfig,
) -> Result<Vec<ScalingRow>> {
    let model = BrownianModel::new(1);
    let obs = EndpointObservable::component(0);
    let mut rows = Vec::with_capacity(proposals.len() * steps_list.len());
    for (pi, proposal) in proposals.iter().enumerate() {
        for (si, &steps) in steps_list.iter().enumerate() {
            let grid = TimeGrid::new(cfg.horizon, steps)?;
            let mut rng = RandomStream::for_chain(cfg.seed, (pi * steps_list.len() + si) as u64);
            let start = sample_prior(&grid, 1, &mut rng);
            let mut sampler = SamplerConfig::new(0.0, *proposal);
            sampler.chain_length = cfg.burn_in + cfg.chain_length;
            sampler.validate()?;
            let init = find_initial_point_from(&model, &obs, 0.0, start, sampler.newton_tol, 10)?;
            let mut accepted = 0usize;
            let mut counted = 0usize;
            let mut prev = init.point.z.clone();
            run_chain_from(init.point, &model, &obs, &sampler, &mut rng, |k, p| {
                if k > cfg.burn_in {
                    counted += 1;
                    if p.z != prev {
                        accepted += 1;
                    }
                }
                prev = p.z.clone();
            })?;
            let acceptance_rate = if counted == 0 {
                0.0
            } else {
                accepted as f64 / counted as f64
            };
            rows.push(ScalingRow {
                proposal: *proposal,
                steps,
                acceptance_rate,
            });
        }
    }
    Ok(rows)
}
