//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test -p pathwalk --test acceptance` runs the default tier;
//! append `-- --slow` for the KdV and Barkley criterion.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use pathwalk::analysis::{
    acceptance_scaling_benchmark, analytic_range_cdf, concentration_width, empirical_cdf,
    ks_distance, ks_two_sample, moments, ScalingConfig,
};
use pathwalk::config::{ModelConfig, Record, RunConfig, TuneSection};
use pathwalk::dynamics::Model;
use pathwalk::models::BrownianModel;
use pathwalk::observables::{Observable, PowerMeanObservable, SquareIntegralObservable};
use pathwalk::pathcore::{RandomStream, TimeGrid};
use pathwalk::run::{execute, gradcheck_all, BenchConfig, RunOutput};
use pathwalk::sampler::{find_initial_point, run_chains, tune_step, Proposal, SamplerConfig};

struct Suite {
    failures: usize,
}

impl Suite {
    fn info(&self, msg: &str) {
        println!("      {msg}");
    }

    fn verdict(&mut self, id: &str, pass: bool, summary: &str, clock: Instant) {
        if !pass {
            self.failures += 1;
        }
        println!(
            "{} {id}: {summary} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            clock.elapsed().as_secs_f64()
        );
    }
}

fn preset(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    RunConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn set_steps(cfg: &mut RunConfig, n: usize) {
    match &mut cfg.model {
        ModelConfig::Brownian { steps, .. }
        | ModelConfig::Ou { steps, .. }
        | ModelConfig::Kdv { steps, .. }
        | ModelConfig::Barkley { steps, .. } => *steps = n,
    }
}

/// Largest `|F - z*|` over retained samples and the tolerance it must meet.
fn constraint_residual(cfg: &RunConfig, out: &RunOutput) -> (f64, f64) {
    let tol = cfg.sampler.to_sampler_config().newton_tol;
    let worst = out
        .table
        .rows
        .iter()
        .map(|r| (r.value - cfg.sampler.target).abs())
        .fold(0.0, f64::max);
    (worst, tol)
}

fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)]
}

/// Standard error of the mean from non-overlapping batch means.
fn batch_se(chains: &[Vec<f64>], batches_per_chain: usize) -> f64 {
    let mut means = Vec::new();
    for c in chains {
        let size = c.len() / batches_per_chain;
        for b in 0..batches_per_chain {
            means.push(c[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64);
        }
    }
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    (var / means.len() as f64).sqrt()
}

/// Brownian path `x_i = sqrt(dt) sum_{j<i} z_j`, `x_0 = 0`.
fn brownian_path(z: &[f64], dt: f64) -> Vec<f64> {
    let mut x = vec![0.0; z.len() + 1];
    for (i, zi) in z.iter().enumerate() {
        x[i + 1] = x[i] + dt.sqrt() * zi;
    }
    x
}

/// Tune a tangent step on a fresh level-set point, then run `chains` chains
/// and collect a per-sample summary.
fn tuned_chains<T: Send>(
    model: &dyn Model,
    obs: &dyn Observable,
    grid: &TimeGrid,
    cfg: &mut SamplerConfig,
    chains: usize,
    summarize: impl Fn(&pathwalk::sampler::ManifoldPoint) -> T + Sync,
) -> (Vec<Vec<T>>, f64, f64) {
    let mut rng = RandomStream::for_chain(cfg.seed, chains as u64);
    let init = find_initial_point(
        model,
        obs,
        cfg.z_target,
        grid,
        &mut rng,
        cfg.newton_tol,
        cfg.init_maxiter,
    )
    .unwrap();
    let (step, _) = tune_step(init.point, model, obs, cfg, (0.2, 0.5), 20, 500, &mut rng).unwrap();
    cfg.proposal = Proposal::TangentRw { step };
    let runs = run_chains(model, obs, grid, cfg, chains, None, summarize).unwrap();
    let mut stats = pathwalk::sampler::ChainStats::default();
    let samples = runs
        .into_iter()
        .map(|r| {
            stats.merge(&r.stats);
            r.samples.into_iter().map(|(_, s)| s).collect()
        })
        .collect();
    (samples, step, stats.acceptance_rate())
}

fn criterion_1(s: &mut Suite) {
    let clock = Instant::now();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let mut ok = true;
    for (steps, seed) in [(8, 11), (32, 12)] {
        for e in gradcheck_all(steps, 5, seed).expect("gradient check runs") {
            pairs += 1;
            worst = worst.max(e.report.max_discrepancy);
            if !e.report.passes(1e-5) {
                ok = false;
                s.info(&format!(
                    "{} / {} at N_t={steps}: {:.3e}",
                    e.model, e.observable, e.report.max_discrepancy
                ));
            }
        }
    }
    s.verdict(
        "1",
        ok,
        &format!("adjoint vs central differences, {pairs} pair checks, max rel err {worst:.2e} (tol 1e-5)"),
        clock,
    );
}

fn criterion_2(s: &mut Suite) {
    let clock = Instant::now();
    let mut cfg = preset("bridge_range");
    let steps = 1000;
    set_steps(&mut cfg, steps);
    cfg.sampler.proposal = Proposal::PcnFlat { beta: 0.5 };
    cfg.sampler.chains = 4;
    cfg.sampler.burn_in = 500;
    cfg.sampler.thin = 4;
    cfg.sampler.chain_length = cfg.sampler.burn_in + 4 * 5000;
    cfg.output.record = vec![Record::Range];
    let out = execute(&cfg).expect("bridge run");
    let k = out.table.column("range").unwrap();
    let ks = ks_distance(&empirical_cdf(&k).unwrap(), |x| analytic_range_cdf(x, 100));
    // Shift for the unobserved excursions between grid points of both extrema.
    let shift = 2.0 * 0.5826 * (1.0 / steps as f64).sqrt();
    let shifted: Vec<f64> = k.iter().map(|v| v + shift).collect();
    let ks_shifted = ks_distance(&empirical_cdf(&shifted).unwrap(), |x| {
        analytic_range_cdf(x, 100)
    });
    s.info(&format!(
        "acceptance {:.3}, KS after discrete-monitoring shift {ks_shifted:.4}",
        out.stats.acceptance_rate
    ));
    s.verdict(
        "2",
        k.len() >= 20_000 && ks <= 0.02,
        &format!(
            "bridge range at N_t={steps}, {} samples, KS {ks:.4} (tol 0.02)",
            k.len()
        ),
        clock,
    );
}

/// Exact law of `x_1..x_N` for Brownian motion conditioned on
/// `(dt/T) sum_{i>=1} x_i = c`.
fn linear_conditional(steps: usize, horizon: f64, c: f64) -> (Vec<f64>, Vec<f64>) {
    let dt = horizon / steps as f64;
    let a: Vec<f64> = (0..steps)
        .map(|j| dt / horizon * dt.sqrt() * (steps - j) as f64)
        .collect();
    let aa: f64 = a.iter().map(|v| v * v).sum();
    let mz: Vec<f64> = a.iter().map(|v| v * c / aa).collect();
    // x = L z, L_{ij} = sqrt(dt) for j < i.
    let mut mean = vec![0.0; steps + 1];
    let mut var = vec![0.0; steps + 1];
    for i in 1..=steps {
        mean[i] = dt.sqrt() * mz[..i].iter().sum::<f64>();
        let sa: f64 = a[..i].iter().sum();
        var[i] = dt * (i as f64 - sa * sa / aa);
    }
    (mean, var)
}

fn criterion_3(s: &mut Suite) {
    let clock = Instant::now();
    let mut ok = true;
    let model = BrownianModel::new(1);
    for steps in [3usize, 16] {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let obs = PowerMeanObservable::new(1.0).unwrap();
        let mut cfg = SamplerConfig::new(0.5, Proposal::TangentRw { step: 0.5 });
        cfg.seed = 30 + steps as u64;
        cfg.burn_in = 2000;
        cfg.thin = 5;
        cfg.chain_length = cfg.burn_in + 5 * 25_000;
        let (samples, step, acc) = tuned_chains(&model, &obs, &grid, &mut cfg, 4, |p| {
            p.path.as_slice().to_vec()
        });
        let (mean, var) = linear_conditional(steps, 1.0, 0.5);
        let total: usize = samples.iter().map(Vec::len).sum();
        let (mut worst_z, mut worst_v): (f64, f64) = (0.0, 0.0);
        for i in 1..=steps {
            let per_chain: Vec<Vec<f64>> = samples
                .iter()
                .map(|c| c.iter().map(|x| x[i]).collect())
                .collect();
            let pooled: Vec<f64> = per_chain.concat();
            let (m, v, _) = moments(&pooled);
            let se = batch_se(&per_chain, 25);
            worst_z = worst_z.max((m - mean[i]).abs() / se);
            worst_v = worst_v.max((v / var[i] - 1.0).abs());
        }
        let pass = total >= 100_000 && worst_z <= 3.0 && worst_v <= 0.05;
        ok &= pass;
        s.info(&format!(
            "linear N_t={steps}: {total} samples, step {step:.3}, acceptance {acc:.3}, max |mean err|/SE {worst_z:.2} (tol 3), max var rel err {worst_v:.4} (tol 0.05)"
        ));
    }

    // Curved level set: int x^2 dt = 0.5 at N_t = 4 against a rejection band.
    let steps = 4;
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let dt = grid.dt();
    let obs = SquareIntegralObservable;
    let mut cfg = SamplerConfig::new(0.5, Proposal::TangentRw { step: 0.5 });
    cfg.seed = 34;
    cfg.burn_in = 2000;
    cfg.thin = 5;
    cfg.chain_length = cfg.burn_in + 5 * 25_000;
    let (samples, step, acc) = tuned_chains(&model, &obs, &grid, &mut cfg, 4, |p| {
        *p.path.final_state().first().unwrap()
    });
    let chain_end: Vec<f64> = samples.concat();
    let mut rng = RandomStream::new(3400);
    let mut oracle = Vec::new();
    let mut z = vec![0.0; steps];
    while oracle.len() < 50_000 {
        rng.fill_normal(&mut z);
        let x = brownian_path(&z, dt);
        let f: f64 = dt * x[1..].iter().map(|v| v * v).sum::<f64>();
        if (f - 0.5).abs() <= 0.01 {
            oracle.push(x[steps]);
        }
    }
    let ks = ks_two_sample(
        &empirical_cdf(&chain_end).unwrap(),
        &empirical_cdf(&oracle).unwrap(),
    );
    let pass = ks <= 0.05;
    ok &= pass;
    s.info(&format!(
        "square integral N_t=4: {} samples, step {step:.3}, acceptance {acc:.3}, KS of x(T) vs band oracle {ks:.4} (tol 0.05)",
        chain_end.len()
    ));
    s.verdict(
        "3",
        ok,
        "exact Gaussian conditioning and curved band oracle",
        clock,
    );
}

struct PresetRuns {
    ou1: Option<(RunConfig, RunOutput)>,
    ou3: Option<(RunConfig, RunOutput)>,
    levy: Option<(RunConfig, RunOutput)>,
}

fn run_preset(s: &Suite, name: &str) -> (RunConfig, RunOutput, bool) {
    let clock = Instant::now();
    let cfg = preset(name);
    let out = execute(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    let (worst, tol) = constraint_residual(&cfg, &out);
    let ok = !out.table.rows.is_empty() && worst <= tol;
    s.info(&format!(
        "{name}: {} samples, acceptance {:.3}, max |F - z| {worst:.2e} (tol {tol:.0e}) [{:.1}s]",
        out.table.rows.len(),
        out.stats.acceptance_rate,
        clock.elapsed().as_secs_f64()
    ));
    (cfg, out, ok)
}

fn criterion_4(s: &mut Suite) -> PresetRuns {
    let clock = Instant::now();
    let mut ok = true;
    let mut runs = PresetRuns {
        ou1: None,
        ou3: None,
        levy: None,
    };
    for name in [
        "bridge_range",
        "range_endpoint",
        "ou_alpha1",
        "ou_alpha3",
        "levy_area",
    ] {
        let (cfg, out, pass) = run_preset(s, name);
        ok &= pass;
        match name {
            "ou_alpha1" => runs.ou1 = Some((cfg, out)),
            "ou_alpha3" => runs.ou3 = Some((cfg, out)),
            "levy_area" => runs.levy = Some((cfg, out)),
            _ => {}
        }
    }
    s.verdict("4", ok, "every retained sample of the fast-tier presets on the level set (kdv, barkley under --slow)", clock);
    runs
}

fn ou_window(cfg: &RunConfig) -> (usize, usize, f64) {
    let grid = cfg.model.time_grid().unwrap();
    let lo = (10.0 / grid.dt()).ceil() as usize;
    let hi = (40.0 / grid.dt()).floor() as usize;
    (lo, hi, grid.dt())
}

fn criterion_5(s: &mut Suite, runs: &PresetRuns) {
    let clock = Instant::now();
    let (cfg1, out1) = runs.ou1.as_ref().unwrap();
    let (lo, hi, _) = ou_window(cfg1);
    let pooled: Vec<f64> = out1
        .traces
        .as_ref()
        .unwrap()
        .iter()
        .flat_map(|(_, _, x)| x[lo..=hi].iter().copied())
        .collect();
    let (m1, _, k1) = moments(&pooled);
    let pass_a = (m1 - 0.2).abs() <= 0.02 && k1.abs() <= 0.3;
    s.info(&format!(
        "alpha=1: pooled mean {m1:.4} (0.2 +- 0.02), excess kurtosis {k1:.3} (|k| <= 0.3)"
    ));

    let (cfg3, out3) = runs.ou3.as_ref().unwrap();
    let (lo, hi, dt) = ou_window(cfg3);
    let traces = out3.traces.as_ref().unwrap();
    let pooled: Vec<f64> = traces
        .iter()
        .flat_map(|(_, _, x)| x[lo..=hi].iter().copied())
        .collect();
    let (m3, _, _) = moments(&pooled);
    let tail = pooled.iter().filter(|&&v| v > 0.5).count() as f64 / pooled.len() as f64;
    let horizon = cfg3.model.horizon();
    let max_width = (horizon / 5.0 / dt).floor() as usize;
    let localized = traces
        .iter()
        .filter(|(_, _, x)| {
            let w: Vec<f64> = x[1..].iter().map(|v| v.abs().powi(3)).collect();
            concentration_width(&w, 0.9) <= max_width
        })
        .count() as f64
        / traces.len() as f64;
    let pass_b = m3 <= 0.05 && tail > 0.0 && localized >= 0.8;
    s.info(&format!(
        "alpha=3: pooled mean {m3:.4} (<= 0.05), P(phi > 0.5) {tail:.4} (> 0), localized paths {localized:.3} (>= 0.8)"
    ));
    s.verdict("5", pass_a && pass_b, "OU condensation transition", clock);
}

fn criterion_6(s: &mut Suite) {
    let clock = Instant::now();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets/bench_scaling.toml");
    let bench = BenchConfig::from_toml_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let cfg = ScalingConfig {
        horizon: bench.horizon,
        chain_length: bench.chain_length,
        burn_in: bench.burn_in,
        seed: bench.seed,
    };
    let steps = [100, 1000, 10000];
    let rows = acceptance_scaling_benchmark(&bench.proposal, &steps, &cfg).unwrap();
    let mut pcn = Vec::new();
    let mut reference = Vec::new();
    for r in &rows {
        match r.proposal {
            Proposal::PcnFlat { .. } => pcn.push(r.acceptance_rate),
            Proposal::TangentRw { .. } => reference.push(r.acceptance_rate),
        }
    }
    let (lo, hi) = pcn
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = (hi - lo) / hi;
    let decreasing = reference.windows(2).all(|w| w[1] < w[0]);
    s.info(&format!(
        "pcn rates {pcn:?}, tangent_rw rates {reference:?}"
    ));
    s.verdict(
        "6",
        pcn.len() == 3 && reference.len() == 3 && spread <= 0.2 && decreasing,
        &format!("pCN relative spread {spread:.3} (tol 0.2), reference strictly decreasing: {decreasing}"),
        clock,
    );
}

/// Left-point Levy area of a planar path stored as interleaved pairs.
fn levy_area(x: &[f64]) -> f64 {
    x.chunks_exact(2)
        .zip(x.chunks_exact(2).skip(1))
        .map(|(p, q)| p[0] * (q[1] - p[1]) - p[1] * (q[0] - p[0]))
        .sum::<f64>()
        * 0.5
}

fn criterion_7(s: &mut Suite, runs: &PresetRuns) {
    let clock = Instant::now();
    let (cfg, out) = runs.levy.as_ref().unwrap();
    let (worst, tol) = constraint_residual(cfg, out);
    let norms = out.table.column("endpoint_norm").unwrap();
    let p01 = quantile(&norms, 0.01);
    s.info(&format!(
        "preset: max |A - 1| {worst:.2e} (tol {tol:.0e}), 1st percentile of |X_1| {p01:.3} (> 0.1)"
    ));

    let mut small = cfg.clone();
    set_steps(&mut small, 32);
    small.sampler.chains = 4;
    small.sampler.burn_in = 2000;
    small.sampler.thin = 10;
    small.sampler.chain_length = small.sampler.burn_in + 10 * 12_500;
    small.sampler.tune = Some(TuneSection {
        low: 0.2,
        high: 0.5,
        rounds: 20,
        batch: 500,
    });
    small.sampler.seed = 70;
    small.output.record = vec![Record::EndpointNorm];
    let run = execute(&small).unwrap();
    let chain = run.table.column("endpoint_norm").unwrap();

    let steps = 32;
    let dt = 1.0 / steps as f64;
    let mut rng = RandomStream::new(7000);
    let mut oracle = Vec::new();
    let mut z = vec![0.0; 2 * steps];
    let mut x = vec![0.0; 2 * (steps + 1)];
    while oracle.len() < 30_000 {
        rng.fill_normal(&mut z);
        for i in 0..steps {
            x[2 * i + 2] = x[2 * i] + dt.sqrt() * z[2 * i];
            x[2 * i + 3] = x[2 * i + 1] + dt.sqrt() * z[2 * i + 1];
        }
        if (levy_area(&x) - 1.0).abs() <= 0.01 {
            oracle.push(x[2 * steps].hypot(x[2 * steps + 1]));
        }
    }
    let ks = ks_two_sample(
        &empirical_cdf(&chain).unwrap(),
        &empirical_cdf(&oracle).unwrap(),
    );
    s.info(&format!(
        "N_t=32: {} chain samples, acceptance {:.3}, KS of |X_1| vs band oracle {ks:.4} (tol 0.05)",
        chain.len(),
        run.stats.acceptance_rate
    ));
    s.verdict(
        "7",
        worst <= tol && p01 > 0.1 && ks <= 0.05,
        "Levy area conditioning",
        clock,
    );
}

fn criterion_8(s: &mut Suite) {
    let clock = Instant::now();
    let (cfg, out, on_set) = run_preset(s, "kdv");
    let points = match cfg.model {
        ModelConfig::Kdv { points, .. } => points,
        _ => unreachable!(),
    };
    let mut mean_field = vec![0.0; points];
    for r in &out.table.rows {
        for (m, v) in mean_field.iter_mut().zip(&r.summaries[..points]) {
            *m += v / out.table.rows.len() as f64;
        }
    }
    let argmax = (0..points)
        .max_by(|&a, &b| mean_field[a].total_cmp(&mean_field[b]))
        .unwrap();
    let near = |k: usize| k <= 1 || k == points - 1;
    let near_origin = near(argmax);
    let per_sample = out
        .table
        .rows
        .iter()
        .filter(|r| {
            let field = &r.summaries[..points];
            near(
                (0..points)
                    .max_by(|&a, &b| field[a].total_cmp(&field[b]))
                    .unwrap(),
            )
        })
        .count() as f64
        / out.table.rows.len() as f64;
    let kdv_ok = on_set && out.stats.acceptance_rate >= 0.05 && near_origin;
    s.info(&format!(
        "kdv: acceptance {:.3} (>= 0.05), mean final field peaks at cell {argmax} of {points} (within one cell of x=0), per-sample fraction {per_sample:.2}",
        out.stats.acceptance_rate
    ));

    let (cfg, out, on_set) = run_preset(s, "barkley");
    let model = cfg.model.build().unwrap();
    let (points, length) = match cfg.model {
        ModelConfig::Barkley { points, length, .. } => (points, length),
        _ => unreachable!(),
    };
    let q0 = model.initial_state()[..points].iter().sum::<f64>() * length / points as f64;
    let barkley_ok = on_set && (q0 - 25.0).abs() <= 0.2 * 25.0 && out.stats.acceptance_rate >= 0.02;
    s.info(&format!(
        "barkley: Q(0) {q0:.2} (25 +- 20%), Q(T) target {}, acceptance {:.3} (>= 0.02)",
        cfg.sampler.target, out.stats.acceptance_rate
    ));
    s.verdict(
        "8",
        kdv_ok && barkley_ok,
        "KdV steepening and Barkley relaminarization",
        clock,
    );
}

fn main() -> ExitCode {
    let slow = std::env::args().any(|a| a == "--slow");
    let mut s = Suite { failures: 0 };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_3(&mut s);
    let runs = criterion_4(&mut s);
    criterion_5(&mut s, &runs);
    criterion_6(&mut s);
    criterion_7(&mut s, &runs);
    if slow {
        criterion_8(&mut s);
    } else {
        println!("SKIP 8: KdV and Barkley run under --slow");
    }
    if s.failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", s.failures);
        ExitCode::FAILURE
    }
}
