//! Drivers behind the CLI subcommands.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{acceptance_scaling_benchmark, ScalingConfig, ScalingRow};
use crate::config::{
    thread_pool, BarkleyParamsConfig, ModelConfig, ObservableConfig, Record, RunConfig,
};
use crate::dynamics::{gradient_check, GradientReport};
use crate::error::{Error, Result};
use crate::io::{
    write_paths, write_samples, write_stats, write_trace, PathsMeta, SampleRecord, SampleTable,
    StatsFile, SAMPLES_FILE, STATS_FILE, TRACE_FILE,
};
use crate::pathcore::RandomStream;
use crate::sampler::{
    find_initial_point, run_chains, tune_step, ChainStats, Initialization, ManifoldPoint, Proposal,
    SamplerConfig,
};

/// Summary column names for `samples.csv`.
pub fn summary_columns(record: &[Record], state_dim: usize) -> Vec<String> {
    let mut cols = Vec::new();
    for r in record {
        match r {
            Record::Endpoint => cols.extend((0..state_dim).map(|j| format!("endpoint_{j}"))),
            Record::Range => cols.push("range".into()),
            Record::EndpointNorm => cols.push("endpoint_norm".into()),
            Record::FullPath | Record::ObservableTrace => {}
        }
    }
    cols
}

#[derive(Debug, Clone)]
struct Retained {
    value: f64,
    summaries: Vec<f64>,
    path: Option<Vec<f64>>,
    trace: Option<Vec<f64>>,
}

fn summarize(p: &ManifoldPoint, record: &[Record]) -> Retained {
    let mut summaries = Vec::new();
    let (mut path, mut trace) = (None, None);
    for r in record {
        match r {
            Record::Endpoint => summaries.extend_from_slice(p.path.final_state()),
            Record::Range => {
                let (lo, hi) = p
                    .path
                    .component(0)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                summaries.push(hi - lo);
            }
            Record::EndpointNorm => summaries.push(
                p.path
                    .final_state()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt(),
            ),
            Record::FullPath => path = Some(p.path.as_slice().to_vec()),
            Record::ObservableTrace => trace = Some(p.path.component(0).collect()),
        }
    }
    Retained {
        value: p.value,
        summaries,
        path,
        trace,
    }
}

/// In-memory result of a sampling run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: SampleTable,
    pub stats: StatsFile,
    pub paths: Option<(PathsMeta, Vec<f64>)>,
    pub traces: Option<Vec<(usize, usize, Vec<f64>)>>,
}

/// Initialize on the level set using the stream reserved for setup work.
pub fn initialize(cfg: &RunConfig) -> Result<Initialization> {
    let (model, obs) = cfg.instantiate()?;
    let grid = cfg.model.time_grid()?;
    let s = cfg.sampler.to_sampler_config();
    let mut rng = RandomStream::for_chain(s.seed, cfg.sampler.chains as u64);
    find_initial_point(
        model.as_ref(),
        obs.as_ref(),
        s.z_target,
        &grid,
        &mut rng,
        s.newton_tol,
        s.init_maxiter,
    )
}

/// Run all chains of `cfg` and collect retained samples.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    let clock = Instant::now();
    let (model, obs) = cfg.instantiate()?;
    let (model, obs) = (model.as_ref(), obs.as_ref());
    let grid = cfg.model.time_grid()?;
    let mut sampler: SamplerConfig = cfg.sampler.to_sampler_config();
    let chains = cfg.sampler.chains;
    let record = cfg.output.record.clone();
    let pool = thread_pool(chains)?;

    let tuned_step = match cfg.sampler.tune {
        Some(t) => {
            let mut rng = RandomStream::for_chain(sampler.seed, chains as u64);
            let init = find_initial_point(
                model,
                obs,
                sampler.z_target,
                &grid,
                &mut rng,
                sampler.newton_tol,
                sampler.init_maxiter,
            )?;
            let (step, _) = tune_step(
                init.point,
                model,
                obs,
                &sampler,
                (t.low, t.high),
                t.rounds,
                t.batch,
                &mut rng,
            )?;
            sampler.proposal = Proposal::TangentRw { step };
            Some(step)
        }
        None => None,
    };

    let runs = pool.install(|| {
        run_chains(model, obs, &grid, &sampler, chains, None, |p| {
            summarize(p, &record)
        })
    })?;

    let columns = summary_columns(&record, model.state_dim());
    let mut stats = ChainStats {
        seed: sampler.seed,
        ..ChainStats::default()
    };
    let mut rows = Vec::new();
    let mut paths: Option<Vec<f64>> = record.contains(&Record::FullPath).then(Vec::new);
    let mut traces: Option<Vec<(usize, usize, Vec<f64>)>> =
        record.contains(&Record::ObservableTrace).then(Vec::new);
    for run in runs {
        stats.merge(&run.stats);
        for (step, r) in run.samples {
            if (r.value - sampler.z_target).abs() > sampler.newton_tol {
                return Err(Error::ProjectionFailure(format!(
                    "retained sample violates the constraint by {:e}",
                    (r.value - sampler.z_target).abs()
                )));
            }
            if let (Some(buf), Some(p)) = (paths.as_mut(), r.path) {
                buf.extend(p);
            }
            if let (Some(buf), Some(t)) = (traces.as_mut(), r.trace) {
                buf.push((run.chain, step, t));
            }
            rows.push(SampleRecord {
                chain: run.chain,
                step,
                value: r.value,
                summaries: r.summaries,
            });
        }
    }
    stats.wall_seconds = clock.elapsed().as_secs_f64();
    let retained = rows.len();
    let paths = paths.map(|v| {
        (
            PathsMeta {
                steps: grid.steps(),
                n: model.state_dim(),
                count: retained,
            },
            v,
        )
    });
    Ok(RunOutput {
        table: SampleTable { columns, rows },
        stats: StatsFile::from_stats(&stats, chains, retained, tuned_step),
        paths,
        traces,
    })
}

/// Run `cfg` and write its outputs into `dir`.
pub fn sample_to_directory(cfg: &RunConfig, dir: &Path) -> Result<RunOutput> {
    let out = execute(cfg)?;
    std::fs::create_dir_all(dir)?;
    write_samples(&dir.join(SAMPLES_FILE), &out.table)?;
    write_stats(&dir.join(STATS_FILE), &out.stats)?;
    if let Some((meta, values)) = &out.paths {
        write_paths(dir, *meta, values)?;
    }
    if let Some(traces) = &out.traces {
        write_trace(&dir.join(TRACE_FILE), cfg.model.steps(), traces)?;
    }
    Ok(out)
}

/// One model/observable pair of the gradient self-check.
#[derive(Debug, Clone)]
pub struct GradcheckEntry {
    pub model: String,
    pub observable: String,
    pub report: GradientReport,
}

/// Gradient check of the configured pair, optionally on a shorter grid. A
/// step override keeps `dt` and shortens the horizon accordingly.
pub fn gradcheck_config(
    cfg: &RunConfig,
    steps: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<GradientReport> {
    let mut model_cfg = cfg.model.clone();
    if let Some(s) = steps {
        set_steps(&mut model_cfg, s);
    }
    let model = model_cfg.build()?;
    let obs = cfg.observable.build(&model_cfg)?;
    obs.check_state_dim(model.state_dim())
        .map_err(|e| Error::Config(e.to_string()))?;
    let grid = model_cfg.time_grid()?;
    Ok(gradient_check(
        model.as_ref(),
        obs.as_ref(),
        trials,
        &grid,
        &mut RandomStream::new(seed),
    ))
}

fn set_steps(cfg: &mut ModelConfig, s: usize) {
    match cfg {
        ModelConfig::Brownian { steps, horizon, .. }
        | ModelConfig::Ou { steps, horizon, .. }
        | ModelConfig::Kdv { steps, horizon, .. }
        | ModelConfig::Barkley { steps, horizon, .. } => {
            *horizon *= s as f64 / *steps as f64;
            *steps = s;
        }
    }
}

/// Every registered model/observable pair at small sizes.
pub fn registered_pairs(steps: usize) -> Vec<(ModelConfig, ObservableConfig)> {
    let brownian = |dim| ModelConfig::Brownian {
        horizon: 1.0,
        steps,
        dim,
    };
    let ou = ModelConfig::Ou {
        horizon: 5.0,
        steps,
        epsilon: 0.1,
    };
    let kdv = ModelConfig::Kdv {
        horizon: 0.2,
        steps,
        length: 40.0,
        points: 32,
        kappa: 0.05,
        alpha: 0.01,
    };
    let barkley = ModelConfig::Barkley {
        horizon: 0.1 * steps as f64,
        steps,
        length: 50.0,
        points: 32,
        params: BarkleyParamsConfig::default(),
        relax_time: 20.0,
    };
    use ObservableConfig as O;
    vec![
        (brownian(1), O::Endpoint { component: 0 }),
        (brownian(1), O::Range {}),
        (brownian(1), O::PowerMean { alpha: 1.0 }),
        (brownian(1), O::SquareIntegral {}),
        (brownian(2), O::LevyArea {}),
        (
            brownian(2),
            O::LinearEndpoint {
                weights: vec![0.3, -1.2],
            },
        ),
        (ou.clone(), O::Endpoint { component: 0 }),
        (ou.clone(), O::PowerMean { alpha: 1.0 }),
        (ou.clone(), O::PowerMean { alpha: 3.0 }),
        (ou.clone(), O::Range {}),
        (ou, O::SquareIntegral {}),
        (kdv.clone(), O::Endpoint { component: 0 }),
        (
            kdv,
            O::LinearEndpoint {
                weights: (0..32).map(|j| (j as f64 * 0.3).sin()).collect(),
            },
        ),
        (barkley.clone(), O::IntegratedMass {}),
        (barkley, O::Endpoint { component: 20 }),
    ]
}

/// Gradient check of every registered pair.
pub fn gradcheck_all(steps: usize, trials: usize, seed: u64) -> Result<Vec<GradcheckEntry>> {
    registered_pairs(steps)
        .into_iter()
        .enumerate()
        .map(|(i, (m, o))| {
            let model = m.build()?;
            let obs = o.build(&m)?;
            let grid = m.time_grid()?;
            let report = gradient_check(
                model.as_ref(),
                obs.as_ref(),
                trials,
                &grid,
                &mut RandomStream::for_chain(seed, i as u64),
            );
            Ok(GradcheckEntry {
                model: model.name().to_string(),
                observable: obs.name().to_string(),
                report,
            })
        })
        .collect()
}

fn d_bench_steps() -> Vec<usize> {
    vec![100, 1000, 10_000]
}
fn d_bench_length() -> usize {
    2000
}
fn d_bench_burn() -> usize {
    200
}
fn d_bench_horizon() -> f64 {
    1.0
}

/// Configuration of `bench-scaling`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "d_bench_steps")]
    pub steps: Vec<usize>,
    #[serde(default = "d_bench_horizon")]
    pub horizon: f64,
    #[serde(default = "d_bench_length")]
    pub chain_length: usize,
    #[serde(default = "d_bench_burn")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    pub proposal: Vec<Proposal>,
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.steps.is_empty() || cfg.steps.contains(&0) || cfg.proposal.is_empty() {
            return Err(Error::Config(
                "bench needs positive step counts and at least one proposal".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Result<Vec<ScalingRow>> {
        let cfg = ScalingConfig {
            horizon: self.horizon,
            chain_length: self.chain_length,
            burn_in: self.burn_in,
            seed: self.seed,
        };
        acceptance_scaling_benchmark(&self.proposal, &self.steps, &cfg)
    }
}
