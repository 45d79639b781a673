//! Run configuration: TOML parsing, validation and the model/observable registry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::models::{
    free_run, BarkleyModel, BarkleyParams, BrownianModel, KdvModel, OuModel, SpatialGrid,
};
use crate::observables::{
    EndpointObservable, IntegratedMassObservable, LevyAreaObservable, Observable,
    PowerMeanObservable, RangeObservable, SquareIntegralObservable,
};
use crate::pathcore::TimeGrid;
use crate::sampler::{default_newton_tol, is_flat, Proposal, SamplerConfig};

pub const ENV_THREADS: &str = "PATHWALK_THREADS";
pub const ENV_SEED: &str = "PATHWALK_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub observable: ObservableConfig,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn d_one() -> usize {
    1
}
fn d_kdv_length() -> f64 {
    40.0
}
fn d_kdv_points() -> usize {
    128
}
fn d_kdv_kappa() -> f64 {
    0.05
}
fn d_kdv_alpha() -> f64 {
    0.01
}
fn d_barkley_length() -> f64 {
    50.0
}
fn d_barkley_points() -> usize {
    64
}
fn d_relax_time() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Brownian {
        horizon: f64,
        steps: usize,
        #[serde(default = "d_one")]
        dim: usize,
    },
    Ou {
        horizon: f64,
        steps: usize,
        epsilon: f64,
    },
    Kdv {
        horizon: f64,
        steps: usize,
        #[serde(default = "d_kdv_length")]
        length: f64,
        #[serde(default = "d_kdv_points")]
        points: usize,
        #[serde(default = "d_kdv_kappa")]
        kappa: f64,
        #[serde(default = "d_kdv_alpha")]
        alpha: f64,
    },
    Barkley {
        horizon: f64,
        steps: usize,
        #[serde(default = "d_barkley_length")]
        length: f64,
        #[serde(default = "d_barkley_points")]
        points: usize,
        #[serde(default)]
        params: BarkleyParamsConfig,
        /// Noise-free relaxation of the puff before sampling starts.
        #[serde(default = "d_relax_time")]
        relax_time: f64,
    },
}

/// Barkley parameters; any omitted field takes the library default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarkleyParamsConfig {
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

impl Default for BarkleyParamsConfig {
    fn default() -> Self {
        let p = BarkleyParams::default();
        Self {
            r: p.r,
            sigma: p.sigma,
            zeta: p.zeta,
            delta: p.delta,
            eps_u: p.eps_u,
            kappa: p.kappa,
            u0: p.u0,
            ubar: p.ubar,
            diffusion: p.diffusion,
        }
    }
}

impl From<BarkleyParamsConfig> for BarkleyParams {
    fn from(c: BarkleyParamsConfig) -> Self {
        BarkleyParams {
            r: c.r,
            sigma: c.sigma,
            zeta: c.zeta,
            delta: c.delta,
            eps_u: c.eps_u,
            kappa: c.kappa,
            u0: c.u0,
            ubar: c.ubar,
            diffusion: c.diffusion,
        }
    }
}

impl ModelConfig {
    pub fn horizon(&self) -> f64 {
        match *self {
            ModelConfig::Brownian { horizon, .. }
            | ModelConfig::Ou { horizon, .. }
            | ModelConfig::Kdv { horizon, .. }
            | ModelConfig::Barkley { horizon, .. } => horizon,
        }
    }

    pub fn steps(&self) -> usize {
        match *self {
            ModelConfig::Brownian { steps, .. }
            | ModelConfig::Ou { steps, .. }
            | ModelConfig::Kdv { steps, .. }
            | ModelConfig::Barkley { steps, .. } => steps,
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon(), self.steps()).map_err(config_error)
    }

    /// Spatial grid of the PDE models.
    pub fn spatial_grid(&self) -> Result<Option<SpatialGrid>> {
        match *self {
            ModelConfig::Kdv { length, points, .. }
            | ModelConfig::Barkley { length, points, .. } => SpatialGrid::new(length, points)
                .map(Some)
                .map_err(config_error),
            _ => Ok(None),
        }
    }

    /// Construct the model. For Barkley this includes the relaxation run.
    pub fn build(&self) -> Result<Box<dyn Model>> {
        let grid = self.time_grid()?;
        let check = |model: &dyn Model| -> Result<()> {
            match model.max_stable_dt() {
                Some(max_dt) if grid.dt() > max_dt => Err(Error::Config(format!(
                    "time step {} exceeds the explicit stability limit {max_dt:.3e} of model {}",
                    grid.dt(),
                    model.name()
                ))),
                _ => Ok(()),
            }
        };
        let model: Box<dyn Model> = match *self {
            ModelConfig::Brownian { dim, .. } => {
                if dim == 0 {
                    return Err(Error::Config("brownian dim must be at least 1".into()));
                }
                Box::new(BrownianModel::new(dim))
            }
            ModelConfig::Ou { epsilon, .. } => {
                Box::new(OuModel::new(epsilon).map_err(config_error)?)
            }
            ModelConfig::Kdv { kappa, alpha, .. } => {
                let sg = self.spatial_grid()?.expect("kdv has a spatial grid");
                Box::new(KdvModel::new(sg, kappa, alpha).map_err(config_error)?)
            }
            ModelConfig::Barkley {
                params, relax_time, ..
            } => {
                let sg = self.spatial_grid()?.expect("barkley has a spatial grid");
                let model = BarkleyModel::new(sg, params.into()).map_err(config_error)?;
                check(&model)?;
                if !(relax_time >= 0.0 && relax_time.is_finite()) {
                    return Err(Error::Config("relax_time must be non-negative".into()));
                }
                if relax_time > 0.0 {
                    let relax_steps = (relax_time / grid.dt()).ceil() as usize;
                    let relaxed = free_run(&model, relax_time, relax_steps)?;
                    Box::new(model.with_initial_state(relaxed)?)
                } else {
                    Box::new(model)
                }
            }
        };
        check(model.as_ref())?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    Endpoint {
        #[serde(default)]
        component: usize,
    },
    LinearEndpoint {
        weights: Vec<f64>,
    },
    PowerMean {
        alpha: f64,
    },
    SquareIntegral {},
    LevyArea {},
    Range {},
    IntegratedMass {},
}

impl ObservableConfig {
    pub fn build(&self, model: &ModelConfig) -> Result<Box<dyn Observable>> {
        let obs: Box<dyn Observable> = match self {
            ObservableConfig::Endpoint { component } => {
                Box::new(EndpointObservable::component(*component))
            }
            ObservableConfig::LinearEndpoint { weights } => {
                Box::new(EndpointObservable::linear(weights.clone()))
            }
            ObservableConfig::PowerMean { alpha } => {
                Box::new(PowerMeanObservable::new(*alpha).map_err(config_error)?)
            }
            ObservableConfig::SquareIntegral {} => Box::new(SquareIntegralObservable),
            ObservableConfig::LevyArea {} => Box::new(LevyAreaObservable),
            ObservableConfig::Range {} => Box::new(RangeObservable),
            ObservableConfig::IntegratedMass {} => match model {
                ModelConfig::Barkley { length, points, .. } => {
                    Box::new(IntegratedMassObservable::new(*points, *length).map_err(config_error)?)
                }
                _ => {
                    return Err(Error::Config(
                        "integrated_mass applies to the barkley model only".into(),
                    ))
                }
            },
        };
        Ok(obs)
    }

    fn linear_width(&self) -> Option<usize> {
        match self {
            ObservableConfig::LinearEndpoint { weights } => Some(weights.len()),
            _ => None,
        }
    }
}

fn d_maxiter() -> usize {
    20
}
fn d_rev_tol() -> f64 {
    1e-8
}
fn d_init_maxiter() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub target: f64,
    pub proposal: Proposal,
    /// Defaults to `1e-10 max(1, |target|)`.
    #[serde(default)]
    pub newton_tol: Option<f64>,
    #[serde(default = "d_maxiter")]
    pub newton_maxiter: usize,
    #[serde(default = "d_rev_tol")]
    pub reversibility_tol: f64,
    pub chain_length: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "d_one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_one")]
    pub chains: usize,
    #[serde(default = "d_init_maxiter")]
    pub init_maxiter: usize,
    /// Adapt the tangent step before sampling.
    #[serde(default)]
    pub tune: Option<TuneSection>,
}

fn d_low() -> f64 {
    0.2
}
fn d_high() -> f64 {
    0.5
}
fn d_rounds() -> usize {
    20
}
fn d_batch() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    #[serde(default = "d_low")]
    pub low: f64,
    #[serde(default = "d_high")]
    pub high: f64,
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default = "d_batch")]
    pub batch: usize,
}

impl SamplerSection {
    pub fn to_sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            z_target: self.target,
            proposal: self.proposal,
            newton_tol: self
                .newton_tol
                .unwrap_or_else(|| default_newton_tol(self.target)),
            newton_maxiter: self.newton_maxiter,
            reversibility_tol: self.reversibility_tol,
            chain_length: self.chain_length,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            init_maxiter: self.init_maxiter,
        }
    }
}

/// Path summaries written per retained sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    /// Every component of the final state, as CSV columns `endpoint_<j>`.
    Endpoint,
    /// `max - min` of component 0 over the path.
    Range,
    /// Euclidean norm of the final state.
    EndpointNorm,
    /// The whole path, to `paths.bin`.
    FullPath,
    /// Time series of component 0, to `trace.csv`.
    ObservableTrace,
}

fn d_directory() -> PathBuf {
    PathBuf::from("pathwalk-out")
}
fn d_record() -> Vec<Record> {
    vec![Record::Endpoint]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_directory")]
    pub directory: PathBuf,
    #[serde(default = "d_record")]
    pub record: Vec<Record>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: d_directory(),
            record: d_record(),
        }
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) | Error::Unsupported(m) => Error::Config(m),
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, apply environment overrides, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(seed) = env_seed()? {
            cfg.sampler.seed = seed;
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that need no model construction: shapes, names, sampler settings.
    pub fn validate(&self) -> Result<()> {
        self.model.time_grid()?;
        self.model.spatial_grid()?;
        self.sampler
            .to_sampler_config()
            .validate()
            .map_err(config_error)?;
        if self.sampler.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if let Some(t) = self.sampler.tune {
            if !matches!(self.sampler.proposal, Proposal::TangentRw { .. }) {
                return Err(Error::Config(
                    "tuning applies to the tangent_rw proposal only".into(),
                ));
            }
            if !(0.0 < t.low && t.low < t.high && t.high < 1.0) || t.batch == 0 {
                return Err(Error::Config(
                    "tune band must satisfy 0 < low < high < 1 with batch > 0".into(),
                ));
            }
        }
        let n = self.state_dim()?;
        if let Some(w) = self.observable.linear_width() {
            if w != n {
                return Err(Error::Config(format!(
                    "linear endpoint has {w} weights for state dimension {n}"
                )));
            }
        }
        let obs = self.observable.build(&self.model)?;
        obs.check_state_dim(n).map_err(config_error)?;
        Ok(())
    }

    fn state_dim(&self) -> Result<usize> {
        Ok(match self.model {
            ModelConfig::Brownian { dim, .. } => dim,
            ModelConfig::Ou { .. } => 1,
            ModelConfig::Kdv { points, .. } => points,
            ModelConfig::Barkley { points, .. } => 2 * points,
        })
    }

    /// Build the model and observable and run the remaining checks.
    pub fn instantiate(&self) -> Result<(Box<dyn Model>, Box<dyn Observable>)> {
        self.validate()?;
        let model = self.model.build()?;
        let obs = self.observable.build(&self.model)?;
        obs.check_state_dim(model.state_dim())
            .map_err(config_error)?;
        if matches!(self.sampler.proposal, Proposal::PcnFlat { .. })
            && !is_flat(model.as_ref(), obs.as_ref())
        {
            return Err(Error::Config(format!(
                "pcn_flat needs an affine model and observable; {} / {} is not",
                model.name(),
                obs.name()
            )));
        }
        Ok((model, obs))
    }
}

/// `PATHWALK_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(ENV_SEED) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            Error::Config(format!("{ENV_SEED} must be an unsigned integer, got {s:?}"))
        }),
        Err(_) => Ok(None),
    }
}

/// `PATHWALK_THREADS`, if set.
pub fn env_threads() -> Result<Option<usize>> {
    match std::env::var(ENV_THREADS) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{ENV_THREADS} must be a positive integer, got {s:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Rayon pool capped at `PATHWALK_THREADS` and at the number of chains.
pub fn thread_pool(chains: usize) -> Result<rayon::ThreadPool> {
    let mut threads = chains.max(1);
    if let Some(cap) = env_threads()? {
        threads = threads.min(cap);
    }
    threads = threads.min(
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .max(1),
    );
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BRIDGE: &str = r#"
[model]
name = "brownian"
horizon = 1.0
steps = 100

[observable]
name = "endpoint"

[sampler]
target = 0.0
proposal = { kind = "pcn_flat", beta = 0.5 }
chain_length = 100
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_toml_str(BRIDGE).unwrap();
        assert_eq!(cfg.model.steps(), 100);
        assert_eq!(cfg.sampler.chains, 1);
        assert_eq!(cfg.output.record, vec![Record::Endpoint]);
        let s = cfg.sampler.to_sampler_config();
        assert_eq!(s.newton_tol, 1e-10);
        assert_eq!(s.newton_maxiter, 20);
        let (model, obs) = cfg.instantiate().unwrap();
        assert_eq!((model.name(), obs.name()), ("brownian", "endpoint"));

        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        for (from, to) in [
            ("steps = 100", "steps = 100\nwobble = 3"),
            ("target = 0.0", "target = 0.0\nwobble = 3"),
            ("name = \"endpoint\"", "name = \"endpoint\"\nwobble = 3"),
            ("beta = 0.5", "beta = 0.5, wobble = 3"),
            ("name = \"brownian\"", "name = \"heat\""),
        ] {
            let text = BRIDGE.replace(from, to);
            assert!(
                matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))),
                "{to}"
            );
        }
        let extra = format!("{BRIDGE}\n[extra]\nx = 1\n");
        assert!(RunConfig::from_toml_str(&extra).is_err());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let levy = BRIDGE.replace("name = \"endpoint\"", "name = \"levy_area\"");
        assert!(matches!(
            RunConfig::from_toml_str(&levy),
            Err(Error::Config(_))
        ));
        let comp = BRIDGE.replace("name = \"endpoint\"", "name = \"endpoint\"\ncomponent = 3");
        assert!(RunConfig::from_toml_str(&comp).is_err());
        let lin = BRIDGE.replace(
            "name = \"endpoint\"",
            "name = \"linear_endpoint\"\nweights = [1.0, 2.0]",
        );
        assert!(RunConfig::from_toml_str(&lin).is_err());
        let mass = BRIDGE.replace("name = \"endpoint\"", "name = \"integrated_mass\"");
        assert!(RunConfig::from_toml_str(&mass).is_err());
    }

    #[test]
    fn rejects_bad_sampler_settings() {
        let text = BRIDGE.replace("beta = 0.5", "beta = 1.5");
        assert!(RunConfig::from_toml_str(&text).is_err());
        let text = BRIDGE.replace("chain_length = 100", "chain_length = 100\nthin = 0");
        assert!(RunConfig::from_toml_str(&text).is_err());
        let text = BRIDGE.replace("chain_length = 100", "chain_length = 100\ntune = {}");
        assert!(RunConfig::from_toml_str(&text).is_err());

        let ou = BRIDGE
            .replace("name = \"brownian\"", "name = \"ou\"\nepsilon = 0.1")
            .replace("name = \"endpoint\"", "name = \"power_mean\"\nalpha = 3.0");
        let cfg = RunConfig::from_toml_str(&ou).unwrap();
        assert!(matches!(cfg.instantiate(), Err(Error::Config(_))));
    }

    #[test]
    fn stability_guard() {
        let text = r#"
[model]
name = "kdv"
horizon = 1.0
steps = 10

[observable]
name = "endpoint"

[sampler]
target = 5.0
proposal = { kind = "tangent_rw", step = 0.1 }
chain_length = 10
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert!(matches!(cfg.instantiate(), Err(Error::Config(_))));
    }
}
