use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pathwalk::analysis::{
    analytic_range_cdf, empirical_cdf, histogram, ks_distance, moments, rotate_to_axis,
};
use pathwalk::config::RunConfig;
use pathwalk::io::{read_paths, read_samples, write_paths_as};
use pathwalk::run::{
    gradcheck_all, gradcheck_config, initialize, sample_to_directory, BenchConfig,
};
use pathwalk::Error;

#[derive(Parser)]
#[command(
    name = "pathwalk",
    version,
    about = "Sample SDE paths conditioned on the value of an observable"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the chains of a configuration and write samples and statistics.
    Sample {
        config: PathBuf,
        /// Output directory; overrides `[output] directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare adjoint gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Find a point on the level set and report it.
    Initpoint { config: PathBuf },
    /// Post-process a samples file.
    Analyze(AnalyzeArgs),
    /// Acceptance rate against discretization on the Brownian-bridge level set.
    BenchScaling {
        config: PathBuf,
        /// Comma-separated step counts; overrides the config.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct GradcheckArgs {
    /// Configuration whose model/observable pair is checked.
    config: Option<PathBuf>,
    /// Check every registered pair instead.
    #[arg(long, conflicts_with = "config")]
    all: bool,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    samples: PathBuf,
    /// KS distance of a column against the Brownian-bridge range law.
    #[arg(long, group = "mode")]
    range_cdf: bool,
    /// Column compared by --range-cdf.
    #[arg(long, default_value = "range", requires = "range_cdf")]
    column: String,
    /// Horizon of the bridge; ranges are rescaled by `1/sqrt(T)`.
    #[arg(long, default_value_t = 1.0, requires = "range_cdf")]
    horizon: f64,
    #[arg(long, default_value_t = 100, requires = "range_cdf")]
    k_max: usize,
    /// Histogram of a column.
    #[arg(long, group = "mode", value_name = "COLUMN")]
    histogram: Option<String>,
    /// Bin count; Freedman–Diaconis if omitted.
    #[arg(long, requires = "histogram")]
    bins: Option<usize>,
    /// Rotate the planar paths next to the samples file so each endpoint lies
    /// on the first axis; writes rotated_paths.bin.
    #[arg(long, group = "mode")]
    rotate_paths: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "config file {} not found",
            path.display()
        )));
    }
    RunConfig::load(path)
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("JSON value serializes")
    );
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Sample { config, out } => {
            let cfg = load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.directory.clone());
            let run = sample_to_directory(&cfg, &dir)?;
            let s = &run.stats;
            println!(
                "{} samples from {} chains in {:.2}s, acceptance {:.3} (newton {}, reversibility {}, mh {}, blow-up {}) -> {}",
                s.retained,
                s.chains,
                s.wall_seconds,
                s.acceptance_rate,
                s.reject_newton,
                s.reject_reversibility,
                s.reject_mh,
                s.blow_up,
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck(args) => gradcheck(args),
        Command::Initpoint { config } => {
            let cfg = load(&config)?;
            let init = initialize(&cfg)?;
            print_json(&json!({
                "iterations": init.iterations,
                "value": init.point.value,
                "residual": (init.point.value - cfg.sampler.target).abs(),
                "normal_norm": init.point.normal_norm,
                "noise_norm": init.point.z.norm(),
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze(args) => analyze(args),
        Command::BenchScaling { config, steps } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            let mut bench = BenchConfig::from_toml_str(&text)?;
            if let Some(s) = steps {
                bench.steps = s;
            }
            println!("proposal,parameter,steps,acceptance_rate");
            for row in bench.run()? {
                let (kind, param) = match row.proposal {
                    pathwalk::sampler::Proposal::TangentRw { step } => ("tangent_rw", step),
                    pathwalk::sampler::Proposal::PcnFlat { beta } => ("pcn_flat", beta),
                };
                println!("{kind},{param},{},{}", row.steps, row.acceptance_rate);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let mut ok = true;
    let mut report = |model: &str, obs: &str, r: &pathwalk::dynamics::GradientReport| {
        let pass = r.passes(args.tol);
        ok &= pass;
        println!(
            "{:<8} {:<16} N_t={:<4} max_rel_err={:.3e} {}",
            model,
            obs,
            r.steps,
            r.max_discrepancy,
            if pass { "PASS" } else { "FAIL" }
        );
    };
    match (&args.config, args.all) {
        (Some(path), false) => {
            let cfg = load(path)?;
            let r = gradcheck_config(&cfg, Some(args.steps), args.trials, args.seed)?;
            let (model, obs) = (cfg.model.build()?, cfg.observable.build(&cfg.model)?);
            report(model.name(), obs.name(), &r);
        }
        (None, true) => {
            for e in gradcheck_all(args.steps, args.trials, args.seed)? {
                report(&e.model, &e.observable, &e.report);
            }
        }
        _ => {
            return Err(Error::Config(
                "gradcheck needs a config path or --all".into(),
            ))
        }
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn analyze(args: AnalyzeArgs) -> Result<ExitCode, Error> {
    let table = read_samples(&args.samples)?;
    if args.range_cdf {
        if !(args.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let scale = args.horizon.sqrt();
        let values: Vec<f64> = table
            .column(&args.column)?
            .iter()
            .map(|v| v / scale)
            .collect();
        let cdf = empirical_cdf(&values)?;
        let ks = ks_distance(&cdf, |x| analytic_range_cdf(x, args.k_max));
        let points: Vec<_> = (1..=30)
            .map(|i| {
                let x = 0.1 * i as f64;
                json!({ "x": x, "empirical": cdf.eval(x), "analytic": analytic_range_cdf(x, args.k_max) })
            })
            .collect();
        print_json(&json!({ "samples": values.len(), "ks_distance": ks, "points": points }));
    } else if let Some(col) = &args.histogram {
        let values = table.column(col)?;
        let h = histogram(&values, args.bins)?;
        println!("left,right,count,density");
        for ((w, c), d) in h.edges.windows(2).zip(&h.counts).zip(h.density()) {
            println!("{},{},{},{}", w[0], w[1], c, d);
        }
    } else if args.rotate_paths {
        let dir = args
            .samples
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let (meta, values) = read_paths(&dir)?;
        if meta.n != 2 {
            return Err(Error::Config(format!(
                "path rotation needs planar paths, got n = {}",
                meta.n
            )));
        }
        let mut rotated = Vec::with_capacity(values.len());
        for path in values.chunks_exact(meta.path_len()) {
            rotated.extend(rotate_to_axis(path)?);
        }
        write_paths_as(&dir, "rotated_paths", meta, &rotated)?;
        println!(
            "rotated {} paths -> {}",
            meta.count,
            dir.join("rotated_paths.bin").display()
        );
    } else {
        let mut cols = vec!["F_value".to_string()];
        cols.extend(table.columns.iter().cloned());
        let mut summary = serde_json::Map::new();
        for c in cols {
            let v = table.column(&c)?;
            if v.len() < 2 {
                summary.insert(c, json!({ "count": v.len() }));
                continue;
            }
            let (mean, var, kurt) = moments(&v);
            summary.insert(
                c,
                json!({ "count": v.len(), "mean": mean, "variance": var, "excess_kurtosis": kurt }),
            );
        }
        print_json(&serde_json::Value::Object(summary));
    }
    Ok(ExitCode::SUCCESS)
}
