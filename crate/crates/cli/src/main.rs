//! `merr`: calibrate models with embedded model error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use merr_core::config::{RunConfig, OUTPUT_DIR_ENV};
use merr_core::data::write_atomic;
use merr_core::demos::{generate_data, BuiltinModel};
use merr_core::mcmc::Chain;
use merr_core::predict::write_predictions;
use merr_core::surrogate::{build_surrogate, TrainingSet};
use merr_core::workflow::{failures_csv, predict_from_chain, run_calibration, run_replicas, write_outputs};

#[derive(Parser)]
#[command(name = "merr", version, about = "Model-error calibration with polynomial chaos embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data from a built-in demo truth.
    Generate {
        /// demo1, demo2, demo2q, demo3-linear, demo3-quadratic, demo3-cubic, demo3-true
        #[arg(long)]
        demo: BuiltinModel,
        #[arg(long)]
        n: Option<usize>,
        /// Noise standard deviation; defaults to the demo's level.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build a Legendre surrogate from a training CSV.
    Surrogate(SurrogateArgs),
    /// Run inference and prediction from a config file.
    Calibrate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute predictions from a stored chain.
    Predict {
        config: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        /// Defaults to `predictions.csv` in the output directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeat a demo calibration over fresh data and summarize variances.
    Replicas {
        config: PathBuf,
        /// Comma-separated model ids; defaults to the config's model.
        #[arg(long, value_delimiter = ',')]
        models: Vec<BuiltinModel>,
        #[arg(long, value_delimiter = ',', required = true)]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        replicas: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct SurrogateArgs {
    /// Long-format CSV `x1..xm,lambda1..lambdad,f`.
    #[arg(long)]
    training: PathBuf,
    #[arg(long)]
    order: usize,
    /// Parameter range `lo,hi`, once per parameter.
    #[arg(long = "range", value_parser = parse_range, required = true, allow_hyphen_values = true)]
    ranges: Vec<(f64, f64)>,
    #[arg(long, short)]
    out: PathBuf,
    /// Sample the training CSV from a built-in model first (written to `--training`).
    #[arg(long)]
    sample_model: Option<BuiltinModel>,
    /// Number of random parameter draws when sampling.
    #[arg(long, default_value_t = 200)]
    runs: usize,
    /// Evenly spaced design locations over the model's domain when sampling.
    #[arg(long, default_value_t = 11)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// MCMC seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    subsample: Option<usize>,
}

impl Overrides {
    fn load(&self, path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.steps {
            cfg.mcmc.steps = s;
        }
        if let Some(s) = self.seed {
            cfg.mcmc.seed = s;
        }
        if let Some(s) = self.data_seed {
            cfg.data.seed = s;
        }
        if let Some(n) = self.n {
            cfg.data.n = Some(n);
        }
        if let Some(s) = self.subsample {
            cfg.predict.subsample = s;
        }
        cfg.resolve()?;
        Ok(cfg)
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(a < b) {
        return Err(format!("empty range {a},{b}"));
    }
    Ok((a, b))
}

fn surrogate(args: &SurrogateArgs) -> Result<()> {
    if let Some(m) = args.sample_model {
        let xs: Vec<Vec<f64>> = m.family().grid(args.points).into_iter().map(|x| vec![x]).collect();
        let ts = TrainingSet::sample(&m, &xs, &args.ranges, args.runs, args.seed)?;
        ts.write_csv(&args.training)?;
        info!("sampled {} runs of {m} at {} locations", args.runs, xs.len());
    }
    let ts = TrainingSet::load_csv(&args.training)?;
    let s = build_surrogate(&ts, args.order, &args.ranges)?;
    let worst = s.loo_errors().iter().copied().fold(0.0, f64::max);
    info!(
        "surrogate: {} locations, {} terms, condition {:.3e}, worst LOO error {worst:.3e}",
        s.locations().len(),
        s.basis().len(),
        s.condition()
    );
    s.save(&args.out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            demo,
            n,
            sigma,
            seed,
            out,
        } => {
            let n = n.unwrap_or_else(|| demo.family().default_n());
            generate_data(demo, n, sigma, seed)?.write_csv(&out)?;
        }
        Command::Surrogate(args) => surrogate(&args)?,
        Command::Calibrate { config, overrides } => {
            let cfg = overrides.load(&config)?;
            let dir = cfg.effective_output_dir();
            let out = run_calibration(&cfg)?;
            write_outputs(&out, &dir)?;
            let s = &out.summary;
            info!(
                "acceptance {:.3}, mean var: model error {:.4e}, posterior {:.4e}, noise {:.4e}",
                s.acceptance_rate, s.mean_var_model_error, s.mean_var_posterior, s.mean_var_data_noise
            );
            println!("{}", dir.display());
        }
        Command::Predict {
            config,
            chain,
            out,
            overrides,
        } => {
            let cfg = overrides.load(&config)?;
            let (chain, _) = Chain::read_csv(&chain)?;
            let moments = predict_from_chain(&cfg, &chain)?;
            let path = match out {
                Some(p) => p,
                None => {
                    let dir = cfg.effective_output_dir();
                    std::fs::create_dir_all(&dir)?;
                    dir.join("predictions.csv")
                }
            };
            write_predictions(&path, &moments)?;
            println!("{}", path.display());
        }
        Command::Replicas {
            config,
            models,
            ns,
            replicas,
            overrides,
        } => {
            let cfg = overrides.load(&config)?;
            let models = if models.is_empty() {
                let Some(id) = cfg.model.builtin.as_deref() else {
                    bail!("--models is required when the config uses a surrogate");
                };
                vec![id.parse::<BuiltinModel>()?]
            } else {
                models
            };
            let dir = cfg.effective_output_dir();
            let cells = dir.join("cells");
            std::fs::create_dir_all(&cells)?;
            let table = run_replicas(&cfg, &models, &ns, replicas, Some(&cells))?;
            write_atomic(&dir.join("replicas.csv"), table.to_csv_string().as_bytes())?;
            let failed = table.failures().count();
            if failed > 0 {
                write_atomic(&dir.join("failures.csv"), failures_csv(&table).as_bytes())?;
                log::warn!("{failed} replica cells failed; see failures.csv");
            }
            print!("{}", table.to_csv_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
