//! `thermsid`: simulate traces, identify thermal models, cross-validate,
//! search orders and regressors, and sweep the configuration space.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use thermsid::explorer::ConfigGrid;
use thermsid::modelselect::{parse_orders, EvalMode, Scheme};
use thermsid::Configuration;

use commands::{Segment, UsageError};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "thermsid", version, about = "Thermal system identification for big.LITTLE SoCs")]
struct Cli {
    /// INI-style run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; stage seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the plant under a random schedule and write a 32 Hz trace.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Overrides simulate.duration_s.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Identify a model on the development split and score it on the test split.
    Train {
        trace: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        /// `eq7` or a regressor-set JSON file.
        #[arg(long)]
        spec: Option<String>,
        /// `zero`, `estimate` or `estimate:<samples>`.
        #[arg(long, value_parser = parse_eval)]
        eval: Option<EvalMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blocked cross-validation (1h: 10 folds, 6h: 4 folds).
    Crossval {
        trace: PathBuf,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, value_parser = parse_eval)]
        eval: Option<EvalMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated grid search over model orders.
    OrderSearch {
        trace: PathBuf,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        /// E.g. `2..60` or `4,8,16`.
        #[arg(long)]
        orders: Option<String>,
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, value_parser = parse_eval)]
        eval: Option<EvalMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized regressor search with correlation pruning.
    RegressorSearch {
        trace: PathBuf,
        #[arg(long)]
        iterations: Option<u64>,
        /// Index of the 1 h fold to search on.
        #[arg(long)]
        fold: Option<usize>,
        /// Also cross-validate every subset of the retained combos.
        #[arg(long)]
        subsets: bool,
        /// Model order for the subset evaluation.
        #[arg(long)]
        order: Option<usize>,
        /// Where to write the pruned regressor set.
        #[arg(long)]
        spec_out: Option<PathBuf>,
        #[arg(long, value_parser = parse_eval)]
        eval: Option<EvalMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every configuration of a grid and stream the results to CSV.
    Explore {
        model: PathBuf,
        /// E.g. `u=0,0.5,1;c=4;fb=1000,1900;fl=1000`.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<ConfigGrid>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Parallel partitions, merged in enumeration order.
        #[arg(long)]
        shards: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check one configuration (`f_big,f_little,u0,...,u7`) against the threshold.
    Validate {
        model: PathBuf,
        #[arg(value_parser = parse_configuration, allow_hyphen_values = true)]
        configuration: Configuration,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Free-run a model over a trace and write measured vs predicted.
    Predict {
        model: PathBuf,
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        segment: Segment,
        #[arg(long, value_parser = parse_eval)]
        eval: Option<EvalMode>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_eval(s: &str) -> Result<EvalMode, String> {
    s.parse().map_err(|e: thermsid::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: thermsid::Error| e.to_string())
}

fn parse_grid(s: &str) -> Result<ConfigGrid, String> {
    ConfigGrid::parse(s).map_err(|e| e.to_string())
}

fn parse_configuration(s: &str) -> Result<Configuration, String> {
    Configuration::parse(s).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let cfg_path = cli.config.as_deref();
    fn set<T>(slot: &mut T, value: Option<T>) {
        if let Some(v) = value {
            *slot = v;
        }
    }
    match cli.command {
        Command::Simulate { out, duration } => {
            set(&mut cfg.duration_s, duration);
            commands::with_manifest("simulate", &out, &cfg, cfg_path, |m| commands::simulate(&cfg, &out, m))
        }
        Command::Train { trace, order, spec, eval, out } => {
            set(&mut cfg.order, order);
            set(&mut cfg.spec, spec);
            set(&mut cfg.eval, eval);
            if cfg.order == 0 {
                return Err(UsageError("order must be at least 1".into()).into());
            }
            commands::with_manifest("train", &out, &cfg, cfg_path, |m| commands::train(&cfg, &trace, &out, m))
        }
        Command::Crossval { trace, scheme, order, spec, eval, out } => {
            set(&mut cfg.scheme, scheme);
            set(&mut cfg.order, order);
            set(&mut cfg.spec, spec);
            set(&mut cfg.eval, eval);
            commands::with_manifest("crossval", &out, &cfg, cfg_path, |m| {
                commands::crossval(&cfg, &trace, &out, m)
            })
        }
        Command::OrderSearch { trace, scheme, orders, spec, eval, out } => {
            set(&mut cfg.scheme, scheme);
            set(&mut cfg.orders, orders);
            set(&mut cfg.spec, spec);
            set(&mut cfg.eval, eval);
            let list = parse_orders(&cfg.orders).map_err(|e| UsageError(e.to_string()))?;
            commands::with_manifest("order-search", &out, &cfg, cfg_path, |m| {
                commands::order_search(&cfg, &trace, &list, &out, m)
            })
        }
        Command::RegressorSearch { trace, iterations, fold, subsets, order, spec_out, eval, out } => {
            set(&mut cfg.iterations, iterations);
            set(&mut cfg.fold, fold);
            set(&mut cfg.eval, eval);
            if cfg.iterations == 0 {
                return Err(UsageError("iterations must be at least 1".into()).into());
            }
            commands::with_manifest("regressor-search", &out, &cfg, cfg_path, |m| {
                commands::regressor_search(&cfg, &trace, order, subsets, spec_out.clone(), &out, m)
            })
        }
        Command::Explore { model, grid, threshold, shards, out } => {
            set(&mut cfg.grid, grid);
            set(&mut cfg.threshold_c, threshold);
            set(&mut cfg.shards, shards);
            if !cfg.threshold_c.is_finite() {
                return Err(UsageError("threshold must be finite".into()).into());
            }
            let grid = cfg.grid.clone();
            commands::with_manifest("explore", &out, &cfg, cfg_path, |m| {
                commands::explore_cmd(&cfg, &model, &grid, &out, m)
            })
        }
        Command::Validate { model, configuration, threshold, out } => {
            set(&mut cfg.threshold_c, threshold);
            match &out {
                Some(path) => commands::with_manifest("validate", path, &cfg, cfg_path, |m| {
                    commands::validate(&cfg, &model, &configuration, Some(path), m)
                }),
                None => commands::validate(&cfg, &model, &configuration, None, &mut manifest::Manifest::new("validate")),
            }
        }
        Command::Predict { model, trace, segment, eval, out } => {
            set(&mut cfg.eval, eval);
            commands::with_manifest("predict", &out, &cfg, cfg_path, |m| {
                commands::predict(&cfg, &model, &trace, segment, &out, m)
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
