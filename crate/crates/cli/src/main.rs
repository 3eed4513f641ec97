use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mtl_affinity::affinity::ScoreKind;
use mtl_affinity::commands::{cmd_generate, cmd_group, cmd_reproduce_tables, cmd_run};
use mtl_affinity::experiment::ExperimentConfig;
use mtl_affinity::grouping::CandidateFamily;
use mtl_affinity::stats::KendallVariant;
use mtl_affinity::tasks::SuiteConfig;
use mtl_affinity::Error;

/// Task affinity scores for multi-task learning, and their evaluation.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kendall {
    TauA,
    TauB,
}

impl From<Kendall> for KendallVariant {
    fn from(k: Kendall) -> Self {
        match k {
            Kendall::TauA => KendallVariant::TauA,
            Kendall::TauB => KendallVariant::TauB,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic latent-factor task suite.
    Generate {
        /// Suite config (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all models, compute scores, gains, evaluation and costs.
    Run {
        /// Experiment config (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replaces the configured seed list.
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated, e.g. `gs,li`.
        #[arg(long, value_delimiter = ',')]
        scores: Vec<ScoreKind>,
        #[arg(long)]
        display_gs_x100: bool,
    },
    /// Recompute the evaluation tables from the bundled published values.
    ReproduceTables {
        /// Also write the recomputed tables and per-cell checks here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tau-b")]
        kendall: Kendall,
    },
    /// Best task grouping for a gain matrix under a budget.
    Group {
        /// Gain CSV in percent, rows = partner, columns = target.
        #[arg(long)]
        gain: PathBuf,
        /// In the same unit as `--stl-cost`.
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 1.0)]
        stl_cost: f64,
        /// Only single-task models.
        #[arg(long)]
        stl_only: bool,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T, Error> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let mut cfg: SuiteConfig = read_json(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = cmd_generate(&cfg, &out)?;
            log::info!("wrote {} tasks x {} examples to {}", ds.tasks.len(), ds.n_examples(), out.display());
        }
        Command::Run { config, seed, out, scores, display_gs_x100 } => {
            let mut cfg: ExperimentConfig = read_json(config.as_ref())?;
            if !seed.is_empty() {
                cfg.seeds = seed;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if !scores.is_empty() {
                cfg.scores = scores;
            }
            cfg.display_gs_x100 |= display_gs_x100;
            for r in cmd_run(&cfg)? {
                println!("seed {}: {} tasks, c_s = {} multiply-adds", r.seed, r.tasks.len(), r.c_s);
            }
            println!("results in {}", cfg.out_dir.display());
        }
        Command::ReproduceTables { out, kendall } => {
            let rep = cmd_reproduce_tables(kendall.into(), out.as_deref())?;
            print!("{}", rep.render());
            if !rep.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Group { gain, budget, stl_cost, stl_only, out } => {
            let family = CandidateFamily { stl_cost, allow_mtl: !stl_only };
            let sol = cmd_group(&gain, budget, family)?;
            let json = serde_json::to_string_pretty(&sol)? + "\n";
            match out {
                Some(p) => std::fs::write(&p, json).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?,
                None => print!("{json}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTL_AFFINITY_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
