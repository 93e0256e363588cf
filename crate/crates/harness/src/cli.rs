use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use dialpolicy::agents::{Algo, RewardKind};

use crate::config::ExperimentConfig;
use crate::error::{exit, HarnessError, Result};
use crate::pipeline::{learned_variant, Pipeline};
use crate::report::report;
use crate::transfer::transfer_experiment;

#[derive(Debug, Parser)]
#[command(name = "dialpolicy", version, about = "Train and evaluate dialogue policies with learned rewards")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Overwrite outputs of a different configuration instead of refusing.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Vae,
    Ae,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the expert corpus.
    GenCorpus,
    /// Train the state encoder.
    TrainVae {
        /// Defaults to the encoder of the configured reward.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Train the reward model on the corpus and encoder.
    TrainReward {
        #[arg(long)]
        reward: Option<RewardKind>,
    },
    /// Train one agent per configured seed.
    TrainAgent {
        #[arg(long, default_value = "dqn")]
        algo: Algo,
        #[arg(long)]
        reward: Option<RewardKind>,
    },
    /// Re-evaluate the saved policies of an agent run.
    Evaluate {
        #[arg(long, default_value = "dqn")]
        algo: Algo,
        #[arg(long)]
        reward: Option<RewardKind>,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
    },
    /// Domain-holdout transfer comparison.
    Transfer,
    /// Results table and curve files from completed runs.
    Report {
        /// Run roots; defaults to the configured output directory.
        runs: Vec<PathBuf>,
        /// Defaults to `<first run>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("this subcommand needs --config".into()))?;
    ExperimentConfig::load(path)
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Report { runs, out } = &cli.command {
        let runs = match (runs.is_empty(), &cli.config) {
            (false, _) => runs.clone(),
            (true, Some(_)) => vec![load(cli)?.out_dir()],
            (true, None) => Vec::new(),
        };
        let out = out.clone().unwrap_or_else(|| runs.first().map_or_else(|| PathBuf::from("report"), |r| r.join("report")));
        let r = report(&runs, &out)?;
        print!("{}", r.table());
        println!("report written to {}", out.display());
        return Ok(());
    }
    let cfg = load(cli)?;
    let p = Pipeline::new(&cfg, cli.force);
    let reward = |r: &Option<RewardKind>| r.unwrap_or(cfg.experiment.reward);
    match &cli.command {
        Command::GenCorpus => {
            let c = p.gen_corpus()?;
            println!("corpus: {} episodes, {} turns, success {:.3}", c.episodes.len(), c.num_turns(), c.success_rate());
        }
        Command::TrainVae { variant } => {
            let variational = match variant {
                Some(v) => *v == Variant::Vae,
                None => cfg.experiment.reward != RewardKind::GanAe,
            };
            let m = p.train_encoder(variational)?;
            println!("encoder: reconstruction accuracy {:.4}", m.reconstruction_accuracy);
        }
        Command::TrainReward { reward: r } => {
            let kind = reward(r);
            learned_variant(kind)?;
            let m = p.train_reward(kind)?;
            println!(
                "reward {kind}: held-out auc {:.3}, expert log D {:.3}, random log D {:.3}",
                m.best_auc, m.expert_log_d, m.random_log_d
            );
        }
        Command::TrainAgent { algo, reward: r } => {
            let res = p.train_agents(*algo, reward(r))?;
            let s = &res.summary;
            println!(
                "{}: success {:.3} ± {:.3}, average turn {:.2} over {} seeds",
                s.agent,
                s.success_rate,
                s.success_std,
                s.average_turn,
                s.finals.len()
            );
        }
        Command::Evaluate { algo, reward: r, episodes } => {
            for row in p.evaluate(*algo, reward(r), *episodes)? {
                println!("seed {}: success {:.3}, average turn {:.2}", row.seed, row.success_rate, row.average_turn);
            }
        }
        Command::Transfer => {
            let t = transfer_experiment(&p)?;
            for arm in &t.arms {
                println!("{}: success {:.3} ± {:.3}", arm.summary.agent, arm.summary.success_rate, arm.summary.success_std);
            }
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}
