use std::path::PathBuf;
use std::process::ExitCode;

use autoseg::data::{Organ, TrainingModality};
use autoseg_cli::commands::{render_scoreboard, CliResult};
use autoseg_cli::{cmd_evaluate, cmd_predict, cmd_score, cmd_train, CliError, Effective, Overrides, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "autoseg", version, about = "Train, apply and score organ segmentation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a variant and write a checkpoint directory.
    Train(Common),
    /// Segment volumes with a trained checkpoint.
    Predict(Common),
    /// Compare predictions with groundtruth and write a report CSV.
    Evaluate(Common),
    /// Aggregate report CSVs into a ranked scoreboard.
    Score(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(TrainingModalityArg))]
    modality: Option<TrainingModalityArg>,
    #[arg(long, value_parser = clap::value_parser!(OrganArg))]
    organ: Option<OrganArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TrainingModalityArg {
    Ct,
    T1,
    T2,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OrganArg {
    Liver,
    Rkidney,
    Lkidney,
    Spleen,
}

impl Common {
    fn resolve(&self) -> CliResult<Effective> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = Overrides {
            seed: self.seed,
            variant: self.variant.clone(),
            modality: self.modality.map(|m| match m {
                TrainingModalityArg::Ct => TrainingModality::Ct,
                TrainingModalityArg::T1 => TrainingModality::T1Dual,
                TrainingModalityArg::T2 => TrainingModality::T2Spir,
            }),
            organ: self.organ.map(|o| match o {
                OrganArg::Liver => Organ::Liver,
                OrganArg::Rkidney => Organ::RightKidney,
                OrganArg::Lkidney => Organ::LeftKidney,
                OrganArg::Spleen => Organ::Spleen,
            }),
            out: self.out.clone(),
        };
        let eff = Effective::resolve(cfg, flags)?;
        eprintln!("# effective configuration\n{}", eff.to_toml());
        Ok(eff)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(c) => {
            let dir = cmd_train(&c.resolve()?)?;
            println!("checkpoint written to {}", dir.display());
        }
        Command::Predict(c) => {
            for p in cmd_predict(&c.resolve()?)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate(c) => {
            let p = cmd_evaluate(&c.resolve()?)?;
            println!("report written to {}", p.display());
        }
        Command::Score(c) => {
            let (p, board) = cmd_score(&c.resolve()?)?;
            print!("{}", render_scoreboard(&board));
            println!("scoreboard written to {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
