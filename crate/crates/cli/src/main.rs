use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use drugdis_core::graph::SparsityProfile;
use drugdis_core::pipeline::{run_all, run_stage, PipelineConfig, Stage};
use drugdis_core::train::ModelKind;
use drugdis_core::Error;

/// Drug-disease graph ADR signal detection pipeline.
#[derive(Parser, Debug)]
#[command(name = "drugdis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Restrict graph building and training to one sparsity profile.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,

    /// Restrict training to one model.
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,

    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of independent train/eval repetitions.
    #[arg(long, global = true)]
    seeds: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a synthetic claims corpus and label file.
    Synth,
    /// Parse claims into patient records and vocabularies.
    Ingest,
    /// Train skip-gram code embeddings.
    Embed,
    /// Build the drug-disease graph per profile.
    Graph,
    /// Build the labeled split and train every model.
    Train,
    /// Compute test metrics and the aggregated report.
    Eval,
    /// Mine ADR candidates from the best graph model.
    Discover,
    /// Write the consolidated table and candidate list.
    Report,
    /// Run every stage in order.
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ProfileArg {
    Low,
    High,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModelArg {
    Lr,
    Nn,
    Gcn,
    Gat,
    Adrgcn,
}

impl From<ProfileArg> for SparsityProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Low => SparsityProfile::Low,
            ProfileArg::High => SparsityProfile::High,
        }
    }
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Lr => ModelKind::Lr,
            ModelArg::Nn => ModelKind::Nn,
            ModelArg::Gcn => ModelKind::Gcn,
            ModelArg::Gat => ModelKind::Gat,
            ModelArg::Adrgcn => ModelKind::Adrgcn,
        }
    }
}

fn stage_of(c: Command) -> Option<Stage> {
    Some(match c {
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Embed => Stage::Embed,
        Command::Graph => Stage::Graph,
        Command::Train => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::Discover => Stage::Discover,
        Command::Report => Stage::Report,
        Command::All => return None,
    })
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(p) = cli.profile {
        config.profiles = vec![p.into()];
    }
    if let Some(m) = cli.model {
        config.models = vec![m.into()];
    }
    if let Some(o) = &cli.out {
        config.out = o.clone();
    }
    if let Some(n) = cli.seeds {
        config.seeds = n;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = resolve_config(cli)?;
    match stage_of(cli.command) {
        Some(stage) => {
            run_stage(stage, &config)?;
        }
        None => {
            run_all(&config)?;
        }
    }
    if matches!(cli.command, Command::Report | Command::All) {
        let p = config.out.join("report/report.txt");
        print!("{}", std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p, source: e })?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
