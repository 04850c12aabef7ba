//! `anatomesh`: synthetic data generation, mesh fitting, feature pooling,
//! graph-network training and evaluation from one configuration file.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anatomesh", version, about = "Anatomy-aware mesh classification of organ segmentations")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; relative paths inside it resolve against its directory.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; overrides `out_dir`.
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cases under `cases/`.
    SynthGen(Common),
    /// Build the 156-vertex prototype from the training organs.
    BuildPrototype(Common),
    /// Fit the prototype to every case's predicted organ.
    FitMesh(Common),
    /// Partition every organ into per-vertex zones.
    RenderZones(Common),
    /// Pool per-vertex feature matrices and targets.
    PoolFeatures(Common),
    /// Train the graph network on the training split.
    Train(Common),
    /// Classify the test split by pixel voting, vertex voting and the global head.
    Classify(Common),
    /// Write accuracy, confusion, management and detection reports.
    Eval(Common),
    /// Export a mesh as OBJ plus a per-vertex CSV.
    ExportMesh {
        #[command(flatten)]
        common: Common,
        /// Mesh to export (OBJ), or `template`. Defaults to the run's prototype.
        #[arg(long, value_name = "FILE")]
        mesh: Option<PathBuf>,
        /// Output OBJ path. Defaults to `<out_dir>/export/mesh.obj`.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Run every stage end to end in memory.
    Pipeline(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthGen(_) => "synth-gen",
            Command::BuildPrototype(_) => "build-prototype",
            Command::FitMesh(_) => "fit-mesh",
            Command::RenderZones(_) => "render-zones",
            Command::PoolFeatures(_) => "pool-features",
            Command::Train(_) => "train",
            Command::Classify(_) => "classify",
            Command::Eval(_) => "eval",
            Command::ExportMesh { .. } => "export-mesh",
            Command::Pipeline(_) => "pipeline",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::SynthGen(c)
            | Command::BuildPrototype(c)
            | Command::FitMesh(c)
            | Command::RenderZones(c)
            | Command::PoolFeatures(c)
            | Command::Train(c)
            | Command::Classify(c)
            | Command::Eval(c)
            | Command::Pipeline(c) => c,
            Command::ExportMesh { common, .. } => common,
        }
    }
}

fn run(cmd: &Command) -> anyhow::Result<()> {
    let c = cmd.common();
    let cfg = config::load(c.config.as_deref(), &c.set, c.out.as_deref())?;
    match cmd {
        Command::SynthGen(_) => commands::synth_gen(&cfg),
        Command::BuildPrototype(_) => commands::build_prototype(&cfg),
        Command::FitMesh(_) => commands::fit_mesh(&cfg),
        Command::RenderZones(_) => commands::render_zones(&cfg),
        Command::PoolFeatures(_) => commands::pool_features(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Classify(_) => commands::classify(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::ExportMesh { mesh, output, .. } => commands::export_mesh(&cfg, mesh.as_deref(), output.as_deref()),
        Command::Pipeline(_) => commands::pipeline(&cfg, c.config.as_deref()),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(config::defaults_text()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli.command).with_context(|| cli.command.name()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = format!("{e:#}");
            let line: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            let line = line.join(" ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
