use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use fls_core::config::{Profile, RunConfig};
use fls_core::pipeline::{build_rig, run_pipeline, run_stage, write_manifest, StageName, Workspace};

#[derive(Parser, Debug)]
#[command(name = "fls", version, about = "Simulated FLS peg transfer: constraints, demonstrations, learning and evaluation")]
struct Cli {
    /// TOML run configuration; defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; replaces every per-stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["paper", "desk"])]
    profile: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record the scripted exemplary demonstration and write constraints.txt.
    ExtractConstraints,
    /// Collect constrained and normal demonstrations plus the frame corpus.
    Collect,
    /// Train the image autoencoder on out/frames.
    TrainAe,
    /// Train the constrained and normal RNNPB policies.
    TrainRnnpb,
    /// Run both policies closed loop on every evaluation peg and trial.
    Execute,
    /// Variance, success tables and PCA from demos and runs.
    Evaluate,
    /// All stages in order, then the manifest.
    Pipeline {
        /// Skip stages whose outputs are already present.
        #[arg(long)]
        resume: bool,
    },
    /// Websocket teleoperation server.
    Serve {
        /// Listen address, overrides the config.
        #[arg(long)]
        addr: Option<String>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(p) = &cli.profile {
        cfg.profile = p.parse::<Profile>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLS_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let stage = match &cli.command {
        Command::ExtractConstraints => StageName::ExtractConstraints,
        Command::Collect => StageName::Collect,
        Command::TrainAe => StageName::TrainAe,
        Command::TrainRnnpb => StageName::TrainRnnpb,
        Command::Execute => StageName::Execute,
        Command::Evaluate => StageName::Evaluate,
        Command::Pipeline { resume } => {
            let report = run_pipeline(&cfg, &cli.out, *resume)?;
            let names = |v: &[StageName]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ");
            println!("ran: {}", names(&report.ran));
            if !report.skipped.is_empty() {
                println!("skipped: {}", names(&report.skipped));
            }
            if let Some(s) = &report.summary {
                for (v, t) in &s.totals {
                    println!("{}: take {}/{} pass {}/{} insert {}/{}", v.name(), t[1], t[0], t[2], t[0], t[3], t[0]);
                }
            }
            println!("manifest: {}", Workspace::new(&cli.out).manifest().display());
            return Ok(());
        }
        Command::Serve { addr } => {
            let mut serve = cfg.serve.clone();
            if let Some(a) = addr {
                serve.addr = a.clone();
            }
            let rig = build_rig(&cfg)?;
            let constraints = fls_core::phase::ConstraintSet::read(&Workspace::new(&cli.out).constraints()).ok();
            if constraints.is_none() {
                log::warn!("no constraints.txt in {}; feedback force disabled", cli.out.display());
            }
            let server = fls_core::teleop::TeleopServer::bind(&serve.addr, serve.clone(), rig, constraints, cfg.transitions, cfg.kp, cli.out.join("demos"))?;
            println!("listening on ws://{}", server.local_addr()?);
            server.run()?;
            return Ok(());
        }
    };
    let ws = Workspace::new(&cli.out);
    std::fs::create_dir_all(&ws.root).with_context(|| format!("creating {}", ws.root.display()))?;
    std::fs::write(ws.config(), cfg.to_toml())?;
    let rig = build_rig(&cfg)?;
    if let Some(summary) = run_stage(stage, &cfg, &rig, &ws)? {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    }
    write_manifest(&ws, &cfg, None)?;
    Ok(())
}
