use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use liteplan::checkpoint::Checkpoint;
use liteplan::config::RunConfig;
use liteplan::error::Error;
use liteplan::harness::{
    cmd_bench, cmd_eval, cmd_export_plans, cmd_gen_data, cmd_reflow, cmd_train,
    write_bench_outputs, PlannerBundle,
};

#[derive(Parser)]
#[command(name = "liteplan", version, about = "Coarse-to-fine generative trajectory planner")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (key = value sections); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Planning mode: prp | one-shot | only-last-level.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Individual overrides, section.key=value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out scripted policies and write the training dataset.
    GenData {
        /// Dataset path; defaults to the configured dataset path.
        #[arg(long)]
        dataset_out: Option<PathBuf>,
    },
    /// Train backbones, critics, and inverse dynamics; write a checkpoint.
    Train,
    /// Closed-loop evaluation of a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Seed for evaluation episodes (independent of the training seed).
        #[arg(long, default_value_t = 1000)]
        eval_seed: u64,
    },
    /// Planning-latency benchmark across refinement modes.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        decisions: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Straighten a rectified-flow checkpoint on its own couplings.
    Reflow {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render candidate plans at every level to SVG + JSON (maze only).
    ExportPlans {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        candidates: usize,
        #[arg(long, default_value_t = 0)]
        plan_seed: u64,
    },
}

fn build_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &common.mode {
        cfg.mode = mode.clone();
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    for spec in &common.set {
        cfg.apply_override(spec)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_bundle(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<PlannerBundle, Error> {
    let path = checkpoint
        .clone()
        .unwrap_or_else(|| Path::new(&cfg.out_dir).join("model.prpl"));
    let ck = Checkpoint::load(&path)?;
    let mut bundle = PlannerBundle::from_checkpoint(&ck)?;
    // Planning-time knobs follow the invocation, not the training run.
    bundle.config.mode = cfg.mode.clone();
    bundle.config.n_candidates = cfg.n_candidates;
    bundle.config.score_all_levels = cfg.score_all_levels;
    bundle.config.guidance = cfg.guidance;
    bundle.config.target = cfg.target;
    bundle.config.select_mode = cfg.select_mode.clone();
    bundle.config.sample_steps = cfg.sample_steps;
    bundle.config.out_dir = cfg.out_dir.clone();
    Ok(bundle)
}

fn emit<T: serde::Serialize>(report: &T) {
    println!("{}", serde_json::to_string_pretty(report).expect("report serialization"));
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = build_config(&cli.common)?;
    match &cli.command {
        Command::GenData { dataset_out } => {
            let out = dataset_out.clone().unwrap_or_else(|| PathBuf::from(&cfg.dataset));
            emit(&cmd_gen_data(&cfg, &out)?);
        }
        Command::Train => {
            emit(&cmd_train(&cfg)?);
        }
        Command::Eval { checkpoint, episodes, eval_seed } => {
            let bundle = load_bundle(&cfg, checkpoint)?;
            let report = cmd_eval(&bundle, *episodes, *eval_seed)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(
                Path::new(&cfg.out_dir).join("eval_metrics.json"),
                serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?,
            )?;
            emit(&report);
        }
        Command::Bench { checkpoint, decisions, warmup } => {
            let bundle = load_bundle(&cfg, checkpoint)?;
            let report = cmd_bench(&bundle, *decisions, *warmup)?;
            write_bench_outputs(&cfg, &report)?;
            emit(&report);
        }
        Command::Reflow { checkpoint } => {
            let bundle = load_bundle(&cfg, checkpoint)?;
            let (_, report) = cmd_reflow(&bundle)?;
            emit(&report);
        }
        Command::ExportPlans { checkpoint, candidates, plan_seed } => {
            let bundle = load_bundle(&cfg, checkpoint)?;
            emit(&cmd_export_plans(&bundle, *candidates, *plan_seed)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                Error::Data(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
