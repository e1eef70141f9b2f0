use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use feudalnav_core::demos::{self, DemoTrajectory};
use feudalnav_core::harness::{self, Evaluation};
use feudalnav_core::pipeline::{self, TrainedModels, Variant};
use feudalnav_core::world::procgen;
use feudalnav_core::{Config, InputVariant, MapVariant};

#[derive(Parser)]
#[command(name = "feudalnav", version, about = "Feudal image-goal navigation over a raycast floorplan simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural floorplan suite as .plan files.
    GenSuite {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 900)]
        seed: u64,
    },
    /// Record scripted point-click demonstrations over the training plans.
    Collect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every model from a demo directory (or a fresh scripted corpus).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of .fdnv demos; omitted means collect from the config.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train waynets for the whole ablation grid, not just the configured variant.
        #[arg(long)]
        grid: bool,
    },
    /// Evaluate the configured agent on a plan suite.
    Eval(EvalArgs),
    /// Evaluate every row of the ablation grid.
    Ablate(EvalArgs),
    /// Demo file utilities.
    Demo {
        #[command(subcommand)]
        command: DemoCommand,
    },
    /// Serve the teleoperation HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory of .plan files offered to sessions; defaults to the procedural suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Where finalized demos are written.
        #[arg(long, default_value = "demos")]
        out: PathBuf,
        /// Trained models; enables agent-autopilot sessions.
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Print a summary of a demo file (loading runs the replay check).
    Inspect { file: PathBuf },
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of .plan files; omitted means the config's procedural eval suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained model directory.
    #[arg(long, default_value = "models")]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn configured_variant(cfg: &Config) -> Result<Variant> {
    Ok((cfg.map.parse()?, cfg.waynet.parse()?, cfg.worker.parse()?))
}

fn run_eval(args: &EvalArgs, variants: Option<Vec<Variant>>) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let variants = match variants {
        Some(v) => v,
        None => vec![configured_variant(&cfg)?],
    };
    let models = TrainedModels::load(&args.models).with_context(|| format!("loading models from {}", args.models.display()))?;
    let plans = match &args.suite {
        Some(dir) => harness::load_suite(dir)?,
        None => cfg.eval_suite(),
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let jobs = args.jobs.unwrap_or(cfg.jobs);
    let eval: Evaluation = harness::evaluate(&models, &cfg, &plans, &variants, seed, jobs)?;
    harness::write_outputs(&eval, &args.out)?;
    print!("{}", harness::brief(&eval)?);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenSuite { out, count, seed } => {
            let paths = harness::write_suite(&out, &procgen::suite(count, seed))?;
            println!("wrote {} plans to {}", paths.len(), out.display());
        }
        Command::Collect { config, out } => {
            let cfg = load_config(config.as_deref())?;
            std::fs::create_dir_all(&out)?;
            let corpus = pipeline::collect_corpus(&cfg)?;
            for (i, d) in corpus.iter().enumerate() {
                d.save(&out.join(format!("{:03}-{}.fdnv", i, d.plan_id())))?;
            }
            let frames: usize = corpus.iter().map(|d| d.frames.len()).sum();
            println!("wrote {} demos ({frames} frames) to {}", corpus.len(), out.display());
        }
        Command::Train { config, demos, out, grid } => {
            let cfg = load_config(config.as_deref())?;
            let corpus: Vec<DemoTrajectory> = match demos {
                Some(dir) => demos::load_dir(&dir)?,
                None => pipeline::collect_corpus(&cfg)?,
            };
            if corpus.is_empty() {
                bail!("no demos to train on");
            }
            let variants = if grid { pipeline::ablation_grid() } else { vec![configured_variant(&cfg)?] };
            info!("training on {} demos", corpus.len());
            let models = pipeline::train(&cfg, &corpus, &variants)?;
            models.save(&out)?;
            println!("wrote models to {}", out.display());
        }
        Command::Eval(args) => run_eval(&args, None)?,
        Command::Ablate(args) => run_eval(&args, Some(pipeline::ablation_grid()))?,
        Command::Demo {
            command: DemoCommand::Inspect { file },
        } => {
            let demo = DemoTrajectory::load(&file).with_context(|| format!("loading {}", file.display()))?;
            print!("{}", demo.summary());
        }
        Command::Serve { addr, suite, out, models } => {
            let plans = match suite {
                Some(dir) => harness::load_suite(&dir)?,
                None => Config::default().train_suite(),
            };
            let state = match models {
                None => feudalnav_service::AppState::new(plans, out),
                Some(dir) => {
                    let mut m = TrainedModels::load(&dir).with_context(|| format!("loading models from {}", dir.display()))?;
                    let waynet = m
                        .waynets
                        .remove(&(InputVariant::RgbdM, MapVariant::H))
                        .context("autopilot needs the H / RGBD-M waynet")?;
                    let sensor = Config::default().sensor();
                    feudalnav_service::AppState::with_models(plans, out, sensor, m.hlm, Some(feudalnav_service::Autopilot { waynet }))
                }
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                println!("listening on http://{addr}");
                feudalnav_service::serve(listener, state).await
            })?;
        }
    }
    Ok(())
}
