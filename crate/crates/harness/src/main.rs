use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use ace_core::envs::{scripted_navigator_dataset, write_transitions, MazeLayout};
use ace_harness::config::{RunConfig, Variant};
use ace_harness::experiments::{ablation, maze_compare, AblationKind};
use ace_harness::suites::{self, SuiteReport};
use ace_harness::trainer::{evaluate, restore, train};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "ace", version, about = "Latent-model planning agent: training, experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    All,
    Lambda,
    Grad,
    Planner,
    Bound,
    Intrinsic,
    Replay,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coverage and model error of every variant on the maze.
    MazeCompare {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated variant names (default: all four).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long, default_value = "runs/maze-compare")]
        out: PathBuf,
    },
    /// Sweep lambda or the intrinsic coefficient.
    Ablate {
        #[arg(long)]
        kind: AblationKind,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
    },
    /// Run the exact-identity and oracle suites.
    OracleCheck {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Evaluate a checkpoint (give the path without .manifest/.bin).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write scripted-navigator transitions for a maze.
    Dataset {
        #[arg(long)]
        maze: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "transitions.bin")]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        episode_length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn base_config(path: Option<&PathBuf>) -> ace_core::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run_suites(which: Suite) -> Vec<SuiteReport> {
    let mut out = Vec::new();
    let all = matches!(which, Suite::All);
    if all || matches!(which, Suite::Lambda) {
        out.push(suites::lambda_identity(1000, 1));
    }
    if all || matches!(which, Suite::Grad) {
        out.push(suites::gradient_suite(100));
    }
    if all || matches!(which, Suite::Planner) {
        out.push(suites::planner_suite(1000, 3));
    }
    if all || matches!(which, Suite::Bound) {
        out.push(suites::bound_suite(1000, 4));
    }
    if all || matches!(which, Suite::Intrinsic) {
        out.push(suites::intrinsic_suite(5));
    }
    if all || matches!(which, Suite::Replay) {
        out.push(suites::replay_suite(6, 100_000, 10_000));
    }
    out
}

fn run(cli: Cli) -> ace_core::Result<bool> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = train(&cfg, &out)?;
            print!("{}", summary.text(&cfg));
        }
        Command::MazeCompare { seeds, config, variants, out } => {
            let base = base_config(config.as_ref())?;
            let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants };
            let seeds: Vec<u64> = (0..seeds).collect();
            for r in maze_compare(&base, &variants, &seeds, &out)? {
                println!(
                    "{:<14} final coverage {:.4}  cumulative model error {:.5}",
                    r.variant.name(),
                    r.mean_coverage(),
                    r.mean_model_error()
                );
            }
        }
        Command::Ablate { kind, grid, seeds, config, out } => {
            let base = base_config(config.as_ref())?;
            let seeds: Vec<u64> = (0..seeds).collect();
            for c in ablation(&base, kind, &grid, &seeds, &out)? {
                println!("{} = {}: final return {:.4} ± {:.4}", kind.key(), c.value, c.mean, c.ci95);
            }
        }
        Command::OracleCheck { suite } => {
            let reports = run_suites(suite);
            for r in &reports {
                println!("{}", r.line());
            }
            return Ok(reports.iter().all(|r| r.passed));
        }
        Command::Eval { checkpoint, episodes, seed } => {
            let (cfg, agent) = restore(&checkpoint)?;
            let eps = evaluate(&cfg, agent, episodes, seed)?;
            for (i, e) in eps.iter().enumerate() {
                let cov = e.coverage.map_or(String::new(), |c| format!(" coverage {c:.4}"));
                println!("episode {i}: return {:.4} success {}{cov}", e.ret, e.success);
            }
            let mean = eps.iter().map(|e| e.ret).sum::<f64>() / eps.len().max(1) as f64;
            let wins = eps.iter().filter(|e| e.success).count();
            println!("mean return {mean:.4}, success {wins}/{}", eps.len());
        }
        Command::Dataset { maze, n, out, episode_length, seed } => {
            let text = std::fs::read_to_string(&maze)?;
            let layout = MazeLayout::parse(&text)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (header, records) = scripted_navigator_dataset(&layout, n, episode_length, &mut rng);
            write_transitions(BufWriter::new(File::create(&out)?), &header, &records)?;
            println!("wrote {} transitions to {}", records.len(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
