use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nlbac::car_env::write_trajectory_file;
use nlbac::trainer::{evaluate, read_log, run_sysid, train, write_plot_data, Checkpoint, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "nlbac", version, about = "Safe actor-critic training on the car-following task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the primary and backup controllers.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Roll out a trained checkpoint with deterministic actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
        /// Write the first episode's trajectory to this CSV file.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Fit the dynamics model on random-control data and report its error.
    Sysid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print per-episode reward and violation columns of a training log.
    Plotdata {
        #[arg(long)]
        log: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            episodes,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            cfg.validate()?;
            let out_dir = cfg.out_dir.clone();
            let outcome = train(&cfg, Some(&out_dir))?;
            for r in &outcome.records {
                println!(
                    "episode {:>4}  reward {:>12.3}  violations {:>4}  backup {:>4}",
                    r.episode, r.cum_reward, r.violations, r.backup_steps
                );
            }
            println!("wrote {}", out_dir.display());
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            trajectory,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let out = evaluate(&ck, episodes, seed)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "episode,cum_reward,cum_cost,violations,backup_steps")?;
            for r in &out.records {
                writeln!(
                    stdout,
                    "{},{},{},{},{}",
                    r.episode, r.cum_reward, r.cum_cost, r.violations, r.backup_steps
                )?;
            }
            if let Some(path) = trajectory {
                write_trajectory_file(&path, &out.trajectory)?;
            }
        }
        Command::Sysid { config } => {
            let cfg = TrainConfig::load(&config)?;
            let (_, report) = run_sysid(&cfg)?;
            for (step, loss) in &report.losses {
                println!("step {step:>6}  loss {loss:.5}");
            }
            println!("one_step_l1 {:.5}", report.one_step_l1);
            println!("two_step_l1 {:.5}", report.two_step_l1);
            println!("seconds {:.1}", report.seconds);
        }
        Command::Plotdata { log } => {
            let records = read_log(&log)?;
            write_plot_data(&records, std::io::stdout().lock())
                .with_context(|| format!("writing plot data for {}", log.display()))?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
