//! Command-line front end. Worker threads follow `RAYON_NUM_THREADS`.
//!
//! Exit status: 0 on success, 1 for bad input (arguments, configuration, files),
//! 2 for internal failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safe_sde::config::CampaignConfig;
use safe_sde::harness;

#[derive(Parser)]
#[command(name = "safe-sde", version, about = "Safe active learning of controlled SDE dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Campaign configuration (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed this command uses.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Model checkpoint; defaults to `<out>/model.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a safe exploration campaign (seed: `[seeds] run`).
    Explore(Common),
    /// Score a checkpoint against Monte Carlo truth (seed: `[seeds] evaluate`).
    Evaluate(WithModel),
    /// Predicted density and levels at one control (seed: recorded only).
    Predict(WithModel),
    /// Learned safety and reset maps over the grid (seed: `[seeds] oracle`).
    Maps {
        #[command(flatten)]
        args: WithModel,
        /// Also compute the Monte Carlo map and the learned-vs-oracle RMS.
        #[arg(long)]
        oracle: bool,
    },
}

fn load(common: &Common) -> safe_sde::Result<(CampaignConfig, PathBuf)> {
    let config = CampaignConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn checkpoint(args: &WithModel, out: &Path) -> PathBuf {
    args.checkpoint.clone().unwrap_or_else(|| out.join("model.json"))
}

fn run(cli: Cli) -> safe_sde::Result<()> {
    match cli.command {
        Command::Explore(common) => {
            let (mut config, out) = load(&common)?;
            if let Some(s) = common.seed {
                config.seeds.run = s;
            }
            let (report, model, paths) = harness::run_explore(&config, &out)?;
            println!(
                "explore: {} iterations, stop {:?}, {} certified candidates, information gain {:.3}",
                report.iterations.len(),
                report.stop,
                report.certified.len(),
                model.information_gain()
            );
            println!("report: {}", paths.report.display());
        }
        Command::Evaluate(args) => {
            let (mut config, out) = load(&args.common)?;
            if let Some(s) = args.common.seed {
                config.seeds.evaluate = s;
            }
            let m = harness::run_evaluate(&config, &checkpoint(&args, &out), &out)?;
            println!(
                "safety MSE {:.4} ± {:.4}, reset MSE {:.4} ± {:.4} over {} controls",
                m.safety.mse, m.safety.std, m.reset.mse, m.reset.std, m.test_controls
            );
        }
        Command::Predict(args) => {
            let (mut config, out) = load(&args.common)?;
            if let Some(s) = args.common.seed {
                config.seeds.run = s;
            }
            let p = harness::run_predict(&config, &checkpoint(&args, &out), &out)?;
            println!(
                "s_hat {:.4}, r_hat {:.4}, sigma {:.4}; {} density points in {:.2} s",
                p.s_hat, p.r_hat, p.sigma, p.grid_points, p.seconds
            );
        }
        Command::Maps { args, oracle } => {
            let (mut config, out) = load(&args.common)?;
            if let Some(s) = args.common.seed {
                config.seeds.oracle = s;
            }
            let m = harness::run_maps(&config, &checkpoint(&args, &out), &out, oracle)?;
            print!("maps: {} parameter vectors, {} feasible", m.thetas, m.feasible);
            if let (Some(s), Some(r)) = (m.safety_rms, m.reset_rms) {
                print!(", RMS vs oracle: safety {s:.4}, reset {r:.4}");
            }
            println!();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
