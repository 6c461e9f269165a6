//! Explore and score the benchmark at every shipped threshold, then print the error table.
//! Takes several minutes per threshold on one core.
//!
//! cargo run --release --example threshold_sweep -- [configs dir]

use std::path::PathBuf;

use safe_sde::config::CampaignConfig;
use safe_sde::harness;

fn main() -> safe_sde::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/configs".into()));
    let names = ["benchmark_eps01.cfg", "benchmark_eps03.cfg", "benchmark_eps05.cfg", "benchmark_epsinf.cfg"];

    println!("{:>6} {:>6} {:>10} {:>18} {:>18}", "eps", "iters", "certified", "safety MSE", "reset MSE");
    for name in names {
        let config = CampaignConfig::load(&dir.join(name))?;
        let out = PathBuf::from("out/sweep").join(name.trim_end_matches(".cfg"));
        let (report, _, files) = harness::run_explore(&config, &out)?;
        let m = harness::run_evaluate(&config, &files.checkpoint, &out)?;
        println!(
            "{:>6} {:>6} {:>10} {:>9.4} ± {:<6.4} {:>9.4} ± {:<6.4}",
            config.learning.epsilon,
            report.iterations.len(),
            report.certified.len(),
            m.safety.mse,
            m.safety.std,
            m.reset.mse,
            m.reset.std
        );
    }
    Ok(())
}
