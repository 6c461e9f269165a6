//! A short safe exploration run on the benchmark: prints each selected control with
//! its uncertainty, observed levels and confidence bounds, then the certified set size.
//!
//! cargo run --release --example safe_exploration -- [config] [iterations]

use std::path::Path;

use safe_sde::config::CampaignConfig;
use safe_sde::explorer::explore;

fn main() -> safe_sde::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().map(String::as_str).unwrap_or("crates/core/configs/benchmark_eps01.cfg");
    let mut config = CampaignConfig::load(Path::new(path))?;
    config.learning.max_iterations = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(40);

    let campaign = config.campaign()?;
    let (report, model) = explore(&campaign)?;
    println!("{:>4} {:>7} {:>7} {:>6} {:>7} {:>6} {:>6} {:>7} {:>7}", "iter", "theta_0", "theta_1", "t", "sigma", "s_hat", "r_hat", "lcb_s", "lcb_r");
    for r in &report.iterations {
        println!(
            "{:4} {:7.3} {:7.3} {:6.2} {:7.4} {:6.3} {:6.3} {:7.3} {:7.3}",
            r.iteration, r.point.theta[0], r.point.theta[1], r.point.t, r.sigma, r.s_hat, r.r_hat, r.lcb_safety, r.lcb_reset
        );
    }
    println!("stop: {:?}", report.stop);
    println!(
        "certified {} of {} candidates; information gain {:.2}; {:.1} s",
        report.certified.len(),
        campaign.grid.len(),
        model.information_gain(),
        report.timing.total_seconds
    );
    Ok(())
}
