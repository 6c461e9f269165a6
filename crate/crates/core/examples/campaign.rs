//! End-to-end campaign through the harness: explore, score against Monte Carlo truth,
//! predict a density grid and write the learned maps. Artifacts go to `out/campaign`.
//!
//! cargo run --release --example campaign -- [config]

use std::path::Path;

use safe_sde::config::CampaignConfig;
use safe_sde::harness;

fn main() -> safe_sde::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "crates/core/configs/benchmark_eps01.cfg".into());
    let config = CampaignConfig::load(Path::new(&path))?;
    let out = Path::new("out/campaign");
    println!("config {path} (sha256 {})", &config.hash()[..12]);

    let (report, model, files) = harness::run_explore(&config, out)?;
    println!(
        "explore: {} iterations, {:?}, {} certified candidates, gain {:.2}",
        report.iterations.len(),
        report.stop,
        report.certified.len(),
        model.information_gain()
    );

    let m = harness::run_evaluate(&config, &files.checkpoint, out)?;
    println!("evaluate: safety MSE {:.4} ± {:.4}, reset MSE {:.4} ± {:.4}", m.safety.mse, m.safety.std, m.reset.mse, m.reset.std);

    let p = harness::run_predict(&config, &files.checkpoint, out)?;
    println!(
        "predict: s_hat {:.3}, r_hat {:.3}, sigma {:.3}, {} density points ({} negative) in {:.2} s",
        p.s_hat, p.r_hat, p.sigma, p.grid_points, p.negative_values, p.seconds
    );

    let maps = harness::run_maps(&config, &files.checkpoint, out, true)?;
    println!(
        "maps: {} feasible of {}, RMS vs oracle safety {:.3} reset {:.3}",
        maps.feasible,
        maps.thetas,
        maps.safety_rms.unwrap_or(f64::NAN),
        maps.reset_rms.unwrap_or(f64::NAN)
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
