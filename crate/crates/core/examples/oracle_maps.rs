//! Monte Carlo ground truth for the benchmark on a coarse parameter lattice, printed
//! as character maps of the safety level up to `T_max` and the terminal reset level.
//!
//! cargo run --release --example oracle_maps -- [lattice_size] [paths]

use std::f64::consts::PI;

use safe_sde::explorer::ControlPoint;
use safe_sde::oracle::mc_truth_map;
use safe_sde::sde::{BenchmarkFamily, BenchmarkSystem, ControlSettings};

fn shade(v: f64) -> char {
    [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'][((v * 9.0).round() as usize).min(9)]
}

fn main() -> safe_sde::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(24);
    let paths = args.get(1).copied().unwrap_or(100);

    let system = BenchmarkSystem::default();
    let settings = ControlSettings::default();
    let spec = system.spec(settings.segments)?;
    let family = BenchmarkFamily { settings: settings.clone() };
    let axis: Vec<f64> = (0..n).map(|i| -PI + 2.0 * PI * i as f64 / (n - 1) as f64).collect();
    let points: Vec<ControlPoint> = axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| ControlPoint::new(vec![a, b], system.t_max, system.t_max)))
        .collect();
    let map = mc_truth_map(&spec, &family, &points, &system.regions(), paths, settings.n_steps, 1)?;

    for (name, values) in [("safety up to T_max", &map.safety), ("reset at T_max", &map.reset)] {
        println!("{name} (rows: theta_0 from -pi, columns: theta_1 from -pi; '@' = 1)");
        for row in values.chunks(n) {
            println!("  {}", row.iter().map(|&v| shade(v)).collect::<String>());
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        println!("  mean {mean:.3}\n");
    }
    Ok(())
}
