//! Simulates the double-integrator benchmark under the initial safe control and
//! prints the safety and reset levels along the trajectory.
//!
//! cargo run --release --example simulate_benchmark -- [theta_0 theta_1]

use safe_sde::sde::{integrate_paths, BenchmarkFamily, BenchmarkSystem, ControlFamily, ControlSettings};

fn main() -> safe_sde::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let theta = if args.len() == 2 { args } else { ControlSettings::default_safe_theta() };

    let system = BenchmarkSystem::default();
    let settings = ControlSettings::default();
    let spec = system.spec(settings.segments)?;
    let regions = system.regions();
    let family = BenchmarkFamily { settings: settings.clone() };
    let control = family.control(&theta);

    let batch = integrate_paths(&spec, control.as_ref(), 1000, settings.n_steps, 7)?;
    println!("theta = ({:.3}, {:.3}), {} paths, dt = {}", theta[0], theta[1], batch.paths(), batch.grid().dt());
    println!("{:>6} {:>8} {:>8} {:>9} {:>9}", "t", "safe", "reset", "mean x", "mean y");
    for node in (0..batch.nodes()).step_by(25) {
        let xs = batch.observed_at(node);
        let n = batch.paths() as f64;
        let safe = xs.chunks(2).filter(|x| (regions.safe)(x) >= 0.0).count() as f64 / n;
        let reset = xs.chunks(2).filter(|x| (regions.reset)(x) >= 0.0).count() as f64 / n;
        let mx = xs.chunks(2).map(|x| x[0]).sum::<f64>() / n;
        let my = xs.chunks(2).map(|x| x[1]).sum::<f64>() / n;
        println!("{:6.2} {:8.3} {:8.3} {:9.3} {:9.3}", batch.grid().time(node), safe, reset, mx, my);
    }
    Ok(())
}
