//! Density estimation with the Bessel (band-limited) kernel on an Ornstein-Uhlenbeck
//! process, against the exact Gaussian transition density.
//!
//! cargo run --release --example bessel_kde

use safe_sde::density::{bandwidth_rule, kde_density, KdeEstimate};
use safe_sde::oracle::ou_density;
use safe_sde::sde::{integrate_paths, FnDynamics, SystemSpec};
use std::sync::Arc;

fn main() -> safe_sde::Result<()> {
    let (rate, diffusion, x0, t) = (1.0, 5.0, 1.0, 1.0);
    let dynamics = Arc::new(FnDynamics::ornstein_uhlenbeck(rate, diffusion));
    let spec = SystemSpec::new(dynamics, 1, 0, vec![x0], 0.0, t)?;
    let control = safe_sde::sde::NoControl;

    let var = diffusion * diffusion * (1.0 - (-2.0 * rate * t).exp()) / (2.0 * rate);
    let mean = x0 * (-rate * t).exp();
    let grid: Vec<f64> = (0..400).map(|i| mean - 5.0 * var.sqrt() + 10.0 * var.sqrt() * i as f64 / 399.0).collect();

    println!("{:>7} {:>10} {:>12}", "Q", "bandwidth", "sup error");
    for q in [100, 1_000, 10_000] {
        let batch = integrate_paths(&spec, &control, q, 100, 2024)?;
        let r = bandwidth_rule(q, 1, 2.0)?;
        let kde = KdeEstimate::new(batch.observed_at(batch.nodes() - 1), 1, r)?;
        let mut sup: f64 = 0.0;
        for &x in &grid {
            sup = sup.max((kde_density(&kde, &[x]) - ou_density(x, t, x0, rate, diffusion)?).abs());
        }
        println!("{q:7} {r:10.4} {sup:12.5}");
    }
    Ok(())
}
