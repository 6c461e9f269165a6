//! Kernel ridge regression over `(theta, t)` with predictive uncertainty: fits a smooth
//! synthetic level function one point at a time, checks one query against the dense
//! reference solve and prints how the predictive std shrinks.
//!
//! cargo run --release --example kernel_ridge

use safe_sde::explorer::ControlPoint;
use safe_sde::kernel::{KernelModel, MaternKernel, ModelSettings, RegularizationPolicy};
use safe_sde::oracle::dense_reference_solve;

fn level(theta: f64, t: f64) -> f64 {
    0.5 + 0.4 * (1.3 * theta).sin() * (-0.05 * t).exp()
}

fn main() -> safe_sde::Result<()> {
    let settings = ModelSettings {
        collect_kernel: MaternKernel::new(2.5, 1.0, 1.0)?,
        collect_regularization: RegularizationPolicy::InverseN { scale: 0.01 },
        ..ModelSettings::default()
    };
    let mut model = KernelModel::new(settings)?;
    let query = (0.4, 10.0);

    println!("{:>3} {:>9} {:>9} {:>9}", "N", "mean", "truth", "std");
    for i in 0..30 {
        let theta = -3.0 + 6.0 * ((i * 7) % 30) as f64 / 29.0;
        let t = 20.0 * ((i * 11) % 30) as f64 / 29.0;
        model.add_targets(ControlPoint::new(vec![theta], t, 20.0), level(theta, t), 1.0)?;
        if (i + 1) % 5 == 0 {
            let p = model.predict(&[query.0], query.1)?;
            println!("{:3} {:9.5} {:9.5} {:9.5}", model.len(), p.safety, level(query.0, query.1), p.std);
        }
    }

    let kvec = model.kernel_vector(&[query.0], query.1);
    let (mean, var) = dense_reference_solve(&model.gram_matrix(), model.ridge(), model.s_targets(), &kvec, model.kappa0())?;
    let p = model.predict(&[query.0], query.1)?;
    println!("dense reference: mean diff {:.2e}, variance diff {:.2e}", (mean - p.safety).abs(), (var - p.std * p.std).abs());
    println!("information gain after {} points: {:.3}", model.len(), model.information_gain());
    Ok(())
}
