//! Reference computations the learner is checked against: large-sample Monte Carlo
//! safety and reset maps, the Ornstein-Uhlenbeck transition density, and dense
//! linear-algebra solves of the ridge formulas.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explorer::ControlPoint;
use crate::kernel::MaternKernel;
use crate::sde::{derive_seed, simulate_path, ControlFamily, RegionSpec, SystemSpec, TimeGrid};

/// Monte Carlo ground truth at a list of control points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMap {
    pub points: Vec<ControlPoint>,
    /// `min_{t_l <= T} P(g(X(t_l)) >= 0)` over grid nodes.
    pub safety: Vec<f64>,
    /// Fraction of paths with `g >= 0` at every grid node in `[0, T]`.
    pub survival: Vec<f64>,
    /// `P(h(X(T)) >= 0)`.
    pub reset: Vec<f64>,
    /// `P(g(X(t)) >= 0)` at the point's own observation time.
    pub safety_at_t: Vec<f64>,
    /// `P(h(X(t)) >= 0)` at the point's own observation time.
    pub reset_at_t: Vec<f64>,
    pub paths_per_point: usize,
    pub seed: u64,
}

impl OracleMap {
    /// Binomial standard error bound `1 / (2 sqrt(Q))`.
    pub fn standard_error_bound(&self) -> f64 {
        0.5 / (self.paths_per_point as f64).sqrt()
    }
}

struct Tally {
    safe: Vec<u32>,
    reset: Vec<u32>,
    survived: u32,
}

fn control_key(theta: &[f64], horizon: f64) -> Vec<u64> {
    let mut key: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
    key.push(horizon.to_bits());
    key
}

/// Estimates the safety and reset levels at every point from `paths_per_point` fresh paths.
///
/// Points that share `(theta, T)` share one simulation. The seed of each simulation
/// depends only on `(seed, theta, T)`, so a control gets the same estimate in any list.
pub fn mc_truth_map(
    spec: &SystemSpec,
    family: &dyn ControlFamily,
    points: &[ControlPoint],
    regions: &RegionSpec,
    paths_per_point: usize,
    n_steps: usize,
    seed: u64,
) -> Result<OracleMap> {
    if paths_per_point == 0 {
        return Err(Error::Argument("oracle needs at least one path per point".into()));
    }
    let grid = TimeGrid::new(spec.t_max(), n_steps)?;
    let mut unique: Vec<(Vec<u64>, &ControlPoint)> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for p in points {
        let key = control_key(&p.theta, p.horizon);
        if !index.contains_key(&key) {
            index.insert(key.clone(), unique.len());
            unique.push((key, p));
        }
    }
    let observed = spec.observed_dim();
    let tallies: Vec<Tally> = unique
        .par_iter()
        .map(|(key, p)| {
            let steps = grid.steps_to(p.horizon);
            let run_seed = key.iter().fold(seed, |s, &k| derive_seed(s, k));
            let control = family.control(&p.theta);
            let mut tally = Tally {
                safe: vec![0; steps + 1],
                reset: vec![0; steps + 1],
                survived: 0,
            };
            for path in 0..paths_per_point {
                let mut alive = true;
                simulate_path(spec, control.as_ref(), grid, steps, run_seed, path, |l, x| {
                    let x = &x[..observed];
                    if (regions.safe)(x) >= 0.0 {
                        tally.safe[l] += 1;
                    } else {
                        alive = false;
                    }
                    if (regions.reset)(x) >= 0.0 {
                        tally.reset[l] += 1;
                    }
                })?;
                tally.survived += alive as u32;
            }
            Ok(tally)
        })
        .collect::<Result<_>>()?;

    let q = paths_per_point as f64;
    let mut map = OracleMap {
        points: points.to_vec(),
        safety: Vec::with_capacity(points.len()),
        survival: Vec::with_capacity(points.len()),
        reset: Vec::with_capacity(points.len()),
        safety_at_t: Vec::with_capacity(points.len()),
        reset_at_t: Vec::with_capacity(points.len()),
        paths_per_point,
        seed,
    };
    for p in points {
        let tally = &tallies[index[&control_key(&p.theta, p.horizon)]];
        let last = tally.safe.len() - 1;
        let node = grid.nearest(p.t).min(last);
        map.safety.push(*tally.safe.iter().min().unwrap() as f64 / q);
        map.survival.push(tally.survived as f64 / q);
        map.reset.push(tally.reset[last] as f64 / q);
        map.safety_at_t.push(tally.safe[node] as f64 / q);
        map.reset_at_t.push(tally.reset[node] as f64 / q);
    }
    Ok(map)
}

/// Transition density of `dX = -rate X dt + diffusion dW` from `x0` after time `t`.
pub fn ou_density(x: f64, t: f64, x0: f64, rate: f64, diffusion: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Argument(format!("time must be positive, got {t}")));
    }
    let mean = x0 * (-rate * t).exp();
    let var = if rate == 0.0 {
        diffusion * diffusion * t
    } else {
        diffusion * diffusion * (-(-2.0 * rate * t).exp_m1()) / (2.0 * rate)
    };
    Ok((-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt())
}

/// `P(sup_{s <= t} |W_s| < level)` for standard Brownian motion, by the reflection series.
pub fn brownian_strip_survival(level: f64, t: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..200 {
        let j = (2 * k + 1) as f64;
        let term = (-j * j * PI * PI * t / (8.0 * level * level)).exp() / j;
        if term < 1e-18 {
            break;
        }
        total += if k % 2 == 0 { term } else { -term };
    }
    4.0 / PI * total
}

/// Ridge mean and variance through an explicit inverse of `K + ridge I`.
///
/// `gram` is row-major `N x N`. Returns `(targets . A^{-1} kvec, kappa0 - kvec . A^{-1} kvec)`.
pub fn dense_reference_solve(
    gram: &[f64],
    ridge: f64,
    targets: &[f64],
    kvec: &[f64],
    kappa0: f64,
) -> Result<(f64, f64)> {
    let n = targets.len();
    if gram.len() != n * n || kvec.len() != n {
        return Err(Error::Argument("dense solve dimension mismatch".into()));
    }
    if !(ridge > 0.0) {
        return Err(Error::Argument("ridge must be positive".into()));
    }
    if n == 0 {
        return Ok((0.0, kappa0));
    }
    let a = DMatrix::from_row_slice(n, n, gram) + DMatrix::identity(n, n) * ridge;
    let inv = a.try_inverse().ok_or(Error::Singular)?;
    let k = DVector::from_column_slice(kvec);
    let w = &inv * &k;
    let s = DVector::from_column_slice(targets);
    Ok((s.dot(&w), kappa0 - k.dot(&w)))
}

/// Mean and variance from the feature-space form `lambda <phi, (C + lambda I)^{-1} phi>`.
///
/// `C = N^{-1} sum_i phi_i phi_i^T` is represented on the span of `phi_1..phi_N, phi_z`,
/// where it acts as a finite matrix; no dual identity is used.
pub fn primal_reference_solve(
    kernel: &MaternKernel,
    inputs: &[Vec<f64>],
    ridge: f64,
    targets: &[f64],
    z: &[f64],
) -> Result<(f64, f64)> {
    let n = inputs.len();
    if n == 0 || targets.len() != n {
        return Err(Error::Argument("primal solve needs matching nonempty inputs and targets".into()));
    }
    let lambda = ridge / n as f64;
    let mut basis: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    basis.push(z);
    let b = n + 1;
    let gram_b = DMatrix::from_fn(b, b, |i, j| kernel.eval(basis[i], basis[j]));
    // (C + lambda I) B c = B M c with M = [K_{Phi,B} / N; 0] + lambda I.
    let mut m = DMatrix::identity(b, b) * lambda;
    for i in 0..n {
        for j in 0..b {
            m[(i, j)] += gram_b[(i, j)] / n as f64;
        }
    }
    let mut e = DVector::zeros(b);
    e[n] = 1.0;
    let a = m.lu().solve(&e).ok_or(Error::Singular)?;
    let variance = lambda * (gram_b.row(n) * &a)[(0, 0)];
    let mut mean = 0.0;
    for i in 0..n {
        mean += targets[i] * (gram_b.row(i) * &a)[(0, 0)];
    }
    Ok((mean / n as f64, variance))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kernel::{KernelModel, ModelSettings, RegularizationPolicy};
    use crate::sde::{BenchmarkFamily, BenchmarkSystem, ControlSettings, NoiseBump};
    use crate::sde::{ControlLaw, FnDynamics};

    struct Free;
    impl ControlFamily for Free {
        fn param_dim(&self) -> usize {
            1
        }
        fn control(&self, _theta: &[f64]) -> Box<dyn ControlLaw> {
            Box::new(crate::sde::NoControl)
        }
    }

    fn brownian(t_max: f64) -> SystemSpec {
        let dynamics = FnDynamics::ornstein_uhlenbeck(0.0, 1.0);
        SystemSpec::new(Arc::new(dynamics), 1, 1, vec![0.0], 0.0, t_max).unwrap()
    }

    #[test]
    fn ou_moments_and_limits() {
        // Brownian limit.
        let d = ou_density(0.7, 1.0, 0.0, 0.0, 1.0).unwrap();
        assert!((d - (-0.245f64).exp() / (2.0 * PI).sqrt()).abs() < 1e-15);
        // Stationary limit N(0, 1/2) for rate 1, diffusion 1.
        let d = ou_density(0.3, 60.0, 2.0, 1.0, 1.0).unwrap();
        let want = (-0.09f64).exp() / PI.sqrt();
        assert!((d - want).abs() < 1e-12);
        assert!(ou_density(0.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn ou_density_integrates_to_one() {
        let h = 1e-3;
        let total: f64 = (-10_000..=10_000)
            .map(|i| ou_density(i as f64 * h, 0.8, 1.5, 0.7, 1.3).unwrap() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ou_density_solves_fokker_planck() {
        // p_t = rate (x p)_x + (D^2 / 2) p_xx
        let (rate, diff, x0) = (0.8, 1.2, 0.5);
        let p = |x: f64, t: f64| ou_density(x, t, x0, rate, diff).unwrap();
        let (h, k) = (1e-3, 1e-4);
        for &t in &[0.5, 1.0, 2.0] {
            for &x in &[-1.0, 0.0, 0.4, 1.3] {
                let pt = (p(x, t + k) - p(x, t - k)) / (2.0 * k);
                let flux = ((x + h) * p(x + h, t) - (x - h) * p(x - h, t)) / (2.0 * h);
                let pxx = (p(x + h, t) - 2.0 * p(x, t) + p(x - h, t)) / (h * h);
                let residual = pt - rate * flux - 0.5 * diff * diff * pxx;
                assert!(residual.abs() < 1e-4, "{residual}");
            }
        }
    }

    #[test]
    fn reflection_series_known_values() {
        // Large level: survival near one; small time likewise.
        assert!((brownian_strip_survival(10.0, 1.0) - 1.0).abs() < 1e-12);
        let v = brownian_strip_survival(1.0, 1.0);
        assert!((v - 0.370_777_43).abs() < 1e-7);
    }

    #[test]
    fn brownian_strip_matches_reflection_series() {
        let spec = brownian(1.0);
        let regions = RegionSpec::new(|x| 1.0 - x[0].abs(), |x| 1.0 - x[0].abs());
        let point = ControlPoint::new(vec![0.0], 1.0, 1.0);
        let map = mc_truth_map(&spec, &Free, &[point], &regions, 100_000, 10_000, 1).unwrap();
        let want = brownian_strip_survival(1.0, 1.0);
        assert!((map.survival[0] - want).abs() < 0.01, "{} vs {want}", map.survival[0]);
        // Pointwise minimum is the terminal marginal here: P(|W_1| <= 1).
        assert!((map.safety[0] - 0.6827).abs() < 0.005);
    }

    #[test]
    fn trivial_maps() {
        let spec = brownian(1.0);
        let point = ControlPoint::new(vec![0.0], 0.5, 1.0);
        let never = RegionSpec::new(|_| -1.0, |_| -1.0);
        let map = mc_truth_map(&spec, &Free, &[point.clone()], &never, 50, 20, 2).unwrap();
        assert_eq!((map.safety[0], map.survival[0], map.reset[0]), (0.0, 0.0, 0.0));

        let system = BenchmarkSystem {
            noise: NoiseBump {
                amplitude: 0.0,
                ..NoiseBump::default()
            },
            initial_std: 0.0,
            ..BenchmarkSystem::default()
        };
        let settings = ControlSettings::default();
        let family = BenchmarkFamily { settings: settings.clone() };
        let p = ControlPoint::new(ControlSettings::default_safe_theta(), 10.0, 20.0);
        let map = mc_truth_map(&system.spec(2).unwrap(), &family, &[p], &system.regions(), 20, 500, 3).unwrap();
        assert_eq!(map.survival[0], 1.0);
        assert_eq!(map.safety[0], 1.0);
    }

    #[test]
    fn shared_controls_share_estimates_and_seeds_reproduce() {
        let system = BenchmarkSystem::default();
        let spec = system.spec(2).unwrap();
        let family = BenchmarkFamily {
            settings: ControlSettings::default(),
        };
        let a = ControlPoint::new(vec![0.5, 1.0], 2.0, 20.0);
        let b = ControlPoint::new(vec![0.5, 1.0], 12.0, 20.0);
        let c = ControlPoint::new(vec![-2.0, 1.0], 12.0, 20.0);
        let one = mc_truth_map(&spec, &family, &[a.clone(), b, c.clone()], &system.regions(), 200, 200, 9).unwrap();
        let two = mc_truth_map(&spec, &family, &[c, a], &system.regions(), 200, 200, 9).unwrap();
        assert_eq!(one.safety[0], one.safety[1]);
        assert_eq!(one.safety[0], two.safety[1]);
        assert_eq!(one.reset[2], two.reset[0]);
        assert!(one.survival.iter().zip(&one.safety).all(|(s, m)| s <= m));
    }

    #[test]
    fn map_noise_shrinks_with_paths() {
        let system = BenchmarkSystem::default();
        let spec = system.spec(2).unwrap();
        let family = BenchmarkFamily {
            settings: ControlSettings::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<ControlPoint> = (0..40)
            .map(|_| {
                ControlPoint::new(
                    vec![rng.random_range(-PI..PI), rng.random_range(-PI..PI)],
                    20.0,
                    20.0,
                )
            })
            .collect();
        let rms = |q: usize| {
            let a = mc_truth_map(&spec, &family, &points, &system.regions(), q, 100, 11).unwrap();
            let b = mc_truth_map(&spec, &family, &points, &system.regions(), q, 100, 12).unwrap();
            let ss: f64 = a.reset.iter().zip(&b.reset).map(|(x, y)| (x - y).powi(2)).sum();
            (ss / points.len() as f64).sqrt()
        };
        let ratio = rms(100) / rms(200);
        assert!((ratio - 2f64.sqrt()).abs() <= 0.3 * 2f64.sqrt(), "ratio {ratio}");
    }

    #[test]
    fn dense_solve_basics() {
        let (m, v) = dense_reference_solve(&[2.0], 1.0, &[0.9], &[2.0], 2.0).unwrap();
        assert!((m - 0.9 * 2.0 / 3.0).abs() < 1e-15);
        assert!((v - (2.0 - 4.0 / 3.0)).abs() < 1e-15);
        let (m, v) = dense_reference_solve(&[1.0, 0.2, 0.2, 1.0], 0.5, &[1.0, 2.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!((m, v), (0.0, 1.0));
    }

    #[test]
    fn dense_solve_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10;
        let x = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let k = &x * x.transpose();
        let gram: Vec<f64> = k.transpose().iter().copied().collect();
        let kv: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let inv = (k.clone() + DMatrix::identity(n, n)).try_inverse().unwrap();
        let w = &inv * DVector::from_column_slice(&kv);
        // Second, independent solve: LU of the same system.
        let w2 = (k + DMatrix::identity(n, n)).lu().solve(&DVector::from_column_slice(&kv)).unwrap();
        let resid = (&w - &w2).amax();
        assert!(resid <= 1e-12);
        let targets: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let (m, _) = dense_reference_solve(&gram, 1.0, &targets, &kv, 1.0).unwrap();
        assert!((m - DVector::from_column_slice(&targets).dot(&w2)).abs() < 1e-12);
    }

    #[test]
    fn primal_form_matches_model_at_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let n = rng.random_range(1..=20);
            let mut model = KernelModel::new(ModelSettings {
                collect_regularization: RegularizationPolicy::InverseN { scale: 1.0 },
                ..ModelSettings::default()
            })
            .unwrap();
            for _ in 0..n {
                let th = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                model
                    .add_targets(ControlPoint::new(th, rng.random_range(0.0..20.0), 20.0), rng.random(), rng.random())
                    .unwrap();
            }
            let kernel = model.settings().collect_kernel;
            let probe = model.points()[0].clone();
            let z = model.settings().features(&probe.theta, probe.t);
            let (mean, var) =
                primal_reference_solve(&kernel, model.inputs(), model.ridge(), model.s_targets(), &z).unwrap();
            let p = model.predict(&probe.theta, probe.t).unwrap();
            assert!((var - p.std * p.std).abs() < 1e-8);
            assert!((mean - p.safety).abs() < 1e-8);
        }
    }
}
