//! Band-limited kernel density estimation and safety/reset probability estimates.
//!
//! The kernel `rho_R(x) = R^{n/2} |x|^{-n/2} J_{n/2}(2 pi R |x|)` is the inverse
//! Fourier transform of the indicator of the frequency ball of radius `R`. It
//! integrates to one but oscillates, so density values can be negative. They are
//! kept raw; callers clip at reporting boundaries.

pub mod bessel;

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explorer::ControlPoint;
use crate::sde::{RegionSpec, TrajectoryBatch};

pub use bessel::{bessel_j, gamma_half};

/// Below this value of `2 pi R |x|` the kernel uses its Taylor expansion at the origin.
pub const SERIES_SWITCH: f64 = 1e-4;

/// `rho_R(x)`.
pub fn bessel_kernel(x: &[f64], bandwidth: f64) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    radial_kernel(r, x.len(), bandwidth)
}

/// `rho_R` as a function of `r = |x|` in dimension `dim`.
pub fn radial_kernel(r: f64, dim: usize, bandwidth: f64) -> f64 {
    let two_nu = dim as u32;
    let nu = dim as f64 / 2.0;
    let z = 2.0 * PI * bandwidth * r;
    if z <= SERIES_SWITCH {
        let w = (PI * bandwidth * r).powi(2);
        let peak = (PI * bandwidth * bandwidth).powf(nu) / gamma_half(two_nu + 2);
        return peak * (1.0 - w / (nu + 1.0) + w * w / (2.0 * (nu + 1.0) * (nu + 2.0)));
    }
    match dim {
        1 => (z.sin()) / (PI * r),
        _ => (bandwidth / r).powf(nu) * bessel_j(two_nu, z),
    }
}

/// `R = Q^{1/(n + 2 nu)}` for `Q` samples in dimension `n` with density smoothness `nu`.
pub fn bandwidth_rule(q: usize, dim: usize, nu: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    if !(nu > dim as f64 / 2.0) {
        return Err(Error::config(
            "kde_nu",
            format!("smoothness {nu} must exceed half the state dimension ({dim}/2)"),
        ));
    }
    Ok((q as f64).powf(1.0 / (dim as f64 + 2.0 * nu)))
}

/// Kernel density estimate over `Q` samples in `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeEstimate {
    dim: usize,
    bandwidth: f64,
    samples: Vec<f64>,
}

impl KdeEstimate {
    /// `samples` is flattened `Q x dim`.
    pub fn new(samples: Vec<f64>, dim: usize, bandwidth: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("KDE dimension must be at least 1".into()));
        }
        if samples.is_empty() || samples.len() % dim != 0 {
            return Err(Error::Argument(format!(
                "KDE needs a nonempty multiple of {dim} sample coordinates, got {}",
                samples.len()
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Argument("KDE bandwidth must be positive".into()));
        }
        Ok(Self {
            dim,
            bandwidth,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// Axis-aligned box around the samples widened by `3 / R`.
    pub fn default_box(&self) -> (Vec<f64>, Vec<f64>) {
        let margin = 3.0 / self.bandwidth;
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for s in self.samples.chunks_exact(self.dim) {
            for d in 0..self.dim {
                lo[d] = lo[d].min(s[d]);
                hi[d] = hi[d].max(s[d]);
            }
        }
        for d in 0..self.dim {
            lo[d] -= margin;
            hi[d] += margin;
        }
        (lo, hi)
    }
}

/// `(1/Q) sum_i rho_R(x - X_i)`; may be negative.
pub fn kde_density(est: &KdeEstimate, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), est.dim);
    let mut diff = vec![0.0; est.dim];
    let mut total = 0.0;
    for s in est.samples.chunks_exact(est.dim) {
        let mut r2 = 0.0;
        for d in 0..est.dim {
            diff[d] = x[d] - s[d];
            r2 += diff[d] * diff[d];
        }
        total += radial_kernel(r2.sqrt(), est.dim, est.bandwidth);
    }
    total / est.len() as f64
}

/// Knot spacing of [`RadialTable`] in units of `z = 2 pi R r`.
const TABLE_STEP_Z: f64 = 0.005;

/// `rho_R` tabulated on `[0, r_max]` for repeated evaluation, with cubic Hermite
/// interpolation on exact derivatives `rho'(r) = -2 pi R (R/r)^nu J_{nu+1}(2 pi R r)`.
/// Interpolation error is below `1e-12` of the peak; radii past `r_max` are evaluated directly.
#[derive(Clone, Debug)]
pub struct RadialTable {
    dim: usize,
    bandwidth: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl RadialTable {
    pub fn new(dim: usize, bandwidth: f64, r_max: f64) -> Self {
        let step = TABLE_STEP_Z / (2.0 * PI * bandwidth);
        let knots = (r_max.max(0.0) / step).ceil() as usize + 2;
        let nu = dim as f64 / 2.0;
        let (values, slopes) = (0..knots)
            .map(|k| {
                let r = k as f64 * step;
                let slope = if k == 0 {
                    0.0
                } else {
                    -2.0 * PI * bandwidth * (bandwidth / r).powf(nu) * bessel_j(dim as u32 + 2, 2.0 * PI * bandwidth * r)
                };
                (radial_kernel(r, dim, bandwidth), slope * step)
            })
            .unzip();
        Self {
            dim,
            bandwidth,
            step,
            values,
            slopes,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let u = r / self.step;
        let k = u as usize;
        if k + 1 >= self.values.len() {
            return radial_kernel(r, self.dim, self.bandwidth);
        }
        let s = u - k as f64;
        let (p0, p1, m0, m1) = (self.values[k], self.values[k + 1], self.slopes[k], self.slopes[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

/// [`kde_density`] through a table built for the estimate's dimension and bandwidth.
pub fn kde_density_tabulated(est: &KdeEstimate, table: &RadialTable, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), est.dim);
    let mut total = 0.0;
    for s in est.samples.chunks_exact(est.dim) {
        let r2: f64 = x.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
        total += table.eval(r2.sqrt());
    }
    total / est.len() as f64
}

/// Sample-fraction probability, with the requested time when it had to be snapped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleProbability {
    pub value: f64,
    pub node: usize,
    pub snapped_from: Option<f64>,
}

/// Fraction of paths whose observed state at `t` satisfies `indicator >= 0`.
pub fn probability_from_samples(
    batch: &TrajectoryBatch,
    t: f64,
    indicator: &(dyn Fn(&[f64]) -> f64 + Send + Sync),
) -> SampleProbability {
    let (node, snapped_from) = batch.node_for(t);
    if let Some(requested) = snapped_from {
        log::warn!(
            "time {requested} is not on the trajectory grid; using node {node} (t = {})",
            batch.grid().time(node)
        );
    }
    let hits = (0..batch.paths())
        .filter(|&p| indicator(batch.observed(p, node)) >= 0.0)
        .count();
    SampleProbability {
        value: hits as f64 / batch.paths() as f64,
        node,
        snapped_from,
    }
}

/// Monte Carlo integral of the KDE over `{indicator >= 0}` with `mc_points` uniform
/// points in `bounds` (default: [`KdeEstimate::default_box`]), clipped to `[0, 1]`.
pub fn probability_from_density(
    est: &KdeEstimate,
    indicator: &(dyn Fn(&[f64]) -> f64 + Send + Sync),
    mc_points: usize,
    bounds: Option<(&[f64], &[f64])>,
    seed: u64,
) -> Result<f64> {
    if mc_points == 0 {
        return Err(Error::Argument("density integration needs at least one point".into()));
    }
    let (need_lo, need_hi) = est.default_box();
    let (lo, hi) = match bounds {
        Some((lo, hi)) => {
            if lo.len() != est.dim || hi.len() != est.dim {
                return Err(Error::Argument("bounding box dimension mismatch".into()));
            }
            let covers = (0..est.dim).all(|d| lo[d] <= need_lo[d] && hi[d] >= need_hi[d]);
            if !covers {
                return Err(Error::Argument(
                    "bounding box must cover the samples plus a 3/R margin".into(),
                ));
            }
            (lo.to_vec(), hi.to_vec())
        }
        None => (need_lo, need_hi),
    };
    let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; est.dim];
    let mut total = 0.0;
    for _ in 0..mc_points {
        for d in 0..est.dim {
            x[d] = rng.random_range(lo[d]..hi[d]);
        }
        if indicator(&x) >= 0.0 {
            total += kde_density(est, &x);
        }
    }
    Ok((volume * total / mc_points as f64).clamp(0.0, 1.0))
}

/// How the per-iteration safety and reset targets are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProbabilityEstimator {
    /// Fraction of trajectory samples in the region.
    #[default]
    Samples,
    /// Monte Carlo integral of the KDE over the region.
    Density { mc_points: usize },
}

/// Training datum gathered at one visited `(theta, t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub point: ControlPoint,
    pub kde: KdeEstimate,
    pub s_hat: f64,
    pub r_hat: f64,
}

impl ObservationRecord {
    /// Builds the KDE and both probability targets from the batch state at `point.t`.
    pub fn from_batch(
        point: ControlPoint,
        batch: &TrajectoryBatch,
        regions: &RegionSpec,
        bandwidth: f64,
        estimator: ProbabilityEstimator,
        seed: u64,
    ) -> Result<Self> {
        let (node, _) = batch.node_for(point.t);
        let kde = KdeEstimate::new(batch.observed_at(node), batch.observed_dim(), bandwidth)?;
        let (s_hat, r_hat) = match estimator {
            ProbabilityEstimator::Samples => (
                probability_from_samples(batch, point.t, regions.safe.as_ref()).value,
                probability_from_samples(batch, point.t, regions.reset.as_ref()).value,
            ),
            ProbabilityEstimator::Density { mc_points } => (
                probability_from_density(&kde, regions.safe.as_ref(), mc_points, None, seed)?,
                probability_from_density(&kde, regions.reset.as_ref(), mc_points, None, seed ^ 1)?,
            ),
        };
        Ok(Self {
            point,
            kde,
            s_hat,
            r_hat,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::oracle::ou_density;
    use crate::sde::{integrate_paths, FnDynamics, NoControl, SystemSpec};

    fn gaussian_samples(q: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..q * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn kernel_at_origin_in_two_dims_is_pi() {
        assert!((bessel_kernel(&[0.0, 0.0], 1.0) - PI).abs() < 1e-15);
        // Direct evaluation just past the switch agrees with the series value.
        let r = 1e-6;
        let direct = (1.0 / r) * bessel_j(2, 2.0 * PI * r);
        assert!((direct - PI).abs() < 1e-9);
    }

    #[test]
    fn one_dim_kernel_is_sinc() {
        assert!(bessel_kernel(&[0.5], 1.0).abs() < 1e-15);
        for &x in &[0.1, 0.37, 1.3, -2.2] {
            let want = (2.0 * PI * 1.7 * x).sin() / (PI * x);
            assert!((bessel_kernel(&[x], 1.7) - want).abs() < 1e-13);
        }
        let via_bessel = (1.0f64 / 0.3).sqrt() * bessel_j(1, 2.0 * PI * 0.3);
        assert!((bessel_kernel(&[0.3], 1.0) - via_bessel).abs() < 1e-13);
    }

    #[test]
    fn kernel_integrates_to_one() {
        let (l, n) = (50.0, 200_000);
        let h = 2.0 * l / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = -l + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * bessel_kernel(&[x], 1.0);
        }
        assert!((total * h - 1.0).abs() < 0.02, "integral {}", total * h);
    }

    #[test]
    fn kernel_is_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: [f64; 2] = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let angle: f64 = rng.random_range(0.0..2.0 * PI);
            let (s, c) = angle.sin_cos();
            let rotated = [c * x[0] - s * x[1], s * x[0] + c * x[1]];
            let a = bessel_kernel(&x, 1.3);
            let b = bessel_kernel(&rotated, 1.3);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn table_matches_direct_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for dim in 1..=3usize {
            for &bandwidth in &[0.8, 2.42, 4.0] {
                let table = RadialTable::new(dim, bandwidth, 30.0);
                let peak = radial_kernel(0.0, dim, bandwidth);
                for _ in 0..2000 {
                    let r: f64 = rng.random_range(0.0..35.0);
                    let err = (table.eval(r) - radial_kernel(r, dim, bandwidth)).abs();
                    assert!(err <= 1e-11 * peak, "dim {dim} R {bandwidth} r {r}: {err:e}");
                }
            }
        }
    }

    #[test]
    fn switch_radius_is_continuous() {
        for dim in 1..=4usize {
            for &bandwidth in &[0.5, 1.0, 2.7] {
                let r_switch = SERIES_SWITCH / (2.0 * PI * bandwidth);
                let below = radial_kernel(r_switch * (1.0 - 1e-12), dim, bandwidth);
                let nu = dim as f64 / 2.0;
                let above_r = r_switch * (1.0 + 1e-12);
                let direct = (bandwidth / above_r).powf(nu)
                    * bessel_j(dim as u32, 2.0 * PI * bandwidth * above_r);
                assert!(((below - direct) / below).abs() <= 1e-8, "dim {dim}");
            }
        }
    }

    #[test]
    fn single_sample_kde_is_the_kernel() {
        let est = KdeEstimate::new(vec![0.0, 0.0], 2, 1.4).unwrap();
        for x in [[0.0, 0.0], [0.3, -0.2], [2.0, 1.0]] {
            assert_eq!(kde_density(&est, &x), bessel_kernel(&x, 1.4));
        }
    }

    #[test]
    fn symmetric_samples_give_symmetric_density() {
        let c = [1.0, -0.5];
        let mut samples = Vec::new();
        for p in gaussian_samples(50, 2, 9).chunks(2) {
            samples.extend_from_slice(&[c[0] + p[0], c[1] + p[1]]);
            samples.extend_from_slice(&[c[0] - p[0], c[1] - p[1]]);
        }
        let est = KdeEstimate::new(samples, 2, 1.2).unwrap();
        let d = [0.4, 0.7];
        let plus = kde_density(&est, &[c[0] + d[0], c[1] + d[1]]);
        let minus = kde_density(&est, &[c[0] - d[0], c[1] - d[1]]);
        assert!((plus - minus).abs() < 1e-12);
    }

    #[test]
    fn ou_density_is_recovered() {
        // dX = -X dt + 5 dW from x0 = 1, observed at t = 1.
        let spec = SystemSpec::new(
            Arc::new(FnDynamics::ornstein_uhlenbeck(1.0, 5.0)),
            1,
            0,
            vec![1.0],
            0.0,
            1.0,
        )
        .unwrap();
        let q = 10_000;
        let batch = integrate_paths(&spec, &NoControl, q, 100, 2024).unwrap();
        let bandwidth = bandwidth_rule(q, 1, 2.0).unwrap();
        let est = KdeEstimate::new(batch.observed_at(100), 1, bandwidth).unwrap();
        let mean = (-1.0f64).exp();
        let std = 5.0 * ((1.0 - (-2.0f64).exp()) / 2.0).sqrt();
        let mut sup = 0.0f64;
        for i in 0..400 {
            let x = mean - 5.0 * std + 10.0 * std * i as f64 / 399.0;
            let truth = ou_density(x, 1.0, 1.0, 1.0, 5.0).unwrap();
            sup = sup.max((kde_density(&est, &[x]) - truth).abs());
        }
        assert!(sup <= 0.05, "sup error {sup}");
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(bandwidth_rule(1, 2, 3.0).unwrap(), 1.0);
        assert!((bandwidth_rule(256, 2, 3.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((bandwidth_rule(1000, 1, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(bandwidth_rule(10, 2, 1.0), Err(Error::Config { .. })));
    }

    fn brownian_batch(q: usize, seed: u64) -> TrajectoryBatch {
        let bm = FnDynamics::new(1, 0, |_, _, out| out[0] = 0.0, |_, _, out| out[0] = 1.0);
        let spec = SystemSpec::new(Arc::new(bm), 1, 0, vec![0.0], 0.0, 1.0).unwrap();
        integrate_paths(&spec, &NoControl, q, 10, seed).unwrap()
    }

    #[test]
    fn sample_probability_examples() {
        let batch = brownian_batch(100_000, 5);
        assert_eq!(probability_from_samples(&batch, 1.0, &|_| 1.0).value, 1.0);
        assert_eq!(probability_from_samples(&batch, 1.0, &|_| -1.0).value, 0.0);
        let inside = probability_from_samples(&batch, 1.0, &|x| 1.0 - x[0].abs());
        assert!((inside.value - 0.6827).abs() < 0.005, "{}", inside.value);
        assert_eq!(inside.snapped_from, None);
    }

    #[test]
    fn off_grid_time_is_snapped() {
        let batch = brownian_batch(10, 1);
        let p = probability_from_samples(&batch, 0.52, &|_| 1.0);
        assert_eq!(p.node, 5);
        assert_eq!(p.snapped_from, Some(0.52));
    }

    #[test]
    fn sample_probability_is_a_direct_count() {
        let batch = brownian_batch(500, 8);
        let g = |x: &[f64]| 0.3 - x[0];
        let count = (0..500).filter(|&p| batch.observed(p, 10)[0] <= 0.3).count();
        assert_eq!(probability_from_samples(&batch, 1.0, &g).value, count as f64 / 500.0);
    }

    #[test]
    fn density_probability_examples() {
        let est = KdeEstimate::new(gaussian_samples(1000, 1, 4), 1, 2.0).unwrap();
        let (lo, hi) = est.default_box();
        let wide = ([lo[0] - 20.0], [hi[0] + 20.0]);
        let total =
            probability_from_density(&est, &|_| 1.0, 100_000, Some((&wide.0, &wide.1)), 1).unwrap();
        assert!((total - 1.0).abs() < 0.05, "total mass {total}");
        assert_eq!(probability_from_density(&est, &|_| -1.0, 1000, None, 1).unwrap(), 0.0);
        let raw = gaussian_samples(500, 1, 4);
        let mirrored: Vec<f64> = raw.iter().copied().chain(raw.iter().map(|x| -x)).collect();
        let symmetric = KdeEstimate::new(mirrored, 1, 2.0).unwrap();
        let half = probability_from_density(&symmetric, &|x| x[0], 100_000, None, 2).unwrap();
        assert!((half - 0.5).abs() < 0.03, "half {half}");
        assert!(probability_from_density(&est, &|_| 1.0, 0, None, 1).is_err());
        assert!(probability_from_density(&est, &|_| 1.0, 10, Some((&[0.0], &[1.0])), 1).is_err());
    }
}
