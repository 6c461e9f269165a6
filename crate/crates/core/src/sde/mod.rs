//! Controlled SDE systems and their Euler-Maruyama sample paths.
//!
//! A [`SystemSpec`] couples a [`Dynamics`] implementation (drift and diffusion)
//! with the initial density and the time horizon. Controls are any
//! [`ControlLaw`]; a [`ControlFamily`] maps a parameter vector to one.
//!
//! The state may be larger than what is observed: the leading
//! `observed_dim` coordinates carry the initial Gaussian and are what densities
//! and indicators see (positions, for a second-order system). Remaining
//! coordinates start at zero.

mod benchmark;

pub use benchmark::{BenchmarkControl, BenchmarkFamily, BenchmarkSystem, ControlSettings, DoubleIntegrator, NoiseBump};

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::explorer::ControlPoint;

/// Drift and diffusion of `dX = b(X, u) dt + a(X, u) dW`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn drift(&self, state: &[f64], control: &[f64], out: &mut [f64]);
    /// Writes the `n x n` diffusion matrix in row-major order.
    fn diffusion(&self, state: &[f64], control: &[f64], out: &mut [f64]);
}

/// A feedback control `u(t, X)`.
pub trait ControlLaw: Send + Sync {
    fn apply(&self, t: f64, state: &[f64], out: &mut [f64]);
}

/// Parameterized controls `theta -> u_theta`.
pub trait ControlFamily: Send + Sync {
    fn param_dim(&self) -> usize;
    fn control(&self, theta: &[f64]) -> Box<dyn ControlLaw>;
}

type DriftFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Closure-backed dynamics for custom systems.
pub struct FnDynamics {
    state_dim: usize,
    control_dim: usize,
    drift: Box<DriftFn>,
    diffusion: Box<DriftFn>,
}

impl FnDynamics {
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        drift: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            control_dim,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
        }
    }

    /// `dX = -rate X dt + sigma dW` in one dimension.
    pub fn ornstein_uhlenbeck(rate: f64, sigma: f64) -> Self {
        Self::new(
            1,
            0,
            move |x, _, out| out[0] = -rate * x[0],
            move |_, _, out| out[0] = sigma,
        )
    }
}

impl Dynamics for FnDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn drift(&self, state: &[f64], control: &[f64], out: &mut [f64]) {
        (self.drift)(state, control, out)
    }
    fn diffusion(&self, state: &[f64], control: &[f64], out: &mut [f64]) {
        (self.diffusion)(state, control, out)
    }
}

/// The zero control, for uncontrolled systems.
pub struct NoControl;

impl ControlLaw for NoControl {
    fn apply(&self, _t: f64, _state: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[derive(Clone)]
pub struct SystemSpec {
    dynamics: Arc<dyn Dynamics>,
    observed_dim: usize,
    param_dim: usize,
    initial_mean: Vec<f64>,
    initial_std: f64,
    t_max: f64,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("state_dim", &self.state_dim())
            .field("observed_dim", &self.observed_dim)
            .field("param_dim", &self.param_dim)
            .field("initial_mean", &self.initial_mean)
            .field("initial_std", &self.initial_std)
            .field("t_max", &self.t_max)
            .finish()
    }
}

impl SystemSpec {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        observed_dim: usize,
        param_dim: usize,
        initial_mean: Vec<f64>,
        initial_std: f64,
        t_max: f64,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        if n == 0 {
            return Err(Error::config("state_dim", "must be at least 1"));
        }
        if observed_dim == 0 || observed_dim > n {
            return Err(Error::config("observed_dim", format!("must lie in 1..={n}")));
        }
        if initial_mean.len() != observed_dim {
            return Err(Error::config(
                "initial_mean",
                format!("expected {observed_dim} entries, got {}", initial_mean.len()),
            ));
        }
        if !(initial_std >= 0.0) || !initial_std.is_finite() {
            return Err(Error::config("initial_std", "must be finite and nonnegative"));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::config("t_max", "must be finite and positive"));
        }
        Ok(Self {
            dynamics,
            observed_dim,
            param_dim,
            initial_mean,
            initial_std,
            t_max,
        })
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }
    pub fn observed_dim(&self) -> usize {
        self.observed_dim
    }
    pub fn param_dim(&self) -> usize {
        self.param_dim
    }
    pub fn initial_mean(&self) -> &[f64] {
        &self.initial_mean
    }
    pub fn initial_std(&self) -> f64 {
        self.initial_std
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    fn draw_initial(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.fill(0.0);
        for (x, &mean) in out.iter_mut().zip(&self.initial_mean) {
            let z: f64 = StandardNormal.sample(rng);
            *x = mean + self.initial_std * z;
        }
    }
}

/// Uniform grid `t_l = l * dt` on `[0, t_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Argument("n_steps must be at least 1".into()));
        }
        if !(t_max > 0.0) {
            return Err(Error::Argument("t_max must be positive".into()));
        }
        Ok(Self { t_max, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt()
    }

    /// Index of the node nearest to `t`, clamped to the grid.
    pub fn nearest(&self, t: f64) -> usize {
        let raw = (t / self.dt()).round();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.n_steps)
        }
    }

    /// True if `t` coincides with a node up to roundoff.
    pub fn is_node(&self, t: f64) -> bool {
        let l = self.nearest(t);
        (self.time(l) - t).abs() <= 1e-9 * self.t_max.max(1.0)
    }

    /// Number of steps needed to reach `horizon` (first node at or after it).
    pub fn steps_to(&self, horizon: f64) -> usize {
        let l = self.nearest(horizon);
        if self.time(l) + 1e-9 * self.t_max < horizon {
            (l + 1).min(self.n_steps)
        } else {
            l
        }
    }
}

/// `Q` sample paths on one shared grid, stored path-major.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub control: Option<ControlPoint>,
    grid: TimeGrid,
    steps: usize,
    dim: usize,
    observed_dim: usize,
    paths: usize,
    states: Vec<f64>,
    seed: u64,
}

impl TrajectoryBatch {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
    pub fn paths(&self) -> usize {
        self.paths
    }
    /// Number of stored nodes per path.
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn observed_dim(&self) -> usize {
        self.observed_dim
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn time_grid(&self) -> Vec<f64> {
        (0..self.nodes()).map(|l| self.grid.time(l)).collect()
    }

    pub fn state(&self, path: usize, node: usize) -> &[f64] {
        let start = (path * self.nodes() + node) * self.dim;
        &self.states[start..start + self.dim]
    }

    pub fn observed(&self, path: usize, node: usize) -> &[f64] {
        &self.state(path, node)[..self.observed_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.states
    }

    /// Grid node for time `t`; `None` in the second slot when `t` was already a node,
    /// otherwise the requested time that was snapped.
    pub fn node_for(&self, t: f64) -> (usize, Option<f64>) {
        let l = self.grid.nearest(t).min(self.steps);
        if (self.grid.time(l) - t).abs() <= 1e-9 * self.grid.t_max().max(1.0) {
            (l, None)
        } else {
            (l, Some(t))
        }
    }

    /// Observed coordinates of every path at `node`, flattened `Q x observed_dim`.
    pub fn observed_at(&self, node: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.paths * self.observed_dim);
        for p in 0..self.paths {
            out.extend_from_slice(self.observed(p, node));
        }
        out
    }
}

/// Child stream for one path: the same `(seed, path)` always yields the same draws,
/// independent of how paths are scheduled across threads.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Independent seed for sub-task `index` of a run seeded with `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial full state: observed coordinates from the initial Gaussian, the rest zero.
pub fn reset(spec: &SystemSpec, seed: u64) -> Vec<f64> {
    let mut rng = path_rng(seed, 0);
    let mut x = vec![0.0; spec.state_dim()];
    spec.draw_initial(&mut rng, &mut x);
    x
}

/// Integrates one path for `steps` steps, handing each visited state to `visit`.
pub fn simulate_path(
    spec: &SystemSpec,
    control: &dyn ControlLaw,
    grid: TimeGrid,
    steps: usize,
    seed: u64,
    path: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let dynamics = spec.dynamics();
    let n = dynamics.state_dim();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = path_rng(seed, path as u64);

    let mut x = vec![0.0; n];
    let mut u = vec![0.0; dynamics.control_dim()];
    let mut b = vec![0.0; n];
    let mut a = vec![0.0; n * n];
    let mut xi = vec![0.0; n];
    spec.draw_initial(&mut rng, &mut x);
    visit(0, &x);

    for l in 0..steps {
        let t = grid.time(l);
        control.apply(t, &x, &mut u);
        dynamics.drift(&x, &u, &mut b);
        dynamics.diffusion(&x, &u, &mut a);
        for z in xi.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        let mut finite = true;
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let noise: f64 = row.iter().zip(&xi).map(|(aij, z)| aij * z).sum();
            x[i] += b[i] * dt + sqrt_dt * noise;
            finite &= x[i].is_finite();
        }
        if !finite {
            return Err(Error::Integration { path, step: l + 1 });
        }
        visit(l + 1, &x);
    }
    Ok(())
}

/// `q` Euler-Maruyama paths over `[0, t_max]` with `n_steps` uniform steps.
pub fn integrate_paths(
    spec: &SystemSpec,
    control: &dyn ControlLaw,
    q: usize,
    n_steps: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    integrate_paths_until(spec, control, q, n_steps, spec.t_max(), seed)
}

/// Like [`integrate_paths`], stopping at the first grid node at or after `horizon`.
/// The step size stays `t_max / n_steps` so every horizon shares one grid.
pub fn integrate_paths_until(
    spec: &SystemSpec,
    control: &dyn ControlLaw,
    q: usize,
    n_steps: usize,
    horizon: f64,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if q == 0 {
        return Err(Error::Argument("path count must be at least 1".into()));
    }
    let grid = TimeGrid::new(spec.t_max(), n_steps)?;
    let steps = grid.steps_to(horizon.min(spec.t_max()));
    let dim = spec.state_dim();
    let stride = (steps + 1) * dim;
    let mut states = vec![0.0; q * stride];
    states
        .par_chunks_mut(stride)
        .enumerate()
        .try_for_each(|(p, chunk)| {
            simulate_path(spec, control, grid, steps, seed, p, |l, x| {
                chunk[l * dim..(l + 1) * dim].copy_from_slice(x);
            })
        })?;
    Ok(TrajectoryBatch {
        control: None,
        grid,
        steps,
        dim,
        observed_dim: spec.observed_dim(),
        paths: q,
        states,
        seed,
    })
}

pub type Indicator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Safe-set function `g` and reset-set function `h`, both acting on observed coordinates.
/// A state is safe when `g >= 0` and resettable when `h >= 0`.
#[derive(Clone)]
pub struct RegionSpec {
    pub safe: Indicator,
    pub reset: Indicator,
}

impl RegionSpec {
    pub fn new(
        safe: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        reset: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            safe: Arc::new(safe),
            reset: Arc::new(reset),
        }
    }

    /// Open box `(-half_width, half_width)^n` as the safe set, a centered ball as the reset set.
    pub fn box_and_ball(half_width: f64, reset_radius: f64) -> Self {
        Self::new(
            move |x| half_width - x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            move |x| reset_radius - x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        )
    }
}

impl fmt::Debug for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RegionSpec { .. }")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_spec(rate: f64, sigma: f64, x0: f64, t_max: f64) -> SystemSpec {
        SystemSpec::new(
            Arc::new(FnDynamics::ornstein_uhlenbeck(rate, sigma)),
            1,
            0,
            vec![x0],
            0.0,
            t_max,
        )
        .unwrap()
    }

    #[test]
    fn degenerate_dynamics_keep_initial_draw() {
        let dynamics = FnDynamics::new(2, 0, |_, _, out| out.fill(0.0), |_, _, out| out.fill(0.0));
        let spec = SystemSpec::new(Arc::new(dynamics), 2, 0, vec![1.0, -2.0], 0.3, 1.0).unwrap();
        let batch = integrate_paths(&spec, &NoControl, 8, 20, 3).unwrap();
        for p in 0..8 {
            let start = batch.state(p, 0).to_vec();
            for l in 0..batch.nodes() {
                assert_eq!(batch.state(p, l), start.as_slice());
            }
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let spec = ou_spec(1.0, 1.0, 0.5, 1.0);
        let a = integrate_paths(&spec, &NoControl, 16, 50, 11).unwrap();
        let b = integrate_paths(&spec, &NoControl, 16, 50, 11).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.as_slice()), bits(b.as_slice()));
        let c = integrate_paths(&spec, &NoControl, 16, 50, 12).unwrap();
        assert_ne!(bits(a.as_slice()), bits(c.as_slice()));
    }

    #[test]
    fn batch_prefix_is_independent_of_path_count() {
        let spec = ou_spec(1.0, 1.0, 0.5, 1.0);
        let small = integrate_paths(&spec, &NoControl, 4, 10, 5).unwrap();
        let large = integrate_paths(&spec, &NoControl, 9, 10, 5).unwrap();
        for p in 0..4 {
            assert_eq!(small.state(p, 10), large.state(p, 10));
        }
    }

    #[test]
    fn grid_nodes_are_uniform() {
        let grid = TimeGrid::new(20.0, 500).unwrap();
        for l in 0..=500 {
            assert!((grid.time(l) - l as f64 * 0.04).abs() < 1e-12);
        }
        assert_eq!(grid.nearest(0.041), 1);
        assert_eq!(grid.nearest(25.0), 500);
        assert_eq!(grid.steps_to(0.05), 2);
        assert_eq!(grid.steps_to(0.08), 2);
    }

    #[test]
    fn truncated_horizon_stops_at_node() {
        let spec = ou_spec(1.0, 1.0, 0.0, 2.0);
        let batch = integrate_paths_until(&spec, &NoControl, 3, 20, 1.0, 1).unwrap();
        assert_eq!(batch.nodes(), 11);
        assert!((batch.time_grid()[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_names_path_and_step() {
        let blowup = FnDynamics::new(1, 0, |x, _, out| out[0] = x[0] * 1e200, |_, _, out| out[0] = 0.0);
        let spec = SystemSpec::new(Arc::new(blowup), 1, 0, vec![1.0], 0.0, 1.0).unwrap();
        match integrate_paths(&spec, &NoControl, 2, 10, 0) {
            Err(Error::Integration { path: 0, step }) => assert!(step >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ou_moments_match_closed_form() {
        // X(1) for dX = -X dt + dW from x0 = 1: mean e^-1, variance (1 - e^-2)/2.
        let spec = ou_spec(1.0, 1.0, 1.0, 1.0);
        let q = 100_000;
        let batch = integrate_paths(&spec, &NoControl, q, 200, 42).unwrap();
        let xs: Vec<f64> = (0..q).map(|p| batch.state(p, 200)[0]).collect();
        let mean = xs.iter().sum::<f64>() / q as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (q - 1) as f64;
        let true_mean = (-1.0f64).exp();
        let true_var = (1.0 - (-2.0f64).exp()) / 2.0;
        let se_mean = (true_var / q as f64).sqrt();
        let se_var = true_var * (2.0 / (q - 1) as f64).sqrt();
        // Euler bias at dt = 0.005 is well below one standard error here.
        assert!((mean - true_mean).abs() < 3.0 * se_mean + 2e-3, "mean {mean}");
        assert!((var - true_var).abs() < 3.0 * se_var + 2e-3, "var {var}");
    }

    #[test]
    fn weak_error_halves_with_step() {
        // E[X_n] = x0 (1 - dt)^n exactly under Euler-Maruyama; the MC estimate of the bias
        // should halve with dt.
        let bias = |n_steps: usize| {
            let spec = ou_spec(1.0, 1.0, 1.0, 1.0);
            let mut total = 0.0;
            let seeds = [1u64, 2, 3, 4];
            for &seed in &seeds {
                let batch = integrate_paths(&spec, &NoControl, 100_000, n_steps, seed).unwrap();
                let mean = (0..batch.paths()).map(|p| batch.state(p, n_steps)[0]).sum::<f64>()
                    / batch.paths() as f64;
                total += mean - (-1.0f64).exp();
            }
            total / seeds.len() as f64
        };
        let ratio = bias(5) / bias(10);
        assert!((ratio - 2.0).abs() <= 0.6, "ratio {ratio}");
    }

    #[test]
    fn reset_is_deterministic_and_centered() {
        let spec = SystemSpec::new(
            Arc::new(DoubleIntegrator::new(NoiseBump::default())),
            2,
            2,
            vec![0.5, -0.25],
            0.1,
            20.0,
        )
        .unwrap();
        assert_eq!(reset(&spec, 9), reset(&spec, 9));
        let state = reset(&spec, 9);
        assert_eq!(&state[2..], &[0.0, 0.0]);

        let n = 100_000;
        let mut sums = [0.0; 2];
        for seed in 0..n {
            let s = reset(&spec, seed);
            sums[0] += s[0];
            sums[1] += s[1];
        }
        let bound = 3.0 * 0.1 / (n as f64).sqrt();
        assert!((sums[0] / n as f64 - 0.5).abs() < bound);
        assert!((sums[1] / n as f64 + 0.25).abs() < bound);
    }

    #[test]
    fn reset_with_zero_spread_is_exact() {
        let spec = SystemSpec::new(
            Arc::new(DoubleIntegrator::new(NoiseBump::default())),
            2,
            2,
            vec![1.5, 2.5],
            0.0,
            20.0,
        )
        .unwrap();
        assert_eq!(reset(&spec, 1), vec![1.5, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn spec_validation() {
        let dynamics: Arc<dyn Dynamics> = Arc::new(FnDynamics::ornstein_uhlenbeck(1.0, 1.0));
        assert!(SystemSpec::new(dynamics.clone(), 1, 0, vec![0.0], 0.1, 0.0).is_err());
        assert!(SystemSpec::new(dynamics.clone(), 2, 0, vec![0.0], 0.1, 1.0).is_err());
        assert!(SystemSpec::new(dynamics, 1, 0, vec![0.0, 1.0], 0.1, 1.0).is_err());
    }
}
