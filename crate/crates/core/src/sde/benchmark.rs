//! The 2D double integrator with a localized noise bump, driven by piecewise
//! constant headings followed by a feedback return to the target.

use std::f64::consts::FRAC_PI_3;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ControlFamily, ControlLaw, Dynamics, RegionSpec, SystemSpec};
use crate::error::{Error, Result};

/// Isotropic noise amplitude `a(x) = A exp(-|x - c|^2 / (2 w^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBump {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

impl Default for NoiseBump {
    fn default() -> Self {
        Self {
            center: [5.0, 5.0],
            width: 2.0,
            amplitude: 5.0,
        }
    }
}

impl NoiseBump {
    pub fn amplitude_at(&self, x: &[f64]) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }
}

/// State `(x, y, vx, vy)`; `dX = V dt`, `dV = u dt + a(X) dW`.
#[derive(Clone, Copy, Debug)]
pub struct DoubleIntegrator {
    pub noise: NoiseBump,
}

impl DoubleIntegrator {
    pub fn new(noise: NoiseBump) -> Self {
        Self { noise }
    }
}

impl Dynamics for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn drift(&self, state: &[f64], control: &[f64], out: &mut [f64]) {
        out[0] = state[2];
        out[1] = state[3];
        out[2] = control[0];
        out[3] = control[1];
    }
    fn diffusion(&self, state: &[f64], _control: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let a = self.noise.amplitude_at(&state[..2]);
        out[2 * 4 + 2] = a;
        out[3 * 4 + 3] = a;
    }
}

/// Physical constants of the benchmark environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSystem {
    pub noise: NoiseBump,
    pub initial_mean: [f64; 2],
    pub initial_std: f64,
    pub t_max: f64,
    /// Safe region is the open box `(-h, h)^2`.
    pub safe_half_width: f64,
    /// Reset region is the disk of this radius around the origin.
    pub reset_radius: f64,
}

impl Default for BenchmarkSystem {
    fn default() -> Self {
        Self {
            noise: NoiseBump::default(),
            initial_mean: [0.0, 0.0],
            initial_std: 0.1,
            t_max: 20.0,
            safe_half_width: 10.0,
            reset_radius: 2.5,
        }
    }
}

impl BenchmarkSystem {
    pub fn spec(&self, param_dim: usize) -> Result<SystemSpec> {
        if !(self.noise.width > 0.0) {
            return Err(Error::config("system.noise.width", "must be positive"));
        }
        if !(self.noise.amplitude >= 0.0) {
            return Err(Error::config("system.noise.amplitude", "must be nonnegative"));
        }
        SystemSpec::new(
            Arc::new(DoubleIntegrator::new(self.noise)),
            2,
            param_dim,
            self.initial_mean.to_vec(),
            self.initial_std,
            self.t_max,
        )
    }

    pub fn regions(&self) -> RegionSpec {
        RegionSpec::box_and_ball(self.safe_half_width, self.reset_radius)
    }
}

/// Control-law constants shared by every parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSettings {
    pub speed: f64,
    pub damping: f64,
    /// Number of headings `m`.
    pub segments: usize,
    pub t_explo: f64,
    pub target: [f64; 2],
    /// Componentwise acceleration clamp.
    pub u_max: f64,
    pub n_steps: usize,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            speed: 2.0,
            damping: 0.5,
            segments: 2,
            t_explo: 6.0,
            target: [0.0, 0.0],
            u_max: 4.0,
            n_steps: 500,
        }
    }
}

impl ControlSettings {
    pub fn validate(&self, t_max: f64) -> Result<()> {
        if !(self.speed > 0.0) {
            return Err(Error::config("control.speed", "must be positive"));
        }
        if !(self.damping > 0.0) {
            return Err(Error::config("control.damping", "must be positive"));
        }
        if self.segments == 0 {
            return Err(Error::config("control.segments", "must be at least 1"));
        }
        if !(self.t_explo > 0.0 && self.t_explo <= t_max) {
            return Err(Error::config("control.t_explo", format!("must lie in (0, {t_max}]")));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::config("control.u_max", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::config("control.n_steps", "must be at least 1"));
        }
        Ok(())
    }

    /// The initial known-safe headings.
    pub fn default_safe_theta() -> Vec<f64> {
        vec![-FRAC_PI_3, FRAC_PI_3]
    }
}

/// Piecewise heading control for one parameter vector `theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkControl {
    pub directions: Vec<f64>,
    pub speed: f64,
    pub damping: f64,
    pub t_explo: f64,
    pub target: [f64; 2],
    pub u_max: f64,
}

impl BenchmarkControl {
    pub fn new(directions: Vec<f64>, settings: &ControlSettings) -> Self {
        Self {
            directions,
            speed: settings.speed,
            damping: settings.damping,
            t_explo: settings.t_explo,
            target: settings.target,
            u_max: settings.u_max,
        }
    }

    /// Heading index active at `t`; segments are half-open `[t_i, t_{i+1})`.
    pub fn segment(&self, t: f64) -> usize {
        let m = self.directions.len();
        let i = (t * m as f64 / self.t_explo).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(m - 1)
        }
    }

    /// Acceleration at time `t` for position `x` and velocity `v`.
    pub fn eval(&self, t: f64, x: &[f64], v: &[f64]) -> [f64; 2] {
        let raw = if t <= self.t_explo {
            let theta = self.directions[self.segment(t)];
            [
                self.speed * theta.cos() - v[0],
                self.speed * theta.sin() - v[1],
            ]
        } else {
            let dx = self.target[0] - x[0];
            let dy = self.target[1] - x[1];
            let dist = (dx * dx + dy * dy).sqrt();
            if dist == 0.0 {
                [-self.damping * v[0], -self.damping * v[1]]
            } else {
                [
                    self.damping * (self.speed * dx / dist - v[0]),
                    self.damping * (self.speed * dy / dist - v[1]),
                ]
            }
        };
        [
            raw[0].clamp(-self.u_max, self.u_max),
            raw[1].clamp(-self.u_max, self.u_max),
        ]
    }
}

impl ControlLaw for BenchmarkControl {
    fn apply(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let u = self.eval(t, &state[..2], &state[2..4]);
        out.copy_from_slice(&u);
    }
}

/// `theta -> BenchmarkControl` for fixed settings.
#[derive(Clone, Debug)]
pub struct BenchmarkFamily {
    pub settings: ControlSettings,
}

impl ControlFamily for BenchmarkFamily {
    fn param_dim(&self) -> usize {
        self.settings.segments
    }
    fn control(&self, theta: &[f64]) -> Box<dyn ControlLaw> {
        Box::new(BenchmarkControl::new(theta.to_vec(), &self.settings))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    use super::*;
    use crate::sde::integrate_paths;

    fn control(theta: Vec<f64>) -> BenchmarkControl {
        BenchmarkControl::new(theta, &ControlSettings::default())
    }

    #[test]
    fn first_segment_from_rest() {
        let u = control(vec![0.0, FRAC_PI_2]).eval(0.0, &[0.0, 0.0], &[0.0, 0.0]);
        assert!((u[0] - 2.0).abs() < 1e-15);
        assert!(u[1].abs() < 1e-15);
    }

    #[test]
    fn return_phase_at_target_is_pure_damping() {
        let c = control(vec![0.0, 0.0]);
        let u = c.eval(7.0, &[0.0, 0.0], &[0.8, -0.6]);
        assert_eq!(u, [-0.5 * 0.8, 0.5 * 0.6]);
    }

    #[test]
    fn segment_switch_is_half_open() {
        let c = control(vec![0.3, 1.1]);
        let v = [0.2, -0.1];
        // m = 2, t_explo = 6: heading 0 on [0, 3), heading 1 on [3, 6].
        let before = c.eval(3.0 - 1e-9, &[0.0, 0.0], &v);
        let at = c.eval(3.0, &[0.0, 0.0], &v);
        let after = c.eval(3.0 + 1e-9, &[0.0, 0.0], &v);
        let by_hand = |theta: f64| [2.0 * theta.cos() - v[0], 2.0 * theta.sin() - v[1]];
        assert_eq!(before, by_hand(0.3));
        assert_eq!(at, by_hand(1.1));
        assert_eq!(after, by_hand(1.1));
        assert_eq!(c.segment(6.0), 1);
    }

    #[test]
    fn return_phase_heads_to_target() {
        let c = control(vec![0.0, 0.0]);
        let u = c.eval(10.0, &[3.0, 4.0], &[0.0, 0.0]);
        assert!((u[0] - 0.5 * 2.0 * (-0.6)).abs() < 1e-15);
        assert!((u[1] - 0.5 * 2.0 * (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn acceleration_is_clamped() {
        let c = control(vec![0.0, 0.0]);
        let u = c.eval(1.0, &[0.0, 0.0], &[-10.0, 10.0]);
        assert_eq!(u, [4.0, -4.0]);
    }

    #[test]
    fn noise_field_peaks_at_center_and_decays() {
        let bump = NoiseBump::default();
        assert_eq!(bump.amplitude_at(&[5.0, 5.0]), 5.0);
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let r = k as f64 * 0.5;
            let a = bump.amplitude_at(&[5.0 + r * 0.6, 5.0 - r * 0.8]);
            assert!(a <= last);
            last = a;
        }
    }

    #[test]
    fn initial_safe_control_stays_in_box() {
        let system = BenchmarkSystem::default();
        let spec = system.spec(2).unwrap();
        let regions = system.regions();
        let c = control(vec![-FRAC_PI_3, FRAC_PI_3]);
        let batch = integrate_paths(&spec, &c, 200, 500, 7).unwrap();
        let inside = (0..batch.paths())
            .filter(|&p| (0..batch.nodes()).all(|l| (regions.safe)(batch.observed(p, l)) >= 0.0))
            .count();
        assert!(inside as f64 / batch.paths() as f64 > 0.9, "inside {inside}");
    }
}
