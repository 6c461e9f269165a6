//! Kernel ridge regression over control-time inputs `(theta, t)`.

mod cholesky;
mod confidence;
mod model;

pub use confidence::{confidence_params, ConfidenceMode, ConfidenceParams, ErrorProxy};
pub use model::{KernelModel, ModelSettings, Prediction};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matérn kernel with half-integer smoothness `nu = p + 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaternKernel {
    pub nu: f64,
    pub length_scale: f64,
    /// `k(z, z)`.
    pub amplitude: f64,
}

impl Default for MaternKernel {
    fn default() -> Self {
        Self {
            nu: 2.5,
            length_scale: 1.0,
            amplitude: 1.0,
        }
    }
}

impl MaternKernel {
    pub fn new(nu: f64, length_scale: f64, amplitude: f64) -> Result<Self> {
        let kernel = Self {
            nu,
            length_scale,
            amplitude,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.nu - 0.5;
        if !(p >= 0.0) || p.fract() != 0.0 || p > 20.0 {
            return Err(Error::config(
                "kernel.nu",
                format!("{} is not a supported half-integer smoothness (1/2, 3/2, ...)", self.nu),
            ));
        }
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return Err(Error::config("kernel.length_scale", "must be positive"));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::config("kernel.amplitude", "must be positive"));
        }
        Ok(())
    }

    /// Kernel value at Euclidean distance `d`.
    pub fn at_distance(&self, d: f64) -> f64 {
        let p = (self.nu - 0.5) as u32;
        let s = (2.0 * self.nu).sqrt() * d / self.length_scale;
        let poly = match p {
            0 => 1.0,
            1 => 1.0 + s,
            2 => 1.0 + s + s * s / 3.0,
            _ => {
                // p!/(2p)! sum_i (p+i)! / (i! (p-i)!) (2s)^(p-i)
                let fact = |k: u32| (1..=k).fold(1.0, |acc, v| acc * v as f64);
                let mut sum = 0.0;
                for i in 0..=p {
                    sum += fact(p + i) / (fact(i) * fact(p - i)) * (2.0 * s).powi((p - i) as i32);
                }
                sum * fact(p) / fact(2 * p)
            }
        };
        self.amplitude * poly * (-s).exp()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.at_distance(d2.sqrt())
    }
}

/// `lambda` as a function of the number of observations `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegularizationPolicy {
    /// `lambda = scale / N`, so the ridge `N lambda` stays fixed at `scale`.
    InverseN { scale: f64 },
    Fixed { lambda: f64 },
}

impl Default for RegularizationPolicy {
    fn default() -> Self {
        RegularizationPolicy::InverseN { scale: 1.0 }
    }
}

impl RegularizationPolicy {
    pub fn validate(&self) -> Result<()> {
        let value = match *self {
            RegularizationPolicy::InverseN { scale } => scale,
            RegularizationPolicy::Fixed { lambda } => lambda,
        };
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::config("regularization", "lambda must be positive"));
        }
        Ok(())
    }

    pub fn lambda(&self, n: usize) -> f64 {
        match *self {
            RegularizationPolicy::InverseN { scale } => scale / n.max(1) as f64,
            RegularizationPolicy::Fixed { lambda } => lambda,
        }
    }

    /// Diagonal shift `N lambda` of the Gram matrix.
    pub fn ridge(&self, n: usize) -> f64 {
        match *self {
            RegularizationPolicy::InverseN { scale } => scale,
            RegularizationPolicy::Fixed { lambda } => lambda * n as f64,
        }
    }

    fn ridge_is_constant(&self) -> bool {
        matches!(self, RegularizationPolicy::InverseN { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_amplitude() {
        let k = MaternKernel::new(2.5, 0.7, 1.9).unwrap();
        assert_eq!(k.eval(&[0.3, 1.0, 2.0], &[0.3, 1.0, 2.0]), 1.9);
    }

    #[test]
    fn exponential_case() {
        let k = MaternKernel::new(0.5, 1.0, 1.0).unwrap();
        assert!((k.at_distance(1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn five_halves_closed_form() {
        let k = MaternKernel::new(2.5, 1.3, 2.0).unwrap();
        for &d in &[0.0, 0.2, 1.0, 3.7] {
            let r = 5f64.sqrt() * d / 1.3;
            let want = 2.0 * (1.0 + r + 5.0 * d * d / (3.0 * 1.3 * 1.3)) * (-r).exp();
            assert!((k.at_distance(d) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn general_order_matches_special_cases() {
        // The generic sum reproduces the hand-coded p <= 2 polynomials.
        for p in 0..=2u32 {
            let nu = p as f64 + 0.5;
            let fact = |k: u32| (1..=k).fold(1.0, |acc, v| acc * v as f64);
            for &d in &[0.1, 0.9, 2.5] {
                let s = (2.0 * nu).sqrt() * d;
                let mut sum = 0.0;
                for i in 0..=p {
                    sum += fact(p + i) / (fact(i) * fact(p - i)) * (2.0 * s).powi((p - i) as i32);
                }
                let generic = sum * fact(p) / fact(2 * p) * (-s).exp();
                let k = MaternKernel::new(nu, 1.0, 1.0).unwrap();
                assert!((k.at_distance(d) - generic).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn decays_monotonically() {
        let k = MaternKernel::default();
        let mut last = k.at_distance(0.0);
        for i in 1..200 {
            let v = k.at_distance(i as f64 * 0.1);
            assert!(v < last && v > 0.0);
            last = v;
        }
        assert!(k.at_distance(100.0) < 1e-90);
    }

    #[test]
    fn gram_matrices_are_positive_semidefinite() {
        use crate::kernel::cholesky::GrowingCholesky;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for nu in [0.5, 1.5, 2.5, 3.5] {
            let k = MaternKernel::new(nu, 0.8, 1.0).unwrap();
            let pts: Vec<[f64; 3]> = (0..25)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random()])
                .collect();
            let n = pts.len();
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] = k.eval(&pts[i], &pts[j]) + if i == j { 1e-9 } else { 0.0 };
                }
            }
            assert!(GrowingCholesky::factor(&a, n).is_ok(), "nu = {nu}");
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(MaternKernel::new(2.0, 1.0, 1.0).is_err());
        assert!(MaternKernel::new(2.5, 0.0, 1.0).is_err());
        assert!(MaternKernel::new(2.5, 1.0, -1.0).is_err());
    }

    #[test]
    fn inverse_n_policy() {
        let p = RegularizationPolicy::default();
        assert_eq!(p.lambda(1), 1.0);
        assert_eq!(p.lambda(2), 0.5);
        assert_eq!(p.ridge(7), 1.0);
        let f = RegularizationPolicy::Fixed { lambda: 0.1 };
        assert!((f.ridge(5) - 0.5).abs() < 1e-15);
    }
}
