use serde::{Deserialize, Serialize};

use super::KernelModel;
use crate::error::{Error, Result};

/// Multipliers of the predictive std in the safety, reset and density confidence bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub beta_s: f64,
    pub beta_r: f64,
    pub beta_p: f64,
}

/// Stand-in for the unobservable `max_i |s_hat_i - s_i|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ErrorProxy {
    /// `N^{-1/2}`, the Monte Carlo rate of the targets.
    InverseSqrtN,
    Fixed { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ConfidenceMode {
    /// Constant multipliers.
    Heuristic { beta_s: f64, beta_r: f64, beta_p: f64 },
    /// `beta = lambda^{-1} N^{-1/2} err + B` with RKHS norm bounds `B` per map.
    Theoretical {
        norm_s: f64,
        norm_r: f64,
        norm_p: f64,
        error: ErrorProxy,
    },
}

impl Default for ConfidenceMode {
    fn default() -> Self {
        ConfidenceMode::Heuristic {
            beta_s: 2.0,
            beta_r: 2.0,
            beta_p: 2.0,
        }
    }
}

impl ConfidenceMode {
    pub fn validate(&self) -> Result<()> {
        let values: Vec<(&str, f64)> = match *self {
            ConfidenceMode::Heuristic { beta_s, beta_r, beta_p } => {
                vec![("beta_s", beta_s), ("beta_r", beta_r), ("beta_p", beta_p)]
            }
            ConfidenceMode::Theoretical {
                norm_s,
                norm_r,
                norm_p,
                error,
            } => {
                let mut v = vec![("norm_s", norm_s), ("norm_r", norm_r), ("norm_p", norm_p)];
                if let ErrorProxy::Fixed { value } = error {
                    v.push(("error.value", value));
                }
                v
            }
        };
        for (name, v) in values {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("confidence.{name}"),
                    format!("must be finite and nonnegative, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Confidence multipliers for the current state of `model`.
pub fn confidence_params(model: &KernelModel, mode: &ConfidenceMode) -> Result<ConfidenceParams> {
    mode.validate()?;
    match *mode {
        ConfidenceMode::Heuristic { beta_s, beta_r, beta_p } => Ok(ConfidenceParams {
            beta_s,
            beta_r,
            beta_p,
        }),
        ConfidenceMode::Theoretical {
            norm_s,
            norm_r,
            norm_p,
            error,
        } => {
            let n = model.len();
            let data_term = if n == 0 {
                0.0
            } else {
                let nf = n as f64;
                let err = match error {
                    ErrorProxy::InverseSqrtN => nf.powf(-0.5),
                    ErrorProxy::Fixed { value } => value,
                };
                err / (model.lambda() * nf.sqrt())
            };
            Ok(ConfidenceParams {
                beta_s: data_term + norm_s,
                beta_r: data_term + norm_r,
                beta_p: data_term + norm_p,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::ControlPoint;
    use crate::kernel::ModelSettings;

    fn model(n: usize) -> KernelModel {
        let mut m = KernelModel::new(ModelSettings::default()).unwrap();
        for i in 0..n {
            m.add_targets(ControlPoint::new(vec![i as f64, 0.0], 0.0, 20.0), 0.5, 0.5)
                .unwrap();
        }
        m
    }

    #[test]
    fn default_is_two() {
        let p = confidence_params(&model(3), &ConfidenceMode::default()).unwrap();
        assert_eq!((p.beta_s, p.beta_r, p.beta_p), (2.0, 2.0, 2.0));
    }

    #[test]
    fn theoretical_bound_is_one_plus_norm() {
        let mode = ConfidenceMode::Theoretical {
            norm_s: 1.7,
            norm_r: 0.4,
            norm_p: 3.0,
            error: ErrorProxy::InverseSqrtN,
        };
        for n in [1, 4, 25] {
            let p = confidence_params(&model(n), &mode).unwrap();
            assert!((p.beta_s - 2.7).abs() < 1e-12);
            assert!((p.beta_r - 1.4).abs() < 1e-12);
            assert!((p.beta_p - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_error_proxy() {
        let mode = ConfidenceMode::Theoretical {
            norm_s: 0.0,
            norm_r: 0.0,
            norm_p: 0.0,
            error: ErrorProxy::Fixed { value: 0.1 },
        };
        // lambda = 1/4, so lambda^{-1} N^{-1/2} = 2.
        let p = confidence_params(&model(4), &mode).unwrap();
        assert!((p.beta_s - 0.2).abs() < 1e-12);
    }

    #[test]
    fn negative_values_rejected() {
        let mode = ConfidenceMode::Heuristic {
            beta_s: -1.0,
            beta_r: 2.0,
            beta_p: 2.0,
        };
        assert!(matches!(confidence_params(&model(0), &mode), Err(Error::Config { .. })));
    }
}
