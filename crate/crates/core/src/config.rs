//! Campaign configuration.
//!
//! The text format is TOML with the sections `[system]`, `[control]`, `[learning]`,
//! `[grid]`, `[evaluate]`, `[predict]`, `[seeds]` and `[output]`. Every key is
//! optional and defaults to the benchmark value. JSON with the same shape is also
//! accepted. Thresholds take a number in `[0, 1]` or the string `"inf"`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::density::ProbabilityEstimator;
use crate::error::{Error, Result};
use crate::explorer::{observation_times, Campaign, CandidateGrid, ControlPoint, SelectionRule, Thresholds};
use crate::kernel::{ConfidenceMode, ModelSettings};
use crate::sde::{BenchmarkFamily, BenchmarkSystem, ControlSettings, TimeGrid};

/// Serde adapter for reals that may be `+inf`, written as the string `"inf"`.
pub mod maybe_inf {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other:?}"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    #[serde(with = "maybe_inf")]
    pub epsilon: f64,
    #[serde(with = "maybe_inf")]
    pub xi: f64,
    pub confidence: ConfidenceMode,
    pub model: ModelSettings,
    /// Density smoothness in the bandwidth rule `R = Q^{1/(n + 2 nu)}`.
    pub kde_nu: f64,
    /// Trajectories per iteration (`Q`).
    pub paths: usize,
    pub estimator: ProbabilityEstimator,
    pub eta: f64,
    pub max_iterations: usize,
    pub selection: SelectionRule,
    /// Parameter vectors of the initial safe set.
    pub gamma0: Vec<Vec<f64>>,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            xi: 0.1,
            confidence: ConfidenceMode::default(),
            model: ModelSettings::default(),
            kde_nu: 2.0,
            paths: 200,
            estimator: ProbabilityEstimator::default(),
            eta: 0.05,
            max_iterations: 1000,
            selection: SelectionRule::default(),
            gamma0: vec![ControlSettings::default_safe_theta()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub theta_lo: Vec<f64>,
    pub theta_hi: Vec<f64>,
    pub theta_counts: Vec<usize>,
    /// Observation times per candidate, spread over `[0, T_max]` on the integration grid.
    pub time_nodes: usize,
    pub radius_growth: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            theta_lo: vec![-PI, -PI],
            theta_hi: vec![PI, PI],
            theta_counts: vec![40, 40],
            time_nodes: 50,
            radius_growth: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub test_controls: usize,
    pub oracle_paths: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            test_controls: 1000,
            oracle_paths: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub theta: Vec<f64>,
    pub t: f64,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub x_counts: Vec<usize>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            theta: ControlSettings::default_safe_theta(),
            t: 8.0,
            x_lo: vec![-10.0, -10.0],
            x_hi: vec![10.0, 10.0],
            x_counts: vec![50, 50],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub run: u64,
    pub oracle: u64,
    pub evaluate: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            run: 0,
            oracle: 1,
            evaluate: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub system: BenchmarkSystem,
    pub control: ControlSettings,
    pub learning: LearningConfig,
    pub grid: GridConfig,
    pub evaluate: EvaluateConfig,
    pub predict: PredictConfig,
    pub seeds: SeedConfig,
    pub output: OutputConfig,
}

fn parse_error(path: Option<&Path>, message: String) -> Error {
    let field = path.map(|p| p.display().to_string()).unwrap_or_else(|| "<config>".into());
    Error::config(field, message)
}

impl CampaignConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| parse_error(None, e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| parse_error(None, e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { field, message } if field == "<config>" => parse_error(Some(path), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form; identical for equal configs in either syntax.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.learning.epsilon, self.learning.xi)
            .map_err(|e| prefix(e, "learning"))
    }

    pub fn validate(&self) -> Result<()> {
        let system = &self.system;
        let m = self.control.segments;
        system.spec(m)?;
        self.control.validate(system.t_max)?;
        self.thresholds()?;
        let l = &self.learning;
        l.confidence.validate().map_err(|e| prefix(e, "learning"))?;
        l.model.validate().map_err(|e| prefix(e, "learning.model"))?;
        if !(l.kde_nu > 1.0) {
            return Err(Error::config("learning.kde_nu", "must exceed half the observed dimension (1)"));
        }
        if l.paths == 0 {
            return Err(Error::config("learning.paths", "must be at least 1"));
        }
        if let ProbabilityEstimator::Density { mc_points: 0 } = l.estimator {
            return Err(Error::config("learning.estimator.mc_points", "must be at least 1"));
        }
        if !(l.eta > 0.0) || !l.eta.is_finite() {
            return Err(Error::config("learning.eta", "must be positive"));
        }
        if l.gamma0.is_empty() {
            return Err(Error::config("learning.gamma0", "the initial safe set must not be empty"));
        }
        if l.gamma0.iter().any(|g| g.len() != m) {
            return Err(Error::config("learning.gamma0", format!("each entry needs {m} angles")));
        }
        let g = &self.grid;
        if g.theta_lo.len() != m || g.theta_hi.len() != m || g.theta_counts.len() != m {
            return Err(Error::config("grid", format!("theta_lo, theta_hi and theta_counts need {m} entries")));
        }
        if g.theta_counts.iter().any(|&c| c < 2) || g.theta_lo.iter().zip(&g.theta_hi).any(|(a, b)| !(b > a)) {
            return Err(Error::config("grid", "each axis needs at least 2 points and theta_hi > theta_lo"));
        }
        if g.time_nodes < 2 {
            return Err(Error::config("grid.time_nodes", "must be at least 2"));
        }
        if !(g.radius_growth > 1.0) {
            return Err(Error::config("grid.radius_growth", "must exceed 1"));
        }
        if self.evaluate.test_controls == 0 || self.evaluate.oracle_paths == 0 {
            return Err(Error::config("evaluate", "test_controls and oracle_paths must be positive"));
        }
        let p = &self.predict;
        if p.theta.len() != m {
            return Err(Error::config("predict.theta", format!("needs {m} angles")));
        }
        if !(0.0..=system.t_max).contains(&p.t) {
            return Err(Error::config("predict.t", format!("must lie in [0, {}]", system.t_max)));
        }
        if p.x_lo.len() != 2 || p.x_hi.len() != 2 || p.x_counts.len() != 2 || p.x_counts.iter().any(|&c| c == 0) {
            return Err(Error::config("predict", "x_lo, x_hi and x_counts need 2 entries, counts positive"));
        }
        Ok(())
    }

    /// The Γ₀ triples: every configured parameter vector at every observation time, horizon `T_max`.
    pub fn gamma0(&self, times: &[f64]) -> Vec<ControlPoint> {
        let t_max = self.system.t_max;
        self.learning
            .gamma0
            .iter()
            .flat_map(|th| times.iter().map(move |&t| ControlPoint::new(th.clone(), t, t_max)))
            .collect()
    }

    pub fn candidate_grid(&self) -> Result<CandidateGrid> {
        let t_max = self.system.t_max;
        let time_grid = TimeGrid::new(t_max, self.control.n_steps)?;
        let times = observation_times(time_grid, self.grid.time_nodes, t_max)?;
        let gamma0 = self.gamma0(&times);
        CandidateGrid::lattice(
            &self.grid.theta_lo,
            &self.grid.theta_hi,
            &self.grid.theta_counts,
            times,
            t_max,
            gamma0,
            self.learning.model.time_scale,
        )
    }

    pub fn family(&self) -> BenchmarkFamily {
        BenchmarkFamily {
            settings: self.control.clone(),
        }
    }

    pub fn campaign(&self) -> Result<Campaign> {
        self.validate()?;
        let l = &self.learning;
        Ok(Campaign {
            spec: self.system.spec(self.control.segments)?,
            family: Arc::new(self.family()),
            regions: self.system.regions(),
            n_steps: self.control.n_steps,
            grid: self.candidate_grid()?,
            model: l.model.clone(),
            confidence: l.confidence,
            thresholds: self.thresholds()?,
            paths: l.paths,
            kde_nu: l.kde_nu,
            estimator: l.estimator,
            eta: l.eta,
            max_iterations: l.max_iterations,
            selection: l.selection,
            radius_growth: self.grid.radius_growth,
            seed: self.seeds.run,
        })
    }
}

fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{section}.{field}"), message),
        other => other,
    }
}
