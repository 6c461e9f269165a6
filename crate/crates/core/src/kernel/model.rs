use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cholesky::{GrowingCholesky, NotPositive};
use super::{MaternKernel, RegularizationPolicy};
use crate::density::{kde_density, kde_density_tabulated, KdeEstimate, ObservationRecord, RadialTable};
use crate::error::{Error, Result};
use crate::explorer::ControlPoint;

/// Query grids at least this large evaluate the density kernel from a table.
const TABULATE_FROM: usize = 64;

/// Hyperparameters of the collection maps (safety, reset, uncertainty) and the density map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub collect_kernel: MaternKernel,
    pub collect_regularization: RegularizationPolicy,
    pub density_kernel: MaternKernel,
    pub density_regularization: RegularizationPolicy,
    /// Multiplies `t` before it enters the kernel; `1 / T_max` puts time on the scale of the angles.
    pub time_scale: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            collect_kernel: MaternKernel::default(),
            collect_regularization: RegularizationPolicy::default(),
            density_kernel: MaternKernel::default(),
            density_regularization: RegularizationPolicy::default(),
            time_scale: 1.0 / 20.0,
        }
    }
}

impl ModelSettings {
    pub fn validate(&self) -> Result<()> {
        let under = |section: &'static str| {
            move |e: Error| match e {
                Error::Config { field, message } => {
                    let tail = field.split_once('.').map(|(_, t)| t.to_string());
                    let field = match tail {
                        Some(t) => format!("{section}.{t}"),
                        None => section.to_string(),
                    };
                    Error::config(field, message)
                }
                other => other,
            }
        };
        self.collect_kernel.validate().map_err(under("collect_kernel"))?;
        self.density_kernel.validate().map_err(under("density_kernel"))?;
        self.collect_regularization.validate().map_err(under("collect_regularization"))?;
        self.density_regularization.validate().map_err(under("density_regularization"))?;
        if !(self.time_scale > 0.0) || !self.time_scale.is_finite() {
            return Err(Error::config("time_scale", "must be positive"));
        }
        Ok(())
    }

    /// Kernel input for `(theta, t)`.
    pub fn features(&self, theta: &[f64], t: f64) -> Vec<f64> {
        let mut z = Vec::with_capacity(theta.len() + 1);
        z.extend_from_slice(theta);
        z.push(t * self.time_scale);
        z
    }
}

/// Factor of `K + N lambda I` for one kernel.
#[derive(Clone, Debug)]
struct RidgeMap {
    kernel: MaternKernel,
    policy: RegularizationPolicy,
    factor: GrowingCholesky,
    jitter: f64,
}

impl RidgeMap {
    fn new(kernel: MaternKernel, policy: RegularizationPolicy) -> Self {
        Self {
            kernel,
            policy,
            factor: GrowingCholesky::default(),
            jitter: 0.0,
        }
    }

    fn diag(&self, n: usize) -> f64 {
        self.kernel.amplitude + self.policy.ridge(n) + self.jitter
    }

    fn gram(&self, inputs: &[Vec<f64>]) -> Vec<f64> {
        let n = inputs.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let v = self.kernel.eval(&inputs[i], &inputs[j]);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
            a[i * n + i] = self.kernel.amplitude;
        }
        a
    }

    fn try_factor(&self, inputs: &[Vec<f64>]) -> std::result::Result<GrowingCholesky, NotPositive> {
        let n = inputs.len();
        let mut a = self.gram(inputs);
        let d = self.diag(n) - self.kernel.amplitude;
        for i in 0..n {
            a[i * n + i] += d;
        }
        GrowingCholesky::factor(&a, n)
    }

    /// Full factorization, retrying once with diagonal jitter.
    fn refit(&mut self, inputs: &[Vec<f64>]) -> Result<()> {
        self.jitter = 0.0;
        match self.try_factor(inputs) {
            Ok(f) => {
                self.factor = f;
                Ok(())
            }
            Err(_) => {
                self.jitter = 1e-10 * self.kernel.amplitude;
                log::warn!("kernel matrix not positive definite; retrying with jitter {:e}", self.jitter);
                let f = self.try_factor(inputs).map_err(|e| Error::Factorization {
                    row: e.row,
                    pivot: e.pivot,
                })?;
                self.factor = f;
                Ok(())
            }
        }
    }

    /// Brings the factor up to date after `inputs` gained one element at the end.
    fn extend(&mut self, inputs: &[Vec<f64>]) -> Result<()> {
        let n = inputs.len();
        if !self.policy.ridge_is_constant() || self.factor.len() + 1 != n {
            return self.refit(inputs);
        }
        let z = &inputs[n - 1];
        let cross: Vec<f64> = inputs[..n - 1].iter().map(|x| self.kernel.eval(x, z)).collect();
        if self.factor.push(&cross, self.diag(n)).is_err() {
            return self.refit(inputs);
        }
        Ok(())
    }

    fn kvec(&self, inputs: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        inputs.iter().map(|x| self.kernel.eval(x, z)).collect()
    }

    /// `L^{-1} k(z)`.
    fn whiten(&self, inputs: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        let mut v = self.kvec(inputs, z);
        self.factor.forward(&mut v);
        v
    }
}

/// Point prediction of both collection maps plus the predictive standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub safety: f64,
    pub reset: f64,
    pub std: f64,
}

/// Kernel ridge regressors for safety, reset and density over `(theta, t)`.
#[derive(Clone, Debug)]
pub struct KernelModel {
    settings: ModelSettings,
    points: Vec<ControlPoint>,
    inputs: Vec<Vec<f64>>,
    s_targets: Vec<f64>,
    r_targets: Vec<f64>,
    kdes: Vec<Option<KdeEstimate>>,
    /// Predictive std at each input just before it was added.
    prior_std: Vec<f64>,
    collect: RidgeMap,
    /// `None` when the density map shares the collection factor.
    density: Option<RidgeMap>,
    ws: Vec<f64>,
    wr: Vec<f64>,
    fitted: bool,
}

impl KernelModel {
    /// Empty model; with no data it already answers prior queries.
    pub fn new(settings: ModelSettings) -> Result<Self> {
        settings.validate()?;
        let collect = RidgeMap::new(settings.collect_kernel, settings.collect_regularization);
        let density = if settings.density_kernel == settings.collect_kernel
            && settings.density_regularization == settings.collect_regularization
        {
            None
        } else {
            Some(RidgeMap::new(settings.density_kernel, settings.density_regularization))
        };
        Ok(Self {
            settings,
            points: Vec::new(),
            inputs: Vec::new(),
            s_targets: Vec::new(),
            r_targets: Vec::new(),
            kdes: Vec::new(),
            prior_std: Vec::new(),
            collect,
            density,
            ws: Vec::new(),
            wr: Vec::new(),
            fitted: true,
        })
    }

    /// Model holding `records` that must be [`fit`](Self::fit) before use. `prior_std`
    /// restores the information-gain history; when absent it is recomputed by replay.
    pub fn from_records(
        settings: ModelSettings,
        records: Vec<(ControlPoint, f64, f64, Option<KdeEstimate>)>,
        prior_std: Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut model = Self::new(settings)?;
        if let Some(p) = &prior_std {
            if p.len() != records.len() {
                return Err(Error::Argument("prior_std length differs from record count".into()));
            }
        }
        for (point, s, r, kde) in records {
            let z = model.settings.features(&point.theta, point.t);
            model.points.push(point);
            model.inputs.push(z);
            model.s_targets.push(s);
            model.r_targets.push(r);
            model.kdes.push(kde);
        }
        model.fitted = model.inputs.is_empty();
        match prior_std {
            Some(p) => model.prior_std = p,
            None => {
                let mut replay = Self::new(model.settings.clone())?;
                for i in 0..model.len() {
                    replay.push(model.points[i].clone(), model.s_targets[i], model.r_targets[i], None)?;
                }
                model.prior_std = replay.prior_std;
            }
        }
        Ok(model)
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }
    pub fn len(&self) -> usize {
        self.inputs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
    pub fn is_fitted(&self) -> bool {
        self.fitted
    }
    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }
    pub fn s_targets(&self) -> &[f64] {
        &self.s_targets
    }
    pub fn r_targets(&self) -> &[f64] {
        &self.r_targets
    }
    pub fn kdes(&self) -> &[Option<KdeEstimate>] {
        &self.kdes
    }
    pub fn prior_std(&self) -> &[f64] {
        &self.prior_std
    }
    /// `k(z, z)` of the collection kernel.
    pub fn kappa0(&self) -> f64 {
        self.settings.collect_kernel.amplitude
    }
    /// Current `lambda` of the collection maps.
    pub fn lambda(&self) -> f64 {
        self.settings.collect_regularization.lambda(self.len())
    }
    /// Current `N lambda` of the collection maps.
    pub fn ridge(&self) -> f64 {
        self.settings.collect_regularization.ridge(self.len())
    }
    /// Diagonal jitter in use by the collection factor (zero unless the fallback fired).
    pub fn jitter(&self) -> f64 {
        self.collect.jitter
    }

    /// Collection-kernel Gram matrix `K`, row-major.
    pub fn gram_matrix(&self) -> Vec<f64> {
        self.collect.gram(&self.inputs)
    }

    /// `k(theta, t)` against every training input under the collection kernel.
    pub fn kernel_vector(&self, theta: &[f64], t: f64) -> Vec<f64> {
        self.collect.kvec(&self.inputs, &self.settings.features(theta, t))
    }

    /// Factorizes `K + N lambda I` from scratch.
    pub fn fit(&mut self) -> Result<()> {
        self.collect.refit(&self.inputs)?;
        if let Some(d) = &mut self.density {
            d.refit(&self.inputs)?;
        }
        self.rewhiten();
        self.fitted = true;
        Ok(())
    }

    fn rewhiten(&mut self) {
        self.ws = self.s_targets.clone();
        self.collect.factor.forward(&mut self.ws);
        self.wr = self.r_targets.clone();
        self.collect.factor.forward(&mut self.wr);
    }

    /// Appends one observation and updates the factorization.
    pub fn add_point(&mut self, obs: ObservationRecord) -> Result<()> {
        self.push(obs.point, obs.s_hat, obs.r_hat, Some(obs.kde))
    }

    /// Appends scalar targets without a density record.
    pub fn add_targets(&mut self, point: ControlPoint, s_hat: f64, r_hat: f64) -> Result<()> {
        self.push(point, s_hat, r_hat, None)
    }

    fn push(&mut self, point: ControlPoint, s: f64, r: f64, kde: Option<KdeEstimate>) -> Result<()> {
        if !self.fitted {
            return Err(Error::Unfitted);
        }
        let z = self.settings.features(&point.theta, point.t);
        let prior = self.std_at(&z)?;
        self.points.push(point);
        self.inputs.push(z);
        self.s_targets.push(s);
        self.r_targets.push(r);
        self.kdes.push(kde);
        self.prior_std.push(prior);
        let updated = self.collect.extend(&self.inputs).and_then(|_| match &mut self.density {
            Some(d) => d.extend(&self.inputs),
            None => Ok(()),
        });
        if let Err(e) = updated {
            self.fitted = false;
            return Err(e);
        }
        self.rewhiten();
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.fitted {
            Ok(())
        } else {
            Err(Error::Unfitted)
        }
    }

    fn variance_from(&self, v: &[f64]) -> Result<f64> {
        let var = self.kappa0() - v.iter().map(|x| x * x).sum::<f64>();
        if var < -1e-10 {
            return Err(Error::NegativeVariance { variance: var });
        }
        Ok(var.max(0.0))
    }

    fn std_at(&self, z: &[f64]) -> Result<f64> {
        let v = self.collect.whiten(&self.inputs, z);
        Ok(self.variance_from(&v)?.sqrt())
    }

    /// Safety mean, reset mean and predictive std from one triangular solve.
    pub fn predict(&self, theta: &[f64], t: f64) -> Result<Prediction> {
        self.check()?;
        let v = self.collect.whiten(&self.inputs, &self.settings.features(theta, t));
        Ok(Prediction {
            safety: dot(&self.ws, &v),
            reset: dot(&self.wr, &v),
            std: self.variance_from(&v)?.sqrt(),
        })
    }

    pub fn predict_safety(&self, theta: &[f64], t: f64) -> Result<f64> {
        Ok(self.predict(theta, t)?.safety)
    }

    pub fn predict_reset(&self, theta: &[f64], t: f64) -> Result<f64> {
        Ok(self.predict(theta, t)?.reset)
    }

    pub fn predictive_std(&self, theta: &[f64], t: f64) -> Result<f64> {
        Ok(self.predict(theta, t)?.std)
    }

    /// Dual coefficients `(K + N lambda I)^{-1} S` of the safety map.
    pub fn safety_coefficients(&self) -> Result<Vec<f64>> {
        self.check()?;
        let mut a = self.ws.clone();
        self.collect.factor.backward(&mut a);
        Ok(a)
    }

    /// Dual coefficients of the reset map.
    pub fn reset_coefficients(&self) -> Result<Vec<f64>> {
        self.check()?;
        let mut a = self.wr.clone();
        self.collect.factor.backward(&mut a);
        Ok(a)
    }

    /// `alpha(theta, t) = (K + N lambda I)^{-1} k(theta, t)` for the density map.
    pub fn density_weights(&self, theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check()?;
        let map = self.density.as_ref().unwrap_or(&self.collect);
        let mut a = map.whiten(&self.inputs, &self.settings.features(theta, t));
        map.factor.backward(&mut a);
        Ok(a)
    }

    /// Predicted state density at `x`; raw, may be negative.
    pub fn predict_density(&self, theta: &[f64], t: f64, x: &[f64]) -> Result<f64> {
        let alpha = self.density_weights(theta, t)?;
        Ok(self.mix_density(&alpha, x))
    }

    /// Density at every point of `xs` (flattened, `dim` coordinates each), reusing one weight solve.
    pub fn predict_density_grid(&self, theta: &[f64], t: f64, xs: &[f64], dim: usize) -> Result<Vec<f64>> {
        if dim == 0 || xs.len() % dim != 0 {
            return Err(Error::Argument("query grid is not a multiple of the state dimension".into()));
        }
        let alpha = self.density_weights(theta, t)?;
        if xs.len() / dim < TABULATE_FROM {
            return Ok(xs.par_chunks(dim).map(|x| self.mix_density(&alpha, x)).collect());
        }
        let tables = self.radial_tables(&alpha, xs, dim);
        Ok(xs
            .par_chunks(dim)
            .map(|x| {
                alpha
                    .iter()
                    .zip(&self.kdes)
                    .filter(|(a, _)| a.abs() > 1e-14)
                    .filter_map(|(a, kde)| {
                        let kde = kde.as_ref()?;
                        let table = tables.iter().find(|t| t.bandwidth() == kde.bandwidth() && kde.dim() == dim);
                        Some(a * match table {
                            Some(t) => kde_density_tabulated(kde, t, x),
                            None => kde_density(kde, x),
                        })
                    })
                    .sum()
            })
            .collect())
    }

    /// One table per bandwidth among the weighted estimates, covering every query-sample distance.
    fn radial_tables(&self, alpha: &[f64], xs: &[f64], dim: usize) -> Vec<RadialTable> {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut widen = |p: &[f64]| {
            for d in 0..dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        };
        let mut bandwidths: Vec<f64> = Vec::new();
        for (a, kde) in alpha.iter().zip(&self.kdes) {
            let Some(kde) = kde else { continue };
            if a.abs() <= 1e-14 || kde.dim() != dim {
                continue;
            }
            kde.samples().chunks_exact(dim).for_each(&mut widen);
            if !bandwidths.contains(&kde.bandwidth()) {
                bandwidths.push(kde.bandwidth());
            }
        }
        xs.chunks_exact(dim).for_each(&mut widen);
        let r_max = lo.iter().zip(&hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt();
        bandwidths.into_iter().map(|b| RadialTable::new(dim, b, r_max)).collect()
    }

    fn mix_density(&self, alpha: &[f64], x: &[f64]) -> f64 {
        alpha
            .iter()
            .zip(&self.kdes)
            .filter(|(a, _)| a.abs() > 1e-14)
            .filter_map(|(a, kde)| kde.as_ref().map(|k| a * kde_density(k, x)))
            .sum()
    }

    /// Cumulative `(1/2) sum_i log(1 + sigma_i^2 / (lambda_i N_i))` after each addition.
    pub fn information_gain_trace(&self) -> Vec<f64> {
        let policy = self.settings.collect_regularization;
        let mut total = 0.0;
        self.prior_std
            .iter()
            .enumerate()
            .map(|(i, s)| {
                total += 0.5 * (1.0 + s * s / policy.ridge(i + 1)).ln();
                total
            })
            .collect()
    }

    pub fn information_gain(&self) -> f64 {
        self.information_gain_trace().last().copied().unwrap_or(0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
