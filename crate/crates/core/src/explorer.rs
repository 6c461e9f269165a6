//! Safe exploration: lower-confidence feasibility, region-growing candidate selection,
//! the campaign loop and the certified set.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{bandwidth_rule, ObservationRecord, ProbabilityEstimator};
use crate::error::{Error, Result};
use crate::kernel::{confidence_params, ConfidenceMode, ConfidenceParams, KernelModel, ModelSettings};
use crate::sde::{derive_seed, integrate_paths_until, ControlFamily, RegionSpec, SystemSpec, TimeGrid};

/// Tolerance used when comparing times and angles of control points.
const POINT_TOL: f64 = 1e-9;

/// Control parameters `theta`, observation time `t` and trajectory horizon `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub theta: Vec<f64>,
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl ControlPoint {
    pub fn new(theta: Vec<f64>, t: f64, horizon: f64) -> Self {
        Self { theta, t, horizon }
    }

    pub fn validate(&self, t_max: f64) -> Result<()> {
        if !(0.0 <= self.t && self.t <= self.horizon + POINT_TOL && self.horizon <= t_max + POINT_TOL) {
            return Err(Error::Argument(format!(
                "control point needs 0 <= t <= T <= {t_max}, got t = {}, T = {}",
                self.t, self.horizon
            )));
        }
        Ok(())
    }

    pub fn approx_eq(&self, other: &ControlPoint) -> bool {
        self.theta.len() == other.theta.len()
            && self.theta.iter().zip(&other.theta).all(|(a, b)| (a - b).abs() <= POINT_TOL)
            && (self.t - other.t).abs() <= POINT_TOL
            && (self.horizon - other.horizon).abs() <= POINT_TOL
    }
}

/// Safety threshold `epsilon` and reset threshold `xi`; either may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub epsilon: f64,
    pub xi: f64,
}

impl Thresholds {
    pub fn new(epsilon: f64, xi: f64) -> Result<Self> {
        for (name, v) in [("epsilon", epsilon), ("xi", xi)] {
            if !(v == f64::INFINITY || (0.0..=1.0).contains(&v)) {
                return Err(Error::config(name, format!("must lie in [0, 1] or be inf, got {v}")));
            }
        }
        Ok(Self { epsilon, xi })
    }

    pub fn unconstrained(&self) -> bool {
        self.epsilon.is_infinite() && self.xi.is_infinite()
    }
}

/// Observation times: `nodes` points of `grid` spread evenly over `[0, horizon]`.
pub fn observation_times(grid: TimeGrid, nodes: usize, horizon: f64) -> Result<Vec<f64>> {
    if nodes < 2 {
        return Err(Error::config("learning.time_nodes", "need at least 2 observation times"));
    }
    let last = grid.steps_to(horizon);
    let mut idx: Vec<usize> = (0..nodes)
        .map(|j| ((j * last) as f64 / (nodes - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    Ok(idx.into_iter().map(|l| grid.time(l)).collect())
}

/// Finite candidate set: every parameter vector crossed with every observation time,
/// all at one horizon. Scan order is parameter-major, time-minor.
#[derive(Clone, Debug)]
pub struct CandidateGrid {
    thetas: Vec<Vec<f64>>,
    times: Vec<f64>,
    horizon: f64,
    gamma0: Vec<ControlPoint>,
    gamma0_mask: Vec<bool>,
    time_scale: f64,
    cell_diagonal: f64,
}

impl CandidateGrid {
    /// Builds the grid from explicit parameter vectors. `gamma0` must be non-empty;
    /// any of its parameter vectors missing from `thetas` are appended.
    pub fn new(
        mut thetas: Vec<Vec<f64>>,
        times: Vec<f64>,
        horizon: f64,
        gamma0: Vec<ControlPoint>,
        time_scale: f64,
        cell_diagonal: f64,
    ) -> Result<Self> {
        if gamma0.is_empty() {
            return Err(Error::config("gamma0", "the initial safe set must not be empty"));
        }
        if times.is_empty() || thetas.is_empty() {
            return Err(Error::config("grid", "candidate grid must not be empty"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("grid.times", "observation times must increase"));
        }
        if !(cell_diagonal > 0.0) {
            return Err(Error::config("grid.radius", "initial radius must be positive"));
        }
        let dim = thetas[0].len();
        for g in &gamma0 {
            if g.theta.len() != dim {
                return Err(Error::config("gamma0", "parameter dimension differs from the grid"));
            }
            let known = thetas
                .iter()
                .any(|th| th.iter().zip(&g.theta).all(|(a, b)| (a - b).abs() <= POINT_TOL));
            if !known {
                thetas.push(g.theta.clone());
            }
        }
        let mut grid = Self {
            thetas,
            times,
            horizon,
            gamma0,
            gamma0_mask: Vec::new(),
            time_scale,
            cell_diagonal,
        };
        grid.gamma0_mask = (0..grid.len())
            .map(|c| {
                let p = grid.candidate(c);
                grid.gamma0.iter().any(|g| g.approx_eq(&p))
            })
            .collect();
        Ok(grid)
    }

    /// Regular lattice with `counts[d]` points over `[lo[d], hi[d]]` (ends included).
    /// The initial radius is one lattice cell diagonal in the kernel metric.
    pub fn lattice(
        lo: &[f64],
        hi: &[f64],
        counts: &[usize],
        times: Vec<f64>,
        horizon: f64,
        gamma0: Vec<ControlPoint>,
        time_scale: f64,
    ) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
            return Err(Error::config("grid", "lattice bounds and counts must share one dimension"));
        }
        if counts.iter().any(|&c| c < 2) || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(Error::config("grid", "each lattice axis needs at least 2 points and hi > lo"));
        }
        let steps: Vec<f64> = (0..lo.len()).map(|d| (hi[d] - lo[d]) / (counts[d] - 1) as f64).collect();
        let total: usize = counts.iter().product();
        let mut thetas = Vec::with_capacity(total);
        for mut flat in 0..total {
            let mut th = vec![0.0; lo.len()];
            for d in (0..lo.len()).rev() {
                th[d] = lo[d] + (flat % counts[d]) as f64 * steps[d];
                flat /= counts[d];
            }
            thetas.push(th);
        }
        let dt = if times.len() > 1 {
            (times[1] - times[0]) * time_scale
        } else {
            0.0
        };
        let diag = (steps.iter().map(|s| s * s).sum::<f64>() + dt * dt).sqrt();
        Self::new(thetas, times, horizon, gamma0, time_scale, diag)
    }

    pub fn len(&self) -> usize {
        self.thetas.len() * self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn gamma0(&self) -> &[ControlPoint] {
        &self.gamma0
    }
    pub fn cell_diagonal(&self) -> f64 {
        self.cell_diagonal
    }

    pub fn theta_index(&self, c: usize) -> usize {
        c / self.times.len()
    }

    pub fn candidate(&self, c: usize) -> ControlPoint {
        let nt = self.times.len();
        ControlPoint::new(self.thetas[c / nt].clone(), self.times[c % nt], self.horizon)
    }

    pub fn in_gamma0(&self, point: &ControlPoint) -> bool {
        self.gamma0.iter().any(|g| g.approx_eq(point))
    }

    fn candidate_in_gamma0(&self, c: usize) -> bool {
        self.gamma0_mask[c]
    }

    /// Distance between candidate `c` and `point` in the `(theta, t * time_scale)` metric.
    pub fn distance(&self, c: usize, point: &ControlPoint) -> f64 {
        let nt = self.times.len();
        let th = &self.thetas[c / nt];
        let dt = (self.times[c % nt] - point.t) * self.time_scale;
        (th.iter().zip(&point.theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + dt * dt).sqrt()
    }

    /// Diagonal of the bounding box of all candidates.
    pub fn diameter(&self) -> f64 {
        let dim = self.thetas[0].len();
        let mut span = 0.0;
        for d in 0..dim {
            let (lo, hi) = self
                .thetas
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), th| (l.min(th[d]), h.max(th[d])));
            span += (hi - lo) * (hi - lo);
        }
        let dt = (self.times[self.times.len() - 1] - self.times[0]) * self.time_scale;
        (span + dt * dt).sqrt()
    }
}

/// `min over grid times t <= T of s_hat(theta, t) - beta_s sigma(theta, t)`.
pub fn lcb_safety(model: &KernelModel, theta: &[f64], horizon: f64, beta_s: f64, times: &[f64]) -> Result<f64> {
    let mut lcb = f64::INFINITY;
    for &t in times.iter().filter(|&&t| t <= horizon + POINT_TOL) {
        let p = model.predict(theta, t)?;
        lcb = lcb.min(p.safety - beta_s * p.std);
    }
    if lcb == f64::INFINITY {
        return Err(Error::config("grid.times", format!("no observation time in [0, {horizon}]")));
    }
    Ok(lcb)
}

/// `r_hat(theta, T) - beta_r sigma(theta, T)`.
pub fn lcb_reset(model: &KernelModel, theta: &[f64], horizon: f64, beta_r: f64) -> Result<f64> {
    let p = model.predict(theta, horizon)?;
    Ok(p.reset - beta_r * p.std)
}

/// Safety check over `times` with early exit once the bound drops below `floor`.
fn safety_clears(model: &KernelModel, theta: &[f64], horizon: f64, beta_s: f64, times: &[f64], floor: f64) -> Result<bool> {
    for &t in times.iter().filter(|&&t| t <= horizon + POINT_TOL) {
        let p = model.predict(theta, t)?;
        if p.safety - beta_s * p.std < floor {
            return Ok(false);
        }
    }
    Ok(true)
}

fn theta_feasible(
    model: &KernelModel,
    theta: &[f64],
    horizon: f64,
    thresholds: Thresholds,
    params: ConfidenceParams,
    times: &[f64],
) -> Result<bool> {
    if thresholds.unconstrained() {
        return Ok(true);
    }
    if lcb_reset(model, theta, horizon, params.beta_r)? < 1.0 - thresholds.xi {
        return Ok(false);
    }
    if thresholds.epsilon.is_infinite() {
        return Ok(true);
    }
    safety_clears(model, theta, horizon, params.beta_s, times, 1.0 - thresholds.epsilon)
}

/// Membership of `candidate` in the safe-resettable feasible set.
pub fn is_feasible(
    model: &KernelModel,
    candidate: &ControlPoint,
    thresholds: Thresholds,
    params: ConfidenceParams,
    grid: &CandidateGrid,
) -> Result<bool> {
    if grid.in_gamma0(candidate) || thresholds.unconstrained() {
        return Ok(true);
    }
    if candidate.t > candidate.horizon + POINT_TOL {
        return Ok(false);
    }
    let s = lcb_safety(model, &candidate.theta, candidate.horizon, params.beta_s, grid.times())?;
    let r = lcb_reset(model, &candidate.theta, candidate.horizon, params.beta_r)?;
    Ok(s >= 1.0 - thresholds.epsilon && r >= 1.0 - thresholds.xi)
}

/// Every feasible grid candidate, in scan order.
pub fn certify_set(
    model: &KernelModel,
    grid: &CandidateGrid,
    thresholds: Thresholds,
    params: ConfidenceParams,
) -> Result<Vec<ControlPoint>> {
    let nt = grid.times.len();
    let per_theta: Vec<bool> = grid
        .thetas
        .par_iter()
        .map(|th| theta_feasible(model, th, grid.horizon, thresholds, params, &grid.times))
        .collect::<Result<_>>()?;
    Ok((0..grid.len())
        .filter(|&c| per_theta[c / nt] || grid.candidate_in_gamma0(c))
        .map(|c| grid.candidate(c))
        .collect())
}

/// How the next candidate is chosen among feasible points with `sigma > eta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// First qualifying candidate in scan order inside a growing search radius.
    #[default]
    FirstQualifying,
    /// Largest `sigma` over the whole feasible grid.
    GlobalArgmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopReason {
    /// No feasible candidate has `sigma > eta`.
    StoppingRule,
    IterationCap,
    Aborted { message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub point: ControlPoint,
    pub candidate: usize,
    pub sigma: f64,
}

/// Bookkeeping of the region-growing search: selected set, excluded set and radius.
#[derive(Clone, Debug)]
pub struct ExplorerState {
    pub iteration: usize,
    pub selected: Vec<Selection>,
    pub radius: f64,
    /// Factor applied to the radius each time the search region is exhausted.
    pub growth: f64,
    pub stopped: Option<StopReason>,
    excluded: Vec<bool>,
    excluded_count: usize,
    min_dist: Vec<f64>,
}

impl ExplorerState {
    pub fn new(grid: &CandidateGrid) -> Self {
        let min_dist = (0..grid.len())
            .into_par_iter()
            .map(|c| grid.gamma0.iter().map(|g| grid.distance(c, g)).fold(f64::INFINITY, f64::min))
            .collect();
        Self {
            iteration: 0,
            selected: Vec::new(),
            radius: grid.cell_diagonal,
            growth: 2.0,
            stopped: None,
            excluded: vec![false; grid.len()],
            excluded_count: 0,
            min_dist,
        }
    }

    pub fn is_excluded(&self, c: usize) -> bool {
        self.excluded[c]
    }
    pub fn excluded_count(&self) -> usize {
        self.excluded_count
    }

    fn exclude(&mut self, c: usize) {
        if !self.excluded[c] {
            self.excluded[c] = true;
            self.excluded_count += 1;
        }
    }

    fn anchor(&mut self, grid: &CandidateGrid, point: &ControlPoint) {
        self.min_dist
            .par_iter_mut()
            .enumerate()
            .for_each(|(c, d)| *d = d.min(grid.distance(c, point)));
    }
}

/// One step of the search: returns the next candidate, or `None` (and marks the state
/// stopped) when no feasible candidate has `sigma > eta`.
pub fn select_next(
    model: &KernelModel,
    grid: &CandidateGrid,
    state: &mut ExplorerState,
    eta: f64,
    thresholds: Thresholds,
    params: ConfidenceParams,
    rule: SelectionRule,
) -> Result<Option<Selection>> {
    let nt = grid.times.len();
    let mut feasible: Vec<Option<bool>> = vec![None; grid.thetas.len()];
    let check = |c: usize, feasible: &mut Vec<Option<bool>>| -> Result<bool> {
        if grid.candidate_in_gamma0(c) {
            return Ok(true);
        }
        let i = c / nt;
        if feasible[i].is_none() {
            feasible[i] = Some(theta_feasible(model, &grid.thetas[i], grid.horizon, thresholds, params, &grid.times)?);
        }
        Ok(feasible[i].unwrap())
    };

    let found = match rule {
        SelectionRule::FirstQualifying => {
            let diameter = grid.diameter();
            loop {
                let mut hit = None;
                for c in 0..grid.len() {
                    if state.excluded[c] || state.min_dist[c] > state.radius + POINT_TOL {
                        continue;
                    }
                    if !check(c, &mut feasible)? {
                        continue;
                    }
                    let p = grid.candidate(c);
                    let sigma = model.predictive_std(&p.theta, p.t)?;
                    if sigma > eta {
                        hit = Some(Selection { point: p, candidate: c, sigma });
                        break;
                    }
                    state.exclude(c);
                }
                if hit.is_some() || state.radius >= diameter {
                    break hit;
                }
                state.radius *= state.growth;
            }
        }
        SelectionRule::GlobalArgmax => {
            let per_theta: Vec<bool> = grid
                .thetas
                .par_iter()
                .map(|th| theta_feasible(model, th, grid.horizon, thresholds, params, &grid.times))
                .collect::<Result<_>>()?;
            let sigmas: Vec<Option<f64>> = (0..grid.len())
                .into_par_iter()
                .map(|c| {
                    if state.excluded[c] || !(per_theta[c / nt] || grid.candidate_in_gamma0(c)) {
                        return Ok(None);
                    }
                    let p = grid.candidate(c);
                    model.predictive_std(&p.theta, p.t).map(Some)
                })
                .collect::<Result<_>>()?;
            let mut best: Option<(usize, f64)> = None;
            for (c, s) in sigmas.iter().enumerate() {
                let Some(s) = *s else { continue };
                if s <= eta {
                    state.exclude(c);
                } else if best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
            best.map(|(c, sigma)| Selection {
                point: grid.candidate(c),
                candidate: c,
                sigma,
            })
        }
    };

    match &found {
        Some(sel) => {
            state.anchor(grid, &sel.point);
            state.selected.push(sel.clone());
        }
        None => state.stopped = Some(StopReason::StoppingRule),
    }
    Ok(found)
}

/// Everything one exploration run needs.
#[derive(Clone)]
pub struct Campaign {
    pub spec: SystemSpec,
    pub family: Arc<dyn ControlFamily>,
    pub regions: RegionSpec,
    pub n_steps: usize,
    pub grid: CandidateGrid,
    pub model: ModelSettings,
    pub confidence: ConfidenceMode,
    pub thresholds: Thresholds,
    /// Paths simulated per iteration.
    pub paths: usize,
    /// Density smoothness used by the bandwidth rule.
    pub kde_nu: f64,
    pub estimator: ProbabilityEstimator,
    pub eta: f64,
    pub max_iterations: usize,
    pub selection: SelectionRule,
    pub radius_growth: f64,
    pub seed: u64,
}

/// Log entry of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub point: ControlPoint,
    /// Predictive std at the point when it was selected.
    pub sigma: f64,
    pub s_hat: f64,
    pub r_hat: f64,
    pub lcb_safety: f64,
    pub lcb_reset: f64,
    /// Feasibility re-checked from scratch against the model that made the selection.
    pub feasible: bool,
    pub beta_s: f64,
    pub beta_r: f64,
    /// Cumulative information gain after adding the point.
    pub information_gain: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub select_seconds: f64,
    pub simulate_seconds: f64,
    pub update_seconds: f64,
    pub certify_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
    pub certified: Vec<ControlPoint>,
    pub final_radius: f64,
    pub excluded: usize,
    pub bandwidth: f64,
    pub timing: Timing,
}

/// Runs the exploration loop. Errors inside the loop end the run early with
/// [`StopReason::Aborted`]; the returned report and model cover the completed iterations.
pub fn explore(campaign: &Campaign) -> Result<(CampaignReport, KernelModel)> {
    let start = Instant::now();
    let mut model = KernelModel::new(campaign.model.clone())?;
    campaign.confidence.validate()?;
    if !(campaign.eta > 0.0) {
        return Err(Error::config("learning.eta", "must be positive"));
    }
    let bandwidth = bandwidth_rule(campaign.paths, campaign.spec.observed_dim(), campaign.kde_nu)?;
    if !(campaign.radius_growth > 1.0) {
        return Err(Error::config("grid.radius_growth", "must exceed 1"));
    }
    let mut state = ExplorerState::new(&campaign.grid);
    state.growth = campaign.radius_growth;
    let mut timing = Timing::default();
    let mut iterations = Vec::new();

    let stop = loop {
        if state.iteration >= campaign.max_iterations {
            break StopReason::IterationCap;
        }
        match step(campaign, &mut model, &mut state, bandwidth, &mut timing) {
            Ok(Some(record)) => iterations.push(record),
            Ok(None) => break StopReason::StoppingRule,
            Err(e) => {
                log::error!("iteration {} failed: {e}", state.iteration);
                break StopReason::Aborted { message: e.to_string() };
            }
        }
        state.iteration += 1;
    };
    state.stopped = Some(stop.clone());

    let t = Instant::now();
    let certified = if model.is_fitted() {
        let params = confidence_params(&model, &campaign.confidence)?;
        certify_set(&model, &campaign.grid, campaign.thresholds, params)?
    } else {
        Vec::new()
    };
    timing.certify_seconds = t.elapsed().as_secs_f64();
    timing.total_seconds = start.elapsed().as_secs_f64();
    Ok((
        CampaignReport {
            iterations,
            stop,
            certified,
            final_radius: state.radius,
            excluded: state.excluded_count,
            bandwidth,
            timing,
        },
        model,
    ))
}

fn step(
    campaign: &Campaign,
    model: &mut KernelModel,
    state: &mut ExplorerState,
    bandwidth: f64,
    timing: &mut Timing,
) -> Result<Option<IterationRecord>> {
    let t0 = Instant::now();
    let params = confidence_params(model, &campaign.confidence)?;
    let Some(sel) = select_next(
        model,
        &campaign.grid,
        state,
        campaign.eta,
        campaign.thresholds,
        params,
        campaign.selection,
    )?
    else {
        return Ok(None);
    };
    let point = sel.point.clone();
    let feasible = is_feasible(model, &point, campaign.thresholds, params, &campaign.grid)?;
    let lcb_s = lcb_safety(model, &point.theta, point.horizon, params.beta_s, campaign.grid.times())?;
    let lcb_r = lcb_reset(model, &point.theta, point.horizon, params.beta_r)?;
    timing.select_seconds += t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let seed = derive_seed(campaign.seed, state.iteration as u64);
    let control = campaign.family.control(&point.theta);
    let mut batch = integrate_paths_until(
        &campaign.spec,
        control.as_ref(),
        campaign.paths,
        campaign.n_steps,
        point.horizon,
        seed,
    )?;
    batch.control = Some(point.clone());
    let obs = ObservationRecord::from_batch(
        point.clone(),
        &batch,
        &campaign.regions,
        bandwidth,
        campaign.estimator,
        derive_seed(seed, u64::MAX),
    )?;
    timing.simulate_seconds += t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let (s_hat, r_hat) = (obs.s_hat, obs.r_hat);
    model.add_point(obs)?;
    timing.update_seconds += t2.elapsed().as_secs_f64();

    Ok(Some(IterationRecord {
        iteration: state.iteration,
        point,
        sigma: sel.sigma,
        s_hat,
        r_hat,
        lcb_safety: lcb_s,
        lcb_reset: lcb_r,
        feasible,
        beta_s: params.beta_s,
        beta_r: params.beta_r,
        information_gain: model.information_gain(),
    }))
}
