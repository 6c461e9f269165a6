//! Campaign orchestration and artifacts: exploration runs, model checkpoints,
//! prediction-error tables, density grids and learned maps.
//!
//! Every CSV starts with a `# config_sha256=<hex> seed=<n>` line followed by a header
//! row. Files are written to a temporary sibling and renamed into place.
//!
//! Checkpoint schema (`model.json`), version 1:
//!
//! ```text
//! format         "safe-sde-model"
//! version        1
//! config_sha256  hash of the run configuration
//! seed           run seed
//! settings       kernel settings (same keys as [learning.model])
//! points         [{theta, t, T}, ...]
//! s_targets      base64 of little-endian f64, one per point
//! r_targets      as above
//! prior_std      predictive std of each point just before it was added
//! kdes           [{dim, bandwidth, samples (base64 f64)} | null, ...]
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use base64::Engine;
use base64::engine::general_purpose::STANDARD as B64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;
use crate::density::KdeEstimate;
use crate::error::{Error, Result};
use crate::explorer::{explore, is_feasible, CampaignReport, CandidateGrid, ControlPoint, IterationRecord, StopReason, Timing};
use crate::kernel::{confidence_params, KernelModel, ModelSettings};
use crate::oracle::{mc_truth_map, OracleMap};

pub const CHECKPOINT_FORMAT: &str = "safe-sde-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Provenance shared by every artifact of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config: &CampaignConfig, seed: u64) -> Self {
        Self {
            config_sha256: config.hash(),
            seed,
        }
    }

    pub fn header(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.config_sha256, self.seed)
    }
}

fn write_csv(path: &Path, prov: &Provenance, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(prov.header().into_bytes());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn theta_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|d| format!("theta_{d}")).collect()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(field: &str, text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("{field}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!("{field}: length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct KdeRecord {
    dim: usize,
    bandwidth: f64,
    samples: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config_sha256: String,
    seed: u64,
    settings: ModelSettings,
    points: Vec<ControlPoint>,
    s_targets: String,
    r_targets: String,
    prior_std: String,
    kdes: Vec<Option<KdeRecord>>,
}

/// Serializes `model` as a versioned checkpoint.
pub fn save_checkpoint(path: &Path, model: &KernelModel, prov: &Provenance) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config_sha256: prov.config_sha256.clone(),
        seed: prov.seed,
        settings: model.settings().clone(),
        points: model.points().to_vec(),
        s_targets: encode(model.s_targets()),
        r_targets: encode(model.r_targets()),
        prior_std: encode(model.prior_std()),
        kdes: model
            .kdes()
            .iter()
            .map(|k| {
                k.as_ref().map(|k| KdeRecord {
                    dim: k.dim(),
                    bandwidth: k.bandwidth(),
                    samples: encode(k.samples()),
                })
            })
            .collect(),
    };
    write_json(path, &file)
}

/// Restores and refits a checkpointed model; returns it with the stored provenance.
pub fn load_checkpoint(path: &Path) -> Result<(KernelModel, Provenance)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("{}: not a model checkpoint", path.display())));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Checkpoint(format!(
            "{}: schema version {version}, this build reads version {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let file: CheckpointFile =
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let n = file.points.len();
    let s = decode("s_targets", &file.s_targets)?;
    let r = decode("r_targets", &file.r_targets)?;
    let prior = decode("prior_std", &file.prior_std)?;
    if s.len() != n || r.len() != n || prior.len() != n || file.kdes.len() != n {
        return Err(Error::Checkpoint(format!("{}: array lengths differ from {n} points", path.display())));
    }
    let mut records = Vec::with_capacity(n);
    for (i, (point, kde)) in file.points.into_iter().zip(file.kdes).enumerate() {
        let kde = match kde {
            Some(k) => Some(
                KdeEstimate::new(decode("kdes.samples", &k.samples)?, k.dim, k.bandwidth)
                    .map_err(|e| Error::Checkpoint(format!("kde {i}: {e}")))?,
            ),
            None => None,
        };
        records.push((point, s[i], r[i], kde));
    }
    let mut model = KernelModel::from_records(file.settings, records, Some(prior))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    model.fit()?;
    Ok((
        model,
        Provenance {
            config_sha256: file.config_sha256,
            seed: file.seed,
        },
    ))
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub config_sha256: String,
    pub seed: u64,
    pub stop: StopReason,
    pub iterations: usize,
    pub certified_candidates: usize,
    pub certified_thetas: usize,
    pub final_radius: f64,
    pub excluded: usize,
    pub bandwidth: f64,
    pub information_gain: f64,
    pub timing: Timing,
    pub records: Vec<IterationRecord>,
}

/// Artifact paths written by [`run_explore`].
#[derive(Clone, Debug)]
pub struct ExploreArtifacts {
    pub report: PathBuf,
    pub selected: PathBuf,
    pub certified: PathBuf,
    pub info_gain: PathBuf,
    pub checkpoint: PathBuf,
}

impl ExploreArtifacts {
    pub fn in_dir(out: &Path) -> Self {
        Self {
            report: out.join("report.json"),
            selected: out.join("selected.csv"),
            certified: out.join("certified_set.csv"),
            info_gain: out.join("info_gain.csv"),
            checkpoint: out.join("model.json"),
        }
    }
}

fn distinct_thetas(points: &[ControlPoint]) -> usize {
    let mut keys: Vec<Vec<u64>> = points.iter().map(|p| p.theta.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Runs one exploration campaign and writes its artifacts under `out`.
pub fn run_explore(config: &CampaignConfig, out: &Path) -> Result<(CampaignReport, KernelModel, ExploreArtifacts)> {
    let campaign = config.campaign()?;
    let prov = Provenance::new(config, config.seeds.run);
    let (report, model) = explore(&campaign)?;
    let paths = ExploreArtifacts::in_dir(out);
    let dim = config.control.segments;

    let mut header = vec!["iter".to_string()];
    header.extend(theta_columns(dim));
    header.extend(
        ["t", "T", "sigma", "s_hat", "r_hat", "lcb_safety", "lcb_reset", "feasible", "information_gain"]
            .map(String::from),
    );
    let rows: Vec<Vec<String>> = report
        .iterations
        .iter()
        .map(|r| {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.point.theta.iter().map(|&v| fmt(v)));
            row.extend([
                fmt(r.point.t),
                fmt(r.point.horizon),
                fmt(r.sigma),
                fmt(r.s_hat),
                fmt(r.r_hat),
                fmt(r.lcb_safety),
                fmt(r.lcb_reset),
                r.feasible.to_string(),
                fmt(r.information_gain),
            ]);
            row
        })
        .collect();
    write_csv(&paths.selected, &prov, &header, &rows)?;

    let mut header = theta_columns(dim);
    header.extend(["t", "T"].map(String::from));
    let rows: Vec<Vec<String>> = report
        .certified
        .iter()
        .map(|p| {
            let mut row: Vec<String> = p.theta.iter().map(|&v| fmt(v)).collect();
            row.extend([fmt(p.t), fmt(p.horizon)]);
            row
        })
        .collect();
    write_csv(&paths.certified, &prov, &header, &rows)?;

    let rows: Vec<Vec<String>> = model
        .information_gain_trace()
        .iter()
        .enumerate()
        .map(|(i, g)| vec![(i + 1).to_string(), fmt(*g)])
        .collect();
    write_csv(&paths.info_gain, &prov, &["n".into(), "information_gain".into()], &rows)?;

    save_checkpoint(&paths.checkpoint, &model, &prov)?;
    let summary = ExploreSummary {
        config_sha256: prov.config_sha256.clone(),
        seed: prov.seed,
        stop: report.stop.clone(),
        iterations: report.iterations.len(),
        certified_candidates: report.certified.len(),
        certified_thetas: distinct_thetas(&report.certified),
        final_radius: report.final_radius,
        excluded: report.excluded,
        bandwidth: report.bandwidth,
        information_gain: model.information_gain(),
        timing: report.timing.clone(),
        records: report.iterations.clone(),
    };
    write_json(&paths.report, &summary)?;
    Ok((report, model, paths))
}

/// Mean and standard deviation of squared errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mse: f64,
    pub std: f64,
}

impl ErrorStats {
    pub fn from_pairs(predicted: &[f64], truth: &[f64]) -> Self {
        let sq: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).collect();
        let n = sq.len().max(1) as f64;
        let mse = sq.iter().sum::<f64>() / n;
        let var = sq.iter().map(|e| (e - mse) * (e - mse)).sum::<f64>() / n;
        Self { mse, std: var.sqrt() }
    }
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    pub config_sha256: String,
    pub seed: u64,
    pub checkpoint_sha256: String,
    pub model_points: usize,
    pub test_controls: usize,
    pub oracle_paths: usize,
    /// `s_hat(theta, t)` against the oracle `s(theta, t)`.
    pub safety: ErrorStats,
    /// `r_hat(theta, t)` against the oracle `r(theta, t)`.
    pub reset: ErrorStats,
    /// `min_t s_hat(theta, t)` over the time grid against the oracle minimum over `[0, T]`.
    pub safety_up_to_horizon: ErrorStats,
    /// `r_hat(theta, T)` against the terminal oracle reset level.
    pub reset_at_horizon: ErrorStats,
    pub oracle_standard_error_bound: f64,
}

/// `count` test controls: lattice parameters and observation times drawn uniformly.
pub fn sample_test_controls(grid: &CandidateGrid, count: usize, seed: u64) -> Vec<ControlPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let th = grid.thetas()[rng.random_range(0..grid.thetas().len())].clone();
            let t = grid.times()[rng.random_range(0..grid.times().len())];
            ControlPoint::new(th, t, grid.horizon())
        })
        .collect()
}

/// Oracle truth at the configured test controls.
pub fn evaluation_oracle(config: &CampaignConfig) -> Result<OracleMap> {
    let grid = config.candidate_grid()?;
    let points = sample_test_controls(&grid, config.evaluate.test_controls, config.seeds.evaluate);
    let spec = config.system.spec(config.control.segments)?;
    mc_truth_map(
        &spec,
        &config.family(),
        &points,
        &config.system.regions(),
        config.evaluate.oracle_paths,
        config.control.n_steps,
        config.seeds.oracle,
    )
}

/// Prediction errors of `model` on the oracle's points.
pub fn score_model(model: &KernelModel, oracle: &OracleMap, times: &[f64]) -> Result<[ErrorStats; 4]> {
    let n = oracle.points.len();
    let (mut s, mut r, mut s_inf, mut r_end) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for p in &oracle.points {
        let pr = model.predict(&p.theta, p.t)?;
        s.push(pr.safety);
        r.push(pr.reset);
        let mut low = f64::INFINITY;
        for &t in times.iter().filter(|&&t| t <= p.horizon + 1e-9) {
            low = low.min(model.predict_safety(&p.theta, t)?);
        }
        s_inf.push(low);
        r_end.push(model.predict_reset(&p.theta, p.horizon)?);
    }
    Ok([
        ErrorStats::from_pairs(&s, &oracle.safety_at_t),
        ErrorStats::from_pairs(&r, &oracle.reset_at_t),
        ErrorStats::from_pairs(&s_inf, &oracle.safety),
        ErrorStats::from_pairs(&r_end, &oracle.reset),
    ])
}

fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Scores a checkpoint against fresh Monte Carlo truth; writes `metrics.json` and `evaluation.csv`.
pub fn run_evaluate(config: &CampaignConfig, checkpoint: &Path, out: &Path) -> Result<EvaluationMetrics> {
    config.validate()?;
    let (model, _) = load_checkpoint(checkpoint)?;
    let prov = Provenance::new(config, config.seeds.evaluate);
    let grid = config.candidate_grid()?;
    let oracle = evaluation_oracle(config)?;
    let [safety, reset, safety_up_to_horizon, reset_at_horizon] = score_model(&model, &oracle, grid.times())?;

    let dim = config.control.segments;
    let mut header = theta_columns(dim);
    header.extend(["t", "T", "s_hat", "s_oracle", "r_hat", "r_oracle"].map(String::from));
    let rows = oracle
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pr = model.predict(&p.theta, p.t)?;
            let mut row: Vec<String> = p.theta.iter().map(|&v| fmt(v)).collect();
            row.extend([
                fmt(p.t),
                fmt(p.horizon),
                fmt(pr.safety),
                fmt(oracle.safety_at_t[i]),
                fmt(pr.reset),
                fmt(oracle.reset_at_t[i]),
            ]);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(&out.join("evaluation.csv"), &prov, &header, &rows)?;

    let metrics = EvaluationMetrics {
        config_sha256: prov.config_sha256,
        seed: prov.seed,
        checkpoint_sha256: file_sha256(checkpoint)?,
        model_points: model.len(),
        test_controls: oracle.points.len(),
        oracle_paths: oracle.paths_per_point,
        safety,
        reset,
        safety_up_to_horizon,
        reset_at_horizon,
        oracle_standard_error_bound: oracle.standard_error_bound(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

/// Contents of `prediction.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub config_sha256: String,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub t: f64,
    pub s_hat: f64,
    pub r_hat: f64,
    pub sigma: f64,
    pub grid_points: usize,
    pub negative_values: usize,
    pub seconds: f64,
}

/// Row-major grid over `[lo, hi]` with `counts` points per axis; a single point sits at the midpoint.
pub fn state_grid(lo: &[f64], hi: &[f64], counts: &[usize]) -> Vec<f64> {
    let axis = |d: usize| -> Vec<f64> {
        if counts[d] == 1 {
            vec![0.5 * (lo[d] + hi[d])]
        } else {
            (0..counts[d])
                .map(|i| lo[d] + (hi[d] - lo[d]) * i as f64 / (counts[d] - 1) as f64)
                .collect()
        }
    };
    let (a, b) = (axis(0), axis(1));
    a.iter().flat_map(|&x| b.iter().flat_map(move |&y| [x, y])).collect()
}

/// Predicted state density on the configured grid plus the level estimates at `(theta, t)`.
pub fn run_predict(config: &CampaignConfig, checkpoint: &Path, out: &Path) -> Result<PredictionSummary> {
    config.validate()?;
    let (model, _) = load_checkpoint(checkpoint)?;
    let prov = Provenance::new(config, config.seeds.run);
    let p = &config.predict;
    let start = Instant::now();
    let xs = state_grid(&p.x_lo, &p.x_hi, &p.x_counts);
    let density = if model.is_empty() {
        vec![0.0; xs.len() / 2]
    } else {
        model.predict_density_grid(&p.theta, p.t, &xs, 2)?
    };
    let pred = model.predict(&p.theta, p.t)?;
    let seconds = start.elapsed().as_secs_f64();

    let header: Vec<String> = ["x_0", "x_1", "density_raw", "density_clipped"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = xs
        .chunks_exact(2)
        .zip(&density)
        .map(|(x, &d)| vec![fmt(x[0]), fmt(x[1]), fmt(d), fmt(d.max(0.0))])
        .collect();
    write_csv(&out.join("density.csv"), &prov, &header, &rows)?;
    let summary = PredictionSummary {
        config_sha256: prov.config_sha256,
        seed: prov.seed,
        theta: p.theta.clone(),
        t: p.t,
        s_hat: pred.safety,
        r_hat: pred.reset,
        sigma: pred.std,
        grid_points: density.len(),
        negative_values: density.iter().filter(|&&d| d < 0.0).count(),
        seconds,
    };
    write_json(&out.join("prediction.json"), &summary)?;
    Ok(summary)
}

/// One row of a learned or oracle map.
#[derive(Clone, Debug, PartialEq)]
pub struct MapRow {
    pub theta: Vec<f64>,
    /// Safety level up to the horizon.
    pub safety: f64,
    /// Reset level at the horizon.
    pub reset: f64,
    /// Largest predictive std over the time grid (oracle maps: binomial standard error of `safety`).
    pub sigma: f64,
    pub feasible: bool,
}

/// Learned map over every grid parameter vector.
pub fn learned_map(model: &KernelModel, config: &CampaignConfig, grid: &CandidateGrid) -> Result<Vec<MapRow>> {
    use rayon::prelude::*;
    let thresholds = config.thresholds()?;
    let params = confidence_params(model, &config.learning.confidence)?;
    let horizon = grid.horizon();
    grid.thetas()
        .par_iter()
        .map(|th| {
            let mut safety = f64::INFINITY;
            let mut sigma: f64 = 0.0;
            for &t in grid.times().iter().filter(|&&t| t <= horizon + 1e-9) {
                let p = model.predict(th, t)?;
                safety = safety.min(p.safety);
                sigma = sigma.max(p.std);
            }
            let reset = model.predict_reset(th, horizon)?;
            let probe = ControlPoint::new(th.clone(), grid.times()[0], horizon);
            let feasible = is_feasible(model, &probe, thresholds, params, grid)?;
            Ok(MapRow {
                theta: th.clone(),
                safety,
                reset,
                sigma,
                feasible,
            })
        })
        .collect()
}

/// Monte Carlo map over every grid parameter vector at the horizon.
pub fn oracle_map(config: &CampaignConfig, grid: &CandidateGrid) -> Result<Vec<MapRow>> {
    let horizon = grid.horizon();
    let points: Vec<ControlPoint> = grid.thetas().iter().map(|th| ControlPoint::new(th.clone(), horizon, horizon)).collect();
    let spec = config.system.spec(config.control.segments)?;
    let map = mc_truth_map(
        &spec,
        &config.family(),
        &points,
        &config.system.regions(),
        config.evaluate.oracle_paths,
        config.control.n_steps,
        config.seeds.oracle,
    )?;
    let th = config.thresholds()?;
    let q = map.paths_per_point as f64;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = map.safety[i];
            MapRow {
                theta: p.theta.clone(),
                safety: s,
                reset: map.reset[i],
                sigma: (s * (1.0 - s) / q).sqrt(),
                feasible: s >= 1.0 - th.epsilon && map.reset[i] >= 1.0 - th.xi,
            }
        })
        .collect())
}

fn write_map(path: &Path, prov: &Provenance, rows: &[MapRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.theta.len());
    let mut header = theta_columns(dim);
    header.extend(["safety", "reset", "sigma", "feasible"].map(String::from));
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row: Vec<String> = r.theta.iter().map(|&v| fmt(v)).collect();
            row.extend([fmt(r.safety), fmt(r.reset), fmt(r.sigma), r.feasible.to_string()]);
            row
        })
        .collect();
    write_csv(path, prov, &header, &rows)
}

/// Contents of `maps_summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapsSummary {
    pub config_sha256: String,
    pub seed: u64,
    pub thetas: usize,
    pub feasible: usize,
    pub oracle_paths: Option<usize>,
    /// Root mean square of learned minus oracle safety over the map.
    pub safety_rms: Option<f64>,
    pub reset_rms: Option<f64>,
}

fn rms(a: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in a {
        sum += v * v;
        n += 1;
    }
    (sum / n.max(1) as f64).sqrt()
}

/// Writes `maps.csv`, and with `with_oracle` also `oracle_maps.csv`, plus `maps_summary.json`.
pub fn run_maps(config: &CampaignConfig, checkpoint: &Path, out: &Path, with_oracle: bool) -> Result<MapsSummary> {
    config.validate()?;
    let (model, _) = load_checkpoint(checkpoint)?;
    let prov = Provenance::new(config, config.seeds.oracle);
    let grid = config.candidate_grid()?;
    let learned = learned_map(&model, config, &grid)?;
    write_map(&out.join("maps.csv"), &prov, &learned)?;
    let mut summary = MapsSummary {
        config_sha256: prov.config_sha256.clone(),
        seed: prov.seed,
        thetas: learned.len(),
        feasible: learned.iter().filter(|r| r.feasible).count(),
        oracle_paths: None,
        safety_rms: None,
        reset_rms: None,
    };
    if with_oracle {
        let truth = oracle_map(config, &grid)?;
        write_map(&out.join("oracle_maps.csv"), &prov, &truth)?;
        summary.oracle_paths = Some(config.evaluate.oracle_paths);
        summary.safety_rms = Some(rms(learned.iter().zip(&truth).map(|(a, b)| a.safety - b.safety)));
        summary.reset_rms = Some(rms(learned.iter().zip(&truth).map(|(a, b)| a.reset - b.reset)));
    }
    write_json(&out.join("maps_summary.json"), &summary)?;
    Ok(summary)
}
