//! Seeded Monte Carlo driver.
//!
//! Every trial is keyed by `(sweep point, run index)`. Run `r` uses
//! `seed = base_seed XOR r` for the scene and `splitmix64(seed)` for the
//! noise and data symbols, so all detectors (and every sweep point) see the
//! same scene for a given run, and trials can be executed in any order on any
//! number of workers with identical results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{sample_covariance, SampleCovariance};
use crate::detectors::{
    disjoint_with_rank, hybrid_with_rank, joint_itc_ols, rank_itc, threshold_ols, AngleGrid,
    DetectorConfig, DetectorError, EstimationResult, Method, PenaltyKind, RankEstimate,
};
use crate::experiment::{ConfigError, ExperimentSpec, SigmaC, SweepAxis, SweepPoint};
use crate::linalg::{hermitian_eigenvalues, EigenSpectrum};
use crate::metrics::{aggregate, classify, DetectionOutcome, MetricsReport};
use crate::scene::{random_scene, synthesize, RadarConfig, Scene};

/// Column header of `results.csv`.
pub const RESULTS_HEADER: &str =
    "sweep_axis,sweep_value,method,penalty,hit_rate,fa_rate,youden_j,mean_k_hat,runs";

/// Format tag written into every scene bundle.
pub const BUNDLE_FORMAT: &str = "itc-ols-bundle/1";

/// Label used in place of a penalty for detectors that have none.
pub const NO_PENALTY: &str = "none";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure in {context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: DetectorError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle {path} is invalid at `{field}`: {message}")]
    Bundle {
        path: String,
        field: String,
        message: String,
    },
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub fn run_seed(base_seed: u64, run_index: usize) -> u64 {
    base_seed ^ run_index as u64
}

/// SplitMix64 finaliser, used to derive the noise seed from a run seed.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One detector/penalty combination evaluated at every sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub penalty: Option<PenaltyKind>,
}

impl Cell {
    pub fn penalty_label(&self) -> &'static str {
        self.penalty.map_or(NO_PENALTY, PenaltyKind::as_str)
    }
}

/// Cells in output order: methods as configured, penalties AIC before BIC.
/// Penalty-free detectors appear once.
pub fn cell_layout(spec: &ExperimentSpec) -> Vec<Cell> {
    let kinds = spec.penalty.kinds();
    spec.methods
        .iter()
        .flat_map(|&method| {
            if method.uses_penalty() {
                kinds
                    .iter()
                    .map(|&p| Cell {
                        method,
                        penalty: Some(p),
                    })
                    .collect::<Vec<_>>()
            } else {
                vec![Cell {
                    method,
                    penalty: None,
                }]
            }
        })
        .collect()
}

/// Per-detector line of a trial record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub method: Method,
    pub penalty: Option<PenaltyKind>,
    pub k_hat: usize,
    pub doas: Vec<f64>,
    pub hits: usize,
    pub false_alarms: usize,
    pub misses: usize,
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_axis: SweepAxis,
    pub sweep_value: String,
    pub run_index: usize,
    pub seed: u64,
    pub noise_seed: u64,
    pub k_true: usize,
    pub true_doas: Vec<f64>,
    pub noise_variance: f64,
    pub detections: Vec<DetectionRecord>,
}

/// Everything produced by one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub scene: Scene,
    pub radar: RadarConfig,
    pub point: SweepPoint,
    pub record: TrialRecord,
    pub cells: Vec<Cell>,
    pub results: Vec<EstimationResult>,
    pub outcomes: Vec<DetectionOutcome>,
}

/// Aggregated metrics of one output row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub sweep_value: String,
    pub cell: Cell,
    pub report: MetricsReport,
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<CellSummary>,
    pub trials: Vec<TrialRecord>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for row in &self.rows {
            let r = &row.report;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.axis,
                row.sweep_value,
                row.cell.method,
                row.cell.penalty_label(),
                r.hit_rate,
                r.fa_rate,
                r.youden_j,
                r.mean_k_hat,
                r.runs
            ));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t).expect("trial records serialise"));
            out.push('\n');
        }
        out
    }

    /// Row for `(sweep_value, method, penalty)`, if present.
    pub fn find(
        &self,
        sweep_value: &str,
        method: Method,
        penalty: Option<PenaltyKind>,
    ) -> Option<&CellSummary> {
        self.rows.iter().find(|r| {
            r.sweep_value == sweep_value && r.cell.method == method && r.cell.penalty == penalty
        })
    }

    /// Writes `results.csv` and `runs.jsonl` into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (name, body) in [
            ("results.csv", self.to_csv()),
            ("runs.jsonl", self.to_jsonl()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Shared, validated state for running trials of one experiment.
pub struct Harness {
    spec: ExperimentSpec,
    axis: SweepAxis,
    points: Vec<SweepPoint>,
    cells: Vec<Cell>,
    grid: Arc<AngleGrid>,
}

impl Harness {
    pub fn new(spec: &ExperimentSpec, axis: SweepAxis) -> Result<Self, HarnessError> {
        spec.validate(axis)?;
        let grid = AngleGrid::uniform_sine(spec.grid_resolution)
            .map_err(|e| ConfigError::invalid("grid_resolution", e.to_string()))?;
        // warm the steering cache once before trials share the grid
        grid.steering_table(spec.radar.num_antennas);
        Ok(Self {
            spec: spec.clone(),
            axis,
            points: spec.sweep_points(axis),
            cells: cell_layout(spec),
            grid: Arc::new(grid),
        })
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    fn radar_for(&self, point: &SweepPoint) -> RadarConfig {
        RadarConfig {
            num_subcarriers: point.num_subcarriers,
            ..self.spec.radar.clone()
        }
    }

    /// Runs trial `run_index` at sweep point `point_index`.
    pub fn run_trial(
        &self,
        point_index: usize,
        run_index: usize,
    ) -> Result<TrialResult, HarnessError> {
        let point = self.points[point_index];
        let radar = self.radar_for(&point);
        let seed = run_seed(self.spec.base_seed, run_index);
        let noise_seed = splitmix64(seed);
        let scene = random_scene(self.spec.k_true, &radar, seed, &self.spec.scene)
            .map_err(|e| ConfigError::invalid("scene", e.to_string()))?;
        let numerical = |source: DetectorError| HarnessError::Numerical {
            context: format!(
                "{} = {}, run {run_index}",
                self.axis,
                point.label(self.axis)
            ),
            source,
        };
        let obs = synthesize(&scene, &radar, point.snr_db, noise_seed)
            .map_err(|e| ConfigError::invalid("radar", e.to_string()))?;
        let r = sample_covariance(&obs).map_err(|e| numerical(e.into()))?;
        let mut ctx = DetectionContext::new(
            &r,
            obs.noise_variance,
            point.sigma_c,
            &self.grid,
            self.spec.max_targets,
        );

        let truths = scene.doas();
        let mut results = Vec::with_capacity(self.cells.len());
        let mut outcomes = Vec::with_capacity(self.cells.len());
        let mut detections = Vec::with_capacity(self.cells.len());
        for cell in &self.cells {
            let res = ctx.run(*cell).map_err(numerical)?;
            let outcome = classify(&truths, &res.doas, radar.num_antennas);
            detections.push(DetectionRecord {
                method: cell.method,
                penalty: cell.penalty,
                k_hat: res.k_hat,
                doas: res.doas.clone(),
                hits: outcome.hits,
                false_alarms: outcome.false_alarms,
                misses: outcome.misses,
            });
            results.push(res);
            outcomes.push(outcome);
        }
        let record = TrialRecord {
            sweep_axis: self.axis,
            sweep_value: point.label(self.axis),
            run_index,
            seed,
            noise_seed,
            k_true: scene.num_targets(),
            true_doas: truths,
            noise_variance: obs.noise_variance,
            detections,
        };
        Ok(TrialResult {
            scene,
            radar,
            point,
            record,
            cells: self.cells.clone(),
            results,
            outcomes,
        })
    }

    /// Runs every trial and aggregates per cell. `workers = None` uses the
    /// global rayon pool; output does not depend on the worker count.
    pub fn run(&self, workers: Option<usize>) -> Result<SweepReport, HarnessError> {
        let jobs: Vec<(usize, usize)> = (0..self.points.len())
            .flat_map(|p| (0..self.spec.num_runs).map(move |r| (p, r)))
            .collect();
        let execute = || -> Vec<Result<TrialResult, HarnessError>> {
            jobs.par_iter()
                .map(|&(p, r)| self.run_trial(p, r))
                .collect()
        };
        let trials = match workers {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool")
                .install(execute),
            None => execute(),
        };
        let trials: Vec<TrialResult> = trials.into_iter().collect::<Result<_, _>>()?;

        let mut rows = Vec::with_capacity(self.points.len() * self.cells.len());
        for (p, point) in self.points.iter().enumerate() {
            let runs = &trials[p * self.spec.num_runs..(p + 1) * self.spec.num_runs];
            for (c, cell) in self.cells.iter().enumerate() {
                let outcomes: Vec<DetectionOutcome> =
                    runs.iter().map(|t| t.outcomes[c].clone()).collect();
                let report = aggregate(&outcomes, self.spec.fa_normalization)
                    .expect("num_runs >= 1 is validated");
                rows.push(CellSummary {
                    sweep_value: point.label(self.axis),
                    cell: *cell,
                    report,
                });
            }
        }
        Ok(SweepReport {
            axis: self.axis,
            rows,
            trials: trials.into_iter().map(|t| t.record).collect(),
        })
    }

    /// Replay bundles for run 0 of every sweep point and cell.
    pub fn bundles(&self) -> Result<Vec<SceneBundle>, HarnessError> {
        let mut out = Vec::new();
        for p in 0..self.points.len() {
            let trial = self.run_trial(p, 0)?;
            for (cell, result) in trial.cells.iter().zip(&trial.results) {
                out.push(SceneBundle {
                    format: BUNDLE_FORMAT.to_string(),
                    sweep_axis: self.axis,
                    sweep_value: trial.point.label(self.axis),
                    radar: trial.radar.clone(),
                    scene: trial.scene.clone(),
                    snr_db: trial.point.snr_db,
                    noise_seed: trial.record.noise_seed,
                    noise_variance: trial.record.noise_variance,
                    method: cell.method,
                    penalty: cell.penalty,
                    sigma_c_db: trial.point.sigma_c,
                    grid_resolution: self.spec.grid_resolution,
                    max_targets: self.spec.max_targets,
                    result: result.clone(),
                });
            }
        }
        Ok(out)
    }
}

/// Per-trial cache so the eigenvalues and rank estimates are computed once
/// and shared by every detector.
struct DetectionContext<'a> {
    r: &'a SampleCovariance,
    noise_variance: f64,
    sigma_c: SigmaC,
    grid: &'a Arc<AngleGrid>,
    max_targets: Option<usize>,
    spectrum: Option<EigenSpectrum>,
    ranks: Vec<(PenaltyKind, RankEstimate)>,
}

impl<'a> DetectionContext<'a> {
    fn new(
        r: &'a SampleCovariance,
        noise_variance: f64,
        sigma_c: SigmaC,
        grid: &'a Arc<AngleGrid>,
        max_targets: Option<usize>,
    ) -> Self {
        Self {
            r,
            noise_variance,
            sigma_c,
            grid,
            max_targets,
            spectrum: None,
            ranks: Vec::new(),
        }
    }

    fn rank(&mut self, penalty: PenaltyKind) -> Result<RankEstimate, DetectorError> {
        if let Some((_, est)) = self.ranks.iter().find(|(p, _)| *p == penalty) {
            return Ok(est.clone());
        }
        if self.spectrum.is_none() {
            self.spectrum = Some(hermitian_eigenvalues(&self.r.matrix)?);
        }
        let est = rank_itc(
            self.spectrum.as_ref().unwrap(),
            self.r.num_snapshots,
            penalty,
        )?;
        self.ranks.push((penalty, est.clone()));
        Ok(est)
    }

    fn config(&self, penalty: PenaltyKind) -> DetectorConfig {
        DetectorConfig {
            penalty,
            sigma_c_sq: self.sigma_c.linear(),
            noise_variance: self.noise_variance,
            grid: Arc::clone(self.grid),
            max_targets: self.max_targets,
        }
    }

    fn run(&mut self, cell: Cell) -> Result<EstimationResult, DetectorError> {
        let penalty = || {
            cell.penalty.ok_or_else(|| {
                DetectorError::Precondition(format!("method {} needs a penalty", cell.method))
            })
        };
        match cell.method {
            Method::Disjoint => {
                let mut rank = self.rank(penalty()?)?;
                if let Some(max) = self.max_targets {
                    rank.k_hat = rank.k_hat.min(max);
                }
                disjoint_with_rank(self.r, &rank, self.grid)
            }
            Method::Joint => joint_itc_ols(self.r, &self.config(penalty()?)),
            Method::Hybrid => {
                let p = penalty()?;
                let rank = self.rank(p)?;
                hybrid_with_rank(self.r, &self.config(p), rank.k_hat)
            }
            Method::Threshold => {
                threshold_ols(self.r, self.noise_variance, self.grid, self.max_targets)
            }
            Method::Ols => Err(DetectorError::Precondition(
                "fixed-count OLS is not a harness method".into(),
            )),
        }
    }
}

/// Runs a full sweep.
pub fn run_experiment(
    spec: &ExperimentSpec,
    axis: SweepAxis,
    workers: Option<usize>,
) -> Result<SweepReport, HarnessError> {
    Harness::new(spec, axis)?.run(workers)
}

/// Runs run 0 at the first sweep point.
pub fn run_single(spec: &ExperimentSpec, axis: SweepAxis) -> Result<TrialResult, HarnessError> {
    Harness::new(spec, axis)?.run_trial(0, 0)
}

/// Self-contained replay document for one trial of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBundle {
    pub format: String,
    pub sweep_axis: SweepAxis,
    pub sweep_value: String,
    pub radar: RadarConfig,
    pub scene: Scene,
    pub snr_db: f64,
    pub noise_seed: u64,
    pub noise_variance: f64,
    pub method: Method,
    pub penalty: Option<PenaltyKind>,
    pub sigma_c_db: SigmaC,
    pub grid_resolution: usize,
    #[serde(default)]
    pub max_targets: Option<usize>,
    pub result: EstimationResult,
}

impl SceneBundle {
    pub fn file_name(&self, index: usize) -> String {
        format!(
            "bundle_{index:03}_{}_{}_{}_{}.json",
            self.sweep_axis,
            self.sweep_value,
            self.method,
            self.penalty.map_or(NO_PENALTY, PenaltyKind::as_str)
        )
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, HarnessError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let bundle: SceneBundle =
            serde_path_to_error::deserialize(&mut de).map_err(|e| HarnessError::Bundle {
                path: path.to_string(),
                field: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(HarnessError::Bundle {
                path: path.to_string(),
                field: "format".into(),
                message: format!("expected \"{BUNDLE_FORMAT}\", got \"{}\"", bundle.format),
            });
        }
        Ok(bundle)
    }

    /// Re-synthesises the observation and re-runs the recorded detector.
    pub fn recompute(&self) -> Result<EstimationResult, HarnessError> {
        let invalid = |field: &str, message: String| HarnessError::Bundle {
            path: String::new(),
            field: field.to_string(),
            message,
        };
        let obs = synthesize(&self.scene, &self.radar, self.snr_db, self.noise_seed)
            .map_err(|e| invalid("scene", e.to_string()))?;
        let grid = Arc::new(
            AngleGrid::uniform_sine(self.grid_resolution)
                .map_err(|e| invalid("grid_resolution", e.to_string()))?,
        );
        let numerical = |source| HarnessError::Numerical {
            context: "replay".into(),
            source,
        };
        let r = sample_covariance(&obs).map_err(|e| numerical(e.into()))?;
        let mut ctx = DetectionContext::new(
            &r,
            obs.noise_variance,
            self.sigma_c_db,
            &grid,
            self.max_targets,
        );
        ctx.run(Cell {
            method: self.method,
            penalty: self.penalty,
        })
        .map_err(numerical)
    }
}

/// Writes one JSON bundle per `(sweep point, cell)` into `dir`.
pub fn emit_scene_bundle(
    spec: &ExperimentSpec,
    axis: SweepAxis,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let bundles = Harness::new(spec, axis)?.bundles()?;
    write_bundles(&bundles, dir)
}

pub fn write_bundles(bundles: &[SceneBundle], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut paths = Vec::with_capacity(bundles.len());
    for (i, b) in bundles.iter().enumerate() {
        let path = dir.join(b.file_name(i));
        let mut file = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        let body = serde_json::to_string_pretty(b).expect("bundles serialise");
        file.write_all(body.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|e| HarnessError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Result of replaying a bundle.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub bundle: SceneBundle,
    pub recomputed: EstimationResult,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.bundle.result == self.recomputed
    }
}

pub fn replay_bundle(path: &Path) -> Result<ReplayOutcome, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let bundle = SceneBundle::parse(&text, &path.display().to_string())?;
    let recomputed = bundle.recompute().map_err(|e| match e {
        HarnessError::Bundle { field, message, .. } => HarnessError::Bundle {
            path: path.display().to_string(),
            field,
            message,
        },
        other => other,
    })?;
    Ok(ReplayOutcome { bundle, recomputed })
}
