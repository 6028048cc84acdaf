//! Joint target-count and direction-of-arrival estimators.
//!
//! All detectors share one greedy orthogonal-least-squares path: starting
//! from an empty angle set with `P⊥ = I`, each step picks the grid angle that
//! maximises `a† R_k a / ‖P⊥ a‖²` (equivalently, minimises the residual
//! `Tr[P⊥ R]` after adding it) and then rebuilds `P⊥` from the enlarged
//! steering matrix. The detectors differ only in when they stop:
//!
//! * `disjoint` : the eigenvalue (rank) criterion fixes the step count up front;
//! * `joint`    : a step is kept only while the selection criterion decreases;
//! * `hybrid`   : the rank estimate is a floor, the selection criterion may extend it;
//! * `threshold`: steps continue while the residual exceeds a fixed noise threshold.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{residual_covariance, CovarianceError, SampleCovariance};
use crate::linalg::{
    hermitian_eigenvalues, projector, trace_of_product, trace_real, CMatrix, EigenSpectrum,
    LinalgError,
};
use crate::scene::steering_from_sine;

/// Steering vectors whose residual energy `‖P⊥ a‖²` falls below this
/// fraction of `M` are treated as lying inside the selected subspace.
pub const ADMISSIBLE_DENOMINATOR: f64 = 1e-8;

/// Largest grid accepted by [`ml_exhaustive`].
pub const ML_MAX_GRID: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("no admissible grid angle remains outside the selected subspace")]
    SaturatedSubspace,
    #[error("invalid detector input: {0}")]
    Precondition(String),
    #[error("exhaustive search supports 1 or 2 targets, got {0}")]
    UnsupportedOrder(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
}

/// Complexity penalty family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Aic,
    Bic,
}

impl PenaltyKind {
    /// Penalty of the eigenvalue criterion for a rank-`k` signal subspace:
    /// `2k(2M−k)` (AIC) or `k(2M−k)·ln(DQ)` (BIC).
    pub fn rank_penalty(self, k: usize, m: usize, num_snapshots: usize) -> f64 {
        let free = k as f64 * (2.0 * m as f64 - k as f64);
        match self {
            PenaltyKind::Aic => 2.0 * free,
            PenaltyKind::Bic => free * (num_snapshots as f64).ln(),
        }
    }

    /// Penalty of the selection criterion for `k` targets:
    /// `2k(1+2DQ)` (AIC) or `k(1+2DQ)·ln(DQ)` (BIC).
    pub fn selection_penalty(self, k: usize, num_snapshots: usize) -> f64 {
        let free = k as f64 * (1.0 + 2.0 * num_snapshots as f64);
        match self {
            PenaltyKind::Aic => 2.0 * free,
            PenaltyKind::Bic => free * (num_snapshots as f64).ln(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyKind::Aic => "aic",
            PenaltyKind::Bic => "bic",
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Detector label carried by every [`EstimationResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Disjoint,
    Joint,
    Hybrid,
    Threshold,
    /// OLS with a caller-supplied number of steps.
    Ols,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Disjoint => "disjoint",
            Method::Joint => "joint",
            Method::Hybrid => "hybrid",
            Method::Threshold => "threshold",
            Method::Ols => "ols",
        }
    }

    /// Whether the detector's output depends on the penalty family.
    pub fn uses_penalty(self) -> bool {
        matches!(self, Method::Disjoint | Method::Joint | Method::Hybrid)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sorted search grid of candidate angles, with a cached steering table.
#[derive(Debug, Clone)]
pub struct AngleGrid {
    points: Vec<f64>,
    sines: Vec<f64>,
    steering: OnceLock<(usize, Arc<[Complex64]>)>,
}

impl PartialEq for AngleGrid {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

impl AngleGrid {
    /// `n` points uniform in `sin θ` over `[−1, 1)`.
    pub fn uniform_sine(n: usize) -> Result<Self, DetectorError> {
        if n == 0 {
            return Err(DetectorError::Precondition(
                "grid resolution must be positive".into(),
            ));
        }
        let sines: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        Ok(Self {
            points: sines.iter().map(|u| u.asin()).collect(),
            sines,
            steering: OnceLock::new(),
        })
    }

    /// Grid from explicit strictly increasing angles in `[−π/2, π/2]`.
    pub fn from_points(points: Vec<f64>) -> Result<Self, DetectorError> {
        if points.is_empty() {
            return Err(DetectorError::Precondition("grid must not be empty".into()));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if points.iter().any(|p| !(-half_pi..=half_pi).contains(p)) {
            return Err(DetectorError::Precondition(
                "grid point outside [-pi/2, pi/2]".into(),
            ));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DetectorError::Precondition(
                "grid must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            sines: points.iter().map(|p| p.sin()).collect(),
            points,
            steering: OnceLock::new(),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn sines(&self) -> &[f64] {
        &self.sines
    }

    pub fn resolution(&self) -> usize {
        self.points.len()
    }

    /// Row-major `resolution × m` table of steering vectors.
    pub fn steering_table(&self, m: usize) -> Arc<[Complex64]> {
        let build = || -> Arc<[Complex64]> {
            self.sines
                .iter()
                .flat_map(|&u| steering_from_sine(u, m))
                .collect::<Vec<_>>()
                .into()
        };
        let (cached_m, table) = self.steering.get_or_init(|| (m, build()));
        if *cached_m == m {
            Arc::clone(table)
        } else {
            build()
        }
    }

    pub fn steering(&self, index: usize, m: usize) -> Vec<Complex64> {
        steering_from_sine(self.sines[index], m)
    }
}

/// Detector parameters shared by the selection-based estimators.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub penalty: PenaltyKind,
    /// Floor on the noise variance in the selection criterion (linear power).
    pub sigma_c_sq: f64,
    /// Known noise variance.
    pub noise_variance: f64,
    pub grid: Arc<AngleGrid>,
    /// Cap on detected targets; `None` means `M − 1`.
    pub max_targets: Option<usize>,
}

impl DetectorConfig {
    pub fn new(
        penalty: PenaltyKind,
        sigma_c_sq: f64,
        noise_variance: f64,
        grid: Arc<AngleGrid>,
    ) -> Self {
        Self {
            penalty,
            sigma_c_sq,
            noise_variance,
            grid,
            max_targets: None,
        }
    }

    /// Converts a correction level in dB (`None` for −∞) to linear power.
    pub fn sigma_c_from_db(db: Option<f64>) -> f64 {
        db.map_or(0.0, |db| 10f64.powf(db / 10.0))
    }

    fn effective_max(&self, m: usize) -> Result<usize, DetectorError> {
        if !(self.sigma_c_sq >= 0.0) {
            return Err(DetectorError::Precondition(
                "sigma_c_sq must be non-negative".into(),
            ));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(DetectorError::Precondition(
                "noise variance must be positive".into(),
            ));
        }
        resolve_max_targets(self.max_targets, m)
    }
}

fn resolve_max_targets(max_targets: Option<usize>, m: usize) -> Result<usize, DetectorError> {
    if m < 2 {
        return Err(DetectorError::Precondition(
            "need at least two antennas".into(),
        ));
    }
    let max = max_targets.unwrap_or(m - 1);
    if max == 0 || max > m - 1 {
        return Err(DetectorError::Precondition(format!(
            "max_targets must lie in 1..={}, got {max}",
            m - 1
        )));
    }
    Ok(max)
}

/// Output of any detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: Method,
    pub k_hat: usize,
    /// Selected angles in selection order.
    pub doas: Vec<f64>,
    /// `(k, value)` for every evaluated step. Selection criteria for
    /// joint/hybrid, eigenvalue criterion for disjoint, residual trace for
    /// threshold.
    pub itc_trace: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_k_hat: Option<usize>,
}

/// Outcome of the eigenvalue-profile criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEstimate {
    pub k_hat: usize,
    /// Criterion value for every candidate rank `0..M`.
    pub values: Vec<f64>,
}

/// Rank-based information criterion on the ordered eigenvalues of `R`.
///
/// For each candidate `k`, the likelihood term compares geometric and
/// arithmetic means of the `M−k` smallest eigenvalues, evaluated in the log
/// domain. Ties resolve toward the smaller rank.
pub fn rank_itc(
    spectrum: &EigenSpectrum,
    num_snapshots: usize,
    penalty: PenaltyKind,
) -> Result<RankEstimate, DetectorError> {
    let lambdas = &spectrum.eigenvalues;
    let m = lambdas.len();
    if m < 2 {
        return Err(DetectorError::Precondition(
            "need at least two eigenvalues".into(),
        ));
    }
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(DetectorError::Precondition(
            "eigenvalues must be positive and finite".into(),
        ));
    }
    if num_snapshots == 0 {
        return Err(DetectorError::Precondition(
            "need at least one snapshot".into(),
        ));
    }
    let dq = num_snapshots as f64;
    let values: Vec<f64> = (0..m)
        .map(|k| {
            let tail = &lambdas[k..];
            let n = tail.len() as f64;
            let mean_log = tail.iter().map(|l| l.ln()).sum::<f64>() / n;
            let log_mean = (tail.iter().sum::<f64>() / n).ln();
            // geometric ≤ arithmetic, so this is ≥ 0 up to rounding
            let likelihood = -2.0 * dq * n * (mean_log - log_mean);
            likelihood + penalty.rank_penalty(k, m, num_snapshots)
        })
        .collect();
    let k_hat = argmin_first(&values);
    Ok(RankEstimate { k_hat, values })
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Winner of one greedy selection scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub theta: f64,
    pub ratio: f64,
}

/// Sums along the super-diagonals of a Hermitian matrix: `s[l] = Σ X[i][i+l]`.
///
/// For a ULA steering vector `a` with `a[l] = z^l`, the quadratic form is
/// `a† X a = Re s[0] + 2 Re Σ_{l≥1} s[l] a[l]`.
fn diagonal_sums(x: &CMatrix) -> Vec<Complex64> {
    let m = x.rows();
    (0..m)
        .map(|l| (0..m - l).map(|i| x[(i, i + l)]).sum())
        .collect()
}

fn ula_quadratic_form(sums: &[Complex64], a: &[Complex64]) -> f64 {
    let mut acc = 0.0;
    for l in 1..sums.len() {
        acc += (sums[l] * a[l]).re;
    }
    sums[0].re + 2.0 * acc
}

/// One greedy selection step over the grid.
///
/// `residual` is `P⊥ R P⊥` and `p_perp` the current complement projector.
/// Points whose steering vector retains less than `1e-8·M` energy outside the
/// selected subspace, and points equal to an already selected angle, are
/// skipped. Ties resolve toward the smaller angle.
pub fn ols_select(
    residual: &CMatrix,
    p_perp: &CMatrix,
    grid: &AngleGrid,
    selected: &[f64],
) -> Result<Selection, DetectorError> {
    let m = residual.rows();
    if !residual.is_square() || p_perp.rows() != m || p_perp.cols() != m {
        return Err(LinalgError::Dimension {
            expected: format!("{m}x{m}"),
            got: format!("{}x{}", p_perp.rows(), p_perp.cols()),
        }
        .into());
    }
    let num_sums = diagonal_sums(residual);
    let den_sums = diagonal_sums(p_perp);
    let table = grid.steering_table(m);
    let floor = ADMISSIBLE_DENOMINATOR * m as f64;
    let mut best: Option<Selection> = None;
    for (index, a) in table.chunks_exact(m).enumerate() {
        let theta = grid.points[index];
        if selected.contains(&theta) {
            continue;
        }
        let den = ula_quadratic_form(&den_sums, a);
        if !(den >= floor) {
            continue;
        }
        let ratio = ula_quadratic_form(&num_sums, a) / den;
        if best.is_none_or(|b| ratio > b.ratio) {
            best = Some(Selection {
                index,
                theta,
                ratio,
            });
        }
    }
    best.ok_or(DetectorError::SaturatedSubspace)
}

/// Proposed extension of an OLS path by one angle.
#[derive(Debug, Clone)]
struct Candidate {
    selection: Selection,
    p_perp: CMatrix,
    residual_trace: f64,
}

/// Greedy OLS state: selected grid indices, complement projector, residual.
struct OlsPath<'a> {
    r: &'a SampleCovariance,
    grid: &'a AngleGrid,
    indices: Vec<usize>,
    doas: Vec<f64>,
    p_perp: CMatrix,
    residual_trace: f64,
}

impl<'a> OlsPath<'a> {
    fn new(r: &'a SampleCovariance, grid: &'a AngleGrid) -> Result<Self, DetectorError> {
        let m = r.dim();
        if m < 2 {
            return Err(DetectorError::Precondition(
                "need at least two antennas".into(),
            ));
        }
        Ok(Self {
            r,
            grid,
            indices: Vec::new(),
            doas: Vec::new(),
            p_perp: CMatrix::identity(m),
            residual_trace: trace_real(&r.matrix)?,
        })
    }

    fn len(&self) -> usize {
        self.indices.len()
    }

    fn propose(&self) -> Result<Candidate, DetectorError> {
        let m = self.r.dim();
        let residual = residual_covariance(self.r, &self.p_perp)?;
        let selection = ols_select(&residual, &self.p_perp, self.grid, &self.doas)?;
        let table = self.grid.steering_table(m);
        let columns: Vec<&[Complex64]> = self
            .indices
            .iter()
            .chain(std::iter::once(&selection.index))
            .map(|&i| &table[i * m..(i + 1) * m])
            .collect();
        let a = CMatrix::from_columns(m, &columns)?;
        let p = match projector(&a) {
            Ok(p) => p,
            Err(LinalgError::SingularGram { .. }) => return Err(DetectorError::SaturatedSubspace),
            Err(e) => return Err(e.into()),
        };
        let p_perp = &CMatrix::identity(m) - &p;
        let residual_trace = trace_of_product(&p_perp, &self.r.matrix)?;
        Ok(Candidate {
            selection,
            p_perp,
            residual_trace,
        })
    }

    fn accept(&mut self, c: Candidate) {
        self.indices.push(c.selection.index);
        self.doas.push(c.selection.theta);
        self.p_perp = c.p_perp;
        self.residual_trace = c.residual_trace;
    }
}

/// Runs exactly `k_target` OLS steps.
pub fn ols_run(
    r: &SampleCovariance,
    k_target: usize,
    grid: &AngleGrid,
) -> Result<EstimationResult, DetectorError> {
    let m = r.dim();
    let max = resolve_max_targets(None, m)?;
    if k_target > max {
        return Err(DetectorError::Precondition(format!(
            "k_target {k_target} exceeds the maximum {max}"
        )));
    }
    let mut path = OlsPath::new(r, grid)?;
    let mut itc_trace = vec![(0, path.residual_trace)];
    while path.len() < k_target {
        let c = path.propose()?;
        path.accept(c);
        itc_trace.push((path.len(), path.residual_trace));
    }
    Ok(EstimationResult {
        method: Method::Ols,
        k_hat: path.len(),
        doas: path.doas,
        itc_trace,
        rank_k_hat: None,
    })
}

/// Selection criterion `2 DQ Tr[P⊥R] / max(σ², σc²) + η(k)`.
///
/// The first term is twice the negative Gaussian log-likelihood of all `DQ`
/// snapshots (`R` is the snapshot average), the same data the penalty counts
/// parameters for. Adding a target lowers the value exactly when the residual
/// reduction outweighs the penalty increment, roughly `2 max(σ², σc²)` per
/// target for AIC.
pub fn itc_ols_objective(
    residual_trace: f64,
    k: usize,
    cfg: &DetectorConfig,
    num_snapshots: usize,
) -> f64 {
    let floor = cfg.noise_variance.max(cfg.sigma_c_sq);
    2.0 * num_snapshots as f64 * residual_trace / floor
        + cfg.penalty.selection_penalty(k, num_snapshots)
}

fn selection_ols(
    r: &SampleCovariance,
    cfg: &DetectorConfig,
    forced: usize,
    method: Method,
    rank_k_hat: Option<usize>,
) -> Result<EstimationResult, DetectorError> {
    let max = cfg.effective_max(r.dim())?;
    let dq = r.num_snapshots;
    let mut path = OlsPath::new(r, &cfg.grid)?;
    let mut current = itc_ols_objective(path.residual_trace, 0, cfg, dq);
    let mut itc_trace = vec![(0, current)];
    while path.len() < max {
        let candidate = match path.propose() {
            Ok(c) => c,
            Err(DetectorError::SaturatedSubspace) => break,
            Err(e) => return Err(e),
        };
        let k_next = path.len() + 1;
        let value = itc_ols_objective(candidate.residual_trace, k_next, cfg, dq);
        itc_trace.push((k_next, value));
        if k_next <= forced || value < current {
            path.accept(candidate);
            current = value;
        } else {
            break;
        }
    }
    Ok(EstimationResult {
        method,
        k_hat: path.len(),
        doas: path.doas,
        itc_trace,
        rank_k_hat,
    })
}

/// Selection-based estimator: OLS steps continue while the criterion decreases.
pub fn joint_itc_ols(
    r: &SampleCovariance,
    cfg: &DetectorConfig,
) -> Result<EstimationResult, DetectorError> {
    selection_ols(r, cfg, 0, Method::Joint, None)
}

/// Hybrid estimator: the first `rank_k_hat` OLS angles are kept
/// unconditionally, later ones only if the selection criterion decreases.
pub fn hybrid_itc_ols(
    r: &SampleCovariance,
    cfg: &DetectorConfig,
) -> Result<EstimationResult, DetectorError> {
    let spectrum = hermitian_eigenvalues(&r.matrix)?;
    let rank = rank_itc(&spectrum, r.num_snapshots, cfg.penalty)?;
    hybrid_with_rank(r, cfg, rank.k_hat)
}

/// [`hybrid_itc_ols`] with a precomputed rank estimate.
pub fn hybrid_with_rank(
    r: &SampleCovariance,
    cfg: &DetectorConfig,
    rank_k_hat: usize,
) -> Result<EstimationResult, DetectorError> {
    let max = cfg.effective_max(r.dim())?;
    let forced = rank_k_hat.min(max);
    selection_ols(r, cfg, forced, Method::Hybrid, Some(forced))
}

/// Disjoint estimator: rank criterion for the count, then that many OLS steps.
pub fn disjoint_itc_ols(
    r: &SampleCovariance,
    penalty: PenaltyKind,
    grid: &AngleGrid,
) -> Result<EstimationResult, DetectorError> {
    let spectrum = hermitian_eigenvalues(&r.matrix)?;
    let rank = rank_itc(&spectrum, r.num_snapshots, penalty)?;
    disjoint_with_rank(r, &rank, grid)
}

/// [`disjoint_itc_ols`] with a precomputed rank estimate.
pub fn disjoint_with_rank(
    r: &SampleCovariance,
    rank: &RankEstimate,
    grid: &AngleGrid,
) -> Result<EstimationResult, DetectorError> {
    let max = resolve_max_targets(None, r.dim())?;
    let k = rank.k_hat.min(max);
    let ols = ols_run(r, k, grid)?;
    Ok(EstimationResult {
        method: Method::Disjoint,
        k_hat: ols.k_hat,
        doas: ols.doas,
        itc_trace: rank.values.iter().copied().enumerate().collect(),
        rank_k_hat: Some(rank.k_hat),
    })
}

/// Fixed residual threshold `σ² N √(2 N ln N)` with `N = D·Q·M`.
pub fn fixed_threshold(noise_variance: f64, n_obs: usize) -> f64 {
    let n = n_obs as f64;
    noise_variance * n * (2.0 * n * n.ln()).sqrt()
}

/// Baseline: OLS steps continue while `Tr[P⊥R]` exceeds [`fixed_threshold`].
pub fn threshold_ols(
    r: &SampleCovariance,
    noise_variance: f64,
    grid: &AngleGrid,
    max_targets: Option<usize>,
) -> Result<EstimationResult, DetectorError> {
    let m = r.dim();
    let max = resolve_max_targets(max_targets, m)?;
    let n_obs = r.num_snapshots * m;
    if n_obs < 2 {
        return Err(DetectorError::Precondition(
            "need at least two observations".into(),
        ));
    }
    let threshold = fixed_threshold(noise_variance, n_obs);
    let mut path = OlsPath::new(r, grid)?;
    let mut itc_trace = vec![(0, path.residual_trace)];
    while path.len() < max && path.residual_trace > threshold {
        let c = match path.propose() {
            Ok(c) => c,
            Err(DetectorError::SaturatedSubspace) => break,
            Err(e) => return Err(e),
        };
        path.accept(c);
        itc_trace.push((path.len(), path.residual_trace));
    }
    Ok(EstimationResult {
        method: Method::Threshold,
        k_hat: path.len(),
        doas: path.doas,
        itc_trace,
        rank_k_hat: None,
    })
}

/// Exhaustive maximum-likelihood fit on a small grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MlEstimate {
    pub indices: Vec<usize>,
    pub doas: Vec<f64>,
    pub residual_trace: f64,
}

/// Minimises `Tr[P⊥(Θ) R]` over every `k`-subset of the grid (`k ∈ {1, 2}`).
/// Intended as a reference for small problems only.
pub fn ml_exhaustive(
    r: &SampleCovariance,
    k: usize,
    grid: &AngleGrid,
) -> Result<MlEstimate, DetectorError> {
    if !(1..=2).contains(&k) {
        return Err(DetectorError::UnsupportedOrder(k));
    }
    let n = grid.resolution();
    if n > ML_MAX_GRID {
        return Err(DetectorError::Precondition(format!(
            "exhaustive search limited to {ML_MAX_GRID} grid points, got {n}"
        )));
    }
    let m = r.dim();
    let table = grid.steering_table(m);
    let col = |i: usize| &table[i * m..(i + 1) * m];
    let residual_for = |idx: &[usize]| -> Result<Option<f64>, DetectorError> {
        let cols: Vec<&[Complex64]> = idx.iter().map(|&i| col(i)).collect();
        let a = CMatrix::from_columns(m, &cols)?;
        match projector(&a) {
            Ok(p) => Ok(Some(trace_of_product(
                &(&CMatrix::identity(m) - &p),
                &r.matrix,
            )?)),
            Err(LinalgError::SingularGram { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut consider = |idx: Vec<usize>| -> Result<(), DetectorError> {
        if let Some(res) = residual_for(&idx)? {
            if best.as_ref().is_none_or(|(_, b)| res < *b) {
                best = Some((idx, res));
            }
        }
        Ok(())
    };
    if k == 1 {
        for i in 0..n {
            consider(vec![i])?;
        }
    } else {
        for i in 0..n {
            for j in (i + 1)..n {
                consider(vec![i, j])?;
            }
        }
    }
    let (indices, residual_trace) = best.ok_or(DetectorError::SaturatedSubspace)?;
    Ok(MlEstimate {
        doas: indices.iter().map(|&i| grid.points[i]).collect(),
        indices,
        residual_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::sample_covariance;
    use crate::linalg::hermitian_eigendecompose;
    use crate::scene::{synthesize_with, RadarConfig, Scene, SymbolModel, Target};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spectrum(values: &[f64]) -> EigenSpectrum {
        EigenSpectrum {
            eigenvalues: values.to_vec(),
            eigenvectors: None,
        }
    }

    /// Direct product/quotient evaluation of the rank criterion.
    fn rank_itc_direct(lambdas: &[f64], dq: f64, penalty: PenaltyKind) -> Vec<f64> {
        let m = lambdas.len();
        (0..m)
            .map(|k| {
                let tail = &lambdas[k..];
                let n = tail.len() as f64;
                let geo: f64 = tail.iter().map(|l| l.powf(1.0 / n)).product();
                let arith = tail.iter().sum::<f64>() / n;
                -2.0 * dq * n * (geo / arith).ln() + penalty.rank_penalty(k, m, dq as usize)
            })
            .collect()
    }

    fn noiseless_cov(thetas: &[f64], m: usize, q: usize) -> SampleCovariance {
        let cfg = RadarConfig {
            num_antennas: m,
            num_subcarriers: q,
            num_symbols: 1,
            ..RadarConfig::default()
        };
        let targets = thetas
            .iter()
            .enumerate()
            .map(|(i, &theta)| Target {
                theta,
                gain: Complex64::from_polar(1.0, 0.7 * i as f64),
                tau: (10.0 + 400.0 * i as f64) * 2.0 / crate::scene::SPEED_OF_LIGHT,
                doppler: 0.0,
            })
            .collect();
        let scene = Scene { targets, seed: 0 };
        let obs = synthesize_with(&scene, &cfg, 0.0, SymbolModel::Qpsk, 5).unwrap();
        sample_covariance(&obs).unwrap()
    }

    #[test]
    fn penalty_arithmetic() {
        assert_eq!(PenaltyKind::Aic.rank_penalty(1, 16, 5120), 62.0);
        let bic = PenaltyKind::Bic.rank_penalty(1, 16, 5120);
        assert!((bic - 31.0 * 5120f64.ln()).abs() < 1e-12);
        assert!((bic - 264.77).abs() < 0.005);
        assert_eq!(PenaltyKind::Aic.selection_penalty(2, 5120), 40964.0);
        assert_eq!(PenaltyKind::Aic.selection_penalty(0, 5120), 0.0);
    }

    #[test]
    fn rank_itc_white_noise_is_zero() {
        let est = rank_itc(&spectrum(&[2.5; 8]), 100, PenaltyKind::Aic).unwrap();
        assert_eq!(est.k_hat, 0);
        assert_eq!(est.values[0], 0.0);
        assert!(est.values.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rank_itc_matches_direct_evaluation() {
        let lambdas = [100.0, 1.0, 1.0, 1.0];
        let direct = rank_itc_direct(&lambdas, 1000.0, PenaltyKind::Aic);
        let est = rank_itc(&spectrum(&lambdas), 1000, PenaltyKind::Aic).unwrap();
        assert_eq!(argmin_first(&direct), 1);
        assert_eq!(est.k_hat, 1);
        for (a, b) in est.values.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn rank_itc_rejects_short_or_nonpositive_spectra() {
        assert!(rank_itc(&spectrum(&[1.0]), 10, PenaltyKind::Aic).is_err());
        assert!(rank_itc(&spectrum(&[1.0, 0.0]), 10, PenaltyKind::Aic).is_err());
    }

    #[test]
    fn rank_itc_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut l: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..10.0)).collect();
            l.sort_by(|a, b| b.total_cmp(a));
            let c = rng.gen_range(1e-3..1e3);
            let scaled: Vec<f64> = l.iter().map(|x| x * c).collect();
            let a = rank_itc(&spectrum(&l), 64, PenaltyKind::Bic).unwrap();
            let b = rank_itc(&spectrum(&scaled), 64, PenaltyKind::Bic).unwrap();
            assert_eq!(a.k_hat, b.k_hat);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-6 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn ula_quadratic_form_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 7;
        let mut x = CMatrix::zeros(m, m);
        for _ in 0..3 {
            let v: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            x = &x + &CMatrix::outer(&v);
        }
        let sums = diagonal_sums(&x);
        for u in [-0.9, -0.2, 0.0, 0.33, 0.99] {
            let a = steering_from_sine(u, m);
            let fast = ula_quadratic_form(&sums, &a);
            assert!((fast - x.quadratic_form(&a)).abs() < 1e-12 * x.max_abs() * m as f64);
        }
    }

    #[test]
    fn first_step_picks_noiseless_target_on_grid() {
        let grid = AngleGrid::uniform_sine(64).unwrap();
        let theta = grid.points()[40];
        let r = noiseless_cov(&[theta], 8, 16);
        let sel = ols_select(&r.matrix, &CMatrix::identity(8), &grid, &[]).unwrap();
        assert_eq!(sel.index, 40);
        assert_eq!(sel.theta, theta);
    }

    #[test]
    fn selected_angle_is_never_reselected() {
        let grid = AngleGrid::uniform_sine(64).unwrap();
        let theta = grid.points()[20];
        let r = noiseless_cov(&[theta], 8, 16);
        let a = crate::scene::steering_matrix(&[theta], 8).unwrap();
        let p_perp = crate::linalg::orthogonal_complement(&projector(&a).unwrap()).unwrap();
        let res = residual_covariance(&r, &p_perp).unwrap();
        let sel = ols_select(&res, &p_perp, &grid, &[theta]).unwrap();
        assert_ne!(sel.index, 20);
    }

    #[test]
    fn saturated_subspace_is_reported() {
        // Two-point grid, both selected: nothing admissible remains.
        let grid = AngleGrid::from_points(vec![-0.5, 0.5]).unwrap();
        let a = crate::scene::steering_matrix(&[-0.5, 0.5], 2).unwrap();
        let p_perp = &CMatrix::identity(2) - &projector(&a).unwrap();
        let res = CMatrix::zeros(2, 2);
        assert_eq!(
            ols_select(&res, &p_perp, &grid, &[]),
            Err(DetectorError::SaturatedSubspace)
        );
    }

    #[test]
    fn ols_run_recovers_two_targets() {
        let grid = AngleGrid::uniform_sine(64).unwrap();
        let truth = [grid.points()[10], grid.points()[45]];
        let r = noiseless_cov(&truth, 8, 32);
        let res = ols_run(&r, 2, &grid).unwrap();
        let mut got = res.doas.clone();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, truth.to_vec());
        assert!(ols_run(&r, 0, &grid).unwrap().doas.is_empty());
        assert!(ols_run(&r, 8, &grid).is_err());
        assert!(res.itc_trace.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn ml_and_ols_agree_at_order_one() {
        let grid = AngleGrid::uniform_sine(48).unwrap();
        let truth = [grid.points()[8], grid.points()[30]];
        let r = noiseless_cov(&truth, 6, 32);
        let ml = ml_exhaustive(&r, 1, &grid).unwrap();
        let sel = ols_select(&r.matrix, &CMatrix::identity(6), &grid, &[]).unwrap();
        assert_eq!(ml.indices, vec![sel.index]);

        let ml2 = ml_exhaustive(&r, 2, &grid).unwrap();
        assert_eq!(ml2.indices, vec![8, 30]);
        let lmax = hermitian_eigendecompose(&r.matrix).unwrap().largest();
        assert!(ml2.residual_trace.abs() < 1e-9 * lmax);

        assert_eq!(
            ml_exhaustive(&r, 3, &grid),
            Err(DetectorError::UnsupportedOrder(3))
        );
        let big = AngleGrid::uniform_sine(300).unwrap();
        assert!(ml_exhaustive(&r, 1, &big).is_err());
    }

    #[test]
    fn objective_examples() {
        let grid = Arc::new(AngleGrid::uniform_sine(16).unwrap());
        let cfg = DetectorConfig::new(PenaltyKind::Aic, 10f64.powf(-3.5), 1.0, grid);
        // correction inactive: denominator is σ² = 1
        assert_eq!(itc_ols_objective(3.0, 0, &cfg, 5120), 30720.0);
        assert_eq!(itc_ols_objective(0.0, 2, &cfg, 5120), 40964.0);
        assert_eq!(DetectorConfig::sigma_c_from_db(None), 0.0);
        assert!((DetectorConfig::sigma_c_from_db(Some(-35.0)) - 10f64.powf(-3.5)).abs() < 1e-18);
    }

    #[test]
    fn threshold_formula() {
        let t = fixed_threshold(1.0, 4);
        assert!((t - 4.0 * (8.0 * 4f64.ln()).sqrt()).abs() < 1e-12);
        assert!((t - 13.32).abs() < 0.005);
    }

    #[test]
    fn threshold_stops_immediately_below_threshold() {
        let grid = AngleGrid::uniform_sine(32).unwrap();
        let r = noiseless_cov(&[0.2], 4, 4);
        let res = threshold_ols(&r, 1.0, &grid, None).unwrap();
        assert_eq!(res.k_hat, 0);
        assert_eq!(res.itc_trace.len(), 1);
    }

    #[test]
    fn hybrid_forced_phase_and_boundaries() {
        let grid = Arc::new(AngleGrid::uniform_sine(64).unwrap());
        let r = noiseless_cov(&[grid.points()[12]], 4, 8);
        let mut cfg = DetectorConfig::new(PenaltyKind::Aic, 0.0, 1.0, grid);
        // rank at the cap: pure forced OLS
        let h = hybrid_with_rank(&r, &cfg, 3).unwrap();
        assert_eq!(h.k_hat, 3);
        assert_eq!(h.rank_k_hat, Some(3));
        // empty forced phase equals the joint detector
        let h0 = hybrid_with_rank(&r, &cfg, 0).unwrap();
        let j = joint_itc_ols(&r, &cfg).unwrap();
        assert_eq!(
            (h0.k_hat, &h0.doas, &h0.itc_trace),
            (j.k_hat, &j.doas, &j.itc_trace)
        );
        cfg.max_targets = Some(4);
        assert!(joint_itc_ols(&r, &cfg).is_err());
    }

    #[test]
    fn joint_stops_on_first_increase() {
        let grid = Arc::new(AngleGrid::uniform_sine(128).unwrap());
        let truth = [grid.points()[30], grid.points()[90]];
        let r = noiseless_cov(&truth, 8, 64);
        let cfg = DetectorConfig::new(PenaltyKind::Aic, 1e-4, 1e-6, grid);
        let j = joint_itc_ols(&r, &cfg).unwrap();
        assert_eq!(j.k_hat, 2);
        // two accepted steps plus one rejected evaluation
        assert_eq!(j.itc_trace.len(), 4);
        assert!(j.itc_trace[1].1 < j.itc_trace[0].1);
        assert!(j.itc_trace[2].1 < j.itc_trace[1].1);
        assert!(j.itc_trace[3].1 >= j.itc_trace[2].1);
    }
}
