//! Detection scoring: optimal association of detections to ground truth,
//! hit / miss / false-alarm counting and Youden's J.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cost matrix row {row} has {got} columns, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("cannot aggregate an empty list of outcomes")]
    Empty,
}

/// Minimum-cost matching between rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched costs, accumulated in row order.
    pub total_cost: f64,
}

/// Hungarian algorithm (shortest augmenting paths with potentials), `O(n²m)`.
///
/// Rectangular inputs match `min(n, m)` pairs; the shorter side is always
/// fully assigned.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<Assignment, MetricsError> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    for (row, r) in cost.iter().enumerate() {
        if r.len() != m {
            return Err(MetricsError::Ragged {
                row,
                got: r.len(),
                expected: m,
            });
        }
        if let Some(col) = r.iter().position(|c| !c.is_finite()) {
            return Err(MetricsError::NonFinite { row, col });
        }
    }
    if n == 0 || m == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }
    let mut pairs = if n <= m {
        solve_wide(n, m, |i, j| cost[i][j])
    } else {
        solve_wide(m, n, |i, j| cost[j][i])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Ok(Assignment { pairs, total_cost })
}

/// Assigns every one of `n` rows to a distinct column out of `m >= n`.
fn solve_wide(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

/// Per-run detection counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub k_true: usize,
    pub k_hat: usize,
    pub hits: usize,
    pub false_alarms: usize,
    pub misses: usize,
    /// `(true index, detected index)` for every hit.
    pub assignment: Vec<(usize, usize)>,
}

/// Half the null-to-null main-lobe width of an `M`-element half-wavelength
/// ULA, in `sin θ`.
pub fn main_lobe_radius(m: usize) -> f64 {
    2.0 / m as f64
}

/// Associates detections with truths on `|sin θ̂ − sin θ|` and counts a hit
/// for every associated pair inside the main lobe. Associated pairs outside
/// it count as one miss and one false alarm.
pub fn classify(true_doas: &[f64], est_doas: &[f64], m: usize) -> DetectionOutcome {
    // Equal-cost assignments exist (e.g. two detections on the same side of
    // two truths), so both sides are put in sorted order first. The result
    // then depends only on the values, never on the order they arrive in.
    let truths = sorted_sines(true_doas);
    let dets = sorted_sines(est_doas);
    let cost: Vec<Vec<f64>> = truths
        .iter()
        .map(|&(_, t)| dets.iter().map(|&(_, e)| (e - t).abs()).collect())
        .collect();
    let radius = main_lobe_radius(m);
    let mut assignment: Vec<(usize, usize)> = if truths.is_empty() || dets.is_empty() {
        Vec::new()
    } else {
        hungarian_assign(&cost)
            .expect("sine distances are finite")
            .pairs
            .into_iter()
            .filter(|&(i, j)| cost[i][j] < radius)
            .map(|(i, j)| (truths[i].0, dets[j].0))
            .collect()
    };
    assignment.sort_unstable();
    let hits = assignment.len();
    DetectionOutcome {
        k_true: true_doas.len(),
        k_hat: est_doas.len(),
        hits,
        false_alarms: est_doas.len() - hits,
        misses: true_doas.len() - hits,
        assignment,
    }
}

fn sorted_sines(doas: &[f64]) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = doas.iter().map(|d| d.sin()).enumerate().collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1));
    v
}

/// Denominator used for the false-alarm rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FaNormalization {
    /// Fraction of all detections that are false alarms.
    #[default]
    PerDetection,
    /// False alarms per true target (may exceed one).
    PerTrueTarget,
    /// False alarms per grid cell not occupied by a target.
    PerGridCell { cells: usize },
}

/// Rates accumulated over many runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hit_rate: f64,
    pub fa_rate: f64,
    pub youden_j: f64,
    pub mean_k_hat: f64,
    pub runs: usize,
}

/// Pools counts over runs: `hit_rate = Σhits / ΣK`,
/// `fa_rate = Σfalse_alarms / ΣK̂` (zero when nothing was detected), and
/// `J = hit_rate − fa_rate`. With no true targets at all the hit rate is one.
pub fn aggregate(
    outcomes: &[DetectionOutcome],
    normalization: FaNormalization,
) -> Result<MetricsReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum = |f: fn(&DetectionOutcome) -> usize| outcomes.iter().map(f).sum::<usize>() as f64;
    let hits = sum(|o| o.hits);
    let fas = sum(|o| o.false_alarms);
    let k_true = sum(|o| o.k_true);
    let k_hat = sum(|o| o.k_hat);
    let hit_rate = if k_true > 0.0 { hits / k_true } else { 1.0 };
    let fa_den = match normalization {
        FaNormalization::PerDetection => k_hat,
        FaNormalization::PerTrueTarget => k_true,
        FaNormalization::PerGridCell { cells } => outcomes
            .iter()
            .map(|o| cells.saturating_sub(o.k_true) as f64)
            .sum(),
    };
    let fa_rate = if fa_den > 0.0 { fas / fa_den } else { 0.0 };
    Ok(MetricsReport {
        hit_rate,
        fa_rate,
        youden_j: hit_rate - fa_rate,
        mean_k_hat: k_hat / outcomes.len() as f64,
        runs: outcomes.len(),
    })
}
