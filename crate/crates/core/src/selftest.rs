//! Quick oracle and invariant checks runnable from the command line.
//!
//! Each check compares a library routine against an independent reference
//! (brute-force enumeration, a from-scratch projector) or an algebraic
//! identity, on a fixed set of seeded random inputs.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covariance::{residual_covariance, SampleCovariance};
use crate::detectors::{ols_select, rank_itc, AngleGrid, PenaltyKind};
use crate::linalg::{
    hermitian_eigendecompose, hermitian_eigenvalues, orthogonal_complement, projector,
    trace_of_product, CMatrix,
};
use crate::metrics::{classify, hungarian_assign};
use crate::scene::{steering_matrix, steering_vector};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

type Case = fn(&mut ChaCha8Rng) -> bool;

const CHECKS: [(&str, Case); 7] = [
    ("hungarian matches enumeration", hungarian_case),
    ("ratio selection matches trace argmin", selection_case),
    ("projector idempotent and complementary", projector_case),
    ("eigendecomposition reconstructs", evd_case),
    (
        "steering unit modulus and conjugate symmetry",
        steering_case,
    ),
    ("rank criterion scale invariant", rank_scale_case),
    ("classify conserves counts", classify_case),
];

/// Runs every check on `cases` seeded inputs.
pub fn run_all(cases: usize, seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let failures = (0..cases).filter(|_| !case(&mut rng)).count();
            CheckOutcome {
                name,
                cases,
                failures,
            }
        })
        .collect()
}

fn random_psd(rng: &mut ChaCha8Rng, m: usize) -> CMatrix {
    let data = (0..m * m)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let b = CMatrix::from_vec(m, m, data).expect("square");
    let mut r = b.matmul(&b.adjoint()).expect("square");
    r.symmetrize();
    r
}

fn separated_angles(rng: &mut ChaCha8Rng, k: usize, m: usize) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(k);
    while out.len() < k {
        let t: f64 = rng.gen_range(-1.5..1.5);
        if out
            .iter()
            .all(|u| (u.sin() - t.sin()).abs() >= 1.0 / m as f64)
        {
            out.push(t);
        }
    }
    out
}

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(row: usize, cost: &[Vec<f64>], used: &mut [bool], picked: usize, need: usize) -> f64 {
        if picked == need {
            return 0.0;
        }
        if row == cost.len() {
            return f64::INFINITY;
        }
        // either leave this row unassigned or assign it to a free column
        let mut best = if cost.len() - row > need - picked {
            go(row + 1, cost, used, picked, need)
        } else {
            f64::INFINITY
        };
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + go(row + 1, cost, used, picked + 1, need));
                used[j] = false;
            }
        }
        best
    }
    let need = cost.len().min(cost[0].len());
    go(0, cost, &mut vec![false; cost[0].len()], 0, need)
}

fn hungarian_case(rng: &mut ChaCha8Rng) -> bool {
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=5);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(0..40) as f64).collect())
        .collect();
    hungarian_assign(&cost).is_ok_and(|a| a.total_cost == brute_force(&cost))
}

fn selection_case(rng: &mut ChaCha8Rng) -> bool {
    let m = if rng.gen_bool(0.5) { 4 } else { 8 };
    let grid = AngleGrid::uniform_sine(64).expect("grid");
    let r = random_psd(rng, m);
    let k = rng.gen_range(0..3);
    let mut selected: Vec<f64> = Vec::new();
    while selected.len() < k {
        let t = grid.points()[rng.gen_range(0..grid.resolution())];
        if !selected.contains(&t) {
            selected.push(t);
        }
    }
    let p_perp = if k == 0 {
        CMatrix::identity(m)
    } else {
        let a = steering_matrix(&selected, m).expect("angles on grid");
        match projector(&a).and_then(|p| orthogonal_complement(&p)) {
            Ok(q) => q,
            Err(_) => return false,
        }
    };
    let cov = SampleCovariance {
        matrix: r.clone(),
        num_snapshots: 1,
    };
    let Ok(residual) = residual_covariance(&cov, &p_perp) else {
        return false;
    };
    let Ok(fast) = ols_select(&residual, &p_perp, &grid, &selected) else {
        return false;
    };
    let identity = CMatrix::identity(m);
    let mut best: Option<(usize, f64)> = None;
    for (i, &t) in grid.points().iter().enumerate() {
        if selected.contains(&t) {
            continue;
        }
        let mut cols = selected.clone();
        cols.push(t);
        let a = steering_matrix(&cols, m).expect("grid angles");
        if let Ok(p) = projector(&a) {
            let tr = trace_of_product(&(&identity - &p), &r).expect("square");
            if best.is_none_or(|(_, b)| tr < b) {
                best = Some((i, tr));
            }
        }
    }
    best.map(|b| b.0) == Some(fast.index)
}

fn projector_case(rng: &mut ChaCha8Rng) -> bool {
    let m = rng.gen_range(2..=10);
    let k = rng.gen_range(1..m);
    let a = steering_matrix(&separated_angles(rng, k, m), m).expect("angles in domain");
    let Ok(p) = projector(&a) else {
        return false;
    };
    let Ok(q) = orthogonal_complement(&p) else {
        return false;
    };
    let pp = p.matmul(&p).expect("square");
    let pq = p.matmul(&q).expect("square");
    pp.max_abs_diff(&p) < 1e-9 && pq.max_abs() < 1e-9
}

fn evd_case(rng: &mut ChaCha8Rng) -> bool {
    let m = rng.gen_range(1..=12);
    let r = random_psd(rng, m);
    hermitian_eigendecompose(&r)
        .ok()
        .and_then(|e| e.reconstruct())
        .is_some_and(|back| back.max_abs_diff(&r) <= 1e-9 * r.max_abs().max(1.0))
}

fn steering_case(rng: &mut ChaCha8Rng) -> bool {
    let m = rng.gen_range(1..=32);
    let theta = rng.gen_range(-1.5..1.5);
    let (Ok(a), Ok(b)) = (steering_vector(theta, m), steering_vector(-theta, m)) else {
        return false;
    };
    a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12)
        && a.iter().zip(&b).all(|(x, y)| (x.conj() - y).norm() < 1e-12)
}

fn rank_scale_case(rng: &mut ChaCha8Rng) -> bool {
    let m = rng.gen_range(2..=12);
    let r = random_psd(rng, m);
    let c = 10f64.powf(rng.gen_range(-4.0..4.0));
    let (Ok(a), Ok(b)) = (
        hermitian_eigenvalues(&r),
        hermitian_eigenvalues(&r.scale(c)),
    ) else {
        return false;
    };
    [PenaltyKind::Aic, PenaltyKind::Bic].iter().all(|&p| {
        match (rank_itc(&a, 64, p), rank_itc(&b, 64, p)) {
            (Ok(x), Ok(y)) => x.k_hat == y.k_hat,
            _ => false,
        }
    })
}

fn classify_case(rng: &mut ChaCha8Rng) -> bool {
    let truths: Vec<f64> = (0..rng.gen_range(0..6))
        .map(|_| rng.gen_range(-1.4..1.4))
        .collect();
    let mut dets: Vec<f64> = (0..rng.gen_range(0..8))
        .map(|_| rng.gen_range(-1.4..1.4))
        .collect();
    let m = rng.gen_range(2..32);
    let o = classify(&truths, &dets, m);
    dets.reverse();
    let r = classify(&truths, &dets, m);
    o.hits + o.misses == truths.len()
        && o.hits + o.false_alarms == dets.len()
        && (o.hits, o.false_alarms) == (r.hits, r.false_alarms)
}
