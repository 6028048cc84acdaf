use std::sync::Arc;

use itc_ols::covariance::{sample_covariance, SampleCovariance};
use itc_ols::detectors::{
    hybrid_itc_ols, hybrid_with_rank, joint_itc_ols, ml_exhaustive, ols_run, rank_itc, AngleGrid,
    DetectorConfig, Method, PenaltyKind,
};
use itc_ols::linalg::hermitian_eigenvalues;
use itc_ols::metrics::classify;
use itc_ols::scene::{
    random_scene, synthesize, synthesize_with, RadarConfig, Scene, SceneBounds, SymbolModel, Target,
};
use num_complex::Complex64;

fn radar(m: usize, q: usize, d: usize) -> RadarConfig {
    RadarConfig {
        num_antennas: m,
        num_subcarriers: q,
        num_symbols: d,
        ..RadarConfig::default()
    }
}

fn observe(
    k: usize,
    cfg: &RadarConfig,
    snr_db: f64,
    seed: u64,
    bounds: &SceneBounds,
) -> (Scene, SampleCovariance, f64) {
    let scene = random_scene(k, cfg, seed, bounds).unwrap();
    let obs = synthesize(&scene, cfg, snr_db, seed ^ 0xABCD).unwrap();
    let r = sample_covariance(&obs).unwrap();
    (scene, r, obs.noise_variance)
}

fn config(
    penalty: PenaltyKind,
    sigma_c_sq: f64,
    noise: f64,
    grid: &Arc<AngleGrid>,
) -> DetectorConfig {
    DetectorConfig::new(penalty, sigma_c_sq, noise, Arc::clone(grid))
}

#[test]
fn ml_never_worse_than_two_ols_steps() {
    let cfg = radar(6, 16, 2);
    let grid = AngleGrid::uniform_sine(64).unwrap();
    for seed in 0..100u64 {
        let (_, r, _) = observe(2, &cfg, 5.0, seed, &SceneBounds::default());
        let ml = ml_exhaustive(&r, 2, &grid).unwrap();
        let ols = ols_run(&r, 2, &grid).unwrap();
        let ols_residual = ols.itc_trace.last().unwrap().1;
        assert!(
            ml.residual_trace <= ols_residual * (1.0 + 1e-12),
            "seed {seed}"
        );

        let ml1 = ml_exhaustive(&r, 1, &grid).unwrap();
        assert_eq!(ml1.doas[0], ols.doas[0], "seed {seed}");
    }
}

#[test]
fn ml_annihilates_noiseless_pair_on_grid() {
    let cfg = radar(8, 16, 2);
    let grid = AngleGrid::uniform_sine(64).unwrap();
    let truth = [grid.points()[10], grid.points()[45]];
    let scene = Scene {
        targets: truth
            .iter()
            .map(|&theta| Target {
                theta,
                gain: Complex64::new(1.0, 0.0),
                tau: 0.0,
                doppler: 0.0,
            })
            .collect(),
        seed: 0,
    };
    let obs = synthesize_with(&scene, &cfg, 0.0, SymbolModel::Qpsk, 1).unwrap();
    let r = sample_covariance(&obs).unwrap();
    let ml = ml_exhaustive(&r, 2, &grid).unwrap();
    let mut idx = ml.indices.clone();
    idx.sort();
    assert_eq!(idx, vec![10, 45]);
    assert!(ml.residual_trace < 1e-9 * hermitian_eigenvalues(&r.matrix).unwrap().largest());

    let ols = ols_run(&r, 2, &grid).unwrap();
    let mut got = ols.doas.clone();
    got.sort_by(f64::total_cmp);
    assert_eq!(got, truth.to_vec());
}

#[test]
fn ols_selection_is_scale_invariant() {
    let cfg = radar(8, 16, 4);
    let grid = AngleGrid::uniform_sine(256).unwrap();
    for seed in 0..30u64 {
        let (_, r, _) = observe(3, &cfg, 10.0, seed, &SceneBounds::default());
        let scaled = SampleCovariance {
            matrix: r.matrix.scale(1e3),
            num_snapshots: r.num_snapshots,
        };
        assert_eq!(
            ols_run(&r, 4, &grid).unwrap().doas,
            ols_run(&scaled, 4, &grid).unwrap().doas
        );
    }
}

#[test]
fn joint_finds_nothing_in_noise() {
    let cfg = radar(16, 64, 4);
    let grid = Arc::new(AngleGrid::uniform_sine(512).unwrap());
    let empty = Scene {
        targets: vec![],
        seed: 0,
    };
    let mut zeros = 0;
    for seed in 0..200u64 {
        let obs = synthesize(&empty, &cfg, 0.0, 0x900 + seed).unwrap();
        let r = sample_covariance(&obs).unwrap();
        let c = config(
            PenaltyKind::Aic,
            10f64.powf(-3.5),
            obs.noise_variance,
            &grid,
        );
        zeros += usize::from(joint_itc_ols(&r, &c).unwrap().k_hat == 0);
    }
    assert!(zeros >= 180, "k_hat = 0 in {zeros}/200 runs");
}

#[test]
fn removing_the_floor_never_reduces_false_alarms() {
    let cfg = radar(16, 64, 4);
    let grid = Arc::new(AngleGrid::uniform_sine(1024).unwrap());
    let bounds = SceneBounds {
        min_separation_sin: Some(0.375),
        ..SceneBounds::default()
    };
    let (mut fa_floor, mut fa_none) = (0, 0);
    for seed in 0..100u64 {
        let (scene, r, noise) = observe(3, &cfg, 60.0, seed, &bounds);
        let with = joint_itc_ols(
            &r,
            &config(PenaltyKind::Aic, 10f64.powf(-3.5), noise, &grid),
        )
        .unwrap();
        let without = joint_itc_ols(&r, &config(PenaltyKind::Aic, 0.0, noise, &grid)).unwrap();
        // same OLS path, so the lower floor can only extend it
        assert!(without.k_hat >= with.k_hat, "seed {seed}");
        assert_eq!(&without.doas[..with.k_hat], &with.doas[..]);
        let a = classify(&scene.doas(), &with.doas, 16).false_alarms;
        let b = classify(&scene.doas(), &without.doas, 16).false_alarms;
        assert!(b >= a, "seed {seed}");
        fa_floor += a;
        fa_none += b;
    }
    assert!(fa_none > fa_floor, "{fa_none} vs {fa_floor}");
}

#[test]
fn hybrid_keeps_at_least_the_rank_estimate() {
    let cfg = radar(8, 16, 4);
    let grid = Arc::new(AngleGrid::uniform_sine(256).unwrap());
    for seed in 0..80u64 {
        let k = (seed % 6) as usize;
        let snr = [-5.0, 5.0, 20.0, 40.0][(seed % 4) as usize];
        let (_, r, noise) = observe(k, &cfg, snr, seed, &SceneBounds::default());
        for penalty in [PenaltyKind::Aic, PenaltyKind::Bic] {
            let c = config(penalty, 10f64.powf(-3.5), noise, &grid);
            let rank = rank_itc(
                &hermitian_eigenvalues(&r.matrix).unwrap(),
                r.num_snapshots,
                penalty,
            )
            .unwrap();
            let h = hybrid_itc_ols(&r, &c).unwrap();
            assert_eq!(h.rank_k_hat, Some(rank.k_hat.min(7)));
            assert!(h.k_hat >= rank.k_hat.min(7), "seed {seed}");
            for forced in 0..=7 {
                assert!(hybrid_with_rank(&r, &c, forced).unwrap().k_hat >= forced);
            }
        }
    }
}

#[test]
fn hybrid_boundaries() {
    let cfg = radar(8, 16, 4);
    let grid = Arc::new(AngleGrid::uniform_sine(256).unwrap());
    for seed in 0..20u64 {
        let (_, r, noise) = observe(2, &cfg, 10.0, seed, &SceneBounds::default());
        let c = config(PenaltyKind::Aic, 10f64.powf(-3.5), noise, &grid);
        let j = joint_itc_ols(&r, &c).unwrap();
        let h0 = hybrid_with_rank(&r, &c, 0).unwrap();
        assert_eq!(h0.method, Method::Hybrid);
        assert_eq!(
            (h0.k_hat, &h0.doas, &h0.itc_trace),
            (j.k_hat, &j.doas, &j.itc_trace)
        );

        let full = hybrid_with_rank(&r, &c, 7).unwrap();
        let ols = ols_run(&r, 7, &grid).unwrap();
        assert_eq!(full.doas, ols.doas);
        assert_eq!(full.itc_trace.len(), 8);
    }
}

#[test]
fn joint_trace_decreases_until_it_stops() {
    let cfg = radar(8, 32, 4);
    let grid = Arc::new(AngleGrid::uniform_sine(256).unwrap());
    for seed in 0..100u64 {
        let k = (seed % 5) as usize;
        let snr = [0.0, 10.0, 30.0, 60.0][(seed % 4) as usize];
        let (_, r, noise) = observe(k, &cfg, snr, seed, &SceneBounds::default());
        for penalty in [PenaltyKind::Aic, PenaltyKind::Bic] {
            let est = joint_itc_ols(&r, &config(penalty, 10f64.powf(-3.5), noise, &grid)).unwrap();
            let values: Vec<f64> = est.itc_trace.iter().map(|p| p.1).collect();
            for i in 0..est.k_hat {
                assert!(values[i + 1] < values[i], "seed {seed}: {values:?}");
            }
            if est.k_hat < 7 {
                assert_eq!(values.len(), est.k_hat + 2);
                assert!(values[est.k_hat + 1] >= values[est.k_hat]);
            }
        }
    }
}

#[test]
fn bic_never_detects_more_than_aic() {
    let cfg = radar(16, 64, 4);
    let grid = Arc::new(AngleGrid::uniform_sine(512).unwrap());
    for seed in 0..60u64 {
        let (_, r, noise) = observe(
            (seed % 9) as usize,
            &cfg,
            [0.0, 20.0, 60.0][(seed % 3) as usize],
            seed,
            &SceneBounds::default(),
        );
        let aic = joint_itc_ols(
            &r,
            &config(PenaltyKind::Aic, 10f64.powf(-3.5), noise, &grid),
        )
        .unwrap();
        let bic = joint_itc_ols(
            &r,
            &config(PenaltyKind::Bic, 10f64.powf(-3.5), noise, &grid),
        )
        .unwrap();
        assert!(bic.k_hat <= aic.k_hat, "seed {seed}");
    }
}

#[test]
fn rank_criterion_sees_strong_targets() {
    let cfg = radar(16, 64, 4);
    let bounds = SceneBounds {
        min_separation_sin: Some(0.375),
        ..SceneBounds::default()
    };
    let mut exact = 0;
    for seed in 0..50u64 {
        let (_, r, _) = observe(3, &cfg, 40.0, seed, &bounds);
        let spectrum = hermitian_eigenvalues(&r.matrix).unwrap();
        exact += usize::from(
            rank_itc(&spectrum, r.num_snapshots, PenaltyKind::Bic)
                .unwrap()
                .k_hat
                == 3,
        );
    }
    assert!(exact >= 48, "{exact}/50");
}
