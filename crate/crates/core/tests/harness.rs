use std::collections::HashSet;
use std::fs;

use itc_ols::detectors::{Method, PenaltyKind};
use itc_ols::experiment::{ExperimentSpec, OneOrMany, PenaltyChoice, SigmaC, SweepAxis};
use itc_ols::harness::{
    cell_layout, emit_scene_bundle, replay_bundle, run_experiment, run_seed, splitmix64,
    RESULTS_HEADER,
};
use itc_ols::scene::RadarConfig;

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        radar: RadarConfig {
            num_antennas: 8,
            num_subcarriers: 16,
            num_symbols: 4,
            ..RadarConfig::default()
        },
        k_true: 3,
        snr_db: OneOrMany::Many(vec![10.0, 40.0]),
        penalty: PenaltyChoice::Both,
        num_runs: 5,
        base_seed: 99,
        grid_resolution: 256,
        ..ExperimentSpec::default()
    }
}

#[test]
fn spec_survives_toml_round_trip() {
    let mut spec = small_spec();
    spec.sigma_c_db = OneOrMany::Many(vec![SigmaC::NegInf, SigmaC::Db(-35.0)]);
    spec.snr_db = OneOrMany::One(60.0);
    spec.max_targets = Some(5);
    let text = spec.to_toml_string();
    assert!(text.contains("neg_inf"));
    assert_eq!(ExperimentSpec::from_toml_str(&text).unwrap(), spec);
    assert_eq!(
        ExperimentSpec::from_toml_str(&ExperimentSpec::default().to_toml_string()).unwrap(),
        ExperimentSpec::default()
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let mut spec = small_spec();
    spec.num_runs = 1;
    let a = run_experiment(&spec, SweepAxis::Snr, Some(1)).unwrap();
    let b = run_experiment(&spec, SweepAxis::Snr, Some(1)).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_jsonl(), b.to_jsonl());
}

#[test]
fn csv_rows_parse_back_to_their_cells() {
    let spec = small_spec();
    let report = run_experiment(&spec, SweepAxis::Snr, None).unwrap();
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(RESULTS_HEADER));
    let layout = cell_layout(&spec);
    // disjoint, joint, hybrid for aic and bic, threshold once
    assert_eq!(layout.len(), 7);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * layout.len());
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 9, "{row}");
        assert_eq!(f[0], "snr");
        let method: Method = serde_json::from_value(serde_json::json!(f[2])).unwrap();
        let penalty = match f[3] {
            "none" => None,
            p => Some(serde_json::from_value::<PenaltyKind>(serde_json::json!(p)).unwrap()),
        };
        let summary = report.find(f[1], method, penalty).expect(row);
        assert_eq!(f[4].parse::<f64>().unwrap(), summary.report.hit_rate);
        assert_eq!(f[5].parse::<f64>().unwrap(), summary.report.fa_rate);
        assert_eq!(f[6].parse::<f64>().unwrap(), summary.report.youden_j);
        assert_eq!(f[7].parse::<f64>().unwrap(), summary.report.mean_k_hat);
        assert_eq!(f[8], "5");
        let j = summary.report.youden_j;
        assert!((-1.0..=1.0).contains(&j));
    }
}

#[test]
fn trials_are_paired_across_methods_and_points() {
    let spec = small_spec();
    let report = run_experiment(&spec, SweepAxis::Snr, Some(2)).unwrap();
    assert_eq!(report.trials.len(), 10);
    for t in &report.trials {
        assert_eq!(t.seed, run_seed(99, t.run_index));
        assert_eq!(t.noise_seed, splitmix64(t.seed));
        assert_eq!(t.detections.len(), 7);
        for d in &t.detections {
            assert_eq!(d.hits + d.misses, t.k_true);
            assert_eq!(d.hits + d.false_alarms, d.k_hat);
            assert_eq!(d.doas.len(), d.k_hat);
        }
    }
    // the same scene appears at every sweep point for a given run index
    for r in 0..5 {
        let scenes: Vec<_> = report
            .trials
            .iter()
            .filter(|t| t.run_index == r)
            .map(|t| &t.true_doas)
            .collect();
        assert_eq!(scenes.len(), 2);
        assert_eq!(scenes[0], scenes[1]);
    }
    let seeds: HashSet<u64> = report.trials.iter().map(|t| t.seed).collect();
    assert_eq!(seeds.len(), 5);
}

#[test]
fn outputs_match_across_worker_counts() {
    let spec = small_spec();
    let one = run_experiment(&spec, SweepAxis::Snr, Some(1)).unwrap();
    let many = run_experiment(&spec, SweepAxis::Snr, Some(8)).unwrap();
    assert_eq!(one.to_csv(), many.to_csv());
    assert_eq!(one.to_jsonl(), many.to_jsonl());
}

#[test]
fn one_bundle_per_cell_and_each_replays() {
    let spec = small_spec();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_scene_bundle(&spec, SweepAxis::Snr, dir.path()).unwrap();
    assert_eq!(paths.len(), 2 * cell_layout(&spec).len());
    let report = run_experiment(&spec, SweepAxis::Snr, Some(1)).unwrap();
    for p in &paths {
        let outcome = replay_bundle(p).unwrap();
        assert!(outcome.matches(), "{}", p.display());
        let b = &outcome.bundle;
        let original = report
            .trials
            .iter()
            .find(|t| t.run_index == 0 && t.sweep_value == b.sweep_value)
            .unwrap();
        let det = original
            .detections
            .iter()
            .find(|d| d.method == b.method && d.penalty == b.penalty)
            .unwrap();
        assert_eq!(det.doas, outcome.recomputed.doas);
    }
}

#[test]
fn corrupted_bundle_reports_field() {
    let spec = small_spec();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_scene_bundle(&spec, SweepAxis::Snr, dir.path()).unwrap();
    let text = fs::read_to_string(&paths[0]).unwrap();

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["radar"]["num_antennas"] = serde_json::json!("sixteen");
    fs::write(&paths[0], doc.to_string()).unwrap();
    let err = replay_bundle(&paths[0]).unwrap_err().to_string();
    assert!(err.contains("radar.num_antennas"), "{err}");

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["format"] = serde_json::json!("something-else/9");
    fs::write(&paths[0], doc.to_string()).unwrap();
    let err = replay_bundle(&paths[0]).unwrap_err().to_string();
    assert!(err.contains("format"), "{err}");
}

#[test]
fn sweep_axes_cover_q_and_sigma_c() {
    let mut spec = small_spec();
    spec.snr_db = OneOrMany::One(60.0);
    spec.q_sweep = Some(vec![8, 16]);
    spec.penalty = PenaltyChoice::Aic;
    spec.methods = vec![Method::Hybrid];
    let q = run_experiment(&spec, SweepAxis::Q, Some(1)).unwrap();
    let values: Vec<&str> = q.rows.iter().map(|r| r.sweep_value.as_str()).collect();
    assert_eq!(values, ["8", "16"]);

    spec.q_sweep = None;
    spec.sigma_c_db = OneOrMany::Many(vec![SigmaC::NegInf, SigmaC::Db(-35.0)]);
    let s = run_experiment(&spec, SweepAxis::SigmaC, Some(1)).unwrap();
    assert!(s.to_csv().contains("sigma-c,neg_inf,hybrid,aic,"));
}
