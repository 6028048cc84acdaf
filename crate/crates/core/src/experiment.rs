//! Experiment description: what to simulate, which detectors to compare and
//! along which axis to sweep. Parsed from TOML whose keys mirror the struct
//! fields.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{Method, PenaltyKind};
use crate::metrics::FaNormalization;
use crate::scene::{RadarConfig, SceneBounds};

/// Literal used for a correction level of −∞ dB (no correction).
pub const NEG_INF: &str = "neg_inf";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// A single value or a list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Correction level in dB; `NegInf` disables the correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SigmaCRepr", into = "SigmaCRepr")]
pub enum SigmaC {
    Db(f64),
    NegInf,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SigmaCRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<SigmaCRepr> for SigmaC {
    type Error = String;
    fn try_from(r: SigmaCRepr) -> Result<Self, String> {
        match r {
            SigmaCRepr::Number(db) if db.is_finite() => Ok(SigmaC::Db(db)),
            SigmaCRepr::Number(db) => Err(format!("non-finite level {db}; use \"{NEG_INF}\"")),
            SigmaCRepr::Text(s) if s == NEG_INF => Ok(SigmaC::NegInf),
            SigmaCRepr::Text(s) => Err(format!("expected a number or \"{NEG_INF}\", got \"{s}\"")),
        }
    }
}

impl From<SigmaC> for SigmaCRepr {
    fn from(s: SigmaC) -> Self {
        match s {
            SigmaC::Db(db) => SigmaCRepr::Number(db),
            SigmaC::NegInf => SigmaCRepr::Text(NEG_INF.to_string()),
        }
    }
}

impl SigmaC {
    /// Linear power; zero for −∞ dB.
    pub fn linear(self) -> f64 {
        match self {
            SigmaC::Db(db) => 10f64.powf(db / 10.0),
            SigmaC::NegInf => 0.0,
        }
    }
}

impl fmt::Display for SigmaC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaC::Db(db) => write!(f, "{db}"),
            SigmaC::NegInf => f.write_str(NEG_INF),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyChoice {
    #[default]
    Aic,
    Bic,
    Both,
}

impl PenaltyChoice {
    pub fn kinds(self) -> Vec<PenaltyKind> {
        match self {
            PenaltyChoice::Aic => vec![PenaltyKind::Aic],
            PenaltyChoice::Bic => vec![PenaltyKind::Bic],
            PenaltyChoice::Both => vec![PenaltyKind::Aic, PenaltyKind::Bic],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Snr,
    Q,
    SigmaC,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::Q => "q",
            SweepAxis::SigmaC => "sigma-c",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "snr" => Ok(SweepAxis::Snr),
            "q" => Ok(SweepAxis::Q),
            "sigma-c" => Ok(SweepAxis::SigmaC),
            other => Err(format!(
                "unknown sweep axis `{other}` (expected snr, q or sigma-c)"
            )),
        }
    }
}

fn default_sigma_c() -> OneOrMany<SigmaC> {
    OneOrMany::One(SigmaC::Db(-35.0))
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::Disjoint,
        Method::Joint,
        Method::Hybrid,
        Method::Threshold,
    ]
}

fn default_grid_resolution() -> usize {
    1024
}

/// Full description of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub radar: RadarConfig,
    pub k_true: usize,
    pub snr_db: OneOrMany<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_sweep: Option<Vec<usize>>,
    #[serde(default = "default_sigma_c")]
    pub sigma_c_db: OneOrMany<SigmaC>,
    #[serde(default)]
    pub penalty: PenaltyChoice,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub num_runs: usize,
    pub base_seed: u64,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    #[serde(default)]
    pub scene: SceneBounds,
    #[serde(default)]
    pub fa_normalization: FaNormalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_targets: Option<usize>,
}

impl Default for ExperimentSpec {
    /// Desk-scale defaults: 8 targets, 16 antennas, 128 subcarriers, 10
    /// symbols, 60 dB, AIC with a −35 dB correction, 500 runs.
    fn default() -> Self {
        Self {
            radar: RadarConfig::default(),
            k_true: 8,
            snr_db: OneOrMany::One(60.0),
            q_sweep: None,
            sigma_c_db: default_sigma_c(),
            penalty: PenaltyChoice::Aic,
            methods: default_methods(),
            num_runs: 500,
            base_seed: 1,
            grid_resolution: default_grid_resolution(),
            scene: SceneBounds::default(),
            fa_normalization: FaNormalization::PerDetection,
            max_targets: None,
        }
    }
}

/// One point along the sweep axis with every swept quantity resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub num_subcarriers: usize,
    pub sigma_c: SigmaC,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::invalid(path, e.into_inner().message().trim().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment spec serialises to TOML")
    }

    /// Checks value ranges and that only `axis` carries more than one value.
    pub fn validate(&self, axis: SweepAxis) -> Result<(), ConfigError> {
        self.radar
            .validate()
            .map_err(|e| ConfigError::invalid("radar", e.to_string()))?;
        self.scene
            .validate()
            .map_err(|e| ConfigError::invalid("scene", e.to_string()))?;
        if self.num_runs == 0 {
            return Err(ConfigError::invalid("num_runs", "must be at least 1"));
        }
        if self.grid_resolution < 2 {
            return Err(ConfigError::invalid(
                "grid_resolution",
                "must be at least 2",
            ));
        }
        let m = self.radar.num_antennas;
        let max = self.max_targets.unwrap_or(m - 1);
        if max == 0 || max > m - 1 {
            return Err(ConfigError::invalid(
                "max_targets",
                format!("must lie in 1..={}", m - 1),
            ));
        }
        if self.methods.is_empty() {
            return Err(ConfigError::invalid(
                "methods",
                "at least one method is required",
            ));
        }
        for (i, method) in self.methods.iter().enumerate() {
            if *method == Method::Ols {
                return Err(ConfigError::invalid(
                    format!("methods[{i}]"),
                    "expected one of disjoint, joint, hybrid, threshold",
                ));
            }
            if self.methods[..i].contains(method) {
                return Err(ConfigError::invalid(
                    format!("methods[{i}]"),
                    "duplicate method",
                ));
            }
        }
        let snr = self.snr_db.values();
        let sigma = self.sigma_c_db.values();
        let check_len = |path: &str, n: usize, swept: bool| {
            if n == 0 {
                Err(ConfigError::invalid(path, "must not be empty"))
            } else if !swept && n > 1 {
                Err(ConfigError::invalid(
                    path,
                    format!("has {n} values but the sweep axis is `{axis}`"),
                ))
            } else {
                Ok(())
            }
        };
        check_len("snr_db", snr.len(), axis == SweepAxis::Snr)?;
        check_len("sigma_c_db", sigma.len(), axis == SweepAxis::SigmaC)?;
        if let Some(i) = snr.iter().position(|s| !s.is_finite()) {
            return Err(ConfigError::invalid(
                format!("snr_db[{i}]"),
                "must be finite",
            ));
        }
        match (&self.q_sweep, axis) {
            (None, SweepAxis::Q) => {
                return Err(ConfigError::invalid("q_sweep", "required when sweeping q"));
            }
            (Some(q), _) => {
                check_len("q_sweep", q.len(), axis == SweepAxis::Q)?;
                if let Some(i) = q.iter().position(|&q| q == 0) {
                    return Err(ConfigError::invalid(
                        format!("q_sweep[{i}]"),
                        "must be positive",
                    ));
                }
            }
            (None, _) => {}
        }
        Ok(())
    }

    /// Resolved sweep points, in configuration order.
    pub fn sweep_points(&self, axis: SweepAxis) -> Vec<SweepPoint> {
        let snr = self.snr_db.values();
        let sigma = self.sigma_c_db.values();
        let qs = self
            .q_sweep
            .clone()
            .unwrap_or_else(|| vec![self.radar.num_subcarriers]);
        let base = SweepPoint {
            snr_db: snr[0],
            num_subcarriers: qs[0],
            sigma_c: sigma[0],
        };
        match axis {
            SweepAxis::Snr => snr
                .iter()
                .map(|&snr_db| SweepPoint { snr_db, ..base })
                .collect(),
            SweepAxis::Q => qs
                .iter()
                .map(|&num_subcarriers| SweepPoint {
                    num_subcarriers,
                    ..base
                })
                .collect(),
            SweepAxis::SigmaC => sigma
                .iter()
                .map(|&sigma_c| SweepPoint { sigma_c, ..base })
                .collect(),
        }
    }
}

impl SweepPoint {
    /// Label of this point along `axis`, as written to CSV.
    pub fn label(&self, axis: SweepAxis) -> String {
        match axis {
            SweepAxis::Snr => format!("{}", self.snr_db),
            SweepAxis::Q => format!("{}", self.num_subcarriers),
            SweepAxis::SigmaC => self.sigma_c.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
k_true = 8
snr_db = [0, 20, 40, 60]
sigma_c_db = -35
penalty = "aic"
methods = ["disjoint", "joint", "hybrid", "threshold"]
num_runs = 10
base_seed = 7
grid_resolution = 512

[radar]
num_antennas = 16
num_subcarriers = 128
num_symbols = 10
subcarrier_spacing_hz = 78125.0
carrier_frequency_hz = 5e9
symbol_duration_s = 13.6e-6
"#;

    #[test]
    fn parses_sample_and_validates() {
        let spec = ExperimentSpec::from_toml_str(SAMPLE).unwrap();
        assert_eq!(spec.snr_db.values(), vec![0.0, 20.0, 40.0, 60.0]);
        assert_eq!(spec.sigma_c_db.values(), vec![SigmaC::Db(-35.0)]);
        spec.validate(SweepAxis::Snr).unwrap();
        let err = spec.validate(SweepAxis::SigmaC).unwrap_err();
        assert!(err.to_string().contains("snr_db"), "{err}");
        let pts = spec.sweep_points(SweepAxis::Snr);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[2].label(SweepAxis::Snr), "40");
    }

    #[test]
    fn neg_inf_sentinel_round_trips() {
        let text = SAMPLE
            .replace(
                "sigma_c_db = -35",
                r#"sigma_c_db = ["neg_inf", -35, -45.5]"#,
            )
            .replace("snr_db = [0, 20, 40, 60]", "snr_db = 60");
        let spec = ExperimentSpec::from_toml_str(&text).unwrap();
        assert_eq!(
            spec.sigma_c_db.values(),
            vec![SigmaC::NegInf, SigmaC::Db(-35.0), SigmaC::Db(-45.5)]
        );
        spec.validate(SweepAxis::SigmaC).unwrap();
        let labels: Vec<String> = spec
            .sweep_points(SweepAxis::SigmaC)
            .iter()
            .map(|p| p.label(SweepAxis::SigmaC))
            .collect();
        assert_eq!(labels, vec!["neg_inf", "-35", "-45.5"]);
        assert_eq!(SigmaC::NegInf.linear(), 0.0);
        let back = ExperimentSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentSpec::from_toml_str(
            &SAMPLE.replace("num_antennas = 16", "num_antennas = \"x\""),
        )
        .unwrap_err();
        assert!(err.to_string().contains("radar.num_antennas"), "{err}");

        let err =
            ExperimentSpec::from_toml_str(&SAMPLE.replace("num_runs = 10\n", "")).unwrap_err();
        assert!(err.to_string().contains("num_runs"), "{err}");

        let spec = ExperimentSpec::from_toml_str(&SAMPLE.replace("num_runs = 10", "num_runs = 0"))
            .unwrap();
        let err = spec.validate(SweepAxis::Snr).unwrap_err();
        assert!(err.to_string().contains("`num_runs`"), "{err}");

        let spec = ExperimentSpec::from_toml_str(SAMPLE).unwrap();
        let err = spec.validate(SweepAxis::Q).unwrap_err();
        assert!(err.to_string().contains("`snr_db`"), "{err}");
        let spec = ExperimentSpec::from_toml_str(&SAMPLE.replace("[0, 20, 40, 60]", "20")).unwrap();
        let err = spec.validate(SweepAxis::Q).unwrap_err();
        assert!(err.to_string().contains("q_sweep"), "{err}");

        let bad = SAMPLE.replace("methods = [\"disjoint\",", "methods = [\"ols\",");
        let spec = ExperimentSpec::from_toml_str(&bad).unwrap();
        assert!(spec
            .validate(SweepAxis::Snr)
            .unwrap_err()
            .to_string()
            .contains("methods[0]"));
    }
}
