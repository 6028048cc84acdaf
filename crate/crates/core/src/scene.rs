//! Ground-truth target scenes and OFDM array snapshot synthesis.
//!
//! A uniform linear array with half-wavelength spacing observes `K` point
//! targets illuminated by a single-antenna OFDM access point. Each snapshot
//! `y[d,q]` (symbol `d`, subcarrier `q`) is `A(Θ) β'[d,q] + n[d,q]`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::CMatrix;

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("angle {0} rad is outside [-pi/2, pi/2]")]
    AngleDomain(f64),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error(
        "could not place {k} targets with sine separation {separation} after {attempts} draws"
    )]
    SeparationInfeasible {
        k: usize,
        separation: f64,
        attempts: usize,
    },
}

/// Array and waveform geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarConfig {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
    pub num_symbols: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_frequency_hz: f64,
    pub symbol_duration_s: f64,
}

impl Default for RadarConfig {
    /// 16-element array, 128 subcarriers at 78.125 kHz on a 5 GHz carrier,
    /// 10 symbols of 13.6 µs (12.8 µs useful + 0.8 µs guard).
    fn default() -> Self {
        Self {
            num_antennas: 16,
            num_subcarriers: 128,
            num_symbols: 10,
            subcarrier_spacing_hz: 78.125e3,
            carrier_frequency_hz: 5e9,
            symbol_duration_s: 13.6e-6,
        }
    }
}

impl RadarConfig {
    /// Carrier wavenumber `2π f / c` in rad/m.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.carrier_frequency_hz / SPEED_OF_LIGHT
    }

    /// Number of snapshots `D·Q`.
    pub fn num_snapshots(&self) -> usize {
        self.num_symbols * self.num_subcarriers
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |field: &str, reason: &str| {
            Err(SceneError::InvalidParameter {
                field: field.to_string(),
                reason: reason.to_string(),
            })
        };
        if self.num_antennas < 2 {
            return bad("num_antennas", "must be at least 2");
        }
        if self.num_subcarriers < 1 {
            return bad("num_subcarriers", "must be at least 1");
        }
        if self.num_symbols < 1 {
            return bad("num_symbols", "must be at least 1");
        }
        for (field, value) in [
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("symbol_duration_s", self.symbol_duration_s),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return bad(field, "must be finite and positive");
            }
        }
        Ok(())
    }
}

/// One point target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TargetRecord", into = "TargetRecord")]
pub struct Target {
    /// Direction of arrival in radians.
    pub theta: f64,
    pub gain: Complex64,
    /// Round-trip delay in seconds.
    pub tau: f64,
    /// Doppler shift in Hz.
    pub doppler: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetRecord {
    theta_rad: f64,
    gain_re: f64,
    gain_im: f64,
    tau_s: f64,
    doppler_hz: f64,
}

impl From<TargetRecord> for Target {
    fn from(r: TargetRecord) -> Self {
        Target {
            theta: r.theta_rad,
            gain: Complex64::new(r.gain_re, r.gain_im),
            tau: r.tau_s,
            doppler: r.doppler_hz,
        }
    }
}

impl From<Target> for TargetRecord {
    fn from(t: Target) -> Self {
        TargetRecord {
            theta_rad: t.theta,
            gain_re: t.gain.re,
            gain_im: t.gain.im,
            tau_s: t.tau,
            doppler_hz: t.doppler,
        }
    }
}

impl Target {
    pub fn validate(&self) -> Result<(), SceneError> {
        check_angle(self.theta)?;
        if !(self.gain.norm() > 0.0) {
            return Err(SceneError::InvalidParameter {
                field: "gain".into(),
                reason: "magnitude must be positive".into(),
            });
        }
        if !(self.tau >= 0.0) || !self.doppler.is_finite() {
            return Err(SceneError::InvalidParameter {
                field: "tau_s/doppler_hz".into(),
                reason: "delay must be non-negative and Doppler finite".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub targets: Vec<Target>,
    pub seed: u64,
}

impl Scene {
    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn doas(&self) -> Vec<f64> {
        self.targets.iter().map(|t| t.theta).collect()
    }

    /// `(1/K) Σ |α_k|²`, or zero for an empty scene.
    pub fn mean_gain_power(&self) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        self.targets.iter().map(|t| t.gain.norm_sqr()).sum::<f64>() / self.targets.len() as f64
    }
}

/// Sampling ranges for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneBounds {
    pub min_range_m: f64,
    pub max_range_m: f64,
    /// Angles are drawn uniformly in `sin θ` over `[-max_abs_sin, max_abs_sin]`.
    pub max_abs_sin: f64,
    pub max_speed_mps: f64,
    /// Minimum pairwise `|sin θi − sin θj|`; `None` imposes no constraint.
    pub min_separation_sin: Option<f64>,
}

impl Default for SceneBounds {
    fn default() -> Self {
        Self {
            min_range_m: 5.0,
            max_range_m: 60.0,
            max_abs_sin: (60.0_f64).to_radians().sin(),
            max_speed_mps: 10.0,
            min_separation_sin: None,
        }
    }
}

impl SceneBounds {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |field: &str, reason: &str| {
            Err(SceneError::InvalidParameter {
                field: field.to_string(),
                reason: reason.to_string(),
            })
        };
        if !(self.min_range_m > 0.0 && self.max_range_m >= self.min_range_m) {
            return bad(
                "min_range_m/max_range_m",
                "need 0 < min_range_m <= max_range_m",
            );
        }
        if !(self.max_abs_sin > 0.0 && self.max_abs_sin <= 1.0) {
            return bad("max_abs_sin", "must lie in (0, 1]");
        }
        if !(self.max_speed_mps >= 0.0 && self.max_speed_mps.is_finite()) {
            return bad("max_speed_mps", "must be finite and non-negative");
        }
        if let Some(sep) = self.min_separation_sin {
            if !(sep >= 0.0 && sep.is_finite()) {
                return bad("min_separation_sin", "must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Snapshot tensor `y[d][q]` of `M`-vectors plus the noise level used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub num_antennas: usize,
    pub num_symbols: usize,
    pub num_subcarriers: usize,
    /// Flattened in `(d, q, m)` order.
    pub snapshots: Vec<Complex64>,
    pub noise_variance: f64,
    /// Transmitted data symbols in `(d, q)` order. Kept for debugging only.
    pub symbols: Vec<Complex64>,
}

impl ObservationSet {
    pub fn num_snapshots(&self) -> usize {
        self.num_symbols * self.num_subcarriers
    }

    pub fn snapshot(&self, d: usize, q: usize) -> &[Complex64] {
        let m = self.num_antennas;
        let start = (d * self.num_subcarriers + q) * m;
        &self.snapshots[start..start + m]
    }

    pub fn iter_snapshots(&self) -> impl Iterator<Item = &[Complex64]> {
        self.snapshots.chunks_exact(self.num_antennas.max(1))
    }
}

/// Data-symbol model used by [`synthesize_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolModel {
    /// Uniform over the four unit-modulus QPSK points.
    Qpsk,
    /// Every symbol equals one.
    Unit,
}

fn check_angle(theta: f64) -> Result<(), SceneError> {
    if (-FRAC_PI_2..=FRAC_PI_2).contains(&theta) {
        Ok(())
    } else {
        Err(SceneError::AngleDomain(theta))
    }
}

/// ULA response `[1, e^{jπ sinθ}, …, e^{jπ(M−1) sinθ}]`.
pub fn steering_vector(theta: f64, m: usize) -> Result<Vec<Complex64>, SceneError> {
    check_angle(theta)?;
    Ok(steering_from_sine(theta.sin(), m))
}

/// Steering vector parameterised directly by `u = sin θ`.
pub(crate) fn steering_from_sine(u: f64, m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|i| Complex64::from_polar(1.0, PI * i as f64 * u))
        .collect()
}

/// `A(Θ) = [a(θ1) … a(θK)]`, an `M×K` matrix (possibly `M×0`).
pub fn steering_matrix(thetas: &[f64], m: usize) -> Result<CMatrix, SceneError> {
    let mut a = CMatrix::zeros(m, thetas.len());
    for (k, &theta) in thetas.iter().enumerate() {
        for (i, z) in steering_vector(theta, m)?.into_iter().enumerate() {
            a[(i, k)] = z;
        }
    }
    Ok(a)
}

/// `β[d,q,k] = α e^{−j2π k_c τ} e^{−j2π Δf τ q} e^{j2π f_D d T}`.
pub fn channel_coefficient(t: &Target, d: usize, q: usize, cfg: &RadarConfig) -> Complex64 {
    let carrier = -2.0 * PI * cfg.wavenumber() * t.tau;
    let range = -2.0 * PI * cfg.subcarrier_spacing_hz * t.tau * q as f64;
    let doppler = 2.0 * PI * t.doppler * d as f64 * cfg.symbol_duration_s;
    t.gain * Complex64::from_polar(1.0, carrier + range + doppler)
}

/// Noise variance for a requested SNR with unit mean target power.
pub fn noise_variance_for_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Draws the received snapshot tensor for `scene` at `snr_db`.
///
/// The noise variance is `10^(−snr/10)` when the scene has targets and one
/// for an empty scene. Output is fully determined by `rng_seed`.
pub fn synthesize(
    scene: &Scene,
    cfg: &RadarConfig,
    snr_db: f64,
    rng_seed: u64,
) -> Result<ObservationSet, SceneError> {
    let noise_variance = if scene.targets.is_empty() {
        1.0
    } else {
        noise_variance_for_snr(snr_db)
    };
    synthesize_with(scene, cfg, noise_variance, SymbolModel::Qpsk, rng_seed)
}

/// Lower-level synthesis with explicit noise variance (zero gives noiseless
/// snapshots) and symbol model.
pub fn synthesize_with(
    scene: &Scene,
    cfg: &RadarConfig,
    noise_variance: f64,
    symbols: SymbolModel,
    rng_seed: u64,
) -> Result<ObservationSet, SceneError> {
    cfg.validate()?;
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(SceneError::InvalidParameter {
            field: "noise_variance".into(),
            reason: "must be finite and non-negative".into(),
        });
    }
    for t in &scene.targets {
        t.validate()?;
    }
    let m = cfg.num_antennas;
    let (num_d, num_q) = (cfg.num_symbols, cfg.num_subcarriers);
    let steering: Vec<Vec<Complex64>> = scene
        .targets
        .iter()
        .map(|t| steering_from_sine(t.theta.sin(), m))
        .collect();

    // β factorises as base · rq^q · rd^d; phases are evaluated directly per
    // (d, q) to avoid accumulating rounding through repeated products.
    let kc = cfg.wavenumber();
    let bases: Vec<Complex64> = scene
        .targets
        .iter()
        .map(|t| t.gain * Complex64::from_polar(1.0, -2.0 * PI * kc * t.tau))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sigma = (noise_variance / 2.0).sqrt();
    let mut snapshots = Vec::with_capacity(num_d * num_q * m);
    let mut symbol_grid = Vec::with_capacity(num_d * num_q);
    let mut beta = vec![Complex64::new(0.0, 0.0); scene.targets.len()];
    for d in 0..num_d {
        for q in 0..num_q {
            let s = match symbols {
                SymbolModel::Qpsk => {
                    let idx: u8 = rng.gen_range(0..4);
                    Complex64::from_polar(1.0, PI / 4.0 * (2 * idx + 1) as f64)
                }
                SymbolModel::Unit => Complex64::new(1.0, 0.0),
            };
            symbol_grid.push(s);
            for (k, t) in scene.targets.iter().enumerate() {
                let phase = -2.0 * PI * cfg.subcarrier_spacing_hz * t.tau * q as f64
                    + 2.0 * PI * t.doppler * d as f64 * cfg.symbol_duration_s;
                beta[k] = bases[k] * Complex64::from_polar(1.0, phase) * s;
            }
            for i in 0..m {
                let mut y = Complex64::new(0.0, 0.0);
                for (k, b) in beta.iter().enumerate() {
                    y += steering[k][i] * b;
                }
                if noise_variance > 0.0 {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    y += Complex64::new(re, im) * sigma;
                }
                snapshots.push(y);
            }
        }
    }
    Ok(ObservationSet {
        num_antennas: m,
        num_symbols: num_d,
        num_subcarriers: num_q,
        snapshots,
        noise_variance,
        symbols: symbol_grid,
    })
}

/// Draws `k` targets at random positions and velocities.
///
/// Range is uniform in `[min_range, max_range]` with two-way delay `2r/c`,
/// `sin θ` uniform in `±max_abs_sin`, radial speed uniform in `±max_speed`
/// (Doppler `2vf/c`). Amplitudes follow `1/r²` and are rescaled so the mean
/// power is exactly one; phases are uniform.
pub fn random_scene(
    k: usize,
    cfg: &RadarConfig,
    rng_seed: u64,
    bounds: &SceneBounds,
) -> Result<Scene, SceneError> {
    const MAX_ANGLE_DRAWS: usize = 100_000;
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut sines: Vec<f64> = Vec::with_capacity(k);
    let mut targets = Vec::with_capacity(k);
    let mut draws = 0;
    for _ in 0..k {
        let r = rng.gen_range(bounds.min_range_m..=bounds.max_range_m);
        let u = loop {
            if draws == MAX_ANGLE_DRAWS {
                return Err(SceneError::SeparationInfeasible {
                    k,
                    separation: bounds.min_separation_sin.unwrap_or(0.0),
                    attempts: draws,
                });
            }
            draws += 1;
            let u = rng.gen_range(-bounds.max_abs_sin..=bounds.max_abs_sin);
            match bounds.min_separation_sin {
                Some(sep) if sines.iter().any(|&v| (u - v).abs() < sep) => continue,
                _ => break u,
            }
        };
        sines.push(u);
        let v = if bounds.max_speed_mps > 0.0 {
            rng.gen_range(-bounds.max_speed_mps..=bounds.max_speed_mps)
        } else {
            0.0
        };
        let phase = rng.gen_range(0.0..2.0 * PI);
        targets.push(Target {
            theta: u.asin(),
            gain: Complex64::from_polar(1.0 / (r * r), phase),
            tau: 2.0 * r / SPEED_OF_LIGHT,
            doppler: 2.0 * v * cfg.carrier_frequency_hz / SPEED_OF_LIGHT,
        });
    }
    if !targets.is_empty() {
        let mean_power =
            targets.iter().map(|t| t.gain.norm_sqr()).sum::<f64>() / targets.len() as f64;
        let scale = mean_power.sqrt().recip();
        for t in &mut targets {
            t.gain *= scale;
        }
    }
    Ok(Scene {
        targets,
        seed: rng_seed,
    })
}
