//! Run configuration: a single JSON document plus `key=value` overrides.
//!
//! All physical quantities are in units of κ (κ ≡ 1) and times in 1/κ.
//! Seeds are explicit; nothing falls back to the wall clock.

use cavlink_core::channel::NoiseConfig;
use cavlink_core::cqed::PhysicalParams;
use cavlink_core::protocol::QubitInput;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Protocol,
    Physical,
    EnvCheck,
    PulseDesign,
    OracleCompare,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QubitSpec {
    pub c0: [f64; 2],
    pub c1: [f64; 2],
}

impl QubitSpec {
    /// Default input used across the bundled experiments:
    /// c₀/√2 = −0.29+0.25i, c₁/√2 = 0.36+0.473i.
    pub fn reference() -> Self {
        let s = std::f64::consts::SQRT_2;
        QubitSpec {
            c0: [-0.29 * s, 0.25 * s],
            c1: [0.36 * s, 0.473 * s],
        }
    }

    pub fn to_qubit(&self) -> Result<QubitInput<f64>, CliError> {
        QubitInput::new(
            C64::new(self.c0[0], self.c0[1]),
            C64::new(self.c1[0], self.c1[1]),
        )
        .map_err(|e| CliError::Config(format!("qubit: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicalSpec {
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default = "default_one")]
    pub kappa: f64,
    #[serde(default)]
    pub kappa_loss_1: f64,
    #[serde(default)]
    pub kappa_loss_2: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_delta")]
    pub delta_laser: f64,
    #[serde(default)]
    pub delta_raman: f64,
}

fn default_g() -> f64 {
    5.0
}
fn default_one() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    10.0
}

impl Default for PhysicalSpec {
    fn default() -> Self {
        PhysicalSpec {
            g: default_g(),
            kappa: 1.0,
            kappa_loss_1: 0.0,
            kappa_loss_2: 0.0,
            gamma: 0.0,
            delta_laser: default_delta(),
            delta_raman: 0.0,
        }
    }
}

impl PhysicalSpec {
    pub fn to_params(&self) -> Result<PhysicalParams<f64>, CliError> {
        let p = PhysicalParams {
            g: self.g,
            kappa: self.kappa,
            kappa_loss_1: self.kappa_loss_1,
            kappa_loss_2: self.kappa_loss_2,
            gamma: self.gamma,
            delta_laser: self.delta_laser,
            delta_raman: self.delta_raman,
        };
        for w in p
            .validate()
            .map_err(|e| CliError::Config(format!("physical: {e}")))?
        {
            eprintln!("warning: {w}");
        }
        Ok(p)
    }
}

/// Environment models for the env-check mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvModelSpec {
    /// T and S act as rotations on disjoint two-dimensional factors.
    DisjointRotations { theta1: f64, theta2: f64 },
    /// T a bit flip, S a phase flip on one two-dimensional factor.
    NoncommutingFlips,
    /// One-dimensional environment: plain channel constants.
    Scalar {
        alpha: [f64; 2],
        beta: [f64; 2],
        gamma1: [f64; 2],
        gamma2: [f64; 2],
    },
}

impl EnvModelSpec {
    pub fn name(&self) -> String {
        match self {
            EnvModelSpec::DisjointRotations { .. } => "disjoint_rotations".into(),
            EnvModelSpec::NoncommutingFlips => "noncommuting_flips".into(),
            EnvModelSpec::Scalar { .. } => "scalar".into(),
        }
    }

    pub fn build(&self) -> Result<cavlink_core::channel::EnvironmentModel<f64>, CliError> {
        use cavlink_core::channel::{ChannelParams, EnvironmentModel};
        let res = match self {
            EnvModelSpec::DisjointRotations { theta1, theta2 } => {
                let rot = |th: f64| {
                    vec![
                        vec![C64::new(th.cos(), 0.0), C64::new(-th.sin(), 0.0)],
                        vec![C64::new(th.sin(), 0.0), C64::new(th.cos(), 0.0)],
                    ]
                };
                let xi = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
                EnvironmentModel::disjoint_reservoirs(rot(*theta1), xi.clone(), rot(*theta2), xi)
            }
            EnvModelSpec::NoncommutingFlips => EnvironmentModel::noncommuting_flips(),
            EnvModelSpec::Scalar {
                alpha,
                beta,
                gamma1,
                gamma2,
            } => ChannelParams::no_jump(
                C64::new(alpha[0], alpha[1]),
                C64::new(beta[0], beta[1]),
                C64::new(gamma1[0], gamma1[1]),
                C64::new(gamma2[0], gamma2[1]),
            )
            .and_then(|p| EnvironmentModel::scalar(&p)),
        };
        res.map_err(|e| CliError::Config(format!("environment model: {e}")))
    }
}

fn default_env_models() -> Vec<EnvModelSpec> {
    vec![
        EnvModelSpec::DisjointRotations {
            theta1: 0.4,
            theta2: 1.1,
        },
        EnvModelSpec::NoncommutingFlips,
    ]
}

/// Toy-system parameters for the oracle-compare mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSpec {
    #[serde(default = "default_one")]
    pub g: f64,
    #[serde(default = "default_drive")]
    pub drive: f64,
    #[serde(default = "default_kappa_toy")]
    pub kappa: f64,
    #[serde(default = "default_nmax")]
    pub n_max: usize,
    #[serde(default = "default_tfinal")]
    pub t_final: f64,
    #[serde(default = "default_ntraj")]
    pub n_traj: usize,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_drive() -> f64 {
    0.7
}
fn default_kappa_toy() -> f64 {
    0.6
}
fn default_nmax() -> usize {
    3
}
fn default_tfinal() -> f64 {
    4.0
}
fn default_ntraj() -> usize {
    5000
}
fn default_checkpoints() -> Vec<f64> {
    vec![0.8, 1.6, 2.4, 3.2, 4.0]
}
fn default_tolerance() -> f64 {
    0.02
}

impl Default for OracleSpec {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Explicit base seed; there is no wall-clock fallback.
    pub seed: u64,
    #[serde(default = "QubitSpec::reference")]
    pub qubit: QubitSpec,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub physical: PhysicalSpec,
    /// Optional pre-designed pulse CSV; designed on the fly when absent.
    #[serde(default)]
    pub pulse_file: Option<String>,
    #[serde(default = "default_gate_duration")]
    pub gate_duration: f64,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default = "default_env_models")]
    pub env_models: Vec<EnvModelSpec>,
    #[serde(default)]
    pub oracle: OracleSpec,
}

fn default_gate_duration() -> f64 {
    30.0
}
fn default_n_runs() -> usize {
    100
}
fn default_max_rounds() -> usize {
    100
}
fn default_dt() -> f64 {
    1e-3
}
fn default_out_dir() -> String {
    "out".into()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!(
                "config parse error at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.qubit.to_qubit()?;
        if let Some(noise) = &self.noise {
            noise
                .validate()
                .map_err(|e| CliError::Config(format!("noise: {e}")))?;
        }
        self.physical.to_params()?;
        if self.mode == Mode::Protocol && self.noise.is_none() {
            return Err(CliError::Config(
                "mode `protocol` requires a `noise` section".into(),
            ));
        }
        if self.n_runs == 0 {
            return Err(CliError::Config("n_runs must be ≥ 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(CliError::Config("max_rounds must be ≥ 1".into()));
        }
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(CliError::Config("dt must be positive".into()));
        }
        if self.gate_duration <= 0.0 || !self.gate_duration.is_finite() {
            return Err(CliError::Config("gate_duration must be positive".into()));
        }
        if self.oracle.n_traj == 0 || self.oracle.checkpoints.is_empty() {
            return Err(CliError::Config(
                "oracle section needs n_traj ≥ 1 and at least one checkpoint".into(),
            ));
        }
        Ok(())
    }
}

/// Apply `path=value` overrides onto the raw JSON document before parsing.
/// Paths are dot-separated; values parse as JSON scalars, falling back to
/// strings.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, CliError> {
    let mut doc: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!(
            "config parse error at line {}, column {}: {e}",
            e.line(),
            e.column()
        ))
    })?;
    for ov in overrides {
        let (path, raw) = ov.split_once('=').ok_or_else(|| {
            CliError::Config(format!("override `{ov}` is not of the form key=value"))
        })?;
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cursor = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (k, part) in parts.iter().enumerate() {
            if k + 1 == parts.len() {
                match cursor {
                    serde_json::Value::Object(map) => {
                        map.insert(part.to_string(), value.clone());
                    }
                    _ => {
                        return Err(CliError::Config(format!(
                            "override path `{path}` does not address an object"
                        )))
                    }
                }
            } else {
                cursor = cursor
                    .as_object_mut()
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "override path `{path}` does not address an object"
                        ))
                    })?
                    .entry(part.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()));
            }
        }
    }
    serde_json::to_string(&doc).map_err(|e| CliError::Config(e.to_string()))
}
