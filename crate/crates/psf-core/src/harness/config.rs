//! Experiment configuration: TOML sections with strict schemas.

use crate::ensemble::TrainConfig;
use crate::env::{Cartpole, Environment, NoiseSpec, Pendulum, SyntheticQuad};
use crate::error::{CoreError, Result};
use crate::filter::{FilterConfig, GainsPolicy};
use crate::termset::{ExpandParams, FitMethod, FitOptions};
use crate::tube::LipschitzBundle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    /// pendulum | cartpole | synthetic
    pub id: String,
    /// Hyperball bound on the raw process noise.
    pub epsilon: f64,
    #[serde(default)]
    pub noise_c0: Option<f64>,
    #[serde(default)]
    pub noise_c1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub episode_len: usize,
}

fn default_retrain_every() -> usize {
    5
}

fn default_initial_data() -> usize {
    8192
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub holdout_frac: f64,
    pub patience: usize,
    #[serde(default = "default_initial_data")]
    pub initial_data_size: usize,
    #[serde(default = "default_retrain_every")]
    pub retrain_every: usize,
}

impl EnsembleSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            members: self.members,
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            holdout_frac: self.holdout_frac,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub horizon: usize,
    pub xi: f64,
    #[serde(default = "default_penalty")]
    pub penalty_state: f64,
    #[serde(default = "default_penalty")]
    pub penalty_certainty: f64,
    #[serde(default = "default_penalty")]
    pub penalty_terminal: f64,
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_slack_tol")]
    pub slack_tol: f64,
    #[serde(default = "default_gains")]
    pub gains: String,
}

fn default_penalty() -> f64 {
    1e4
}
fn default_kkt_tol() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    40
}
fn default_slack_tol() -> f64 {
    1e-6
}
fn default_gains() -> String {
    "zero".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LipschitzSection {
    #[serde(default)]
    pub grad_mu: f64,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub certainty: f64,
}

impl LipschitzSection {
    pub fn to_bundle(&self) -> LipschitzBundle {
        LipschitzBundle {
            grad_mu: self.grad_mu,
            noise_scale: self.noise_scale,
            certainty: self.certainty,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    pub method: String,
    pub slack_threshold: f64,
    pub proximity_threshold: usize,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_knn_quantile")]
    pub knn_keep_quantile: f64,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_prob_level")]
    pub prob_level: f64,
    #[serde(default = "default_min_radius")]
    pub min_radius: f64,
}

fn default_knn_k() -> usize {
    10
}
fn default_knn_quantile() -> f64 {
    0.95
}
fn default_directions() -> usize {
    32
}
fn default_prob_level() -> f64 {
    0.7
}
fn default_min_radius() -> f64 {
    1e-3
}

impl TerminalSection {
    pub fn method(&self) -> Result<FitMethod> {
        match self.method.as_str() {
            "polytope" => Ok(FitMethod::Polytope),
            "ellipsoid" => Ok(FitMethod::Ellipsoid),
            other => Err(CoreError::Config(format!(
                "unknown terminal-set method {other:?}"
            ))),
        }
    }

    pub fn to_expand_params(&self) -> ExpandParams {
        ExpandParams {
            knn_k: self.knn_k,
            knn_keep_quantile: self.knn_keep_quantile,
            fit: FitOptions {
                directions: self.directions,
                min_radius: self.min_radius,
            },
            prob_level: self.prob_level,
            ..ExpandParams::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// random | noisy_lqr_goal | replay
    pub kind: String,
    #[serde(default = "default_policy_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub replay_path: Option<String>,
}

fn default_policy_noise() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub trajectories: usize,
    pub horizon: usize,
    pub z0: Vec<f64>,
    /// zero | lqr_env: ancillary feedback for the validation tube.
    #[serde(default = "default_gains")]
    pub gains: String,
    /// Use the ground-truth dynamics instead of a learned model.
    #[serde(default)]
    pub use_exact_model: bool,
    /// Load a pre-trained model instead of training one.
    #[serde(default)]
    pub model_path: Option<String>,
    /// Uniform sampling boxes for training transitions.
    #[serde(default)]
    pub train_state_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub train_state_hi: Option<Vec<f64>>,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
}

fn default_train_size() -> usize {
    30_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub run: RunSection,
    pub ensemble: EnsembleSection,
    pub filter: FilterSection,
    #[serde(default)]
    pub lipschitz: LipschitzSection,
    pub terminal: TerminalSection,
    pub policy: PolicySection,
    #[serde(default)]
    pub validate: Option<ValidateSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validated()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Load with `key=value` overrides applied to the raw TOML document
    /// (dotted paths, e.g. `filter.xi=0.8`).
    pub fn load_with_overrides(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e| CoreError::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("override {ov:?} must be key=value"))
            })?;
            let parsed: toml::Value = raw
                .parse::<toml::Value>()
                .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
            let mut cursor = &mut value;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                if i + 1 == parts.len() {
                    cursor
                        .as_table_mut()
                        .ok_or_else(|| CoreError::Config(format!("{key:?} is not a table path")))?
                        .insert(part.to_string(), parsed.clone());
                } else {
                    cursor = cursor
                        .as_table_mut()
                        .ok_or_else(|| CoreError::Config(format!("{key:?} is not a table path")))?
                        .entry(part.to_string())
                        .or_insert(toml::Value::Table(Default::default()));
                }
            }
        }
        let text = toml::to_string(&value).map_err(|e| CoreError::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    fn validated(self) -> Result<Self> {
        if self.run.seeds.is_empty() {
            return Err(CoreError::Config("run.seeds must not be empty".into()));
        }
        if self.run.episode_len == 0 {
            return Err(CoreError::Config("run.episode_len must be positive".into()));
        }
        self.terminal.method()?;
        self.gains_policy()?;
        match self.policy.kind.as_str() {
            "random" | "noisy_lqr_goal" | "replay" => {}
            other => {
                return Err(CoreError::Config(format!("unknown policy kind {other:?}")));
            }
        }
        self.filter_config()?.validate()?;
        Ok(self)
    }

    pub fn gains_policy(&self) -> Result<GainsPolicy> {
        match self.filter.gains.as_str() {
            "zero" => Ok(GainsPolicy::Zero),
            "lqr_at_state" => Ok(GainsPolicy::LqrAtState),
            other => Err(CoreError::Config(format!("unknown gains policy {other:?}"))),
        }
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>> {
        let eps = self.env.epsilon;
        let mut boxed: Box<dyn Environment> = match self.env.id.as_str() {
            "pendulum" => Box::new(Pendulum::new(eps)),
            "cartpole" => Box::new(Cartpole::new(eps)),
            "synthetic" => Box::new(SyntheticQuad::new(eps)),
            other => {
                return Err(CoreError::Config(format!("unknown environment {other:?}")))
            }
        };
        if self.env.noise_c0.is_some() || self.env.noise_c1.is_some() {
            let base = boxed.noise().clone();
            let spec = NoiseSpec {
                epsilon: eps,
                c0: self.env.noise_c0.unwrap_or(base.c0),
                c1: self.env.noise_c1.unwrap_or(base.c1),
                scale_index: base.scale_index,
            };
            boxed = match self.env.id.as_str() {
                "pendulum" => Box::new(Pendulum::with_noise(spec)),
                "cartpole" => Box::new(Cartpole::with_noise(spec)),
                "synthetic" => {
                    let mut env = SyntheticQuad::new(eps);
                    env.noise_mut().c0 = spec.c0;
                    env.noise_mut().c1 = spec.c1;
                    Box::new(env)
                }
                _ => unreachable!(),
            };
        }
        Ok(boxed)
    }

    pub fn filter_config(&self) -> Result<FilterConfig> {
        Ok(FilterConfig {
            horizon: self.filter.horizon,
            epsilon: self.env.epsilon,
            xi: self.filter.xi,
            lipschitz: self.lipschitz.to_bundle(),
            penalty_state: self.filter.penalty_state,
            penalty_certainty: self.filter.penalty_certainty,
            penalty_terminal: self.filter.penalty_terminal,
            kkt_tol: self.filter.kkt_tol,
            max_iters: self.filter.max_iters,
            slack_tol: self.filter.slack_tol,
            gains_policy: self.gains_policy()?,
            ..FilterConfig::default()
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Config(e.to_string()))
    }
}
