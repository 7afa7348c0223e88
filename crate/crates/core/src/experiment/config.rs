//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ab_test::DeploymentMode;
use crate::counterfactual_eval::{CipsConfig, TargetMode};
use crate::error::{Error, Result};
use crate::policies::{Hyperparams, Variant};
use crate::rng::{self, label};
use crate::sim_env::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsersConfig {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggingConfig {
    pub temperature: f64,
    /// Defaults to `1 / (10 · num_items)` when absent.
    pub epsilon_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoocvConfig {
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CipsSection {
    pub m: f64,
    pub m_grid: Vec<f64>,
    pub bootstrap_samples: usize,
    pub ci_level: f64,
    pub target_mode: TargetMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbTestConfig {
    pub users_per_arm: usize,
    pub mode: DeploymentMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub target_ctr: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub policies: Vec<Variant>,
    pub users: UsersConfig,
    pub env: EnvConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    pub logging: LoggingConfig,
    pub loocv: LoocvConfig,
    pub cips: CipsSection,
    pub abtest: AbTestConfig,
    pub calibration: CalibrationConfig,
}

impl ExperimentConfig {
    /// 200 training users, 500 test users and 50 items; runs in seconds.
    pub fn desk() -> Self {
        Self {
            seed: 2019,
            out_dir: PathBuf::from("out/desk"),
            policies: Variant::ALL.to_vec(),
            users: UsersConfig {
                train: 200,
                test: 500,
            },
            env: EnvConfig {
                num_items: 50,
                latent_dim: 16,
                user_drift_sigma: 0.05,
                click_scale: 0.25,
                click_offset: -5.03,
                organic_events_mean: 20.0,
                bandit_events_mean: 80.0,
                seed: 2019,
            },
            hyperparams: Hyperparams::default(),
            logging: LoggingConfig {
                temperature: 1.0,
                epsilon_floor: None,
            },
            loocv: LoocvConfig { folds: 10 },
            cips: CipsSection {
                m: 15.0,
                m_grid: vec![1.0, 2.0, 5.0, 15.0, f64::INFINITY],
                bootstrap_samples: 1000,
                ci_level: 0.95,
                target_mode: TargetMode::Deterministic,
            },
            abtest: AbTestConfig {
                users_per_arm: 2000,
                mode: DeploymentMode::Deterministic,
            },
            calibration: CalibrationConfig {
                target_ctr: 0.01,
                draws: 10_000,
            },
        }
    }

    /// 2000 training users, 5000 test users and 2000 items.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.out_dir = PathBuf::from("out/full");
        c.users = UsersConfig {
            train: 2000,
            test: 5000,
        };
        c.env.num_items = 2000;
        c.env.click_offset = -5.10;
        c.abtest.users_per_arm = 5000;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.env.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.env.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.env.seed != self.seed {
            return Err(Error::Config("env.seed must equal the root seed".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("no policies configured".into()));
        }
        let mut sorted = self.policies.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.policies.len() {
            return Err(Error::Config("policies listed more than once".into()));
        }
        if self.users.train == 0 || self.users.test == 0 || self.abtest.users_per_arm == 0 {
            return Err(Error::Config("user counts must be positive".into()));
        }
        if self.loocv.folds == 0 {
            return Err(Error::Config("loocv.folds must be at least 1".into()));
        }
        self.hyperparams.validate(self.env.num_items)?;
        let floor = self.logging_floor();
        if !(floor > 0.0 && floor <= 1.0 / self.env.num_items as f64) {
            return Err(Error::Config(
                "logging epsilon_floor must lie in (0, 1/num_items]".into(),
            ));
        }
        if !(self.logging.temperature > 0.0) {
            return Err(Error::Config("logging temperature must be positive".into()));
        }
        self.cips_config(self.cips.m).validate()?;
        if self.cips.m_grid.is_empty()
            || self.cips.m_grid.iter().any(|&m| !(m > 0.0))
            || self.cips.m_grid.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::Config("cips.m_grid must be positive and strictly ascending".into()));
        }
        if !(self.calibration.target_ctr > 0.0 && self.calibration.target_ctr < 1.0)
            || self.calibration.draws == 0
        {
            return Err(Error::Config("invalid calibration section".into()));
        }
        Ok(())
    }

    pub fn logging_floor(&self) -> f64 {
        self.logging
            .epsilon_floor
            .unwrap_or(1.0 / (10.0 * self.env.num_items as f64))
    }

    pub fn policy_hyperparams(&self) -> Hyperparams {
        Hyperparams {
            seed: self.seed,
            ..self.hyperparams.clone()
        }
    }

    pub fn cips_config(&self, clip_m: f64) -> CipsConfig {
        CipsConfig {
            clip_m,
            bootstrap_samples: self.cips.bootstrap_samples,
            ci_level: self.cips.ci_level,
            ci_seed: rng::derive_seed(self.seed, &[label::BOOTSTRAP]),
        }
    }

    pub fn loocv_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[label::LOOCV])
    }

    pub fn abtest_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[label::ABTEST])
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out_dir.join("train")
    }

    pub fn test_dir(&self) -> PathBuf {
        self.out_dir.join("test")
    }
}
