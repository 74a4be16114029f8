//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::a2c::A2cConfig;
use crate::craftworld::{generate_craftworld, CraftWorldParams};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::index::{KeyInit, DEFAULT_TOP_P};
use crate::meta::MetaTrainConfig;
use crate::oracle::OracleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSource {
    /// Generated CraftWorld; `preset` is `desk` or `full`.
    Craftworld {
        preset: String,
        #[serde(default)]
        seed: u64,
    },
    /// Authored domain file, relative to the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverSection {
    pub hidden: usize,
    pub key_dim: usize,
    #[serde(default = "one")]
    pub key_init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    pub iterations: usize,
    #[serde(default = "batch")]
    pub batch_size: usize,
    #[serde(default = "lr_meta")]
    pub learning_rate: f64,
    #[serde(default = "top_p")]
    pub top_p: f64,
    #[serde(default = "orders")]
    pub orders_per_call: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct A2cSection {
    #[serde(default = "lr_a2c")]
    pub learning_rate: f64,
    #[serde(default = "gamma")]
    pub gamma: f64,
    #[serde(default = "entropy")]
    pub entropy_coef: f64,
    #[serde(default = "value")]
    pub value_coef: f64,
    #[serde(default = "episodes")]
    pub episodes_per_update: usize,
    #[serde(default)]
    pub hidden: usize,
    pub env_steps: usize,
    #[serde(default = "eval_every")]
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub baselines: Vec<String>,
    #[serde(default = "cap")]
    pub max_test_variants: usize,
    /// Inclusive recipe-length ranges for the completion breakdown.
    #[serde(default)]
    pub length_buckets: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub fractions: Vec<f64>,
    #[serde(default = "three")]
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSource,
    pub retriever: RetrieverSection,
    pub meta: MetaSection,
    pub a2c: A2cSection,
    pub evaluation: EvaluationSection,
    pub sweep: Option<SweepSection>,
    /// Directory the config was read from; resolves relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> f64 {
    1.0
}
fn batch() -> usize {
    32
}
fn lr_meta() -> f64 {
    1e-3
}
fn top_p() -> f64 {
    DEFAULT_TOP_P
}
fn orders() -> usize {
    OracleConfig::default().num_orders
}
fn lr_a2c() -> f64 {
    A2cConfig::default().learning_rate
}
fn gamma() -> f64 {
    A2cConfig::default().gamma
}
fn entropy() -> f64 {
    A2cConfig::default().entropy_coef
}
fn value() -> f64 {
    A2cConfig::default().value_coef
}
fn episodes() -> usize {
    A2cConfig::default().episodes_per_update
}
fn eval_every() -> usize {
    A2cConfig::default().eval_every
}
fn cap() -> usize {
    100
}
fn three() -> usize {
    3
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, location: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            location: location.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.retriever.key_dim == 0 {
            return Err(Error::Config("key_dim must be positive".into()));
        }
        if self.evaluation.max_test_variants == 0 {
            return Err(Error::Config("max_test_variants must be positive".into()));
        }
        for b in &self.evaluation.length_buckets {
            if b[0] > b[1] {
                return Err(Error::Config(format!("empty length bucket {b:?}")));
            }
        }
        if let Some(s) = &self.sweep {
            if s.seeds == 0 || s.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return Err(Error::Config("sweep fractions must lie in (0, 1] with ≥ 1 seed".into()));
            }
        }
        self.meta_config().validate()?;
        self.a2c_config(0).validate()
    }

    pub fn build_domain(&self) -> Result<Domain> {
        match &self.domain {
            DomainSource::Craftworld { preset, seed } => {
                let params = match preset.as_str() {
                    "desk" => CraftWorldParams::desk(),
                    "full" => CraftWorldParams::full(),
                    other => return Err(Error::Config(format!("unknown craftworld preset `{other}`"))),
                };
                generate_craftworld(&params, *seed)
            }
            DomainSource::File { path } => Domain::load(&self.base_dir.join(path)),
        }
    }

    pub fn key_init(&self) -> KeyInit {
        KeyInit::ScaledGlorot(self.retriever.key_init_scale)
    }

    pub fn meta_config(&self) -> MetaTrainConfig {
        MetaTrainConfig {
            iterations: self.meta.iterations,
            batch_size: self.meta.batch_size,
            top_p: self.meta.top_p,
            learning_rate: self.meta.learning_rate,
            seed: self.seed,
            oracle: OracleConfig {
                num_orders: self.meta.orders_per_call,
            },
            ..MetaTrainConfig::default()
        }
    }

    pub fn a2c_config(&self, seed: u64) -> A2cConfig {
        let a = &self.a2c;
        A2cConfig {
            learning_rate: a.learning_rate,
            gamma: a.gamma,
            entropy_coef: a.entropy_coef,
            value_coef: a.value_coef,
            episodes_per_update: a.episodes_per_update,
            hidden: a.hidden,
            env_steps: a.env_steps,
            eval_every: a.eval_every,
            eval_episodes: 1,
            seed,
        }
    }
}
