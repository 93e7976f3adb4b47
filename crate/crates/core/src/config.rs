//! Run configuration: hyperparameter defaults, TOML parsing, validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::evolution::PopulationConfig;
use crate::td3::Td3Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqs,
    MapElitesBaseline,
}

/// Every knob of a run. Unset TOML keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub env: EnvKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,

    pub population: usize,
    /// Number of species.
    pub m: usize,
    pub lambda: f64,
    /// Elites kept per species.
    pub k: usize,
    pub n_grad: usize,
    pub critic_update_freq: usize,
    pub policy_hidden: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub discriminator_hidden: usize,
    /// Species actor, critics and discriminator.
    pub learning_rate: f64,
    /// Offspring gradient mutation.
    pub policy_learning_rate: f64,
    pub num_eval: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub exploration_noise: f64,
    pub sigma: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub buffer_size: usize,

    pub n_cells: usize,
    pub centroid_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroids_file: Option<PathBuf>,
    pub parallel_eval: bool,
    pub record_wall_time: bool,
    pub baseline_mutation_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dqs,
            env: EnvKind::PointMass2D,
            seed: 0,
            out_dir: None,
            population: 64,
            m: 8,
            lambda: 0.05,
            k: 4,
            n_grad: 64,
            critic_update_freq: 8,
            policy_hidden: 128,
            actor_hidden: 256,
            critic_hidden: 256,
            discriminator_hidden: 256,
            learning_rate: 0.003,
            policy_learning_rate: 0.006,
            num_eval: 10_000,
            batch_size: 256,
            gamma: 0.99,
            tau: 0.005,
            exploration_noise: 0.2,
            sigma: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            buffer_size: 1 << 19,
            n_cells: 1024,
            centroid_seed: 0,
            centroids_file: None,
            parallel_eval: false,
            record_wall_time: false,
            baseline_mutation_std: 0.1,
        }
    }
}

fn positive(key: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::config(key, "must be >= 1"));
    }
    Ok(())
}

fn in_range(key: &'static str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::config(key, format!("{v} is outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn positive_real(key: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(
            key,
            format!("must be a positive number, got {v}"),
        ));
    }
    Ok(())
}

impl RunConfig {
    /// Parses a TOML document (empty means all defaults) and validates it.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::layered(text, toml::Table::new())
    }

    /// File contents overlaid with `overrides`; keys in `overrides` win.
    pub fn layered(text: &str, overrides: toml::Table) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        table.extend(overrides);
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.population_config().validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(
                "lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        if self.num_eval < self.population {
            return Err(Error::config(
                "num_eval",
                format!(
                    "budget {} is smaller than one generation of {}",
                    self.num_eval, self.population
                ),
            ));
        }
        for (key, v) in [("seed", self.seed), ("centroid_seed", self.centroid_seed)] {
            if v > i64::MAX as u64 {
                return Err(Error::config(key, "must fit in a signed 64-bit integer"));
            }
        }
        positive("critic_update_freq", self.critic_update_freq)?;
        positive("policy_hidden", self.policy_hidden)?;
        positive("actor_hidden", self.actor_hidden)?;
        positive("critic_hidden", self.critic_hidden)?;
        positive("discriminator_hidden", self.discriminator_hidden)?;
        positive("batch_size", self.batch_size)?;
        positive("buffer_size", self.buffer_size)?;
        positive("n_cells", self.n_cells)?;
        if self.policy_delay == 0 {
            return Err(Error::config("policy_delay", "must be >= 1"));
        }
        positive_real("learning_rate", self.learning_rate)?;
        positive_real("policy_learning_rate", self.policy_learning_rate)?;
        positive_real("baseline_mutation_std", self.baseline_mutation_std)?;
        in_range("gamma", self.gamma, 0.0, 1.0)?;
        in_range("tau", self.tau, 0.0, 1.0)?;
        in_range("exploration_noise", self.exploration_noise, 0.0, f64::MAX)?;
        in_range("sigma", self.sigma, 0.0, f64::MAX)?;
        in_range("noise_clip", self.noise_clip, 0.0, f64::MAX)?;
        Ok(())
    }

    pub fn population_config(&self) -> PopulationConfig {
        PopulationConfig {
            population_size: self.population,
            n_species: self.m,
            elites: self.k,
        }
    }

    pub fn td3(&self) -> Td3Config {
        Td3Config {
            gamma: self.gamma,
            tau: self.tau,
            policy_delay: self.policy_delay,
            smoothing_sigma: self.sigma,
            noise_clip: self.noise_clip,
            batch_size: self.batch_size,
        }
    }
}
