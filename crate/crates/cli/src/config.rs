//! JSON run configuration.
//!
//! Every key is optional; missing keys take the desk-scale defaults. Unknown
//! keys are rejected. `lr`, `lr_a` and `weight_decay` default per optimizer
//! (Stiefel: 0.3 / 1e-3 / 0, Adam: 1e-4 / 1e-4 / 0, AdamW: 1e-4 / 1e-4 /
//! 0.01) and `alpha` defaults to `2·r`.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use stiefel_lora_core::{LrSchedule, OptimizerKind, RunConfig, ScalingRule, Variant};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Stiefel,
    Adam,
    Adamw,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Lora,
    Dora,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleName {
    Constant,
    Linear,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub r_star: Option<usize>,
    pub alpha: Option<f64>,
    pub optimizer: Option<OptimizerName>,
    pub lr: Option<f64>,
    pub lr_a: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub variant: Option<VariantName>,
    pub train_a: Option<bool>,
    pub lr_schedule: Option<ScheduleName>,
    pub metrics_every: Option<u64>,
    pub depth: Option<usize>,
    pub teacher_magnitude: Option<f64>,
    pub rslora: Option<bool>,
    pub ranks: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub run: RunConfig,
    /// Ranks for `sweep-rank`, in file order.
    pub ranks: Vec<usize>,
    /// Seeds for `sweep-rank`; defaults to the run seed.
    pub seeds: Vec<u64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    /// Applies defaults and an optional seed override, then validates.
    /// For `sweep-rank` the override replaces the seed list.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Experiment> {
        let base = RunConfig::default();
        let optimizer = match self.optimizer.unwrap_or(OptimizerName::Stiefel) {
            OptimizerName::Stiefel => OptimizerKind::Stiefel,
            OptimizerName::Adam => OptimizerKind::Adam,
            OptimizerName::Adamw => OptimizerKind::AdamW,
        };
        let (lr, lr_a, weight_decay) = optimizer.default_rates();
        let r = self.r.unwrap_or(base.r);
        let seed = seed_override.or(self.seed).unwrap_or(base.seed);
        let run = RunConfig {
            d: self.d.unwrap_or(base.d),
            k: self.k.unwrap_or(base.k),
            r,
            r_star: self.r_star.unwrap_or(base.r_star),
            alpha: self.alpha.unwrap_or(2.0 * r as f64),
            optimizer,
            lr: self.lr.unwrap_or(lr),
            lr_a: self.lr_a.unwrap_or(lr_a),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            eps: self.eps.unwrap_or(base.eps),
            weight_decay: self.weight_decay.unwrap_or(weight_decay),
            steps: self.steps.unwrap_or(base.steps),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            seed,
            variant: match self.variant.unwrap_or(VariantName::Lora) {
                VariantName::Lora => Variant::Lora,
                VariantName::Dora => Variant::Dora,
            },
            train_a: self.train_a.unwrap_or(base.train_a),
            lr_schedule: match self.lr_schedule.unwrap_or(ScheduleName::Constant) {
                ScheduleName::Constant => LrSchedule::Constant,
                ScheduleName::Linear => LrSchedule::Linear,
            },
            metrics_every: self.metrics_every.unwrap_or(base.metrics_every),
            depth: self.depth.unwrap_or(base.depth),
            teacher_magnitude: self.teacher_magnitude.unwrap_or(base.teacher_magnitude),
            scaling_rule: if self.rslora.unwrap_or(false) {
                ScalingRule::RankStabilized
            } else {
                ScalingRule::Standard
            },
        };
        run.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let ranks = self.ranks.clone().unwrap_or_default();
        for &rank in &ranks {
            run.with_rank(rank)
                .validate()
                .map_err(|e| CliError::Config(format!("ranks: {e}")))?;
        }
        let seeds = match (seed_override, &self.seeds) {
            (Some(s), _) => vec![s],
            (None, Some(list)) if list.is_empty() => {
                return Err(CliError::Config("seeds must not be empty".into()))
            }
            (None, Some(list)) => list.clone(),
            (None, None) => vec![seed],
        };
        Ok(Experiment { run, ranks, seeds })
    }
}
