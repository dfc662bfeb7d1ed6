//! Training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::AdversarialForm;
use crate::types::default_stain_names;

/// How the generators are tied together during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// One discriminator judges `(I, clamp(sum_i G_i(I)))` against `(I, I)`.
    #[default]
    Coupled,
    /// L1 regression only; no discriminator is ever updated.
    L1Only,
    /// One conditional discriminator per source judging `(I, G_i(I))` against `(I, I_i)`.
    IndependentGans,
}

/// Widths and depths of the generator and discriminator families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Encoder stages; inputs must be divisible by `2^gen_levels`.
    pub gen_levels: usize,
    pub gen_base_width: usize,
    pub gen_max_width: usize,
    /// Dropout on the three innermost non-bottleneck decoder stages while training.
    pub gen_dropout: bool,
    pub disc_base_width: usize,
    /// Stride-2 stages after the first; 3 gives the 70x70 receptive field.
    pub disc_layers: usize,
    /// Standard deviation of the zero-mean Gaussian weight initialization.
    pub init_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            gen_levels: 8,
            gen_base_width: 64,
            gen_max_width: 512,
            gen_dropout: true,
            disc_base_width: 64,
            disc_layers: 3,
            init_std: 0.02,
        }
    }
}

impl NetworkConfig {
    /// Reduced-width networks for 64x64 patches.
    pub fn desk_scale() -> Self {
        Self {
            gen_levels: 6,
            gen_base_width: 8,
            gen_max_width: 64,
            gen_dropout: true,
            disc_base_width: 8,
            disc_layers: 3,
            init_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_sources: usize,
    pub stain_names: Vec<String>,
    /// Weight of the adversarial term once coupling is active.
    pub lambda_adv: f64,
    /// Percentage of iterations, at the end of the run, with the adversarial term enabled.
    pub alpha: f64,
    pub learning_rate: f64,
    pub momentum1: f64,
    pub momentum2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_iterations: usize,
    pub seed: u64,
    pub coupling_mode: CouplingMode,
    pub generator_loss: AdversarialForm,
    /// Draw separate minibatches for the discriminator and generator updates.
    pub fresh_batches: bool,
    /// Save a checkpoint every this many iterations; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_sources: 2,
            stain_names: default_stain_names(2),
            lambda_adv: 0.01,
            alpha: 75.0,
            learning_rate: 0.0002,
            momentum1: 0.5,
            momentum2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            total_iterations: 1000,
            seed: 0,
            coupling_mode: CouplingMode::Coupled,
            generator_loss: AdversarialForm::Minimax,
            fresh_batches: true,
            checkpoint_every: 0,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(ok: bool, field: &str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        }
        positive(self.n_sources >= 1, "n_sources", "must be at least 1")?;
        positive(
            self.stain_names.len() == self.n_sources,
            "stain_names",
            &format!("has {} names for {} sources", self.stain_names.len(), self.n_sources),
        )?;
        positive(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite(), "lambda_adv", "must be finite and >= 0")?;
        positive((0.0..=100.0).contains(&self.alpha), "alpha", "must be a percentage in [0, 100]")?;
        positive(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be > 0")?;
        positive((0.0..1.0).contains(&self.momentum1), "momentum1", "must lie in [0, 1)")?;
        positive((0.0..1.0).contains(&self.momentum2), "momentum2", "must lie in [0, 1)")?;
        positive(self.adam_eps > 0.0, "adam_eps", "must be > 0")?;
        positive(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        positive(self.total_iterations >= 1, "total_iterations", "must be at least 1")?;
        let n = &self.network;
        positive(n.gen_levels >= 1, "network.gen_levels", "must be at least 1")?;
        positive(n.gen_base_width >= 1, "network.gen_base_width", "must be at least 1")?;
        positive(n.gen_max_width >= n.gen_base_width, "network.gen_max_width", "must be >= gen_base_width")?;
        positive(n.disc_base_width >= 1, "network.disc_base_width", "must be at least 1")?;
        positive(n.init_std > 0.0, "network.init_std", "must be > 0")?;
        Ok(())
    }

    pub fn with_sources(mut self, n: usize) -> Self {
        self.n_sources = n;
        self.stain_names = default_stain_names(n);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setting() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.momentum1, c.momentum2), (0.0002, 0.5, 0.999));
        assert_eq!((c.alpha, c.lambda_adv), (75.0, 0.01));
        assert_eq!(c.network.gen_levels, 8);
        c.validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let c = TrainConfig {
            alpha: 120.0,
            ..Default::default()
        };
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "alpha"),
            other => panic!("{other:?}"),
        }
        let c = TrainConfig {
            n_sources: 3,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "stain_names"));
    }
}
