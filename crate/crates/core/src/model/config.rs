use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Gaussian latent per token and per sentence; sampled in training, mean at inference.
    Lvm,
    /// Latent replaced by a tanh layer of the same size.
    Mlp,
    /// Linear-chain CRF over slot emissions; intent from the attention vector.
    Crf,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Lvm => "lvm",
            HeadKind::Mlp => "mlp",
            HeadKind::Crf => "crf",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Per LSTM direction.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_latent")]
    pub latent: usize,
    pub num_slots: usize,
    pub num_intents: usize,
    #[serde(default = "default_head")]
    pub head: HeadKind,
    /// Variance of the Gaussian noise added to embeddings during training.
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default)]
    pub noise: bool,
}

fn default_hidden() -> usize {
    250
}

fn default_latent() -> usize {
    100
}

fn default_head() -> HeadKind {
    HeadKind::Lvm
}

fn default_noise_variance() -> f64 {
    0.1
}

impl ModelConfig {
    /// Defaults for the sizes not given.
    pub fn new(embedding_dim: usize, num_slots: usize, num_intents: usize) -> Self {
        Self {
            embedding_dim,
            hidden: default_hidden(),
            latent: default_latent(),
            num_slots,
            num_intents,
            head: default_head(),
            noise_variance: default_noise_variance(),
            noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("embedding_dim", self.embedding_dim),
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("num_slots", self.num_slots),
            ("num_intents", self.num_intents),
        ] {
            if v == 0 {
                errs.push(format!("{name}: must be at least 1"));
            }
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            errs.push(format!(
                "noise_variance: must be finite and >= 0, got {}",
                self.noise_variance
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
