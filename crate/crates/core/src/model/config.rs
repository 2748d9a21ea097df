use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of an MA-VAE instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MavaeConfig {
    /// Window length `W` in time steps.
    pub window: usize,
    /// Channels per time step, `d_X`.
    pub input_dim: usize,
    /// Latent width per time step, `d_Z`.
    pub latent_dim: usize,
    pub heads: usize,
    pub key_dim: usize,
    /// Units of the BiLSTM layers nearest the data (first encoder, last decoder layer).
    pub outer_units: usize,
    /// Units of the BiLSTM layers nearest the latent space.
    pub inner_units: usize,
    /// Feed the latent matrix straight to the decoder, skipping attention.
    #[serde(default)]
    pub no_attention: bool,
}

impl MavaeConfig {
    /// Full-size architecture: 512/256 BiLSTM units, `d_Z = 16`, 8 heads and
    /// `d_K = ⌊d_X / h⌋` floored at 1.
    pub fn full_size(window: usize, input_dim: usize) -> Self {
        let heads = 8;
        MavaeConfig {
            window,
            input_dim,
            latent_dim: 16,
            heads,
            key_dim: default_key_dim(input_dim, heads),
            outer_units: 512,
            inner_units: 256,
            no_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.window >= 2, "window must be at least 2"),
            (self.input_dim >= 1, "input_dim must be at least 1"),
            (self.latent_dim >= 1, "latent_dim must be at least 1"),
            (self.heads >= 1, "heads must be at least 1"),
            (self.key_dim >= 1, "key_dim must be at least 1"),
            (self.outer_units >= 1, "outer_units must be at least 1"),
            (self.inner_units >= 1, "inner_units must be at least 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::config(*msg)),
            None => Ok(()),
        }
    }

    /// Attention output width; fixed to the latent width so the decoder
    /// input does not depend on the head configuration.
    pub fn attention_output_dim(&self) -> usize {
        self.latent_dim
    }
}

pub fn default_key_dim(input_dim: usize, heads: usize) -> usize {
    (input_dim / heads.max(1)).max(1)
}
