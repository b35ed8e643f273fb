use cantor_dsp::{Note, FRAME_SIZE};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingerConfig {
    pub vocab: usize,
    pub pitch_vocab: usize,
    pub embedding_dim: usize,
    pub lyrics_blocks: usize,
    pub pitch_blocks: usize,
    pub reference_prenet_layers: usize,
    pub reference_prenet_hidden: usize,
    pub reference_blocks: usize,
    pub decoder_blocks: usize,
    pub hidden: usize,
    pub conv_kernel: usize,
    pub conv_filter: usize,
    pub heads: usize,
    pub dropout: f64,
    pub output_dim: usize,
    /// Linear magnitudes are multiplied by this before they reach the model.
    pub magnitude_scale: f64,
    /// Adds positional encoding in the reference branch before pooling.
    pub reference_positional: bool,
    /// Replaces the reference embedding with a learned vector per singer.
    pub singer_table: Option<usize>,
    pub warmup_steps: u64,
    pub lr_scale: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl SingerConfig {
    /// Full-size model.
    pub fn paper(vocab: usize) -> Self {
        SingerConfig {
            vocab,
            pitch_vocab: Note::VOCAB,
            embedding_dim: 384,
            lyrics_blocks: 4,
            pitch_blocks: 2,
            reference_prenet_layers: 5,
            reference_prenet_hidden: 384,
            reference_blocks: 4,
            decoder_blocks: 4,
            hidden: 384,
            conv_kernel: 3,
            conv_filter: 1536,
            heads: 2,
            dropout: 0.1,
            output_dim: FRAME_SIZE / 2 + 1,
            magnitude_scale: 2.0 / (FRAME_SIZE / 2) as f64,
            reference_positional: false,
            singer_table: None,
            warmup_steps: 4000,
            lr_scale: 1.0,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            grad_clip: 1.0,
            seed: 0,
        }
    }

    /// Hidden-64 model for desk-scale runs.
    pub fn micro(vocab: usize) -> Self {
        SingerConfig {
            embedding_dim: 64,
            lyrics_blocks: 2,
            pitch_blocks: 1,
            reference_prenet_layers: 2,
            reference_prenet_hidden: 64,
            reference_blocks: 1,
            decoder_blocks: 2,
            hidden: 64,
            conv_filter: 256,
            dropout: 0.0,
            warmup_steps: 400,
            lr_scale: 0.3,
            ..Self::paper(vocab)
        }
    }

    /// Hidden-8 model for gradient checks.
    pub fn tiny(vocab: usize, output_dim: usize) -> Self {
        SingerConfig {
            embedding_dim: 8,
            lyrics_blocks: 1,
            pitch_blocks: 1,
            reference_prenet_layers: 1,
            reference_prenet_hidden: 8,
            reference_blocks: 1,
            decoder_blocks: 1,
            hidden: 8,
            conv_filter: 12,
            output_dim,
            ..Self::micro(vocab)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.vocab,
            self.pitch_vocab,
            self.embedding_dim,
            self.reference_prenet_layers,
            self.reference_prenet_hidden,
            self.hidden,
            self.conv_kernel,
            self.conv_filter,
            self.heads,
            self.output_dim,
        ];
        if sizes.contains(&0) {
            return Err(contract("singer sizes must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(contract(format!("hidden {} not divisible by {} heads", self.hidden, self.heads)));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(contract("conv kernel must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract("dropout must lie in [0, 1)"));
        }
        if self.magnitude_scale <= 0.0 || self.lr_scale <= 0.0 || self.adam_eps <= 0.0 {
            return Err(contract("scales must be positive"));
        }
        if self.singer_table == Some(0) {
            return Err(contract("singer table needs at least one singer"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [SingerConfig::paper(40), SingerConfig::micro(40), SingerConfig::tiny(40, 9)] {
            c.validate().unwrap();
        }
        assert_eq!(SingerConfig::paper(40).output_dim, 513);
        let bad = SingerConfig {
            heads: 3,
            ..SingerConfig::micro(40)
        };
        assert!(bad.validate().is_err());
    }
}
