use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignerConfig {
    pub n_mels: usize,
    pub vocab: usize,
    pub prenet_layers: usize,
    pub prenet_channels: usize,
    pub prenet_kernel: usize,
    /// Total width of the bidirectional encoder output (half per direction).
    pub encoder_hidden: usize,
    pub embedding_dim: usize,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    /// Dropout on the previous-phoneme embedding fed to the decoder.
    pub decoder_dropout: f64,
    pub location_filters: usize,
    pub location_kernel: usize,
    /// Guided mask half-width in frames; `None` picks it per song.
    pub bandwidth: Option<usize>,
    pub guided_weight: f64,
    /// Weight at epoch 0, decaying linearly to `guided_weight` over
    /// `guided_decay_epochs`.
    pub guided_weight_initial: f64,
    pub guided_decay_epochs: usize,
    pub chunk_size: usize,
    pub curriculum_start: f64,
    pub curriculum_step: f64,
    /// Extra frames on each side of a chunk window, as a fraction of the
    /// window's nominal length (plus four frames).
    pub window_margin: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_decay_steps: u64,
    pub adam_eps: f64,
    pub l2: f64,
    pub grad_clip: f64,
    /// Songs per optimizer update; 0 updates after every chunk.
    pub accumulate_songs: usize,
    pub seed: u64,
}

impl AlignerConfig {
    /// Full-size model.
    pub fn paper(vocab: usize) -> Self {
        AlignerConfig {
            n_mels: 80,
            vocab,
            prenet_layers: 3,
            prenet_channels: 512,
            prenet_kernel: 9,
            encoder_hidden: 512,
            embedding_dim: 512,
            decoder_layers: 2,
            decoder_hidden: 1024,
            attention_dim: 128,
            decoder_dropout: 0.0,
            location_filters: 32,
            location_kernel: 31,
            bandwidth: None,
            guided_weight: 1.0,
            guided_weight_initial: 1.0,
            guided_decay_epochs: 0,
            chunk_size: 40,
            curriculum_start: 0.10,
            curriculum_step: 0.02,
            window_margin: 0.25,
            lr_initial: 1e-3,
            lr_final: 1e-5,
            lr_decay_steps: 30_000,
            adam_eps: 1e-6,
            l2: 1e-6,
            grad_clip: 1.0,
            accumulate_songs: 8,
            seed: 0,
        }
    }

    /// Desk-scale model used by the tests and the synthetic corpus.
    pub fn micro(vocab: usize) -> Self {
        AlignerConfig {
            prenet_channels: 64,
            prenet_kernel: 5,
            encoder_hidden: 64,
            embedding_dim: 32,
            decoder_hidden: 64,
            attention_dim: 32,
            location_filters: 8,
            location_kernel: 15,
            chunk_size: 16,
            lr_final: 1e-4,
            lr_decay_steps: 4000,
            accumulate_songs: 0,
            decoder_dropout: 0.3,
            guided_weight_initial: 200.0,
            guided_decay_epochs: 50,
            ..Self::paper(vocab)
        }
    }

    /// Tiny model for gradient checks.
    pub fn tiny(vocab: usize, n_mels: usize) -> Self {
        AlignerConfig {
            n_mels,
            prenet_layers: 1,
            prenet_channels: 8,
            prenet_kernel: 3,
            encoder_hidden: 8,
            embedding_dim: 8,
            decoder_hidden: 8,
            attention_dim: 8,
            location_filters: 4,
            location_kernel: 3,
            chunk_size: 4,
            decoder_dropout: 0.0,
            ..Self::micro(vocab)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.n_mels,
            self.vocab,
            self.prenet_channels,
            self.prenet_kernel,
            self.encoder_hidden,
            self.embedding_dim,
            self.decoder_layers,
            self.decoder_hidden,
            self.attention_dim,
            self.location_filters,
            self.location_kernel,
            self.chunk_size,
        ];
        if sizes.contains(&0) {
            return Err(contract("aligner sizes must be positive"));
        }
        if self.encoder_hidden % 2 != 0 {
            return Err(contract("encoder hidden must be even (split across directions)"));
        }
        if self.prenet_kernel % 2 == 0 || self.location_kernel % 2 == 0 {
            return Err(contract("convolution kernels must be odd"));
        }
        if !(self.curriculum_start > 0.0 && self.curriculum_step >= 0.0) {
            return Err(contract("curriculum ratios must be positive"));
        }
        if !(0.0..1.0).contains(&self.decoder_dropout) {
            return Err(contract("decoder dropout must lie in [0, 1)"));
        }
        if self.guided_weight_initial < 0.0 || self.guided_weight < 0.0 || self.window_margin < 0.0 || self.lr_initial <= 0.0 || self.lr_final <= 0.0 {
            return Err(contract("weights and learning rates must be non-negative"));
        }
        Ok(())
    }

    /// Guided loss weight used during `epoch`.
    pub fn guided_weight_at(&self, epoch: usize) -> f64 {
        if epoch >= self.guided_decay_epochs {
            return self.guided_weight;
        }
        let f = epoch as f64 / self.guided_decay_epochs as f64;
        self.guided_weight_initial + (self.guided_weight - self.guided_weight_initial) * f
    }

    /// Mask half-width for a song of `t` phonemes and `s` frames.
    pub fn bandwidth_for(&self, t: usize, s: usize) -> usize {
        self.bandwidth.unwrap_or_else(|| default_bandwidth(t, s))
    }
}

/// `max(2, ceil(0.1 * S / T) * 2)`.
pub fn default_bandwidth(t: usize, s: usize) -> usize {
    let ceil = (s as u64).div_ceil(10 * t.max(1) as u64) as usize;
    (ceil * 2).max(2)
}

/// Length ratio of each song trained in a given epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub epoch: usize,
    pub start: f64,
    pub step: f64,
}

impl CurriculumState {
    pub fn new(config: &AlignerConfig) -> Self {
        CurriculumState {
            epoch: 0,
            start: config.curriculum_start,
            step: config.curriculum_step,
        }
    }

    pub fn ratio(&self) -> f64 {
        (self.start + self.step * self.epoch as f64).min(1.0)
    }

    /// Phonemes of a `t`-phoneme song covered this epoch (at least one).
    pub fn limit(&self, t: usize) -> usize {
        ((self.ratio() * t as f64 - 1e-9).ceil() as usize).clamp(1, t)
    }

    pub fn advance(&mut self) {
        self.epoch += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curriculum_schedule() {
        let mut c = CurriculumState::new(&AlignerConfig::micro(10));
        assert!((c.ratio() - 0.10).abs() < 1e-12);
        assert_eq!(c.limit(100), 10);
        for _ in 0..45 {
            c.advance();
        }
        assert_eq!(c.ratio(), 1.0);
        c.advance();
        assert_eq!(c.ratio(), 1.0);
        assert_eq!(c.limit(7), 7);
    }

    #[test]
    fn bandwidth_default() {
        assert_eq!(default_bandwidth(10, 80), 2);
        assert_eq!(default_bandwidth(10, 400), 8);
        assert_eq!(default_bandwidth(3, 1000), 68);
    }

    #[test]
    fn presets_validate() {
        for c in [AlignerConfig::paper(40), AlignerConfig::micro(40), AlignerConfig::tiny(40, 6)] {
            c.validate().unwrap();
        }
        let mut bad = AlignerConfig::micro(40);
        bad.encoder_hidden = 7;
        assert!(bad.validate().is_err());
    }
}
