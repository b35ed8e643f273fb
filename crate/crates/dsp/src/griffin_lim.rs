use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::audio::Waveform;
use crate::error::{contract, Result};
use crate::stft::{ComplexFrames, SpecKind, Spectrogram, StftEngine};

pub const DEFAULT_ITERATIONS: usize = 60;

#[derive(Clone, Debug)]
pub struct GriffinLimOutput {
    pub waveform: Waveform,
    /// Spectral convergence `||STFT(y)| - mag|_F / |mag|_F` after each iteration.
    pub convergence: Vec<f64>,
}

/// Phase reconstruction by alternating projections.
///
/// Iterates in the reflect-padded domain so each step is an exact
/// least-squares projection; the returned waveform is `n_frames * hop`
/// samples long.
pub fn griffin_lim(mag: &Spectrogram, iterations: usize, seed: u64) -> Result<GriffinLimOutput> {
    if mag.kind != SpecKind::Linear {
        return Err(contract("griffin_lim expects a linear spectrogram"));
    }
    if iterations == 0 {
        return Err(contract("griffin_lim needs at least one iteration"));
    }
    let engine = StftEngine::new(mag.frame_size, mag.hop_size)?;
    if mag.n_bins != engine.n_bins() {
        return Err(contract("spectrogram bin count disagrees with frame size"));
    }
    let out_len = mag.n_frames * mag.hop_size;
    let norm = mag.frobenius();
    if norm == 0.0 || mag.n_frames == 0 {
        return Ok(GriffinLimOutput {
            waveform: Waveform::new(vec![0.0; out_len], mag.sample_rate)?,
            convergence: vec![0.0; iterations],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = ComplexFrames {
        data: mag
            .data
            .iter()
            .map(|&m| Complex64::from_polar(m, rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect(),
        n_frames: mag.n_frames,
        n_bins: mag.n_bins,
    };
    let mut convergence = Vec::with_capacity(iterations);
    let mut signal = Vec::new();
    for _ in 0..iterations {
        signal = engine.synthesize_padded(&frames);
        let consistent = engine.analyze_padded(&signal, mag.n_frames);
        let mut err = 0.0;
        for ((c, &m), f) in consistent.data.iter().zip(&mag.data).zip(frames.data.iter_mut()) {
            let r = c.norm();
            err += (r - m) * (r - m);
            *f = if r > 0.0 { c * (m / r) } else { Complex64::new(m, 0.0) };
        }
        convergence.push(err.sqrt() / norm);
    }
    let pad = mag.frame_size / 2;
    let samples = (0..out_len)
        .map(|i| signal.get(pad + i).copied().unwrap_or(0.0))
        .collect();
    Ok(GriffinLimOutput {
        waveform: Waveform::new(samples, mag.sample_rate)?,
        convergence,
    })
}
