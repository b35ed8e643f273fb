use crate::error::{contract, Result};
use crate::stft::{SpecKind, Spectrogram};

pub const DEFAULT_MEL_BINS: usize = 80;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank `[mel_bins x n_bins]` over `[0, sr/2]`.
///
/// The first filter stays at 1 below its centre and the last stays at 1
/// above its centre, so the filters sum to exactly 1 at every linear bin.
pub fn mel_filterbank(sample_rate: u32, frame_size: usize, mel_bins: usize) -> Result<Vec<f64>> {
    if mel_bins < 2 {
        return Err(contract(format!("need at least 2 mel bins, got {mel_bins}")));
    }
    let n_bins = frame_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let mut fb = vec![0.0; mel_bins * n_bins];
    for b in 0..n_bins {
        let f = b as f64 * sample_rate as f64 / frame_size as f64;
        for m in 0..mel_bins {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let w = if f <= c {
                if m == 0 {
                    1.0
                } else {
                    ((f - lo) / (c - lo)).max(0.0)
                }
            } else if m == mel_bins - 1 {
                1.0
            } else {
                ((hi - f) / (hi - c)).max(0.0)
            };
            fb[m * n_bins + b] = w;
        }
    }
    Ok(fb)
}

/// Projects a linear magnitude spectrogram onto the mel filterbank.
pub fn mel(linear: &Spectrogram, mel_bins: usize) -> Result<Spectrogram> {
    if linear.kind != SpecKind::Linear {
        return Err(contract("mel() expects a linear spectrogram"));
    }
    let fb = mel_filterbank(linear.sample_rate, linear.frame_size, mel_bins)?;
    let nb = linear.n_bins;
    if nb != linear.frame_size / 2 + 1 {
        return Err(contract("linear spectrogram bin count disagrees with frame size"));
    }
    let mut data = vec![0.0; linear.n_frames * mel_bins];
    for t in 0..linear.n_frames {
        let frame = linear.frame(t);
        for m in 0..mel_bins {
            let row = &fb[m * nb..(m + 1) * nb];
            data[t * mel_bins + m] = row.iter().zip(frame).map(|(a, b)| a * b).sum();
        }
    }
    Ok(Spectrogram {
        data,
        n_frames: linear.n_frames,
        n_bins: mel_bins,
        kind: SpecKind::Mel,
        frame_size: linear.frame_size,
        hop_size: linear.hop_size,
        sample_rate: linear.sample_rate,
    })
}

/// Natural-log compression with a floor, as used for model features.
pub fn log_compress(values: &[f64], floor: f64) -> Vec<f64> {
    values.iter().map(|v| v.max(floor).ln()).collect()
}
