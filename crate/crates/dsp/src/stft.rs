use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{contract, Result};

pub const FRAME_SIZE: usize = 1024;
pub const HOP_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecKind {
    Linear,
    Mel,
}

/// Non-negative `n_frames x n_bins` magnitude matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub kind: SpecKind,
    pub frame_size: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Copy of frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Spectrogram {
        Spectrogram {
            data: self.data[start * self.n_bins..end * self.n_bins].to_vec(),
            n_frames: end - start,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Spectrogram {
        Spectrogram {
            data: Vec::new(),
            n_frames: 0,
            ..*self
        }
    }

    /// Same metadata, new frame data.
    pub fn with_data(&self, data: Vec<f64>, n_frames: usize) -> Spectrogram {
        debug_assert_eq!(data.len(), n_frames * self.n_bins);
        Spectrogram {
            data,
            n_frames,
            ..self.clone_meta()
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Complex STFT frames, `n_frames x n_bins`.
#[derive(Clone, Debug)]
pub struct ComplexFrames {
    pub data: Vec<Complex64>,
    pub n_frames: usize,
    pub n_bins: usize,
}

impl ComplexFrames {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable FFT plans and window for one frame/hop configuration.
pub struct StftEngine {
    pub frame_size: usize,
    pub hop_size: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine")
            .field("frame_size", &self.frame_size)
            .field("hop_size", &self.hop_size)
            .finish()
    }
}

impl StftEngine {
    pub fn new(frame_size: usize, hop_size: usize) -> Result<Self> {
        if frame_size < 2 || frame_size % 2 != 0 {
            return Err(contract(format!("frame size {frame_size} must be even and >= 2")));
        }
        if hop_size == 0 || hop_size > frame_size {
            return Err(contract(format!("hop size {hop_size} outside 1..={frame_size}")));
        }
        let mut planner = FftPlanner::new();
        Ok(StftEngine {
            frame_size,
            hop_size,
            window: hann(frame_size),
            fwd: planner.plan_fft_forward(frame_size),
            inv: planner.plan_fft_inverse(frame_size),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Frames of a centred STFT: `ceil(len / hop)`.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop_size)
    }

    /// Length of the reflect-padded signal that frames `n_frames` frames.
    pub fn padded_len(&self, n_frames: usize) -> usize {
        (n_frames.max(1) - 1) * self.hop_size + self.frame_size
    }

    /// Reflect-pads by `frame/2` on the left and enough on the right for the
    /// last centred frame.
    pub fn reflect_pad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.frame_size / 2;
        if x.len() <= pad {
            return Err(contract(format!(
                "signal of {} samples is too short to reflect-pad by {pad}",
                x.len()
            )));
        }
        let n = x.len();
        let total = self.padded_len(self.n_frames(n));
        let mut out = Vec::with_capacity(total);
        for i in 0..total {
            let j = i as isize - pad as isize;
            let src = if j < 0 {
                (-j) as usize
            } else if (j as usize) < n {
                j as usize
            } else {
                let over = j as usize - n;
                // Signals longer than one frame never reflect twice.
                n - 2 - over.min(n - 2)
            };
            out.push(x[src]);
        }
        Ok(out)
    }

    /// Un-padded analysis: frame `t` covers `padded[t*hop .. t*hop+frame]`.
    pub fn analyze_padded(&self, padded: &[f64], n_frames: usize) -> ComplexFrames {
        let nb = self.n_bins();
        let mut data = Vec::with_capacity(n_frames * nb);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.frame_size];
        for t in 0..n_frames {
            let start = t * self.hop_size;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = padded.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(s * self.window[i], 0.0);
            }
            self.fwd.process(&mut buf);
            data.extend_from_slice(&buf[..nb]);
        }
        ComplexFrames {
            data,
            n_frames,
            n_bins: nb,
        }
    }

    /// Least-squares overlap-add inverse over the padded domain.
    pub fn synthesize_padded(&self, frames: &ComplexFrames) -> Vec<f64> {
        let n = self.frame_size;
        let total = self.padded_len(frames.n_frames);
        let mut out = vec![0.0; total];
        let mut wsum = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let nb = frames.n_bins;
        for t in 0..frames.n_frames {
            let spec = &frames.data[t * nb..(t + 1) * nb];
            buf[..nb].copy_from_slice(spec);
            for k in 1..n - nb + 1 {
                buf[nb - 1 + k] = spec[nb - 1 - k].conj();
            }
            // Imaginary parts of DC and Nyquist carry no signal.
            buf[0].im = 0.0;
            buf[nb - 1].im = 0.0;
            self.inv.process(&mut buf);
            let start = t * self.hop_size;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += buf[i].re / n as f64 * w;
                wsum[start + i] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&wsum) {
            if *w > 1e-10 {
                *o /= w;
            } else {
                *o = 0.0;
            }
        }
        out
    }

    /// Centred STFT of a waveform. Requires at least one frame of audio.
    pub fn stft(&self, x: &[f64]) -> Result<ComplexFrames> {
        if x.len() < self.frame_size {
            return Err(contract(format!(
                "audio of {} samples is shorter than one frame ({})",
                x.len(),
                self.frame_size
            )));
        }
        let padded = self.reflect_pad(x)?;
        Ok(self.analyze_padded(&padded, self.n_frames(x.len())))
    }

    /// Inverse of [`StftEngine::stft`], cropped to `len` samples.
    pub fn istft(&self, frames: &ComplexFrames, len: usize) -> Vec<f64> {
        let pad = self.frame_size / 2;
        let full = self.synthesize_padded(frames);
        (0..len).map(|i| full.get(pad + i).copied().unwrap_or(0.0)).collect()
    }
}

/// Magnitude spectrogram plus complex frames at the given framing.
pub fn stft(w: &Waveform, frame_size: usize, hop_size: usize) -> Result<(ComplexFrames, Spectrogram)> {
    let engine = StftEngine::new(frame_size, hop_size)?;
    let frames = engine.stft(&w.samples)?;
    let spec = Spectrogram {
        data: frames.magnitudes(),
        n_frames: frames.n_frames,
        n_bins: frames.n_bins,
        kind: SpecKind::Linear,
        frame_size,
        hop_size,
        sample_rate: w.sample_rate,
    };
    Ok((frames, spec))
}

/// Linear magnitude spectrogram at the default 1024/256 framing.
pub fn linear_spectrogram(w: &Waveform) -> Result<Spectrogram> {
    Ok(stft(w, FRAME_SIZE, HOP_SIZE)?.1)
}

pub fn istft(frames: &ComplexFrames, frame_size: usize, hop_size: usize, len: usize) -> Result<Vec<f64>> {
    Ok(StftEngine::new(frame_size, hop_size)?.istft(frames, len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_87_frames() {
        let w = Waveform::new(vec![0.1; 22050], 22050).unwrap();
        let (_, s) = stft(&w, 1024, 256).unwrap();
        assert_eq!(s.n_frames, 87);
        assert_eq!(s.n_bins, 513);
    }

    #[test]
    fn too_short_is_rejected() {
        let w = Waveform::new(vec![0.0; 1000], 22050).unwrap();
        assert!(stft(&w, 1024, 256).is_err());
    }

    #[test]
    fn reflect_padding_mirrors_edges() {
        let e = StftEngine::new(4, 2).unwrap();
        let p = e.reflect_pad(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(&p[..4], &[3.0, 2.0, 1.0, 2.0]);
        assert_eq!(p.len(), e.padded_len(3));
        assert_eq!(&p[p.len() - 3..], &[4.0, 5.0, 4.0]);
    }
}
