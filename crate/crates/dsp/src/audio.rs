use std::f64::consts::PI;
use std::path::Path;

use crate::error::{contract, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(contract("sample rate must be positive"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a WAV file of any PCM/float format, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono; samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc (Hann-tapered) band-limited resampling.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(contract("target sample rate must be positive"));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    const ZERO_CROSSINGS: f64 = 16.0;
    let ratio = target_rate as f64 / w.sample_rate as f64;
    let cutoff = ratio.min(1.0) * 0.97;
    let half = ZERO_CROSSINGS / cutoff;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    let x = &w.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - k as f64;
            let win = 0.5 + 0.5 * (PI * d / half).cos();
            acc += xk * cutoff * sinc(cutoff * d) * win;
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_quantises_to_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.5, 1.0, -1.0, 0.25], 22050).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 22050);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 16384.0);
        }
    }

    #[test]
    fn resampling_preserves_a_low_tone() {
        let sr = 44100;
        let x: Vec<f64> = (0..sr).map(|n| (2.0 * PI * 440.0 * n as f64 / sr as f64).sin() * 0.5).collect();
        let w = Waveform::new(x, sr as u32).unwrap();
        let r = resample(&w, 22050).unwrap();
        assert_eq!(r.len(), 22050);
        let mut err: f64 = 0.0;
        for n in 1000..21000 {
            let expect = (2.0 * PI * 440.0 * n as f64 / 22050.0).sin() * 0.5;
            err = err.max((r.samples[n] - expect).abs());
        }
        assert!(err < 5e-3, "{err}");
    }
}
