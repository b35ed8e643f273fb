use std::f64::consts::PI;

use crate::audio::Waveform;

pub const DEFAULT_TARGET_LUFS: f64 = -16.0;
const ABSOLUTE_GATE: f64 = -70.0;

#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// K-weighting stage 1: high shelf (+4 dB around 1.68 kHz), redesigned for
/// the actual sample rate.
fn shelf(sr: f64) -> Biquad {
    let gain_db = 3.99984385397;
    let q = 0.7071752369554193;
    let fc = 1681.9744509555319;
    let k = (PI * fc / sr).tan();
    let vh = 10f64.powf(gain_db / 20.0);
    let vb = vh.powf(0.499666774155);
    let a0 = 1.0 + k / q + k * k;
    Biquad {
        b: [(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0, (vh - vb * k / q + k * k) / a0],
        a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
    }
}

/// K-weighting stage 2: RLB high-pass near 38 Hz.
fn highpass(sr: f64) -> Biquad {
    let q = 0.5003270373253953;
    let fc = 38.13547087613982;
    let k = (PI * fc / sr).tan();
    let a0 = 1.0 + k / q + k * k;
    Biquad {
        b: [1.0, -2.0, 1.0],
        a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
    }
}

/// Integrated loudness in LUFS over 400 ms blocks with 75 % overlap and the
/// absolute -70 LUFS gate. Signals shorter than one block are measured as a
/// single block. `None` when no block passes the gate.
pub fn integrated_loudness(w: &Waveform) -> Option<f64> {
    if w.is_empty() {
        return None;
    }
    let sr = w.sample_rate as f64;
    let z: Vec<f64> = highpass(sr)
        .run(&shelf(sr).run(&w.samples))
        .into_iter()
        .map(|v| v * v)
        .collect();
    let block = (0.4 * sr).round() as usize;
    let step = (0.1 * sr).round() as usize;
    let mut powers = Vec::new();
    if z.len() < block {
        powers.push(z.iter().sum::<f64>() / z.len() as f64);
    } else {
        let mut start = 0;
        while start + block <= z.len() {
            powers.push(z[start..start + block].iter().sum::<f64>() / block as f64);
            start += step;
        }
    }
    let loud = |p: f64| -0.691 + 10.0 * p.log10();
    let gated: Vec<f64> = powers
        .into_iter()
        .filter(|&p| p > 0.0 && loud(p) > ABSOLUTE_GATE)
        .collect();
    if gated.is_empty() {
        return None;
    }
    Some(loud(gated.iter().sum::<f64>() / gated.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoudnessStatus {
    Normalized,
    /// Gain pushed samples beyond full scale; they were clamped.
    Clipped,
    /// Nothing above the gate; audio returned unchanged.
    Silent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoudnessReport {
    pub measured_lufs: Option<f64>,
    pub gain: f64,
    pub status: LoudnessStatus,
}

/// Scales the waveform by a single gain so its integrated loudness hits
/// `target_lufs`.
pub fn normalize_loudness(w: &Waveform, target_lufs: f64) -> (Waveform, LoudnessReport) {
    let Some(measured) = integrated_loudness(w) else {
        log::warn!("loudness normalisation skipped: signal is silent");
        return (
            w.clone(),
            LoudnessReport {
                measured_lufs: None,
                gain: 1.0,
                status: LoudnessStatus::Silent,
            },
        );
    };
    let gain = 10f64.powf((target_lufs - measured) / 20.0);
    let mut out = w.scaled(gain);
    let mut status = LoudnessStatus::Normalized;
    if out.peak() > 1.0 {
        status = LoudnessStatus::Clipped;
        out.samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));
    }
    (
        out,
        LoudnessReport {
            measured_lufs: Some(measured),
            gain,
            status,
        },
    )
}
