//! Alignment and synthesis metrics.

use std::ops::Range;

use cantor_dsp::{cents_off, extract_f0, griffin_lim, median_filter, Note, PitchConfig, Spectrogram, Waveform};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryUnit {
    pub label: String,
    pub onset_ms: f64,
    pub offset_ms: f64,
}

/// Ordered unit boundaries of one utterance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAnnotation {
    pub units: Vec<BoundaryUnit>,
}

impl BoundaryAnnotation {
    pub fn new(units: Vec<BoundaryUnit>) -> Result<Self> {
        for (i, u) in units.iter().enumerate() {
            if u.offset_ms < u.onset_ms {
                return Err(contract(format!("unit {i} ends before it starts")));
            }
            if i > 0 && u.onset_ms <= units[i - 1].onset_ms {
                return Err(contract(format!("unit {i} onset not strictly increasing")));
            }
        }
        Ok(BoundaryAnnotation { units })
    }

    /// Units from frame ranges.
    pub fn from_frames(labels: &[String], spans: &[Range<usize>], hop: usize, sr: u32) -> Result<Self> {
        if labels.len() != spans.len() {
            return Err(contract("one label per span required"));
        }
        Self::new(
            labels
                .iter()
                .zip(spans)
                .map(|(l, r)| BoundaryUnit {
                    label: l.clone(),
                    onset_ms: frames_to_ms(r.start as f64, hop, sr),
                    offset_ms: frames_to_ms(r.end as f64, hop, sr),
                })
                .collect(),
        )
    }

    pub fn onsets_ms(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.onset_ms).collect()
    }
}

pub fn frames_to_ms(frames: f64, hop: usize, sr: u32) -> f64 {
    frames * hop as f64 / sr as f64 * 1000.0
}

/// Frame-level percentage of correct segments: a frame counts when its
/// predicted sentence index equals the truth's (uncovered on both sides
/// also counts).
pub fn pcs(predicted: &[Range<usize>], truth: &[Range<usize>], total: usize) -> Result<f64> {
    if total == 0 {
        return Err(contract("PCS over an empty song"));
    }
    let label = |spans: &[Range<usize>], what: &str| -> Result<Vec<Option<usize>>> {
        let mut out = vec![None; total];
        for (k, r) in spans.iter().enumerate() {
            if r.end > total || r.start > r.end {
                return Err(contract(format!("{what} span {r:?} outside 0..{total}")));
            }
            for o in &mut out[r.clone()] {
                if o.is_some() {
                    return Err(contract(format!("{what} spans overlap at {r:?}")));
                }
                *o = Some(k);
            }
        }
        Ok(out)
    };
    let p = label(predicted, "predicted")?;
    let t = label(truth, "truth")?;
    let correct = p.iter().zip(&t).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / total as f64)
}

/// Mean absolute onset deviation, in the units of the inputs.
pub fn ase(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(contract(format!(
            "ASE needs matched boundaries: {} predicted vs {} truth",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(contract("ASE over zero boundaries"));
    }
    Ok(predicted.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / predicted.len() as f64)
}

/// ASE over frame onsets, returned as `(frames, ms)`.
pub fn ase_frames(predicted: &[usize], truth: &[usize], hop: usize, sr: u32) -> Result<(f64, f64)> {
    let p: Vec<f64> = predicted.iter().map(|&x| x as f64).collect();
    let t: Vec<f64> = truth.iter().map(|&x| x as f64).collect();
    let f = ase(&p, &t)?;
    Ok((f, frames_to_ms(f, hop, sr)))
}

/// Start frame of the phonemes at `starts` given per-phoneme durations.
pub fn unit_onsets(durations: &[usize], starts: &[usize]) -> Result<Vec<usize>> {
    let mut prefix = Vec::with_capacity(durations.len() + 1);
    prefix.push(0);
    for d in durations {
        prefix.push(prefix.last().unwrap() + d);
    }
    starts
        .iter()
        .map(|&s| {
            prefix
                .get(s)
                .copied()
                .filter(|_| s < durations.len())
                .ok_or_else(|| contract(format!("unit start {s} beyond {} phonemes", durations.len())))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitchAccuracyConfig {
    pub pitch: PitchConfig,
    pub median_width: usize,
    /// Accept any frame within this many cents of the target instead of
    /// exact note identity.
    pub tolerance_cents: Option<f64>,
}

impl Default for PitchAccuracyConfig {
    fn default() -> Self {
        PitchAccuracyConfig {
            pitch: PitchConfig::default(),
            median_width: 5,
            tolerance_cents: None,
        }
    }
}

/// Fraction of frames voiced in `conditioning` whose extracted note
/// matches it.
pub fn pitch_accuracy(synth: &Waveform, conditioning: &[Note], cfg: &PitchAccuracyConfig) -> Result<f64> {
    let voiced = conditioning.iter().filter(|n| !n.is_rest()).count();
    if voiced == 0 {
        return Err(contract("conditioning pitch sequence is entirely unvoiced"));
    }
    let p = extract_f0(synth, &cfg.pitch)?;
    if p.len() != conditioning.len() {
        return Err(contract(format!(
            "waveform yields {} frames but conditioning has {}",
            p.len(),
            conditioning.len()
        )));
    }
    let notes = median_filter(&p.notes, cfg.median_width)?;
    let hits = conditioning
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.is_rest())
        .filter(|&(i, &n)| match cfg.tolerance_cents {
            None => notes[i] == n,
            Some(tol) => p.f0[i] > 0.0 && cents_off(p.f0[i], n).abs() <= tol,
        })
        .count();
    Ok(hits as f64 / voiced as f64)
}

/// Pitch accuracy of a Griffin-Lim reconstruction of ground-truth
/// magnitudes: the ceiling any spectrogram-predicting model can reach.
pub fn pitch_accuracy_upper_bound(
    truth: &Spectrogram,
    conditioning: &[Note],
    iterations: usize,
    seed: u64,
    cfg: &PitchAccuracyConfig,
) -> Result<f64> {
    let out = griffin_lim(truth, iterations, seed)?;
    pitch_accuracy(&out.waveform, conditioning, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcs_examples() {
        assert_eq!(pcs(&[0..100], &[0..100], 200).unwrap(), 1.0);
        assert_eq!(pcs(&[10..110], &[0..100], 200).unwrap(), 0.9);
        assert_eq!(pcs(&[], &[0..200], 200).unwrap(), 0.0);
        assert!(pcs(&[0..10, 5..20], &[0..20], 20).is_err());
    }

    #[test]
    fn ase_examples() {
        let (f, ms) = ase_frames(&[0, 10, 20], &[0, 12, 20], 256, 22050).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert!((ms - 7.7).abs() < 0.05);
        let (_, ms) = ase_frames(&[2, 12], &[0, 10], 256, 22050).unwrap();
        assert!((ms - 23.22).abs() < 0.01);
        assert_eq!(ase_frames(&[1, 2], &[1, 2], 256, 22050).unwrap().0, 0.0);
        assert!(ase(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn onsets_from_durations() {
        assert_eq!(unit_onsets(&[2, 3, 0, 4], &[0, 2, 3]).unwrap(), vec![0, 5, 5]);
        assert!(unit_onsets(&[2], &[1]).is_err());
    }

    #[test]
    fn annotation_invariants() {
        let u = |a: f64, b: f64| BoundaryUnit {
            label: "x".into(),
            onset_ms: a,
            offset_ms: b,
        };
        assert!(BoundaryAnnotation::new(vec![u(0.0, 5.0), u(5.0, 9.0)]).is_ok());
        assert!(BoundaryAnnotation::new(vec![u(0.0, 5.0), u(0.0, 9.0)]).is_err());
        assert!(BoundaryAnnotation::new(vec![u(3.0, 1.0)]).is_err());
    }
}
