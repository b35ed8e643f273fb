use std::fmt;

use crate::audio::Waveform;
use crate::error::{contract, Result};
use crate::stft::HOP_SIZE;

/// Pitch vocabulary entry: 0 is rest, 1..=108 are C0..B8.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Note(pub u8);

pub const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

impl Note {
    pub const REST: Note = Note(0);
    pub const VOCAB: usize = 109;
    pub const MIN_MIDI: i32 = 12;
    pub const MAX_MIDI: i32 = 119;

    pub fn is_rest(self) -> bool {
        self.0 == 0
    }

    pub fn from_midi(midi: i32) -> Note {
        Note((midi.clamp(Self::MIN_MIDI, Self::MAX_MIDI) - 11) as u8)
    }

    pub fn midi(self) -> Option<i32> {
        (!self.is_rest()).then_some(self.0 as i32 + 11)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    /// Parses names such as `A4`, `C#3` or `rest`.
    pub fn parse(s: &str) -> Option<Note> {
        if s.eq_ignore_ascii_case("rest") {
            return Some(Note::REST);
        }
        let split = s.find(|c: char| c.is_ascii_digit() || c == '-')?;
        let (name, octave) = s.split_at(split);
        let pc = NOTE_NAMES.iter().position(|n| *n == name)? as i32;
        let octave: i32 = octave.parse().ok()?;
        let midi = (octave + 1) * 12 + pc;
        (Self::MIN_MIDI..=Self::MAX_MIDI)
            .contains(&midi)
            .then(|| Note::from_midi(midi))
    }
}

impl fmt::Display for Note {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.midi() {
            None => f.write_str("rest"),
            Some(m) => write!(f, "{}{}", NOTE_NAMES[(m % 12) as usize], m / 12 - 1),
        }
    }
}

/// Nearest equal-tempered note (A4 = 440 Hz), clamped to C0..B8.
pub fn f0_to_note(f0: f64) -> Note {
    if f0 <= 0.0 || !f0.is_finite() {
        return Note::REST;
    }
    Note::from_midi((69.0 + 12.0 * (f0 / 440.0).log2()).round() as i32)
}

/// Centre frequency of a note; 0 for rest.
pub fn note_to_f0(n: Note) -> f64 {
    match n.midi() {
        None => 0.0,
        Some(m) => 440.0 * 2f64.powf((m - 69) as f64 / 12.0),
    }
}

/// Deviation of `f0` from the note centre, in cents.
pub fn cents_off(f0: f64, n: Note) -> f64 {
    let c = note_to_f0(n);
    if f0 <= 0.0 || c == 0.0 {
        return f64::INFINITY;
    }
    1200.0 * (f0 / c).log2()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    pub hop_size: usize,
    /// Samples integrated by the difference function.
    pub window: usize,
    pub clarity_threshold: f64,
    pub silence_floor_db: f64,
    /// Absolute threshold on the normalised difference for picking the first dip.
    pub dip_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            fmin: 65.0,
            fmax: 1000.0,
            hop_size: HOP_SIZE,
            window: 384,
            clarity_threshold: 0.45,
            silence_floor_db: -40.0,
            dip_threshold: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitchSequence {
    /// Hz per frame, 0 when unvoiced.
    pub f0: Vec<f64>,
    pub notes: Vec<Note>,
    /// Per-frame RMS level in dBFS.
    pub rms_db: Vec<f64>,
    pub clarity: Vec<f64>,
}

impl PitchSequence {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.f0.iter().filter(|&&f| f > 0.0).count()
    }
}

fn rms_db(x: &[f64]) -> f64 {
    if x.is_empty() {
        return -f64::INFINITY;
    }
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if ms <= 0.0 {
        -f64::INFINITY
    } else {
        10.0 * ms.log10()
    }
}

/// YIN-style F0 tracking with one estimate per hop, frame `t` centred at
/// sample `t * hop` (matching the centred STFT).
///
/// For each lag the difference function compares two windows placed
/// symmetrically around the frame centre, so the analysed span stays
/// centred for every candidate period.
pub fn extract_f0(w: &Waveform, config: &PitchConfig) -> Result<PitchSequence> {
    if config.fmin < 40.0 || config.fmax > 1000.0 || config.fmin >= config.fmax {
        return Err(contract(format!(
            "pitch range {}..{} Hz outside 40..1000 or empty",
            config.fmin, config.fmax
        )));
    }
    if config.hop_size == 0 || config.window == 0 {
        return Err(contract("hop and window must be positive"));
    }
    let sr = w.sample_rate as f64;
    let tau_min = ((sr / config.fmax).floor() as usize).max(2);
    let tau_max = (sr / config.fmin).ceil() as usize;
    let n_frames = w.len().div_ceil(config.hop_size);
    let x = &w.samples;
    let sample = |i: isize| -> f64 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize]
        }
    };
    let half = config.window as isize / 2;
    let mut f0 = Vec::with_capacity(n_frames);
    let mut clarity = Vec::with_capacity(n_frames);
    let mut levels = Vec::with_capacity(n_frames);
    let mut d = vec![0.0; tau_max + 2];
    let mut dn = vec![1.0; tau_max + 2];
    for t in 0..n_frames {
        let c = (t * config.hop_size) as isize;
        let seg: Vec<f64> = (c - half..c - half + config.window as isize).map(sample).collect();
        let level = rms_db(&seg);
        levels.push(level);
        let mut running = 0.0;
        d[0] = 0.0;
        dn[0] = 1.0;
        for tau in 1..=tau_max + 1 {
            let start = c - half - (tau as isize) / 2;
            let mut acc = 0.0;
            for j in 0..config.window as isize {
                let diff = sample(start + j) - sample(start + j + tau as isize);
                acc += diff * diff;
            }
            d[tau] = acc;
            running += acc;
            dn[tau] = if running > 0.0 { acc * tau as f64 / running } else { 1.0 };
        }
        let mut best = None;
        let mut tau = tau_min;
        while tau <= tau_max {
            if dn[tau] < config.dip_threshold {
                while tau < tau_max && dn[tau + 1] < dn[tau] {
                    tau += 1;
                }
                best = Some(tau);
                break;
            }
            tau += 1;
        }
        let best = best.unwrap_or_else(|| {
            (tau_min..=tau_max)
                .min_by(|&a, &b| dn[a].total_cmp(&dn[b]))
                .unwrap_or(tau_min)
        });
        let (a, b, cc) = (dn[best - 1], dn[best], dn[best + 1]);
        let denom = a - 2.0 * b + cc;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - cc) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let clar = (1.0 - b).clamp(0.0, 1.0);
        clarity.push(clar);
        let voiced = clar >= config.clarity_threshold && level >= config.silence_floor_db;
        f0.push(if voiced { sr / (best as f64 + shift) } else { 0.0 });
    }
    let notes = f0.iter().map(|&f| f0_to_note(f)).collect();
    Ok(PitchSequence {
        f0,
        notes,
        rms_db: levels,
        clarity,
    })
}

/// Odd-width median filter over note indices. A window yields the lower
/// median of its voiced notes when at least half of it is voiced, else rest.
/// Windows are truncated at the sequence edges.
pub fn median_filter(notes: &[Note], width: usize) -> Result<Vec<Note>> {
    if width == 0 || width % 2 == 0 {
        return Err(contract(format!("median width must be odd and positive, got {width}")));
    }
    let h = width / 2;
    let mut out = Vec::with_capacity(notes.len());
    let mut voiced = Vec::with_capacity(width);
    for i in 0..notes.len() {
        let lo = i.saturating_sub(h);
        let hi = (i + h + 1).min(notes.len());
        voiced.clear();
        voiced.extend(notes[lo..hi].iter().filter(|n| !n.is_rest()).copied());
        if voiced.is_empty() || voiced.len() * 2 < hi - lo {
            out.push(Note::REST);
        } else {
            voiced.sort_unstable();
            out.push(voiced[(voiced.len() - 1) / 2]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn note_names() {
        assert_eq!(f0_to_note(440.0).to_string(), "A4");
        assert_eq!(f0_to_note(261.63).to_string(), "C4");
        assert_eq!(f0_to_note(0.0), Note::REST);
        assert_eq!(Note::parse("C#3").unwrap().to_string(), "C#3");
        assert_eq!(Note::parse("C0").unwrap(), Note(1));
        assert_eq!(Note::parse("B8").unwrap(), Note(108));
        assert!(Note::parse("C9").is_none());
    }

    #[test]
    fn median_examples() {
        let a4 = Note::parse("A4").unwrap();
        let c7 = Note::parse("C7").unwrap();
        assert_eq!(median_filter(&[a4, a4, c7, a4, a4], 3).unwrap(), vec![a4; 5]);
        assert!(median_filter(&[a4], 4).is_err());
        let seq = [a4, Note::REST, c7];
        assert_eq!(median_filter(&seq, 1).unwrap(), seq.to_vec());
    }
}
