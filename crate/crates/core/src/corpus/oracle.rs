use std::path::Path;

use cantor_dsp::{note_to_f0, write_wav, Note, Waveform, DEFAULT_SAMPLE_RATE, HOP_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, SEP};
use super::manifest::{write_jsonl, GroundTruth, ManifestEntry};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhonemeKind {
    Consonant,
    Vowel,
}

/// Spectral fingerprint of one synthetic phoneme: harmonic amplitudes are
/// sampled from a sum of Gaussian bumps `(centre Hz, width Hz, gain)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhonemeProfile {
    pub name: String,
    pub kind: PhonemeKind,
    pub formants: Vec<(f64, f64, f64)>,
    pub level: f64,
    /// Inclusive duration range in frames.
    pub min_frames: usize,
    pub max_frames: usize,
}

impl PhonemeProfile {
    fn envelope(&self, freq: f64) -> f64 {
        0.01 + self
            .formants
            .iter()
            .map(|&(c, w, g)| g * (-0.5 * ((freq - c) / w).powi(2)).exp())
            .sum::<f64>()
    }

    /// Harmonic amplitudes at `f0`, normalised to unit energy times `level`.
    pub fn harmonic_amplitudes(&self, f0: f64, max_freq: f64) -> Vec<f64> {
        let n = (max_freq / f0).floor().max(1.0) as usize;
        let mut amps: Vec<f64> = (1..=n).map(|h| self.envelope(h as f64 * f0)).collect();
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a *= self.level / norm);
        amps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub phonemes: Vec<PhonemeProfile>,
    pub note_low: u8,
    pub note_high: u8,
    /// Per-song duration scale range.
    pub tempo_range: (f64, f64),
    pub words_per_sentence: (usize, usize),
    pub separator_frames: (usize, usize),
    pub seed: u64,
    /// Gaussian noise standard deviation relative to the signal RMS.
    pub noise_level: f64,
    /// Probability that a vowel moves to a second note halfway through.
    pub melisma_prob: f64,
    pub sample_rate: u32,
    pub hop: usize,
}

fn profile(name: &str, kind: PhonemeKind, formants: &[(f64, f64, f64)], level: f64, range: (usize, usize)) -> PhonemeProfile {
    PhonemeProfile {
        name: name.into(),
        kind,
        formants: formants.to_vec(),
        level,
        min_frames: range.0,
        max_frames: range.1,
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        use PhonemeKind::{Consonant as C, Vowel as V};
        let c = (3, 5);
        let v = (6, 12);
        let phonemes = vec![
            profile("k", C, &[(200.0, 150.0, 0.15), (1800.0, 500.0, 1.0), (3000.0, 600.0, 0.5)], 0.7, c),
            profile("m", C, &[(250.0, 150.0, 1.0), (1100.0, 300.0, 0.08)], 0.7, c),
            profile("s", C, &[(200.0, 150.0, 0.05), (5000.0, 1200.0, 1.0), (7000.0, 1200.0, 0.6)], 0.7, c),
            profile("t", C, &[(250.0, 150.0, 0.2), (3800.0, 800.0, 1.0)], 0.7, c),
            profile("n", C, &[(280.0, 150.0, 1.0), (1700.0, 300.0, 0.3), (2600.0, 400.0, 0.2)], 0.7, c),
            profile("l", C, &[(380.0, 200.0, 1.0), (1250.0, 300.0, 0.6), (2800.0, 400.0, 0.4)], 0.7, c),
            profile("a", V, &[(730.0, 300.0, 1.0), (1090.0, 300.0, 0.6), (2440.0, 400.0, 0.2)], 1.0, v),
            profile("e", V, &[(530.0, 250.0, 1.0), (1840.0, 300.0, 0.5), (2480.0, 400.0, 0.25)], 1.0, v),
            profile("i", V, &[(270.0, 200.0, 1.0), (2290.0, 300.0, 0.6), (3010.0, 400.0, 0.3)], 1.0, v),
            profile("o", V, &[(570.0, 250.0, 1.0), (840.0, 250.0, 0.7), (2410.0, 400.0, 0.1)], 1.0, v),
            profile("u", V, &[(300.0, 200.0, 1.0), (870.0, 250.0, 0.4), (2240.0, 400.0, 0.1)], 1.0, v),
        ];
        SyntheticSpec {
            phonemes,
            note_low: Note::from_midi(48).id() as u8,
            note_high: Note::from_midi(69).id() as u8,
            tempo_range: (0.9, 1.1),
            words_per_sentence: (3, 5),
            separator_frames: (12, 20),
            seed: 0,
            noise_level: 0.0,
            melisma_prob: 0.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            hop: HOP_SIZE,
        }
    }
}

/// A generated song with its exact annotation.
#[derive(Clone, Debug)]
pub struct SyntheticSong {
    pub waveform: Waveform,
    pub entry: ManifestEntry,
}

impl SyntheticSpec {
    /// Every phoneme gets a fixed duration of `frames` and tempo is pinned.
    pub fn with_fixed_durations(mut self, frames: usize) -> Self {
        for p in &mut self.phonemes {
            p.min_frames = frames;
            p.max_frames = frames;
        }
        self.tempo_range = (1.0, 1.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let consonants = self.phonemes.iter().filter(|p| p.kind == PhonemeKind::Consonant).count();
        let vowels = self.phonemes.len() - consonants;
        if consonants == 0 || vowels == 0 {
            return Err(contract("synthetic inventory needs consonants and vowels"));
        }
        for p in &self.phonemes {
            if p.min_frames == 0 || p.min_frames > p.max_frames || p.level <= 0.0 {
                return Err(contract(format!("phoneme {} has an invalid duration or level", p.name)));
            }
        }
        if self.note_low == 0 || self.note_low > self.note_high || self.note_high as usize >= Note::VOCAB {
            return Err(contract("note range must lie within C0..B8"));
        }
        if !(self.tempo_range.0 > 0.0 && self.tempo_range.0 <= self.tempo_range.1) {
            return Err(contract("tempo range must be positive and ordered"));
        }
        if self.words_per_sentence.0 == 0 || self.words_per_sentence.0 > self.words_per_sentence.1 {
            return Err(contract("words per sentence range invalid"));
        }
        if self.separator_frames.0 == 0 || self.separator_frames.0 > self.separator_frames.1 {
            return Err(contract("separator range invalid"));
        }
        if !(0.0..=1.0).contains(&self.melisma_prob) {
            return Err(contract("melisma probability must lie in [0, 1]"));
        }
        if self.noise_level < 0.0 || self.hop == 0 || self.sample_rate == 0 {
            return Err(contract("noise level, hop and sample rate must be valid"));
        }
        Ok(())
    }

    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut c = Vec::new();
        let mut v = Vec::new();
        for (i, p) in self.phonemes.iter().enumerate() {
            match p.kind {
                PhonemeKind::Consonant => c.push(i),
                PhonemeKind::Vowel => v.push(i),
            }
        }
        (c, v)
    }

    /// Consonant-vowel syllables, one word each. Phoneme `i` of this inventory
    /// gets ID `i + 3`.
    pub fn lexicon(&self) -> Lexicon {
        let names: Vec<&str> = self.phonemes.iter().map(|p| p.name.as_str()).collect();
        let mut lex = Lexicon::parse(&format!("@phonemes {}\n", names.join(" "))).expect("inventory line");
        let (cs, vs) = self.split();
        for &c in &cs {
            for &v in &vs {
                let word = format!("{}{}", names[c], names[v]);
                lex.insert(&word, &[names[c], names[v]]);
            }
        }
        lex
    }
}

const CROSSFADE: usize = 64;

/// Renders one song of `n_sentences` sentences seeded by `spec.seed`.
pub fn gen_synthetic_song(spec: &SyntheticSpec, n_sentences: usize) -> Result<SyntheticSong> {
    spec.validate()?;
    if n_sentences == 0 {
        return Err(contract("a song needs at least one sentence"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (cs, vs) = spec.split();
    let tempo = rng.gen_range(spec.tempo_range.0..=spec.tempo_range.1);
    let dur = |rng: &mut ChaCha8Rng, p: &PhonemeProfile| -> usize {
        let d = rng.gen_range(p.min_frames..=p.max_frames) as f64 * tempo;
        (d.round() as usize).max(1)
    };

    let (lo, hi) = (spec.note_low as i32, spec.note_high as i32);
    let mut note = rng.gen_range(lo..=hi);
    let mut phonemes = Vec::new();
    let mut durations = Vec::new();
    // Rendered pieces: a vowel may span two notes.
    let mut pieces: Vec<(usize, usize, u8)> = Vec::new();
    let mut frame_notes = Vec::new();
    let mut word_starts = Vec::new();
    let mut sentences = Vec::new();
    for s in 0..n_sentences {
        if s > 0 {
            phonemes.push(SEP);
            durations.push(rng.gen_range(spec.separator_frames.0..=spec.separator_frames.1));
            let d = *durations.last().expect("separator pushed");
            pieces.push((SEP, d, 0));
            frame_notes.extend(std::iter::repeat(0u8).take(d));
        }
        let n_words = rng.gen_range(spec.words_per_sentence.0..=spec.words_per_sentence.1);
        let mut words = Vec::new();
        for _ in 0..n_words {
            let c = cs[rng.gen_range(0..cs.len())];
            let v = vs[rng.gen_range(0..vs.len())];
            note = (note + rng.gen_range(-2..=2)).clamp(lo, hi);
            word_starts.push(phonemes.len());
            for p in [c, v] {
                let d = dur(&mut rng, &spec.phonemes[p]);
                phonemes.push(p + 3);
                durations.push(d);
                if p == v && d >= 4 && spec.melisma_prob > 0.0 && rng.gen_bool(spec.melisma_prob) {
                    let first = d / 2;
                    let step = if rng.gen_bool(0.5) { 1 } else { -1 } * rng.gen_range(1..=2);
                    let second = (note + step).clamp(lo, hi);
                    pieces.push((p + 3, first, note as u8));
                    pieces.push((p + 3, d - first, second as u8));
                    frame_notes.extend(std::iter::repeat(note as u8).take(first));
                    frame_notes.extend(std::iter::repeat(second as u8).take(d - first));
                    note = second;
                } else {
                    pieces.push((p + 3, d, note as u8));
                    frame_notes.extend(std::iter::repeat(note as u8).take(d));
                }
            }
            words.push(format!("{}{}", spec.phonemes[c].name, spec.phonemes[v].name));
        }
        sentences.push(words.join(" "));
    }
    let lyrics = sentences.join(" | ");

    let notes = frame_notes;
    let piece_ph: Vec<usize> = pieces.iter().map(|p| p.0).collect();
    let piece_d: Vec<usize> = pieces.iter().map(|p| p.1).collect();
    let piece_n: Vec<u8> = pieces.iter().map(|p| p.2).collect();
    let samples = render(spec, &piece_ph, &piece_d, &piece_n, &mut rng);
    let waveform = Waveform::new(samples, spec.sample_rate)?;
    let entry = ManifestEntry {
        id: format!("song{:04}", spec.seed),
        audio: format!("song{:04}.wav", spec.seed),
        lyrics,
        language: "syn".into(),
        singer: "oracle".into(),
        kind: "singing".into(),
        truth: Some(GroundTruth {
            phonemes,
            durations,
            word_starts,
            notes,
        }),
    };
    Ok(SyntheticSong { waveform, entry })
}

fn render(spec: &SyntheticSpec, phonemes: &[usize], durations: &[usize], notes: &[u8], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let hop = spec.hop;
    let total = durations.iter().sum::<usize>() * hop;
    let max_freq = (0.45 * spec.sample_rate as f64).min(9000.0);

    // Segment boundaries in samples, offset by half a hop so that frame t
    // (centred at t * hop) lies inside its own segment. Silences hold the
    // previous pitch.
    let mut bounds = vec![0usize];
    let mut f0s = Vec::new();
    let mut amps = Vec::new();
    let mut last_f0 = None;
    for (i, &p) in phonemes.iter().enumerate() {
        let end: usize = durations[..=i].iter().sum::<usize>() * hop;
        bounds.push(if i + 1 == phonemes.len() { end } else { end - hop / 2 });
        if p == SEP {
            f0s.push(f64::NAN);
            amps.push(Vec::new());
        } else {
            let f0 = note_to_f0(Note(notes[i]));
            last_f0 = Some(f0);
            f0s.push(f0);
            amps.push(spec.phonemes[p - 3].harmonic_amplitudes(f0, max_freq));
        }
    }
    let first = last_f0.unwrap_or(220.0);
    let mut held = first;
    for f in &mut f0s {
        if f.is_nan() {
            *f = held;
        } else {
            held = *f;
        }
    }

    let sr = spec.sample_rate as f64;
    let max_h = amps.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = vec![0.0; total];
    let mut phase = 0.0f64;
    let mut seg = 0;
    let half = CROSSFADE / 2;
    let mut cur = vec![0.0; max_h];
    for (n, o) in out.iter_mut().enumerate() {
        while n >= bounds[seg + 1] {
            seg += 1;
        }
        // Crossfade weight toward the neighbour segment near each boundary.
        let (other, w) = if seg + 1 < phonemes.len() && n + half >= bounds[seg + 1] {
            (seg + 1, (n + half - bounds[seg + 1]) as f64 / CROSSFADE as f64)
        } else if seg > 0 && n < bounds[seg] + half {
            (seg - 1, (bounds[seg] + half - n) as f64 / CROSSFADE as f64)
        } else {
            (seg, 0.0)
        };
        let f0 = (1.0 - w) * f0s[seg] + w * f0s[other];
        phase += 2.0 * std::f64::consts::PI * f0 / sr;
        if phase > 2.0 * std::f64::consts::PI {
            phase -= 2.0 * std::f64::consts::PI;
        }
        cur.iter_mut().for_each(|c| *c = 0.0);
        for (k, c) in amps[seg].iter().enumerate() {
            cur[k] += (1.0 - w) * c;
        }
        for (k, c) in amps[other].iter().enumerate() {
            cur[k] += w * c;
        }
        let mut acc = 0.0;
        for (h, &a) in cur.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            if (h + 1) as f64 * f0 > max_freq {
                break;
            }
            acc += a * ((h + 1) as f64 * phase).sin();
        }
        *o = acc;
    }

    if spec.noise_level > 0.0 {
        let rms = (out.iter().map(|x| x * x).sum::<f64>() / out.len().max(1) as f64).sqrt();
        let normal = Normal::new(0.0, spec.noise_level * rms).expect("finite std");
        for o in &mut out {
            *o += normal.sample(rng);
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.5 / peak);
    }
    out
}

/// Writes `n_songs` songs (seeds `spec.seed + i`) plus `manifest.jsonl` and
/// `lexicon.txt` into `dir`.
pub fn write_synthetic_corpus(spec: &SyntheticSpec, n_songs: usize, n_sentences: usize, dir: &Path) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(n_songs);
    for i in 0..n_songs {
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(i as u64);
        let song = gen_synthetic_song(&s, n_sentences)?;
        write_wav(&dir.join(&song.entry.audio), &song.waveform)?;
        entries.push(song.entry);
    }
    write_jsonl(&dir.join("manifest.jsonl"), &entries)?;
    spec.lexicon().save(&dir.join("lexicon.txt"))?;
    Ok(entries)
}
