use std::f64::consts::PI;

use cantor_dsp::pitch::cents_off;
use cantor_dsp::silence::SILENCE_RUN;
use cantor_dsp::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SR: u32 = 22050;

fn harmonic_tone(f0: f64, secs: f64) -> Waveform {
    let n = (secs * SR as f64) as usize;
    let amps = [0.5, 0.25, 0.15, 0.08, 0.05];
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            amps.iter()
                .enumerate()
                .map(|(h, a)| a * (2.0 * PI * f0 * (h + 1) as f64 * t).sin())
                .sum()
        })
        .collect();
    Waveform::new(x, SR).unwrap()
}

fn noise(seed: u64, n: usize, scale: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Waveform::new(x, SR).unwrap()
}

#[test]
fn zero_waveform_has_zero_magnitudes() {
    let (_, s) = stft(&Waveform::new(vec![0.0; 4096], SR).unwrap(), 1024, 256).unwrap();
    assert!(s.data.iter().all(|&v| v == 0.0));
}

#[test]
fn bin_centred_sine_peaks_at_its_bin() {
    for k in [5usize, 40, 200] {
        let f = k as f64 * SR as f64 / 1024.0;
        let x = (0..8192).map(|i| (2.0 * PI * f * i as f64 / SR as f64).sin()).collect();
        let (_, s) = stft(&Waveform::new(x, SR).unwrap(), 1024, 256).unwrap();
        // Edge frames see the reflected signal.
        for t in 2..s.n_frames - 2 {
            let frame = s.frame(t);
            let arg = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
            assert_eq!(arg, k, "frame {t}");
        }
    }
}

#[test]
fn stft_overlap_add_reconstructs_interior() {
    let w = noise(1, 20_000, 0.3);
    let (frames, _) = stft(&w, 1024, 256).unwrap();
    let y = istft(&frames, 1024, 256, w.len()).unwrap();
    let err = w.samples[1024..w.len() - 1024]
        .iter()
        .zip(&y[1024..w.len() - 1024])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn mel_filterbank_covers_every_bin() {
    let fb = mel_filterbank(SR, 1024, 80).unwrap();
    for m in 0..80 {
        assert!(fb[m * 513..(m + 1) * 513].iter().sum::<f64>() > 0.0, "row {m}");
    }
    for b in 0..513 {
        let col: f64 = (0..80).map(|m| fb[m * 513 + b]).sum();
        assert!((col - 1.0).abs() < 1e-9, "bin {b}: {col}");
    }
    assert!(mel_filterbank(SR, 1024, 1).is_err());
}

#[test]
fn mel_of_zero_and_noise() {
    let (_, zero) = stft(&Waveform::new(vec![0.0; 4096], SR).unwrap(), 1024, 256).unwrap();
    assert!(mel(&zero, 80).unwrap().data.iter().all(|&v| v == 0.0));
    let (_, lin) = stft(&noise(2, 4096, 0.1), 1024, 256).unwrap();
    let m = mel(&lin, 80).unwrap();
    assert!(m.data.iter().all(|&v| v > 0.0));
}

#[test]
fn griffin_lim_of_silence_is_silent() {
    let (_, zero) = stft(&Waveform::new(vec![0.0; 4096], SR).unwrap(), 1024, 256).unwrap();
    let out = griffin_lim(&zero, 5, 0).unwrap();
    assert!(out.waveform.samples.iter().all(|&v| v == 0.0));
}

#[test]
fn griffin_lim_preserves_pitch_and_converges_monotonically() {
    let tone = harmonic_tone(440.0, 1.0);
    let (_, mag) = stft(&tone, 1024, 256).unwrap();
    let out = griffin_lim(&mag, 60, 7).unwrap();
    for pair in out.convergence.windows(2) {
        assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{pair:?}");
    }
    let p = extract_f0(&out.waveform, &PitchConfig::default()).unwrap();
    let voiced: Vec<f64> = p.f0.iter().copied().filter(|&f| f > 0.0).collect();
    assert!(voiced.len() > 60);
    let close = voiced.iter().filter(|&&f| (f - 440.0).abs() <= 3.0).count();
    assert!(close as f64 >= 0.9 * voiced.len() as f64, "{close}/{}", voiced.len());
}

#[test]
fn silence_is_unvoiced() {
    let p = extract_f0(&Waveform::new(vec![0.0; 8000], SR).unwrap(), &PitchConfig::default()).unwrap();
    assert_eq!(p.voiced_count(), 0);
    assert!(p.notes.iter().all(|n| n.is_rest()));
}

#[test]
fn sine_pitch_within_one_hertz() {
    let x = (0..22050).map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / SR as f64).sin()).collect();
    let p = extract_f0(&Waveform::new(x, SR).unwrap(), &PitchConfig::default()).unwrap();
    for t in 4..p.len() - 4 {
        assert!((p.f0[t] - 440.0).abs() < 1.0, "frame {t}: {}", p.f0[t]);
    }
}

#[test]
fn glide_gives_nondecreasing_notes() {
    let n = 2 * SR as usize;
    let mut phase = 0.0;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let f = 200.0 * 2f64.powf(i as f64 / n as f64);
            phase += 2.0 * PI * f / SR as f64;
            0.5 * phase.sin()
        })
        .collect();
    let p = extract_f0(&Waveform::new(x, SR).unwrap(), &PitchConfig::default()).unwrap();
    let notes = median_filter(&p.notes[2..p.len() - 2], 5).unwrap();
    for w in notes.windows(2) {
        assert!(w[1] >= w[0], "{} then {}", w[0], w[1]);
    }
}

#[test]
fn pitch_ignores_gain() {
    let tone = harmonic_tone(330.0, 0.5);
    let a = extract_f0(&tone, &PitchConfig::default()).unwrap();
    let b = extract_f0(&tone.scaled(0.3), &PitchConfig::default()).unwrap();
    assert_eq!(a.notes, b.notes);
}

#[test]
fn reference_notes() {
    assert_eq!(f0_to_note(440.0).to_string(), "A4");
    assert_eq!(f0_to_note(261.63).to_string(), "C4");
    assert!(cents_off(445.0, f0_to_note(445.0)).abs() < 50.0);
}

#[test]
fn loudness_normalisation_hits_target() {
    let w = noise(3, 3 * SR as usize, 0.05);
    let (out, report) = normalize_loudness(&w, -16.0);
    assert_eq!(report.status, LoudnessStatus::Normalized);
    let l = integrated_loudness(&out).unwrap();
    assert!((l + 16.0).abs() < 0.5, "{l}");
    let (again, r2) = normalize_loudness(&out, -16.0);
    assert!((r2.gain - 1.0).abs() < 1e-6);
    assert_eq!(again.samples.len(), out.samples.len());
}

#[test]
fn doubling_amplitude_adds_six_db() {
    let w = noise(4, 2 * SR as usize, 0.05);
    let a = integrated_loudness(&w).unwrap();
    let b = integrated_loudness(&w.scaled(2.0)).unwrap();
    assert!((b - a - 6.02).abs() < 0.1, "{}", b - a);
}

#[test]
fn silent_input_is_left_alone() {
    let w = Waveform::new(vec![0.0; 10_000], SR).unwrap();
    let (out, report) = normalize_loudness(&w, -16.0);
    assert_eq!(report.status, LoudnessStatus::Silent);
    assert_eq!(out, w);
}

fn pitch_from_voicing(voiced: &[bool]) -> PitchSequence {
    PitchSequence {
        f0: voiced.iter().map(|&v| if v { 220.0 } else { 0.0 }).collect(),
        notes: voiced.iter().map(|&v| if v { f0_to_note(220.0) } else { Note::REST }).collect(),
        rms_db: vec![-10.0; voiced.len()],
        clarity: vec![1.0; voiced.len()],
    }
}

fn mel_frames(n: usize) -> Spectrogram {
    Spectrogram {
        data: (0..n * 4).map(|i| 1.0 + i as f64).collect(),
        n_frames: n,
        n_bins: 4,
        kind: SpecKind::Mel,
        frame_size: 1024,
        hop_size: 256,
        sample_rate: SR,
    }
}

#[test]
fn long_silence_runs_shrink_to_ten_frames() {
    let mut voiced = vec![true; 5];
    voiced.extend([false; 25]);
    voiced.extend([true; 5]);
    let (c, map) = compress_silence(&mel_frames(35), &pitch_from_voicing(&voiced), -40.0).unwrap();
    assert_eq!(c.n_frames, 20);
    assert!(c.frame(10).iter().all(|&v| v == 0.0));
    assert_eq!(c.frame(15), mel_frames(35).frame(30));
    assert_eq!(map.to_original(15), 30);
    assert_eq!(map.to_original(20), 35);

    let mut short = vec![true; 5];
    short.extend([false; 9]);
    short.extend([true; 5]);
    let (c, map) = compress_silence(&mel_frames(19), &pitch_from_voicing(&short), -40.0).unwrap();
    assert_eq!(c, mel_frames(19));
    assert_eq!(map, FrameMap::identity(19));
}

#[test]
fn quiet_frames_count_as_nonvocal() {
    let mut p = pitch_from_voicing(&[true; 30]);
    for db in &mut p.rms_db[5..25] {
        *db = -60.0;
    }
    let (c, _) = compress_silence(&mel_frames(30), &p, -40.0).unwrap();
    assert_eq!(c.n_frames, 20);
    assert!(compress_silence(&mel_frames(29), &p, -40.0).is_err());
}

#[test]
fn spectrogram_cache_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.spec");
    let s = mel_frames(7);
    cantor_dsp::cache::save(&path, &s).unwrap();
    assert_eq!(cantor_dsp::cache::load(&path).unwrap(), s);
    let mut bytes = cantor_dsp::cache::encode(&s);
    bytes[8] = 2;
    assert!(cantor_dsp::cache::decode(&bytes).is_err());
}

proptest! {
    #[test]
    fn note_frequency_roundtrip(id in 1u8..=108) {
        let n = Note(id);
        prop_assert_eq!(f0_to_note(note_to_f0(n)), n);
        prop_assert_eq!(Note::parse(&n.to_string()), Some(n));
    }

    #[test]
    fn compression_length_law(voiced in prop::collection::vec(any::<bool>(), 1..200)) {
        let nonvocal: Vec<bool> = voiced.iter().map(|v| !v).collect();
        let map = FrameMap::from_nonvocal(&nonvocal);
        let mut removed = 0;
        let mut i = 0;
        while i < nonvocal.len() {
            if nonvocal[i] {
                let s = i;
                while i < nonvocal.len() && nonvocal[i] { i += 1; }
                if i - s >= SILENCE_RUN { removed += i - s - SILENCE_RUN; }
            } else { i += 1; }
        }
        prop_assert_eq!(map.len(), nonvocal.len() - removed);
        for w in map.origin.windows(2) { prop_assert!(w[0] < w[1]); }
    }

    #[test]
    fn median_filter_keeps_length_and_constants(
        id in 1u8..=108, len in 1usize..40, half in 0usize..4
    ) {
        let seq = vec![Note(id); len];
        prop_assert_eq!(median_filter(&seq, 2 * half + 1).unwrap(), seq);
    }
}
