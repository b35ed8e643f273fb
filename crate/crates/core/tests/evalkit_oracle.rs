use cantor_core::corpus::{gen_synthetic_song, SyntheticSpec};
use cantor_core::evalkit::*;
use cantor_dsp::{extract_f0, linear_spectrogram, median_filter, Note, PitchConfig};

fn oracle(seed: u64) -> (cantor_dsp::Waveform, Vec<Note>) {
    let spec = SyntheticSpec { seed, ..Default::default() };
    let s = gen_synthetic_song(&spec, 2).unwrap();
    let notes = s.entry.truth.unwrap().notes.into_iter().map(Note).collect();
    (s.waveform, notes)
}

#[test]
fn own_notes_score_perfectly() {
    let (w, _) = oracle(1);
    let p = extract_f0(&w, &PitchConfig::default()).unwrap();
    let own = median_filter(&p.notes, 5).unwrap();
    assert_eq!(pitch_accuracy(&w, &own, &PitchAccuracyConfig::default()).unwrap(), 1.0);
}

#[test]
fn semitone_shift_scores_zero() {
    let (w, notes) = oracle(1);
    let p = extract_f0(&w, &PitchConfig::default()).unwrap();
    let shifted: Vec<Note> = median_filter(&p.notes, 5)
        .unwrap()
        .into_iter()
        .map(|n| if n.is_rest() { n } else { Note(n.0 + 1) })
        .collect();
    assert_eq!(pitch_accuracy(&w, &shifted, &PitchAccuracyConfig::default()).unwrap(), 0.0);
    let rest = vec![Note(0); notes.len()];
    assert!(pitch_accuracy(&w, &rest, &PitchAccuracyConfig::default()).is_err());
}

#[test]
fn accuracy_is_gain_invariant_and_tolerance_variant_agrees() {
    let (w, notes) = oracle(4);
    let cfg = PitchAccuracyConfig::default();
    let a = pitch_accuracy(&w, &notes, &cfg).unwrap();
    let b = pitch_accuracy(&w.scaled(0.25), &notes, &cfg).unwrap();
    assert_eq!(a, b);
    let tol = PitchAccuracyConfig {
        tolerance_cents: Some(50.0),
        ..Default::default()
    };
    assert!(pitch_accuracy(&w, &notes, &tol).unwrap() >= 0.9);
}

#[test]
fn griffin_lim_upper_bound_on_oracle() {
    for seed in 0..2 {
        let (w, notes) = oracle(seed);
        let spec = linear_spectrogram(&w).unwrap();
        let acc = pitch_accuracy_upper_bound(&spec, &notes, 60, 7, &PitchAccuracyConfig::default()).unwrap();
        assert!(acc >= 0.95, "seed {seed}: {acc}");
    }
}
