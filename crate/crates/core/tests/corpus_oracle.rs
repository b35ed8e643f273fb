use cantor_core::corpus::*;
use cantor_dsp::{extract_f0, median_filter, Note, PitchConfig};
use proptest::prelude::*;

fn song(seed: u64, sentences: usize) -> SyntheticSong {
    let spec = SyntheticSpec {
        seed,
        ..Default::default()
    };
    gen_synthetic_song(&spec, sentences).unwrap()
}

#[test]
fn durations_tile_the_waveform() {
    let s = song(3, 3);
    let t = s.entry.truth.as_ref().unwrap();
    let frames: usize = t.durations.iter().sum();
    assert_eq!(frames * 256, s.waveform.len());
    assert_eq!(t.notes.len(), frames);
    assert_eq!(t.phonemes.iter().filter(|&&p| p == SEP).count(), 2);
    for (p, d) in t.phonemes.iter().zip(&t.durations) {
        if *p == SEP {
            assert!(*d >= 12);
        }
    }
}

#[test]
fn lyrics_roundtrip_through_lexicon() {
    let spec = SyntheticSpec::default();
    let s = song(5, 2);
    let t = s.entry.truth.as_ref().unwrap();
    let g = spec.lexicon().g2p(&Cleaner::for_language("en").clean(&s.entry.lyrics)).unwrap();
    assert_eq!(g.phonemes, t.phonemes);
    assert_eq!(g.word_starts, t.word_starts);
    assert_eq!(g.unknown_tokens, 0);
}

#[test]
fn generation_is_deterministic() {
    let a = song(9, 2);
    let b = song(9, 2);
    assert_eq!(a.waveform, b.waveform);
    assert_eq!(a.entry, b.entry);
    assert_ne!(song(10, 2).waveform, a.waveform);
}

#[test]
fn pitch_tracker_recovers_scripted_notes() {
    for seed in 0..3 {
        let s = song(seed, 2);
        let t = s.entry.truth.as_ref().unwrap();
        let p = extract_f0(&s.waveform, &PitchConfig::default()).unwrap();
        let notes = median_filter(&p.notes, 5).unwrap();
        let (mut hit, mut total) = (0, 0);
        for (i, &n) in t.notes.iter().enumerate() {
            if n > 0 {
                total += 1;
                hit += usize::from(notes[i] == Note(n));
            }
        }
        let acc = hit as f64 / total as f64;
        assert!(acc >= 0.95, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn alignment_file_roundtrip_is_lossless() {
    let s = song(2, 3);
    let t = s.entry.truth.as_ref().unwrap();
    let rec = AlignmentRecord::from_durations("x", "x", 0, &t.phonemes, &t.durations, 1.0, 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("al.jsonl");
    write_jsonl(&p, &[rec]).unwrap();
    let back = load_alignments(&p).unwrap();
    assert_eq!(back[0].phonemes(), t.phonemes);
    assert_eq!(back[0].durations(), t.durations);
}

#[test]
fn fixed_duration_corpus_concentrates_in_one_bin() {
    let spec = SyntheticSpec::default().with_fixed_durations(9);
    let mut recs = Vec::new();
    for seed in 0..3 {
        let mut sp = spec.clone();
        sp.seed = seed;
        let s = gen_synthetic_song(&sp, 2).unwrap();
        let t = s.entry.truth.unwrap();
        recs.push(AlignmentRecord::from_durations("a", "a", 0, &t.phonemes, &t.durations, 0.0, 0.0).unwrap());
    }
    let stats = dataset_stats(&[], &[], Some(&recs), &[], 256.0 / 22050.0);
    let h = stats.phoneme_duration_ms.unwrap();
    assert_eq!(h.total(), h.count_at(104.5));
    assert_eq!(h.mode(), Some(100.0));
}

#[test]
fn corpus_writer_produces_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let entries = write_synthetic_corpus(&SyntheticSpec::default(), 2, 1, dir.path()).unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded, entries);
    let lex = Lexicon::load(&dir.path().join("lexicon.txt")).unwrap();
    assert_eq!(lex, SyntheticSpec::default().lexicon());
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = SyntheticSpec::default();
    spec.phonemes[0].min_frames = 0;
    assert!(gen_synthetic_song(&spec, 1).is_err());
    assert!(gen_synthetic_song(&SyntheticSpec::default(), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn g2p_is_deterministic(seed in 0u64..1000) {
        let spec = SyntheticSpec { seed, ..Default::default() };
        let s = gen_synthetic_song(&spec, 2).unwrap();
        let lex = spec.lexicon();
        prop_assert_eq!(lex.g2p(&s.entry.lyrics).unwrap(), lex.g2p(&s.entry.lyrics).unwrap());
    }
}
