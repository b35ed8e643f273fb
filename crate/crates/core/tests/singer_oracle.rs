use cantor_core::corpus::{gen_synthetic_song, SyntheticSpec};
use cantor_core::evalkit::{pitch_accuracy, PitchAccuracyConfig};
use cantor_core::pipeline::{preprocess, PreprocessConfig, Preprocessed};
use cantor_core::singer::*;
use cantor_dsp::Note;
use cantor_tensor::Tensor;

fn corpus(n: u64) -> (Vec<Preprocessed>, Vec<SingingExample>, usize) {
    let spec = SyntheticSpec::default();
    let vocab = spec.lexicon().vocab_size();
    let scale = SingerConfig::micro(vocab).magnitude_scale;
    let mut pre = Vec::new();
    let mut exs = Vec::new();
    for i in 0..n {
        let song = gen_synthetic_song(&SyntheticSpec { seed: 300 + i, ..spec.clone() }, 1).unwrap();
        let truth = song.entry.truth.unwrap();
        let p = preprocess(&song.waveform, &PreprocessConfig::default()).unwrap();
        exs.push(p.singing_example(&song.entry.id, &truth.phonemes, &truth.durations, scale).unwrap());
        pre.push(p);
    }
    (pre, exs, vocab)
}

#[test]
fn short_overfit_run_learns_pitch_and_keeps_structure() {
    let (pre, exs, vocab) = corpus(4);
    let cfg = SingerConfig::micro(vocab);
    let initial = SingerTrainer::new(cfg.clone()).unwrap().evaluate(&exs).unwrap();
    let (trainer, logs) = train_singer(cfg, &exs, 800, 1).unwrap();
    assert_eq!(logs.len(), 800);
    let trained = trainer.evaluate(&exs).unwrap();
    assert!(trained < 0.25 * initial, "{trained} vs {initial}");

    let (model, store) = (&trainer.model, &trainer.store);
    for (ex, p) in exs.iter().zip(&pre) {
        let notes: Vec<Note> = ex.pitch.iter().map(|&id| Note(id as u8)).collect();
        let syn = synthesize(model, store, &ex.phonemes, &ex.durations, &notes, &p.linear, 40, 1).unwrap();
        assert_eq!(syn.spectrogram.n_frames, ex.durations.iter().sum::<usize>());
        assert_eq!(syn.waveform.samples.len(), syn.spectrogram.n_frames * 256);
        let acc = pitch_accuracy(&syn.waveform, &notes, &PitchAccuracyConfig::default()).unwrap();
        assert!(acc >= 0.8, "{}: {acc}", ex.id);

        // Another utterance as reference keeps the frame count.
        let other = &pre[(exs.len() - 1).min(1)].linear;
        let swapped = synthesize(model, store, &ex.phonemes, &ex.durations, &notes, other, 1, 1).unwrap();
        assert_eq!(swapped.spectrogram.n_frames, syn.spectrogram.n_frames);
    }

    // Own conditioning reproduces the target with the training loss.
    let own = trainer.evaluate(&exs[..1]).unwrap();
    let pred = model.predict(store, &exs[0].input()).unwrap();
    let mse = pred.data().iter().zip(exs[0].target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.numel() as f64;
    assert!((mse - own).abs() < 1e-12);

    let r = &exs[0].reference;
    let mut doubled = r.data().to_vec();
    doubled.extend_from_slice(r.data());
    let doubled = Tensor::new(vec![2 * r.rows(), r.cols()], doubled).unwrap();
    let a = model.reference_embedding(store, r).unwrap();
    let b = model.reference_embedding(store, &doubled).unwrap();
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(diff / norm < 1e-2, "{diff} / {norm}");
}

#[test]
fn unvoiced_conditioning_is_rejected() {
    let (pre, exs, vocab) = corpus(1);
    let mut store = cantor_tensor::ParamStore::new();
    let model = SingerModel::new(SingerConfig::micro(vocab), &mut store).unwrap();
    let rests = vec![Note::REST; exs[0].frames()];
    assert!(synthesize(&model, &store, &exs[0].phonemes, &exs[0].durations, &rests, &pre[0].linear, 4, 0).is_err());
}
