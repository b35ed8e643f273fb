//! One function per pipeline stage.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cantor_core::aligner::{fine_tune_sentence_level, sentence_examples, AlignExample, AlignerTrainer};
use cantor_core::corpus::{
    dataset_stats, load_manifest, write_synthetic_corpus, AlignmentRecord, Cleaner, Lexicon, ManifestEntry, SyntheticSpec, SEP,
};
use cantor_core::duration::{boundaries_from_durations, durations_from_boundaries, filter_by_reward, segment_sentences};
use cantor_core::evalkit::{ase_frames, pcs, pitch_accuracy, pitch_accuracy_upper_bound, unit_onsets, PitchAccuracyConfig};
use cantor_core::pipeline::{demo_conditioning, expand_boundaries, preprocess};
use cantor_core::singer::{synthesize, SingerTrainer, SingingExample, SingerStepLog};
use cantor_dsp::{read_wav, write_wav, Note};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::workdir::*;

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub layout: Layout,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig) -> Self {
        let layout = Layout::new(&cfg.workdir);
        Ctx { cfg, layout }
    }

    fn manifest_path(&self) -> std::path::PathBuf {
        self.cfg.corpus_dir().join("manifest.jsonl")
    }

    fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        let p = self.manifest_path();
        require(&p, "gen-corpus")?;
        load_manifest(&p).with_context(|| format!("loading {}", p.display()))
    }

    fn lexicon(&self) -> Result<Lexicon> {
        let p = self.cfg.corpus_dir().join("lexicon.txt");
        require(&p, "gen-corpus")?;
        Lexicon::load(&p).with_context(|| format!("loading {}", p.display()))
    }

    fn index(&self) -> Result<Vec<UtteranceInfo>> {
        read_records(&self.layout.feature_index(), "preprocess")
    }

    fn packs(&self, index: &[UtteranceInfo]) -> Result<Vec<FeaturePack>> {
        index.par_iter().map(|u| FeaturePack::load(&self.layout.features(&u.id))).collect()
    }

    fn examples(&self, index: &[UtteranceInfo], packs: &[FeaturePack]) -> Vec<AlignExample> {
        index.iter().zip(packs).map(|(u, p)| p.example(&u.id, &u.phonemes)).collect()
    }
}

fn frame_secs(pack: &FeaturePack) -> f64 {
    pack.linear.hop_size as f64 / pack.linear.sample_rate as f64
}

pub fn gen_corpus(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg.corpus;
    let spec = SyntheticSpec {
        seed: c.seed,
        noise_level: c.noise_level,
        melisma_prob: c.melisma_prob,
        ..SyntheticSpec::default()
    };
    let dir = ctx.cfg.corpus_dir();
    let entries = write_synthetic_corpus(&spec, c.songs, c.sentences, &dir)?;
    log::info!("wrote {} songs to {}", entries.len(), dir.display());
    Ok(())
}

pub fn preprocess_stage(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.manifest()?;
    let lex = ctx.lexicon()?;
    let base = ctx.manifest_path().parent().map(Path::to_path_buf).unwrap_or_default();
    let infos: Vec<UtteranceInfo> = manifest
        .par_iter()
        .map(|e| -> Result<UtteranceInfo> {
            let wav = read_wav(&e.audio_path(&base)).with_context(|| format!("{}: reading audio", e.id))?;
            let text = Cleaner::for_language(&e.language).clean(&e.lyrics);
            let g2p = lex.g2p(&text).with_context(|| format!("{}: lyrics", e.id))?;
            let pre = preprocess(&wav, &ctx.cfg.preprocess).with_context(|| format!("{}: analysis", e.id))?;
            FeaturePack::from_preprocessed(&pre)?.save(&ctx.layout.features(&e.id))?;
            Ok(UtteranceInfo {
                id: e.id.clone(),
                audio: e.audio.clone(),
                phonemes: g2p.phonemes,
                word_starts: g2p.word_starts,
                unknown_tokens: g2p.unknown_tokens,
                frames: pre.mel.n_frames,
                compressed_frames: pre.compressed_mel.n_frames,
                measured_lufs: pre.loudness.measured_lufs,
                gain: pre.loudness.gain,
            })
        })
        .collect::<Result<_>>()?;
    write_records(&ctx.layout.feature_index(), &infos)?;
    write_records(&ctx.layout.report("preprocess.jsonl"), &infos)?;
    log::info!("preprocessed {} utterances", infos.len());
    Ok(())
}

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    ratio: f64,
    chunks: usize,
    mean_ce: f64,
    mean_guided: f64,
}

pub fn train_align(ctx: &Ctx) -> Result<()> {
    let lex = ctx.lexicon()?;
    let index = ctx.index()?;
    let packs = ctx.packs(&index)?;
    let examples = ctx.examples(&index, &packs);
    let n_mels = packs.first().map(|p| p.features.cols()).unwrap_or(ctx.cfg.preprocess.mel_bins);
    let mut trainer = AlignerTrainer::new(ctx.cfg.aligner_config(lex.vocab_size(), n_mels))?;
    trainer.precision = ctx.cfg.precision;
    let mut lines = Vec::with_capacity(ctx.cfg.align.epochs);
    for _ in 0..ctx.cfg.align.epochs {
        let r = trainer.train_epoch(&examples, true)?;
        log::info!("epoch {} ratio {:.2} ce {:.4} guided {:.5}", r.epoch, r.ratio, r.mean_ce, r.mean_guided);
        lines.push(EpochLine {
            epoch: r.epoch,
            ratio: r.ratio,
            chunks: r.chunks,
            mean_ce: r.mean_ce,
            mean_guided: r.mean_guided,
        });
    }
    save_aligner(&trainer, &ctx.layout.aligner(), "song")?;
    write_records(&ctx.layout.report("train-align.jsonl"), &lines)?;
    Ok(())
}

#[derive(Serialize)]
struct FineTuneLine {
    epoch: usize,
    sentences: usize,
    loss_before: f64,
    loss_after: f64,
}

pub fn fine_tune_align(ctx: &Ctx) -> Result<()> {
    let mut trainer = load_aligner(&ctx.layout.aligner(), ctx.cfg.precision)?;
    let index = ctx.index()?;
    let packs = ctx.packs(&index)?;
    let examples = ctx.examples(&index, &packs);
    let per_song: Vec<Vec<AlignExample>> = examples
        .par_iter()
        .map(|ex| -> Result<Vec<AlignExample>> {
            let al = trainer.align(ex)?;
            let d = durations_from_boundaries(&al.dp.boundaries)?;
            Ok(sentence_examples(ex, &d, SEP)?)
        })
        .collect::<Result<_>>()?;
    let sentences: Vec<AlignExample> = per_song.into_iter().flatten().collect();
    if sentences.is_empty() {
        bail!("no sentences to fine-tune on");
    }
    let mut lines = Vec::new();
    for e in 0..ctx.cfg.align.fine_tune_epochs {
        let before = trainer.evaluate_loss(&sentences)?;
        fine_tune_sentence_level(&mut trainer, &sentences, 1)?;
        let after = trainer.evaluate_loss(&sentences)?;
        log::info!("fine-tune epoch {e}: loss {before:.4} -> {after:.4}");
        lines.push(FineTuneLine {
            epoch: e,
            sentences: sentences.len(),
            loss_before: before,
            loss_after: after,
        });
    }
    save_aligner(&trainer, &ctx.layout.aligner_fine_tuned(), "sentence")?;
    write_records(&ctx.layout.report("fine-tune-align.jsonl"), &lines)?;
    Ok(())
}

/// A sentence cut out of a song by the song-level alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub song_id: String,
    pub phoneme_start: usize,
    pub phoneme_end: usize,
    /// Frame range on the compressed axis.
    pub compressed_start: usize,
    pub compressed_end: usize,
}

pub fn segment(ctx: &Ctx) -> Result<()> {
    let trainer = load_aligner(&ctx.layout.best_aligner()?, ctx.cfg.precision)?;
    let index = ctx.index()?;
    let packs = ctx.packs(&index)?;
    let results: Vec<(AlignmentRecord, Vec<Segment>)> = index
        .par_iter()
        .zip(&packs)
        .map(|(u, pack)| -> Result<(AlignmentRecord, Vec<Segment>)> {
            let al = trainer.align(&pack.example(&u.id, &u.phonemes))?;
            let ob = expand_boundaries(&al.dp.boundaries, &u.phonemes, SEP, &pack.frame_map);
            let od = durations_from_boundaries(&ob)?;
            let rec = AlignmentRecord::from_durations(&u.id, &u.id, 0, &u.phonemes, &od, al.dp.reward, al.dp.normalized_reward)?;
            let cd = durations_from_boundaries(&al.dp.boundaries)?;
            let segs = segment_sentences(&u.phonemes, SEP, &cd)?
                .into_iter()
                .enumerate()
                .map(|(k, s)| Segment {
                    id: format!("{}#{k}", u.id),
                    song_id: u.id.clone(),
                    phoneme_start: s.phonemes.start,
                    phoneme_end: s.phonemes.end,
                    compressed_start: s.frames.start,
                    compressed_end: s.frames.end,
                })
                .collect();
            Ok((rec, segs))
        })
        .collect::<Result<_>>()?;
    let (songs, segs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let segs: Vec<Segment> = segs.into_iter().flatten().filter(|s| s.compressed_end > s.compressed_start).collect();
    write_records(&ctx.layout.song_alignments(), &songs)?;
    write_records(&ctx.layout.segments(), &segs)?;
    log::info!("{} songs cut into {} sentences", songs.len(), segs.len());
    Ok(())
}

pub fn extract_duration(ctx: &Ctx) -> Result<()> {
    let trainer = load_aligner(&ctx.layout.best_aligner()?, ctx.cfg.precision)?;
    let segs: Vec<Segment> = read_records(&ctx.layout.segments(), "segment")?;
    let index = ctx.index()?;
    let packs = ctx.packs(&index)?;
    let find = |song: &str| index.iter().position(|u| u.id == song);
    let records: Vec<AlignmentRecord> = segs
        .par_iter()
        .map(|s| -> Result<AlignmentRecord> {
            let k = find(&s.song_id).with_context(|| format!("{}: song {} not preprocessed", s.id, s.song_id))?;
            let (u, pack) = (&index[k], &packs[k]);
            let rows = s.compressed_end - s.compressed_start;
            let cols = pack.features.cols();
            let feats = pack.features.data()[s.compressed_start * cols..s.compressed_end * cols].to_vec();
            let phonemes = &u.phonemes[s.phoneme_start..s.phoneme_end];
            let ex = AlignExample {
                id: s.id.clone(),
                features: cantor_tensor::Tensor::new(vec![rows, cols], feats)?,
                phonemes: phonemes.to_vec(),
            };
            let al = trainer.align(&ex)?;
            let ob: Vec<usize> = al
                .dp
                .boundaries
                .iter()
                .map(|&b| pack.frame_map.to_original(b + s.compressed_start))
                .collect();
            let rel: Vec<usize> = ob.iter().map(|&b| b - ob[0]).collect();
            let d = durations_from_boundaries(&rel)?;
            Ok(AlignmentRecord::from_durations(&s.id, &s.song_id, ob[0], phonemes, &d, al.dp.reward, al.dp.normalized_reward)?)
        })
        .collect::<Result<_>>()?;
    write_records(&ctx.layout.sentence_alignments(), &records)?;
    log::info!("extracted durations for {} sentences", records.len());
    Ok(())
}

pub fn filter(ctx: &Ctx) -> Result<()> {
    let recs: Vec<AlignmentRecord> = read_records(&ctx.layout.sentence_alignments(), "extract-duration")?;
    let scored: Vec<(String, f64)> = recs.iter().map(|r| (r.id.clone(), r.normalized_reward)).collect();
    let decisions = filter_by_reward(&scored, ctx.cfg.filter_threshold);
    let kept: Vec<AlignmentRecord> = recs
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.kept)
        .map(|(r, _)| r.clone())
        .collect();
    write_records(&ctx.layout.report("filter.jsonl"), &decisions)?;
    write_records(&ctx.layout.kept_alignments(), &kept)?;
    log::info!("kept {} of {} sentences", kept.len(), recs.len());
    Ok(())
}

pub fn stats(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.manifest()?;
    let base = ctx.manifest_path().parent().map(Path::to_path_buf).unwrap_or_default();
    let secs: Vec<f64> = manifest
        .par_iter()
        .map(|e| -> Result<f64> {
            let w = read_wav(&e.audio_path(&base))?;
            Ok(w.samples.len() as f64 / w.sample_rate as f64)
        })
        .collect::<Result<_>>()?;
    let alignments = [ctx.layout.kept_alignments(), ctx.layout.sentence_alignments()]
        .into_iter()
        .find(|p| p.exists())
        .map(|p| cantor_core::corpus::load_alignments(&p))
        .transpose()?;
    let (notes, fs) = if ctx.layout.feature_index().exists() {
        let index = ctx.index()?;
        let packs = ctx.packs(&index)?;
        let fs = packs.first().map(frame_secs).unwrap_or(256.0 / 22050.0);
        (packs.iter().map(|p| p.notes.iter().map(|n| n.0).collect()).collect(), fs)
    } else {
        (Vec::new(), 256.0 / 22050.0)
    };
    let s = dataset_stats(&manifest, &secs, alignments.as_deref(), &notes, fs);
    write_report(&ctx.layout.report("stats.json"), &s)
}

struct SentenceData {
    example: SingingExample,
    notes: Vec<Note>,
    reference: cantor_dsp::Spectrogram,
}

/// Kept sentences as singing examples on the original frame axis.
fn kept_sentences(ctx: &Ctx, scale: f64) -> Result<Vec<SentenceData>> {
    let kept: Vec<AlignmentRecord> = read_records(&ctx.layout.kept_alignments(), "filter")?;
    let index = ctx.index()?;
    let mut out = Vec::new();
    let mut cache: Option<(String, FeaturePack)> = None;
    for r in &kept {
        if cache.as_ref().map_or(true, |(id, _)| id != &r.song_id) {
            if !index.iter().any(|u| u.id == r.song_id) {
                bail!("{}: song {} not preprocessed", r.id, r.song_id);
            }
            cache = Some((r.song_id.clone(), FeaturePack::load(&ctx.layout.features(&r.song_id))?));
        }
        let pack = &cache.as_ref().expect("loaded").1;
        let spec = slice_frames(&pack.linear, r.frame_offset, r.n_frames)?;
        let notes = pack.notes[r.frame_offset..r.frame_offset + r.n_frames].to_vec();
        if notes.iter().all(|n| n.is_rest()) {
            log::warn!("{}: no voiced frame, skipped", r.id);
            continue;
        }
        let example = SingingExample::new(&r.id, r.phonemes(), r.durations(), &notes, &spec, scale)?;
        out.push(SentenceData {
            example,
            notes,
            reference: spec,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SingSummary {
    utterances: usize,
    steps: usize,
    initial_mse: f64,
    final_mse: f64,
}

pub fn train_sing(ctx: &Ctx) -> Result<()> {
    let lex = ctx.lexicon()?;
    let config = ctx.cfg.singer_config(lex.vocab_size());
    let mut data = kept_sentences(ctx, config.magnitude_scale)?;
    if ctx.cfg.sing.max_utterances > 0 {
        data.truncate(ctx.cfg.sing.max_utterances);
    }
    if data.is_empty() {
        bail!("no kept sentences to train on");
    }
    let examples: Vec<SingingExample> = data.into_iter().map(|d| d.example).collect();
    let mut trainer = SingerTrainer::new(config)?;
    trainer.precision = ctx.cfg.precision;
    let initial = trainer.evaluate(&examples)?;
    let batch = ctx.cfg.sing.batch.min(examples.len());
    let mut logs: Vec<SingerStepLog> = Vec::with_capacity(ctx.cfg.sing.steps);
    let mut next = 0;
    for _ in 0..ctx.cfg.sing.steps {
        let picked: Vec<&SingingExample> = (0..batch).map(|i| &examples[(next + i) % examples.len()]).collect();
        next = (next + batch) % examples.len();
        let log = trainer.train_step(&picked)?;
        if log.step % 100 == 0 {
            log::info!("step {} loss {:.6}", log.step, log.loss);
        }
        logs.push(log);
    }
    let final_mse = trainer.evaluate(&examples)?;
    save_singer(&trainer, &ctx.layout.singer())?;
    write_records(&ctx.layout.report("train-sing.jsonl"), &logs)?;
    write_report(
        &ctx.layout.report("train-sing.json"),
        &SingSummary {
            utterances: examples.len(),
            steps: ctx.cfg.sing.steps,
            initial_mse: initial,
            final_mse,
        },
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthLine {
    pub id: String,
    pub frames: usize,
    pub duration_sum: usize,
    pub samples: usize,
    pub wav: String,
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let singer = load_singer(&ctx.layout.singer(), ctx.cfg.precision)?;
    let mut data = kept_sentences(ctx, singer.model.config.magnitude_scale)?;
    if ctx.cfg.synth_count > 0 {
        data.truncate(ctx.cfg.synth_count);
    }
    let lines: Vec<SynthLine> = data
        .par_iter()
        .map(|d| -> Result<SynthLine> {
            let ex = &d.example;
            let syn = synthesize(
                &singer.model,
                &singer.store,
                &ex.phonemes,
                &ex.durations,
                &d.notes,
                &d.reference,
                ctx.cfg.synth_iterations,
                ctx.cfg.seed,
            )?;
            let path = ctx.layout.synth_wav(&ex.id);
            ensure_parent(&path)?;
            write_wav(&path, &syn.waveform)?;
            Ok(SynthLine {
                id: ex.id.clone(),
                frames: syn.spectrogram.n_frames,
                duration_sum: ex.durations.iter().sum(),
                samples: syn.waveform.samples.len(),
                wav: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            })
        })
        .collect::<Result<_>>()?;
    write_records(&ctx.layout.report("synth.jsonl"), &lines)?;
    log::info!("synthesized {} utterances", lines.len());
    Ok(())
}

/// Synthesis from a demo recording: durations from the aligner, notes from
/// the recording's pitch, timbre from `reference` (the demo when absent).
pub fn synth_demo(ctx: &Ctx, demo: &Path, lyrics: &str, reference: Option<&Path>, out: &Path) -> Result<()> {
    let singer = load_singer(&ctx.layout.singer(), ctx.cfg.precision)?;
    let aligner = load_aligner(&ctx.layout.best_aligner()?, ctx.cfg.precision)?;
    let lex = ctx.lexicon()?;
    let text = Cleaner::for_language("en").clean(lyrics);
    let phonemes = lex.g2p(&text)?.phonemes;
    let pre = preprocess(&read_wav(demo)?, &ctx.cfg.preprocess)?;
    let (durations, notes) = demo_conditioning(&aligner.model, &aligner.store, &pre, &phonemes, ctx.cfg.precision)?;
    let ref_spec = match reference {
        Some(p) => preprocess(&read_wav(p)?, &ctx.cfg.preprocess)?.linear,
        None => pre.linear.clone(),
    };
    let syn = synthesize(
        &singer.model,
        &singer.store,
        &phonemes,
        &durations,
        &notes,
        &ref_spec,
        ctx.cfg.synth_iterations,
        ctx.cfg.seed,
    )?;
    ensure_parent(out)?;
    write_wav(out, &syn.waveform)?;
    log::info!("wrote {} ({} frames)", out.display(), syn.spectrogram.n_frames);
    Ok(())
}

#[derive(Serialize, Default)]
struct AlignmentMetrics {
    songs: usize,
    mean_ase_frames: f64,
    mean_ase_ms: f64,
    mean_pcs: f64,
}

#[derive(Serialize)]
struct PitchLine {
    id: String,
    accuracy: f64,
    upper_bound: f64,
}

#[derive(Serialize)]
struct EvalReport {
    alignment: Option<AlignmentMetrics>,
    sentences: usize,
    kept: usize,
    pitch: Vec<PitchLine>,
    mean_pitch_accuracy: Option<f64>,
    mean_upper_bound: Option<f64>,
    frames_match_durations: bool,
}

pub fn eval(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.manifest()?;
    let index = ctx.index()?;
    let songs: Vec<AlignmentRecord> = read_records(&ctx.layout.song_alignments(), "segment")?;

    let mut alignment = AlignmentMetrics::default();
    for rec in &songs {
        let Some(truth) = manifest.iter().find(|e| e.id == rec.song_id).and_then(|e| e.truth.as_ref()) else {
            continue;
        };
        let Some(pack_info) = index.iter().find(|u| u.id == rec.song_id) else {
            continue;
        };
        if truth.phonemes != rec.phonemes() {
            log::warn!("{}: lyrics differ from ground truth, skipped", rec.song_id);
            continue;
        }
        let pack = FeaturePack::load(&ctx.layout.features(&pack_info.id))?;
        let d = rec.durations();
        let pred = unit_onsets(&d, &truth.word_starts)?;
        let gold = unit_onsets(&truth.durations, &truth.word_starts)?;
        let (f, ms) = ase_frames(&pred, &gold, pack.linear.hop_size, pack.linear.sample_rate)?;
        let ps: Vec<_> = segment_sentences(&truth.phonemes, SEP, &d)?.into_iter().map(|s| s.frames).collect();
        let ts: Vec<_> = segment_sentences(&truth.phonemes, SEP, &truth.durations)?.into_iter().map(|s| s.frames).collect();
        let total = boundaries_from_durations(&truth.durations).last().copied().unwrap_or(0);
        alignment.songs += 1;
        alignment.mean_ase_frames += f;
        alignment.mean_ase_ms += ms;
        alignment.mean_pcs += pcs(&ps, &ts, total)?;
    }
    let alignment = (alignment.songs > 0).then(|| {
        let n = alignment.songs as f64;
        AlignmentMetrics {
            mean_ase_frames: alignment.mean_ase_frames / n,
            mean_ase_ms: alignment.mean_ase_ms / n,
            mean_pcs: alignment.mean_pcs / n,
            ..alignment
        }
    });

    let sentences = read_records::<AlignmentRecord>(&ctx.layout.sentence_alignments(), "extract-duration")?.len();
    let kept = read_records::<AlignmentRecord>(&ctx.layout.kept_alignments(), "filter")?.len();
    let synth: Vec<SynthLine> = read_records(&ctx.layout.report("synth.jsonl"), "synth")?;
    let data = kept_sentences(ctx, 1.0)?;
    let acc_cfg = PitchAccuracyConfig::default();
    let pitch: Vec<PitchLine> = synth
        .par_iter()
        .map(|line| -> Result<PitchLine> {
            let d = data
                .iter()
                .find(|d| d.example.id == line.id)
                .with_context(|| format!("{}: synthesized utterance is no longer kept", line.id))?;
            let wav = read_wav(&ctx.layout.synth_wav(&line.id))?;
            Ok(PitchLine {
                id: line.id.clone(),
                accuracy: pitch_accuracy(&wav, &d.notes, &acc_cfg)?,
                upper_bound: pitch_accuracy_upper_bound(&d.reference, &d.notes, ctx.cfg.synth_iterations, ctx.cfg.seed, &acc_cfg)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean = |f: fn(&PitchLine) -> f64| (!pitch.is_empty()).then(|| pitch.iter().map(f).sum::<f64>() / pitch.len() as f64);
    let report = EvalReport {
        alignment,
        sentences,
        kept,
        mean_pitch_accuracy: mean(|p| p.accuracy),
        mean_upper_bound: mean(|p| p.upper_bound),
        frames_match_durations: synth.iter().all(|s| s.frames == s.duration_sum),
        pitch,
    };
    write_report(&ctx.layout.report("eval.json"), &report)
}
