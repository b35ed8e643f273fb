use std::collections::BTreeMap;
use std::ops::Range;

use cantor_dsp::{SpecKind, Spectrogram};
use cantor_tensor::{Adam, AdamConfig, GraphConfig, LrSchedule, ParamStore, Precision, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AlignerConfig, CurriculumState};
use super::model::{aligner_chunk_step, AlignerModel, ChunkInput, ChunkOutcome, DecoderCarry};
use crate::duration::{extract_duration_dp, segment_sentences, AttentionMatrix, DpOptions, DpResult};
use crate::error::{contract, Result};

/// One song (or sentence) ready for the aligner.
#[derive(Clone, Debug)]
pub struct AlignExample {
    pub id: String,
    /// `[S, n_mels]` standardised log-mel frames.
    pub features: Tensor,
    pub phonemes: Vec<usize>,
}

impl AlignExample {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

/// Cuts an aligned song into sentence-level examples at separator phonemes,
/// using durations on the example's own frame axis.
pub fn sentence_examples(ex: &AlignExample, durations: &[usize], separator: usize) -> Result<Vec<AlignExample>> {
    if durations.iter().sum::<usize>() != ex.frames() {
        return Err(contract(format!("{}: durations do not cover {} frames", ex.id, ex.frames())));
    }
    let cols = ex.features.cols();
    segment_sentences(&ex.phonemes, separator, durations)?
        .into_iter()
        .enumerate()
        .filter(|(_, span)| !span.frames.is_empty())
        .map(|(k, span)| {
            let data = ex.features.data()[span.frames.start * cols..span.frames.end * cols].to_vec();
            Ok(AlignExample {
                id: format!("{}#{k}", ex.id),
                features: Tensor::new(vec![span.frames.len(), cols], data)?,
                phonemes: ex.phonemes[span.phonemes].to_vec(),
            })
        })
        .collect()
}

/// Log-mel frames standardised with the song's own mean and deviation.
pub fn song_features(mel: &Spectrogram) -> Result<Tensor> {
    if mel.kind != SpecKind::Mel {
        return Err(contract("aligner features need a mel spectrogram"));
    }
    let logs: Vec<f64> = mel.data.iter().map(|&v| v.max(1e-4).ln()).collect();
    let n = logs.len().max(1) as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let std = (logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-3);
    let data = logs.iter().map(|x| (x - mean) / std).collect();
    Ok(Tensor::new(vec![mel.n_frames, mel.n_bins], data)?)
}

/// `A[i] = floor(i * S / T)`.
pub fn linear_positions(t: usize, s: usize) -> Vec<usize> {
    (0..t).map(|i| i * s / t.max(1)).collect()
}

fn plan_window(cfg: &AlignerConfig, pos: &[usize], start: usize, n: usize, s: usize) -> (Range<usize>, usize) {
    let t = pos.len();
    let nominal = (n * s).div_ceil(t);
    let margin = (cfg.window_margin * nominal as f64).ceil() as usize + 4;
    let anchor = pos[start].min(s - 1);
    let lo = anchor.saturating_sub(margin);
    let hi = if start + n >= t { s } else { (anchor + nominal + margin).min(s) };
    (lo..hi.max(lo + 1), anchor - lo)
}

/// Re-estimates `pos[start..=start+n]` from the chunk's attention. The
/// previous chunk's last row, when given, absorbs frames before the
/// chunk's first phoneme.
fn update_positions(
    pos: &mut [usize],
    start: usize,
    window: &Range<usize>,
    previous: Option<&[f64]>,
    rows: &AttentionMatrix,
    lookahead: Option<&[f64]>,
) -> Result<()> {
    let lw = window.len();
    let mut data = Vec::new();
    if let Some(p) = previous {
        data.extend_from_slice(p);
    }
    data.extend_from_slice(&rows.data);
    if let Some(l) = lookahead {
        data.extend_from_slice(l);
    }
    let t = data.len() / lw;
    let dp = extract_duration_dp(&AttentionMatrix::new(t, lw, data)?, &DpOptions::default())?;
    let skip = usize::from(previous.is_some());
    let count = rows.t + usize::from(lookahead.is_some());
    for i in 0..count {
        let k = start + i;
        if k == 0 || k >= pos.len() {
            continue;
        }
        pos[k] = window.start + dp.boundaries[i + skip];
    }
    let s_max = window.end.max(1) - 1;
    for k in start.max(1)..pos.len() {
        pos[k] = pos[k].max(pos[k - 1]);
        if k >= start && k <= start + count {
            pos[k] = pos[k].min(s_max.max(pos[k - 1]));
        }
    }
    Ok(())
}

/// Per-chunk entry of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkLog {
    pub step: u64,
    pub epoch: usize,
    pub song: String,
    pub chunk: usize,
    pub ce: f64,
    pub guided: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub ratio: f64,
    pub chunks: usize,
    pub mean_ce: f64,
    pub mean_guided: f64,
    pub logs: Vec<ChunkLog>,
}

/// Walks one example chunk by chunk up to `limit` phonemes, calling
/// `after` with each outcome. Returns the tiled `T x S` attention.
#[allow(clippy::too_many_arguments)]
fn run_example(
    model: &AlignerModel,
    store: &mut ParamStore,
    ex: &AlignExample,
    pos: &mut [usize],
    limit: usize,
    guided_weight: f64,
    graph: &mut dyn FnMut() -> GraphConfig,
    after: &mut dyn FnMut(&mut ParamStore, usize, &ChunkOutcome) -> Result<()>,
) -> Result<AttentionMatrix> {
    let cfg = &model.config;
    let (t, s) = (ex.phonemes.len(), ex.frames());
    let mut full = AttentionMatrix::zeros(t, s);
    let mut carry = DecoderCarry::new(cfg, s);
    let bandwidth = cfg.bandwidth_for(t, s);
    let mut start = 0;
    let mut chunk = 0;
    while start < limit {
        let n = cfg.chunk_size.min(limit - start);
        let (window, mask_offset) = plan_window(cfg, pos, start, n, s);
        let input = ChunkInput {
            features: &ex.features,
            window: window.clone(),
            phonemes: &ex.phonemes[start..start + n],
            lookahead: ex.phonemes.get(start + n).copied(),
            mask_offset,
            rate: (s, t),
            bandwidth,
            guided_weight,
        };
        let out = aligner_chunk_step(model, store, &carry, &input, graph())?;
        after(store, chunk, &out)?;
        for i in 0..n {
            full.row_mut(start + i)[window.clone()].copy_from_slice(out.attention.row(i));
        }
        let previous = (start > 0).then(|| carry.prev_att[window.clone()].to_vec());
        update_positions(pos, start, &window, previous.as_deref(), &out.attention, out.lookahead.as_deref())?;
        carry = out.carry;
        start += n;
        chunk += 1;
    }
    Ok(full)
}

/// Model, parameters, optimizer and per-song position maps.
#[derive(Clone, Debug)]
pub struct AlignerTrainer {
    pub model: AlignerModel,
    pub store: ParamStore,
    pub adam: Adam,
    pub curriculum: CurriculumState,
    pub positions: BTreeMap<String, Vec<usize>>,
    pub precision: Precision,
}

pub fn aligner_optimizer(config: &AlignerConfig, store: &ParamStore) -> Adam {
    Adam::new(
        store,
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: config.adam_eps,
        },
        LrSchedule::ExponentialDecay {
            initial: config.lr_initial,
            final_lr: config.lr_final,
            steps: config.lr_decay_steps,
        },
    )
}

impl AlignerTrainer {
    pub fn new(config: AlignerConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = AlignerModel::new(config, &mut store)?;
        Ok(Self::from_parts(model, store, None))
    }

    pub fn from_parts(model: AlignerModel, store: ParamStore, adam: Option<Adam>) -> Self {
        let adam = adam.unwrap_or_else(|| aligner_optimizer(&model.config, &store));
        AlignerTrainer {
            curriculum: CurriculumState::new(&model.config),
            model,
            store,
            adam,
            positions: BTreeMap::new(),
            precision: Precision::Double,
        }
    }

    fn apply_update(&mut self) -> Result<()> {
        let cfg = &self.model.config;
        self.store.add_l2(cfg.l2);
        self.store.clip_grad_norm(cfg.grad_clip);
        self.adam.update(&mut self.store)?;
        self.store.zero_grad();
        Ok(())
    }

    /// One pass over `examples`; with `curriculum` each song is cut to the
    /// current length ratio, otherwise every phoneme is used.
    pub fn train_epoch(&mut self, examples: &[AlignExample], curriculum: bool) -> Result<EpochReport> {
        let cfg = self.model.config.clone();
        let epoch = self.curriculum.epoch;
        let ratio = if curriculum { self.curriculum.ratio() } else { 1.0 };
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9)));
        let mut report = EpochReport {
            epoch,
            ratio,
            ..Default::default()
        };
        let mut pending_songs = 0;
        for &k in &order {
            let ex = &examples[k];
            let t = ex.phonemes.len();
            if t == 0 || ex.frames() == 0 {
                log::warn!("skipping {}: no phonemes or frames", ex.id);
                continue;
            }
            let limit = if curriculum { self.curriculum.limit(t) } else { t };
            let mut pos = self
                .positions
                .get(&ex.id)
                .filter(|p| p.len() == t)
                .cloned()
                .unwrap_or_else(|| linear_positions(t, ex.frames()));
            let precision = self.precision;
            let adam_step = std::cell::Cell::new(self.adam.step);
            let mut graph = || GraphConfig {
                precision,
                train: true,
                seed: cfg.seed,
                step: adam_step.get(),
            };
            let mut logs = Vec::new();
            let per_chunk = cfg.accumulate_songs == 0;
            let adam = &mut self.adam;
            let mut after = |store: &mut ParamStore, chunk: usize, out: &ChunkOutcome| -> Result<()> {
                logs.push(ChunkLog {
                    step: adam.step,
                    epoch,
                    song: ex.id.clone(),
                    chunk,
                    ce: out.ce,
                    guided: out.guided,
                    ratio,
                });
                if per_chunk {
                    store.add_l2(cfg.l2);
                    store.clip_grad_norm(cfg.grad_clip);
                    adam.update(store)?;
                    store.zero_grad();
                    adam_step.set(adam.step);
                }
                Ok(())
            };
            run_example(&self.model, &mut self.store, ex, &mut pos, limit, cfg.guided_weight_at(epoch), &mut graph, &mut after)?;
            self.positions.insert(ex.id.clone(), pos);
            report.logs.extend(logs);
            if !per_chunk {
                pending_songs += 1;
                if pending_songs == cfg.accumulate_songs {
                    self.apply_update()?;
                    pending_songs = 0;
                }
            }
        }
        if pending_songs > 0 {
            self.apply_update()?;
        }
        report.chunks = report.logs.len();
        if report.chunks > 0 {
            report.mean_ce = report.logs.iter().map(|l| l.ce).sum::<f64>() / report.chunks as f64;
            report.mean_guided = report.logs.iter().map(|l| l.guided).sum::<f64>() / report.chunks as f64;
        }
        if curriculum {
            self.curriculum.advance();
        }
        Ok(report)
    }

    /// Mean chunk loss over `examples` without updating parameters.
    pub fn evaluate_loss(&self, examples: &[AlignExample]) -> Result<f64> {
        let mut scratch = self.store.clone();
        let precision = self.precision;
        let weight = self.model.config.guided_weight_at(self.curriculum.epoch);
        let (mut total, mut chunks) = (0.0, 0usize);
        for ex in examples.iter().filter(|e| !e.phonemes.is_empty() && e.frames() > 0) {
            let mut pos = linear_positions(ex.phonemes.len(), ex.frames());
            let mut graph = || GraphConfig {
                precision,
                ..GraphConfig::default()
            };
            let mut after = |_: &mut ParamStore, _: usize, out: &ChunkOutcome| -> Result<()> {
                total += out.loss;
                chunks += 1;
                Ok(())
            };
            run_example(&self.model, &mut scratch, ex, &mut pos, ex.phonemes.len(), weight, &mut graph, &mut after)?;
        }
        if chunks == 0 {
            return Err(contract("no examples to evaluate"));
        }
        Ok(total / chunks as f64)
    }

    /// Inference: full-song attention and DP durations.
    pub fn align(&self, ex: &AlignExample) -> Result<SongAlignment> {
        align_example(&self.model, &self.store, ex, self.precision)
    }
}

#[derive(Clone, Debug)]
pub struct SongAlignment {
    pub attention: AttentionMatrix,
    pub dp: DpResult,
    pub positions: Vec<usize>,
}

/// Aligns a whole example without updating parameters.
pub fn align_example(model: &AlignerModel, store: &ParamStore, ex: &AlignExample, precision: Precision) -> Result<SongAlignment> {
    let t = ex.phonemes.len();
    if t == 0 || ex.frames() == 0 {
        return Err(contract(format!("{}: nothing to align", ex.id)));
    }
    let mut pos = linear_positions(t, ex.frames());
    let mut scratch = store.clone();
    let mut graph = || GraphConfig {
        precision,
        ..GraphConfig::default()
    };
    let attention = run_example(model, &mut scratch, ex, &mut pos, t, model.config.guided_weight, &mut graph, &mut |_, _, _| Ok(()))?;
    let dp = extract_duration_dp(&attention, &DpOptions::default())?;
    Ok(SongAlignment { attention, dp, positions: pos })
}

/// Trains from scratch with the length curriculum.
pub fn train_aligner(config: AlignerConfig, examples: &[AlignExample], epochs: usize) -> Result<(AlignerTrainer, Vec<EpochReport>)> {
    let mut trainer = AlignerTrainer::new(config)?;
    let mut reports = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let r = trainer.train_epoch(examples, true)?;
        log::info!("epoch {} ratio {:.2} ce {:.4} guided {:.5}", r.epoch, r.ratio, r.mean_ce, r.mean_guided);
        reports.push(r);
    }
    Ok((trainer, reports))
}

/// Continues training on sentence-level pairs without the curriculum;
/// sentences up to the chunk size run as a single chunk.
pub fn fine_tune_sentence_level(trainer: &mut AlignerTrainer, sentences: &[AlignExample], epochs: usize) -> Result<Vec<EpochReport>> {
    (0..epochs).map(|_| trainer.train_epoch(sentences, false)).collect()
}
