use cantor_dsp::{griffin_lim, Note, SpecKind, Spectrogram, Waveform};
use cantor_tensor::{Adam, AdamConfig, Graph, GraphConfig, LrSchedule, ParamStore, Precision, Tensor};
use serde::{Deserialize, Serialize};

use super::config::SingerConfig;
use super::model::{SingerInput, SingerModel};
use crate::error::{contract, Result};

/// One training utterance with scaled magnitudes.
#[derive(Clone, Debug)]
pub struct SingingExample {
    pub id: String,
    pub phonemes: Vec<usize>,
    pub durations: Vec<usize>,
    /// Note id per frame.
    pub pitch: Vec<usize>,
    /// `[S, output_dim]`.
    pub target: Tensor,
    /// `[R, output_dim]`.
    pub reference: Tensor,
    pub singer: usize,
}

/// Linear magnitudes as a model-scaled `[frames, bins]` tensor.
pub fn scaled_frames(spec: &Spectrogram, scale: f64) -> Result<Tensor> {
    if spec.kind != SpecKind::Linear {
        return Err(contract("the singer works on linear spectrograms"));
    }
    Ok(Tensor::new(
        vec![spec.n_frames, spec.n_bins],
        spec.data.iter().map(|v| v * scale).collect(),
    )?)
}

impl SingingExample {
    /// Builds an example whose reference is the target itself.
    pub fn new(id: &str, phonemes: Vec<usize>, durations: Vec<usize>, notes: &[Note], target: &Spectrogram, scale: f64) -> Result<Self> {
        let target = scaled_frames(target, scale)?;
        let ex = SingingExample {
            id: id.into(),
            phonemes,
            durations,
            pitch: notes.iter().map(|n| n.id()).collect(),
            reference: target.clone(),
            target,
            singer: 0,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn frames(&self) -> usize {
        self.target.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.frames();
        let total: usize = self.durations.iter().sum();
        if total != s || self.pitch.len() != s {
            return Err(contract(format!(
                "{}: durations sum to {total}, pitch has {} frames, target {s}",
                self.id,
                self.pitch.len()
            )));
        }
        if self.phonemes.len() != self.durations.len() {
            return Err(contract(format!("{}: phoneme and duration counts differ", self.id)));
        }
        Ok(())
    }

    pub fn input(&self) -> SingerInput<'_> {
        SingerInput {
            phonemes: &self.phonemes,
            durations: &self.durations,
            pitch: &self.pitch,
            reference: &self.reference,
            singer: self.singer,
        }
    }
}

pub fn singer_optimizer(config: &SingerConfig, store: &ParamStore) -> Adam {
    Adam::new(
        store,
        AdamConfig {
            beta1: 0.9,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        },
        LrSchedule::InverseSqrtWarmup {
            d_model: config.hidden,
            warmup: config.warmup_steps,
            scale: config.lr_scale,
        },
    )
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SingerStepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct SingerTrainer {
    pub model: SingerModel,
    pub store: ParamStore,
    pub adam: Adam,
    pub precision: Precision,
}

impl SingerTrainer {
    pub fn new(config: SingerConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = SingerModel::new(config, &mut store)?;
        Ok(Self::from_parts(model, store, None))
    }

    pub fn from_parts(model: SingerModel, store: ParamStore, adam: Option<Adam>) -> Self {
        let adam = adam.unwrap_or_else(|| singer_optimizer(&model.config, &store));
        SingerTrainer {
            model,
            store,
            adam,
            precision: Precision::Double,
        }
    }

    /// One update on the mean MSE over `batch`. Invalid examples are
    /// skipped with an error log.
    pub fn train_step(&mut self, batch: &[&SingingExample]) -> Result<SingerStepLog> {
        let valid: Vec<&SingingExample> = batch
            .iter()
            .copied()
            .filter(|ex| match ex.validate() {
                Ok(()) => true,
                Err(e) => {
                    log::error!("skipping {}: {e}", ex.id);
                    false
                }
            })
            .collect();
        if valid.is_empty() {
            return Err(contract("no valid examples in batch"));
        }
        let cfg = GraphConfig {
            precision: self.precision,
            train: true,
            seed: self.model.config.seed,
            step: self.adam.step,
        };
        let mut loss = 0.0;
        for ex in &valid {
            let mut g = Graph::new(cfg.clone());
            let y = self.model.forward(&mut g, &self.store, &ex.input())?;
            let l = g.mse(y, &ex.target)?;
            let l = g.scale(l, 1.0 / valid.len() as f64)?;
            loss += g.value(l).item()?;
            g.backward(l)?.accumulate_into(&mut self.store);
        }
        self.store.clip_grad_norm(self.model.config.grad_clip);
        self.adam.update(&mut self.store)?;
        self.store.zero_grad();
        Ok(SingerStepLog {
            step: self.adam.step,
            loss,
            lr: self.adam.current_lr(),
        })
    }

    /// Mean MSE over `examples` in evaluation mode.
    pub fn evaluate(&self, examples: &[SingingExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(contract("no examples to evaluate"));
        }
        let mut total = 0.0;
        for ex in examples {
            ex.validate()?;
            let mut g = Graph::new(GraphConfig {
                precision: self.precision,
                ..GraphConfig::default()
            });
            let y = self.model.forward(&mut g, &self.store, &ex.input())?;
            let l = g.mse(y, &ex.target)?;
            total += g.value(l).item()?;
        }
        Ok(total / examples.len() as f64)
    }
}

/// Cycles through `examples` in fixed order, `batch` at a time.
pub fn train_singer(config: SingerConfig, examples: &[SingingExample], steps: usize, batch: usize) -> Result<(SingerTrainer, Vec<SingerStepLog>)> {
    if examples.is_empty() || batch == 0 {
        return Err(contract("training needs examples and a positive batch size"));
    }
    let mut trainer = SingerTrainer::new(config)?;
    let mut logs = Vec::with_capacity(steps);
    let mut next = 0;
    for _ in 0..steps {
        let picked: Vec<&SingingExample> = (0..batch.min(examples.len()))
            .map(|i| &examples[(next + i) % examples.len()])
            .collect();
        next = (next + picked.len()) % examples.len();
        let log = trainer.train_step(&picked)?;
        log::debug!("singer step {} loss {:.6}", log.step, log.loss);
        logs.push(log);
    }
    Ok((trainer, logs))
}

/// Output of inference: waveform, its magnitudes and the conditioning pitch.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub waveform: Waveform,
    pub spectrogram: Spectrogram,
    pub pitch: Vec<Note>,
    pub durations: Vec<usize>,
}

/// Predicts linear magnitudes for the given conditioning and inverts them
/// with Griffin-Lim.
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    model: &SingerModel,
    store: &ParamStore,
    phonemes: &[usize],
    durations: &[usize],
    pitch: &[Note],
    reference: &Spectrogram,
    iterations: usize,
    seed: u64,
) -> Result<Synthesis> {
    if pitch.iter().all(|n| n.is_rest()) {
        return Err(contract("conditioning pitch has no voiced frame"));
    }
    let c = &model.config;
    let reference_t = scaled_frames(reference, c.magnitude_scale)?;
    let ids: Vec<usize> = pitch.iter().map(|n| n.id()).collect();
    let pred = model.predict(
        store,
        &SingerInput {
            phonemes,
            durations,
            pitch: &ids,
            reference: &reference_t,
            singer: 0,
        },
    )?;
    let data = pred.data().iter().map(|v| v.max(0.0) / c.magnitude_scale).collect();
    let spectrogram = Spectrogram {
        data,
        n_frames: pred.rows(),
        n_bins: pred.cols(),
        kind: SpecKind::Linear,
        ..*reference
    };
    let waveform = griffin_lim(&spectrogram, iterations, seed)?.waveform;
    Ok(Synthesis {
        waveform,
        spectrogram,
        pitch: pitch.to_vec(),
        durations: durations.to_vec(),
    })
}
