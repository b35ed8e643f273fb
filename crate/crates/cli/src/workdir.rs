//! Artifact layout under the workdir and the binary files stored there.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cantor_core::aligner::{aligner_optimizer, AlignExample, AlignerConfig, AlignerModel, AlignerTrainer};
use cantor_core::corpus::{read_jsonl, write_jsonl};
use cantor_core::pipeline::{Preprocessed, NOTE_MEDIAN_WIDTH};
use cantor_core::singer::{singer_optimizer, SingerConfig, SingerModel, SingerTrainer};
use cantor_dsp::{FrameMap, Note, SpecKind, Spectrogram};
use cantor_tensor::checkpoint::Checkpoint;
use cantor_tensor::{ParamStore, Precision, Tensor};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub const FEATURES_FORMAT: &str = "cantor-features/1";
pub const ALIGNER_FORMAT: &str = "cantor-aligner/1";
pub const SINGER_FORMAT: &str = "cantor-singer/1";

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    fn sub(&self, dir: &str, name: &str) -> PathBuf {
        self.root.join(dir).join(name)
    }

    pub fn features(&self, id: &str) -> PathBuf {
        self.sub("features", &format!("{}.feat", file_stem(id)))
    }
    pub fn feature_index(&self) -> PathBuf {
        self.sub("features", "index.jsonl")
    }
    pub fn aligner(&self) -> PathBuf {
        self.sub("checkpoints", "aligner.ckpt")
    }
    pub fn aligner_fine_tuned(&self) -> PathBuf {
        self.sub("checkpoints", "aligner_ft.ckpt")
    }
    pub fn singer(&self) -> PathBuf {
        self.sub("checkpoints", "singer.ckpt")
    }
    pub fn song_alignments(&self) -> PathBuf {
        self.sub("alignments", "songs.jsonl")
    }
    pub fn segments(&self) -> PathBuf {
        self.sub("alignments", "segments.jsonl")
    }
    pub fn sentence_alignments(&self) -> PathBuf {
        self.sub("alignments", "sentences.jsonl")
    }
    pub fn kept_alignments(&self) -> PathBuf {
        self.sub("alignments", "kept.jsonl")
    }
    pub fn synth_wav(&self, id: &str) -> PathBuf {
        self.sub("synth", &format!("{}.wav", file_stem(id)))
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.sub("reports", name)
    }

    /// The fine-tuned aligner when present, else the song-level one.
    pub fn best_aligner(&self) -> Result<PathBuf> {
        let ft = self.aligner_fine_tuned();
        if ft.exists() {
            return Ok(ft);
        }
        let base = self.aligner();
        require(&base, "train-align")?;
        Ok(base)
    }
}

/// IDs may contain `#`; keep file names plain.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Fails with a message naming the missing artifact and the stage that
/// produces it.
pub fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {} (run `cantor {stage}` first)", path.display());
    }
    Ok(())
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

pub fn write_records<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    ensure_parent(path)?;
    write_jsonl(path, items).with_context(|| format!("writing {}", path.display()))
}

pub fn read_records<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<Vec<T>> {
    require(path, stage)?;
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Per-utterance entry of `features/index.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceInfo {
    pub id: String,
    pub audio: String,
    pub phonemes: Vec<usize>,
    pub word_starts: Vec<usize>,
    pub unknown_tokens: usize,
    pub frames: usize,
    pub compressed_frames: usize,
    pub measured_lufs: Option<f64>,
    pub gain: f64,
}

/// Analysis results needed by the later stages.
#[derive(Clone, Debug)]
pub struct FeaturePack {
    /// Standardised compressed mel frames.
    pub features: Tensor,
    pub linear: Spectrogram,
    pub notes: Vec<Note>,
    pub frame_map: FrameMap,
}

fn column(values: impl Iterator<Item = f64>) -> Result<Tensor> {
    let v: Vec<f64> = values.collect();
    Ok(Tensor::new(vec![v.len(), 1], v)?)
}

impl FeaturePack {
    pub fn from_preprocessed(p: &Preprocessed) -> Result<Self> {
        Ok(FeaturePack {
            features: cantor_core::aligner::song_features(&p.compressed_mel)?,
            linear: p.linear.clone(),
            notes: p.notes(NOTE_MEDIAN_WIDTH)?,
            frame_map: p.frame_map.clone(),
        })
    }

    pub fn example(&self, id: &str, phonemes: &[usize]) -> AlignExample {
        AlignExample {
            id: id.to_string(),
            features: self.features.clone(),
            phonemes: phonemes.to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let l = &self.linear;
        let ckpt = Checkpoint {
            precision: Precision::Double,
            created_unix: 0,
            metadata: vec![
                ("format".into(), FEATURES_FORMAT.into()),
                ("frame_size".into(), l.frame_size.to_string()),
                ("hop_size".into(), l.hop_size.to_string()),
                ("sample_rate".into(), l.sample_rate.to_string()),
                ("original_len".into(), self.frame_map.original_len.to_string()),
            ],
            params: vec![
                ("features".into(), self.features.clone()),
                ("linear".into(), Tensor::new(vec![l.n_frames, l.n_bins], l.data.clone())?),
                ("notes".into(), column(self.notes.iter().map(|n| n.0 as f64))?),
                ("origin".into(), column(self.frame_map.origin.iter().map(|&o| o as f64))?),
                ("silence".into(), column(self.frame_map.silence.iter().map(|&s| s as u8 as f64))?),
            ],
            adam: None,
        };
        ensure_parent(path)?;
        Ok(ckpt.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        require(path, "preprocess")?;
        let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
        check_format(&ckpt, FEATURES_FORMAT, path)?;
        let meta = |k: &str| -> Result<usize> {
            ckpt.meta(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| anyhow!("{}: missing {k}", path.display()))
        };
        let get = |k: &str| -> Result<&Tensor> {
            ckpt.params
                .iter()
                .find(|(n, _)| n == k)
                .map(|(_, t)| t)
                .ok_or_else(|| anyhow!("{}: missing tensor {k}", path.display()))
        };
        let lin = get("linear")?;
        Ok(FeaturePack {
            features: get("features")?.clone(),
            linear: Spectrogram {
                data: lin.data().to_vec(),
                n_frames: lin.rows(),
                n_bins: lin.cols(),
                kind: SpecKind::Linear,
                frame_size: meta("frame_size")?,
                hop_size: meta("hop_size")?,
                sample_rate: meta("sample_rate")? as u32,
            },
            notes: get("notes")?.data().iter().map(|&v| Note(v as u8)).collect(),
            frame_map: FrameMap {
                origin: get("origin")?.data().iter().map(|&v| v as usize).collect(),
                silence: get("silence")?.data().iter().map(|&v| v != 0.0).collect(),
                original_len: meta("original_len")?,
            },
        })
    }
}

/// Rows `[start, start + n)` of a spectrogram.
pub fn slice_frames(spec: &Spectrogram, start: usize, n: usize) -> Result<Spectrogram> {
    if start + n > spec.n_frames {
        bail!("frames {start}..{} outside a {}-frame spectrogram", start + n, spec.n_frames);
    }
    Ok(Spectrogram {
        data: spec.data[start * spec.n_bins..(start + n) * spec.n_bins].to_vec(),
        n_frames: n,
        ..spec.clone()
    })
}

fn check_format(ckpt: &Checkpoint, want: &str, path: &Path) -> Result<()> {
    match ckpt.meta("format") {
        Some(f) if f == want => Ok(()),
        Some(f) => bail!("{}: format {f}, expected {want}", path.display()),
        None => bail!("{}: no format tag, expected {want}", path.display()),
    }
}

fn config_from<T: DeserializeOwned>(ckpt: &Checkpoint, path: &Path) -> Result<T> {
    let text = ckpt.meta("config").ok_or_else(|| anyhow!("{}: no stored config", path.display()))?;
    serde_json::from_str(text).with_context(|| format!("{}: stored config", path.display()))
}

pub fn save_aligner(trainer: &AlignerTrainer, path: &Path, stage: &str) -> Result<()> {
    let metadata = vec![
        ("format".into(), ALIGNER_FORMAT.into()),
        ("stage".into(), stage.into()),
        ("config".into(), serde_json::to_string(&trainer.model.config)?),
        ("epoch".into(), trainer.curriculum.epoch.to_string()),
    ];
    let ckpt = Checkpoint::from_store(&trainer.store, trainer.precision, metadata, Some(&trainer.adam));
    ensure_parent(path)?;
    Ok(ckpt.save(path)?)
}

pub fn load_aligner(path: &Path, precision: Precision) -> Result<AlignerTrainer> {
    require(path, "train-align")?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    check_format(&ckpt, ALIGNER_FORMAT, path)?;
    let config: AlignerConfig = config_from(&ckpt, path)?;
    let mut store = ParamStore::new();
    let model = AlignerModel::new(config, &mut store)?;
    ckpt.restore_store(&mut store)?;
    let mut adam = aligner_optimizer(&model.config, &store);
    ckpt.restore_adam(&mut adam)?;
    let mut trainer = AlignerTrainer::from_parts(model, store, Some(adam));
    trainer.curriculum.epoch = ckpt.meta("epoch").and_then(|e| e.parse().ok()).unwrap_or(0);
    trainer.precision = precision;
    Ok(trainer)
}

pub fn save_singer(trainer: &SingerTrainer, path: &Path) -> Result<()> {
    let metadata = vec![
        ("format".into(), SINGER_FORMAT.into()),
        ("config".into(), serde_json::to_string(&trainer.model.config)?),
    ];
    let ckpt = Checkpoint::from_store(&trainer.store, trainer.precision, metadata, Some(&trainer.adam));
    ensure_parent(path)?;
    Ok(ckpt.save(path)?)
}

pub fn load_singer(path: &Path, precision: Precision) -> Result<SingerTrainer> {
    require(path, "train-sing")?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    check_format(&ckpt, SINGER_FORMAT, path)?;
    let config: SingerConfig = config_from(&ckpt, path)?;
    let mut store = ParamStore::new();
    let model = SingerModel::new(config, &mut store)?;
    ckpt.restore_store(&mut store)?;
    let mut adam = singer_optimizer(&model.config, &store);
    ckpt.restore_adam(&mut adam)?;
    let mut trainer = SingerTrainer::from_parts(model, store, Some(adam));
    trainer.precision = precision;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_are_plain() {
        assert_eq!(file_stem("song-01#2"), "song-01_2");
    }

    #[test]
    fn feature_pack_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let pack = FeaturePack {
            features: Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]).unwrap(),
            linear: Spectrogram {
                data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                n_frames: 3,
                n_bins: 2,
                kind: SpecKind::Linear,
                frame_size: 1024,
                hop_size: 256,
                sample_rate: 22050,
            },
            notes: vec![Note(0), Note(57), Note(58)],
            frame_map: FrameMap {
                origin: vec![0, 2],
                silence: vec![false, true],
                original_len: 3,
            },
        };
        let p = dir.path().join("a.feat");
        pack.save(&p).unwrap();
        let back = FeaturePack::load(&p).unwrap();
        assert_eq!(back.features, pack.features);
        assert_eq!(back.linear, pack.linear);
        assert_eq!(back.notes, pack.notes);
        assert_eq!(back.frame_map, pack.frame_map);
        assert!(load_aligner(&p, Precision::Double).is_err());
    }

    #[test]
    fn slicing_keeps_rows() {
        let s = Spectrogram {
            data: (0..8).map(|v| v as f64).collect(),
            n_frames: 4,
            n_bins: 2,
            kind: SpecKind::Linear,
            frame_size: 1024,
            hop_size: 256,
            sample_rate: 22050,
        };
        assert_eq!(slice_frames(&s, 1, 2).unwrap().data, vec![2.0, 3.0, 4.0, 5.0]);
        assert!(slice_frames(&s, 3, 2).is_err());
    }
}
