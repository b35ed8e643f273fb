//! Audio preprocessing shared by training and inference.

use cantor_dsp::loudness::DEFAULT_TARGET_LUFS;
use cantor_dsp::mel::DEFAULT_MEL_BINS;
use cantor_dsp::silence::{apply_frame_map, nonvocal_frames, DEFAULT_VOLUME_FLOOR_DB};
use cantor_dsp::{
    extract_f0, linear_spectrogram, median_filter, mel, normalize_loudness, resample, FrameMap, LoudnessReport, Note,
    PitchConfig, PitchSequence, Spectrogram, Waveform, DEFAULT_SAMPLE_RATE,
};
use serde::{Deserialize, Serialize};

use cantor_tensor::{ParamStore, Precision};

use crate::aligner::{align_example, song_features, AlignExample, AlignerModel};
use crate::corpus::SEP;
use crate::duration::durations_from_boundaries;
use crate::error::Result;
use crate::singer::SingingExample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_lufs: f64,
    pub mel_bins: usize,
    pub volume_floor_db: f64,
    pub compress_silence: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_lufs: DEFAULT_TARGET_LUFS,
            mel_bins: DEFAULT_MEL_BINS,
            volume_floor_db: DEFAULT_VOLUME_FLOOR_DB,
            compress_silence: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub waveform: Waveform,
    pub loudness: LoudnessReport,
    pub linear: Spectrogram,
    pub mel: Spectrogram,
    pub pitch: PitchSequence,
    pub frame_map: FrameMap,
    /// Mel frames after silence compression.
    pub compressed_mel: Spectrogram,
}

/// Resample, normalise loudness, analyse and compress silence.
pub fn preprocess(w: &Waveform, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let w = if w.sample_rate == DEFAULT_SAMPLE_RATE {
        w.clone()
    } else {
        resample(w, DEFAULT_SAMPLE_RATE)?
    };
    let (waveform, loudness) = normalize_loudness(&w, cfg.target_lufs);
    let linear = linear_spectrogram(&waveform)?;
    let mel = mel(&linear, cfg.mel_bins)?;
    let pitch = extract_f0(&waveform, &PitchConfig::default())?;
    let frame_map = if cfg.compress_silence {
        FrameMap::from_nonvocal(&nonvocal_frames(&pitch, cfg.volume_floor_db))
    } else {
        FrameMap::identity(mel.n_frames)
    };
    let compressed_mel = apply_frame_map(&mel, &frame_map);
    Ok(Preprocessed {
        waveform,
        loudness,
        linear,
        mel,
        pitch,
        frame_map,
        compressed_mel,
    })
}

impl Preprocessed {
    pub fn example(&self, id: &str, phonemes: &[usize]) -> Result<AlignExample> {
        Ok(AlignExample {
            id: id.to_string(),
            features: song_features(&self.compressed_mel)?,
            phonemes: phonemes.to_vec(),
        })
    }

    /// Median-filtered note per original frame.
    pub fn notes(&self, median_width: usize) -> Result<Vec<Note>> {
        Ok(median_filter(&self.pitch.notes, median_width)?)
    }

    /// Singing-model example on the original frame axis, self-referenced.
    pub fn singing_example(&self, id: &str, phonemes: &[usize], durations: &[usize], scale: f64) -> Result<SingingExample> {
        let notes = self.notes(NOTE_MEDIAN_WIDTH)?;
        SingingExample::new(id, phonemes.to_vec(), durations.to_vec(), &notes, &self.linear, scale)
    }
}

/// Median window applied to extracted note sequences.
pub const NOTE_MEDIAN_WIDTH: usize = 5;

/// Maps compressed-axis boundaries to the original frame axis.
pub fn boundaries_to_original(boundaries: &[usize], map: &FrameMap) -> Vec<usize> {
    boundaries.iter().map(|&b| map.to_original(b)).collect()
}

/// Maps boundaries back like [`boundaries_to_original`], but a boundary
/// falling inside a compressed silence run is moved to the run edge owned by
/// the adjoining separator: the end of the run when a separator ends there,
/// its start when one begins there.
pub fn expand_boundaries(boundaries: &[usize], phonemes: &[usize], separator: usize, map: &FrameMap) -> Vec<usize> {
    let mut out = Vec::with_capacity(boundaries.len());
    for (i, &b) in boundaries.iter().enumerate() {
        let mut c = b;
        if b < map.len() && map.silence[b] && i > 0 && i < phonemes.len() {
            let mut r0 = b;
            while r0 > 0 && map.silence[r0 - 1] {
                r0 -= 1;
            }
            let mut r1 = b;
            while r1 < map.len() && map.silence[r1] {
                r1 += 1;
            }
            if phonemes[i - 1] == separator {
                c = r1;
            } else if phonemes[i] == separator {
                c = r0;
            }
        }
        let o = map.to_original(c);
        out.push(out.last().map_or(o, |&p: &usize| o.max(p)));
    }
    out
}

/// Conditioning for synthesis from a demo recording: phoneme durations from
/// the aligner on the original frame axis and the median-filtered notes.
pub fn demo_conditioning(
    model: &AlignerModel,
    store: &ParamStore,
    pre: &Preprocessed,
    phonemes: &[usize],
    precision: Precision,
) -> Result<(Vec<usize>, Vec<Note>)> {
    let ex = pre.example("demo", phonemes)?;
    let al = align_example(model, store, &ex, precision)?;
    let b = expand_boundaries(&al.dp.boundaries, phonemes, SEP, &pre.frame_map);
    let durations = durations_from_boundaries(&b)?;
    Ok((durations, pre.notes(NOTE_MEDIAN_WIDTH)?))
}
