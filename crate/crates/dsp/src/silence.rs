use crate::error::{contract, Result};
use crate::pitch::PitchSequence;
use crate::stft::Spectrogram;

pub const SILENCE_RUN: usize = 10;
pub const DEFAULT_VOLUME_FLOOR_DB: f64 = -40.0;

/// Mapping from compressed frame positions back to original frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameMap {
    /// Original frame for every compressed frame.
    pub origin: Vec<usize>,
    /// True for frames standing in for a compressed non-vocal run.
    pub silence: Vec<bool>,
    pub original_len: usize,
}

impl FrameMap {
    pub fn identity(n: usize) -> Self {
        FrameMap {
            origin: (0..n).collect(),
            silence: vec![false; n],
            original_len: n,
        }
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    /// Original position of compressed boundary `c`; `c == len` maps to the
    /// original length.
    pub fn to_original(&self, c: usize) -> usize {
        if c >= self.origin.len() {
            self.original_len
        } else {
            self.origin[c]
        }
    }

    /// Builds the map that replaces every run of at least `SILENCE_RUN`
    /// non-vocal frames by exactly `SILENCE_RUN` frames.
    pub fn from_nonvocal(nonvocal: &[bool]) -> Self {
        let n = nonvocal.len();
        let mut origin = Vec::with_capacity(n);
        let mut silence = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            if !nonvocal[i] {
                origin.push(i);
                silence.push(false);
                i += 1;
                continue;
            }
            let start = i;
            while i < n && nonvocal[i] {
                i += 1;
            }
            let run = i - start;
            if run >= SILENCE_RUN {
                origin.extend((0..SILENCE_RUN).map(|k| start + k * run / SILENCE_RUN));
                silence.extend([true; SILENCE_RUN]);
            } else {
                origin.extend(start..i);
                silence.extend((start..i).map(|_| false));
            }
        }
        FrameMap {
            origin,
            silence,
            original_len: n,
        }
    }
}

/// Per-frame non-vocal flags: unvoiced or quieter than `vol_floor_db`.
pub fn nonvocal_frames(pitch: &PitchSequence, vol_floor_db: f64) -> Vec<bool> {
    pitch
        .f0
        .iter()
        .zip(&pitch.rms_db)
        .map(|(&f, &db)| f <= 0.0 || db < vol_floor_db)
        .collect()
}

/// Compresses long non-vocal runs to 10 all-zero frames.
pub fn compress_silence(
    spec: &Spectrogram,
    pitch: &PitchSequence,
    vol_floor_db: f64,
) -> Result<(Spectrogram, FrameMap)> {
    if pitch.len() != spec.n_frames {
        return Err(contract(format!(
            "pitch has {} frames, spectrogram {}",
            pitch.len(),
            spec.n_frames
        )));
    }
    let nonvocal = nonvocal_frames(pitch, vol_floor_db);
    let map = FrameMap::from_nonvocal(&nonvocal);
    Ok((apply_frame_map(spec, &map), map))
}

/// Gathers frames through `map`, zeroing frames inside compressed runs.
pub fn apply_frame_map(spec: &Spectrogram, map: &FrameMap) -> Spectrogram {
    let mut data = Vec::with_capacity(map.len() * spec.n_bins);
    for (&o, &silent) in map.origin.iter().zip(&map.silence) {
        if silent {
            data.extend(std::iter::repeat(0.0).take(spec.n_bins));
        } else {
            data.extend_from_slice(spec.frame(o));
        }
    }
    spec.with_data(data, map.len())
}
