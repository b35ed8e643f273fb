use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{contract, CoreError, Result};

/// Per-song ground truth carried by synthetic corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub phonemes: Vec<usize>,
    pub durations: Vec<usize>,
    /// Phoneme index of each word's first phoneme.
    pub word_starts: Vec<usize>,
    /// Note ID per frame (0 = rest).
    pub notes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Audio path, relative to the manifest's directory unless absolute.
    pub audio: String,
    pub lyrics: String,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default)]
    pub singer: String,
    /// `singing` or `speech`.
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

fn default_language() -> String {
    "en".into()
}

fn default_kind() -> String {
    "singing".into()
}

impl ManifestEntry {
    pub fn audio_path(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.audio);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line)
            .map_err(|e| CoreError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut f, item)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a manifest and checks IDs are unique, lyrics are non-empty and
/// every audio file exists.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = read_jsonl(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.id.as_str()) {
            return Err(contract(format!("duplicate manifest id {}", e.id)));
        }
        if e.lyrics.trim().is_empty() {
            return Err(contract(format!("entry {} has empty lyrics", e.id)));
        }
        let marks: Vec<&str> = e.lyrics.split('|').collect();
        if marks.len() > 1 && marks.iter().any(|s| s.trim().is_empty()) {
            return Err(contract(format!("entry {}: separation marks must sit between sentences", e.id)));
        }
        if e.kind != "singing" && e.kind != "speech" {
            return Err(contract(format!("entry {} has unknown kind {}", e.id, e.kind)));
        }
        let audio = e.audio_path(base);
        if !audio.exists() {
            return Err(contract(format!("entry {}: audio {} not found", e.id, audio.display())));
        }
    }
    Ok(entries)
}

/// Keeps entries whose audio length lies in `[min_secs, max_secs]`.
pub fn filter_by_length(entries: &[ManifestEntry], secs: &[f64], min_secs: f64, max_secs: f64) -> Vec<ManifestEntry> {
    entries
        .iter()
        .zip(secs)
        .filter(|(_, &s)| s >= min_secs && s <= max_secs)
        .map(|(e, _)| e.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSpan {
    pub phoneme: usize,
    pub start: usize,
    pub duration: usize,
}

/// One aligned utterance (a sentence, or a whole song before segmentation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub id: String,
    pub song_id: String,
    /// First frame inside the song's (uncompressed) frame axis.
    pub frame_offset: usize,
    pub n_frames: usize,
    pub reward: f64,
    pub normalized_reward: f64,
    pub spans: Vec<PhonemeSpan>,
}

impl AlignmentRecord {
    pub fn from_durations(
        id: impl Into<String>,
        song_id: impl Into<String>,
        frame_offset: usize,
        phonemes: &[usize],
        durations: &[usize],
        reward: f64,
        normalized_reward: f64,
    ) -> Result<Self> {
        if phonemes.len() != durations.len() {
            return Err(contract(format!(
                "{} phonemes but {} durations",
                phonemes.len(),
                durations.len()
            )));
        }
        let mut start = 0;
        let spans = phonemes
            .iter()
            .zip(durations)
            .map(|(&phoneme, &duration)| {
                let s = PhonemeSpan { phoneme, start, duration };
                start += duration;
                s
            })
            .collect();
        Ok(AlignmentRecord {
            id: id.into(),
            song_id: song_id.into(),
            frame_offset,
            n_frames: start,
            reward,
            normalized_reward,
            spans,
        })
    }

    pub fn phonemes(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.phoneme).collect()
    }

    pub fn durations(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.duration).collect()
    }

    /// Spans must tile `[0, n_frames)` in order.
    pub fn validate(&self) -> Result<()> {
        let mut pos = 0;
        for s in &self.spans {
            if s.start != pos {
                return Err(contract(format!("record {}: span gap at frame {pos}", self.id)));
            }
            pos += s.duration;
        }
        if pos != self.n_frames {
            return Err(contract(format!(
                "record {}: spans cover {pos} of {} frames",
                self.id, self.n_frames
            )));
        }
        Ok(())
    }
}

pub fn load_alignments(path: &Path) -> Result<Vec<AlignmentRecord>> {
    let recs: Vec<AlignmentRecord> = read_jsonl(path)?;
    for r in &recs {
        r.validate()?;
    }
    Ok(recs)
}
