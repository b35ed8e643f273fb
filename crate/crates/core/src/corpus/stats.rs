use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::lexicon::SEP;
use super::manifest::{AlignmentRecord, ManifestEntry};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub unit: String,
    pub bin_width: f64,
    /// Bin index (lower edge = index * bin_width) to count.
    pub bins: BTreeMap<i64, usize>,
}

impl Histogram {
    pub fn new(unit: &str, bin_width: f64) -> Self {
        Histogram {
            unit: unit.into(),
            bin_width,
            bins: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, value: f64) {
        let b = (value / self.bin_width).floor() as i64;
        *self.bins.entry(b).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.bins.values().sum()
    }

    /// Lower edge of the most populated bin.
    pub fn mode(&self) -> Option<f64> {
        self.bins
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&b, _)| b as f64 * self.bin_width)
    }

    pub fn count_at(&self, value: f64) -> usize {
        self.bins.get(&((value / self.bin_width).floor() as i64)).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub singers: usize,
    pub songs: usize,
    pub sentences: usize,
    pub hours: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub counts: CorpusCounts,
    pub sentence_duration_s: Option<Histogram>,
    pub phoneme_duration_ms: Option<Histogram>,
    /// Note name to frame count.
    pub note_occupancy: BTreeMap<String, usize>,
    /// False when no alignments were supplied: only counts and notes.
    pub phoneme_level: bool,
}

/// Aggregates corpus statistics. `audio_secs` holds the duration of each
/// manifest entry; `notes` per-frame note IDs where known.
pub fn dataset_stats(
    manifest: &[ManifestEntry],
    audio_secs: &[f64],
    alignments: Option<&[AlignmentRecord]>,
    notes: &[Vec<u8>],
    frame_secs: f64,
) -> DatasetStats {
    let singers: BTreeSet<&str> = manifest.iter().map(|e| e.singer.as_str()).collect();
    let mut stats = DatasetStats {
        counts: CorpusCounts {
            singers: singers.len(),
            songs: manifest.len(),
            sentences: 0,
            hours: audio_secs.iter().sum::<f64>() / 3600.0,
        },
        ..Default::default()
    };
    let mut note_hist = BTreeMap::new();
    for seq in notes {
        for &n in seq.iter().filter(|&&n| n > 0) {
            *note_hist.entry(n).or_insert(0usize) += 1;
        }
    }
    stats.note_occupancy = note_hist
        .into_iter()
        .map(|(n, c)| (format!("{:03}:{}", n, cantor_dsp::Note(n)), c))
        .collect();

    match alignments {
        Some(recs) => {
            stats.phoneme_level = true;
            stats.counts.sentences = recs.len();
            let mut sent = Histogram::new("s", 0.5);
            let mut ph = Histogram::new("ms", 25.0);
            for r in recs {
                sent.add(r.n_frames as f64 * frame_secs);
                for s in r.spans.iter().filter(|s| s.phoneme != SEP) {
                    ph.add(s.duration as f64 * frame_secs * 1000.0);
                }
            }
            stats.sentence_duration_s = Some(sent);
            stats.phoneme_duration_ms = Some(ph);
        }
        None => {
            log::warn!("no alignments supplied: reporting sentence-level counts only");
            stats.counts.sentences = manifest
                .iter()
                .map(|e| {
                    e.lyrics
                        .split(|c| c == '|' || c == '\n')
                        .filter(|s| !s.trim().is_empty())
                        .count()
                })
                .sum();
        }
    }
    stats
}
