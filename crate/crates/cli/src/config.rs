//! Flat `key = value` configuration with `include PATH` lines.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use cantor_core::aligner::AlignerConfig;
use cantor_core::duration::DEFAULT_FILTER_THRESHOLD;
use cantor_core::pipeline::PreprocessConfig;
use cantor_core::singer::SingerConfig;
use cantor_tensor::Precision;

/// Usage or configuration problem; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

const MAX_INCLUDE_DEPTH: usize = 16;

/// Reads `path` into `out`, later keys overriding earlier ones. Relative
/// include paths resolve against the including file's directory.
pub fn read_config_file(path: &Path, out: &mut BTreeMap<String, String>) -> Result<(), ConfigError> {
    read_inner(path, out, 0)
}

fn read_inner(path: &Path, out: &mut BTreeMap<String, String>, depth: usize) -> Result<(), ConfigError> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(err(format!("{}: includes nested too deeply", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("include ") {
            read_inner(&dir.join(rest.trim()), out, depth + 1)?;
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(())
}

/// Every key, its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed for model initialisation, dropout and Griffin-Lim"),
    ("threads", "1", "worker threads for per-utterance stages"),
    ("precision", "double", "single or double graph arithmetic"),
    ("corpus.dir", "corpus", "corpus directory, relative to the workdir"),
    ("corpus.songs", "20", "songs written by gen-corpus"),
    ("corpus.sentences", "3", "sentences per synthetic song"),
    ("corpus.seed", "100", "seed of the first synthetic song"),
    ("corpus.noise_level", "0", "additive noise relative to signal RMS"),
    ("corpus.melisma_prob", "0", "probability of a two-note vowel"),
    ("preprocess.target_lufs", "-16", "loudness target"),
    ("preprocess.mel_bins", "80", "mel channels fed to the aligner"),
    ("preprocess.volume_floor_db", "-40", "non-vocal volume floor"),
    ("preprocess.compress_silence", "true", "compress non-vocal runs before alignment"),
    ("align.preset", "micro", "aligner size: micro, paper or tiny"),
    ("align.epochs", "100", "song-level training epochs"),
    ("align.fine_tune_epochs", "2", "sentence-level fine-tuning epochs"),
    ("align.chunk_size", "", "phonemes per training chunk (preset value when empty)"),
    ("align.guided_weight_initial", "", "guided loss weight at epoch 0 (preset value when empty)"),
    ("align.decoder_dropout", "", "dropout on the decoder phoneme input (preset value when empty)"),
    ("filter.threshold", "0.6", "minimum normalized reward kept"),
    ("sing.preset", "micro", "singing model size: micro or paper"),
    ("sing.steps", "2000", "optimizer steps"),
    ("sing.batch", "1", "utterances per step"),
    ("sing.lr_scale", "", "learning-rate multiplier (preset value when empty)"),
    ("sing.max_utterances", "0", "training utterances used, 0 for all"),
    ("synth.iterations", "60", "Griffin-Lim iterations"),
    ("synth.count", "0", "utterances synthesized, 0 for all"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusKeys {
    pub dir: PathBuf,
    pub songs: usize,
    pub sentences: usize,
    pub seed: u64,
    pub noise_level: f64,
    pub melisma_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignKeys {
    pub preset: String,
    pub epochs: usize,
    pub fine_tune_epochs: usize,
    pub chunk_size: Option<usize>,
    pub guided_weight_initial: Option<f64>,
    pub decoder_dropout: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingKeys {
    pub preset: String,
    pub steps: usize,
    pub batch: usize,
    pub lr_scale: Option<f64>,
    pub max_utterances: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub precision: Precision,
    pub corpus: CorpusKeys,
    pub preprocess: PreprocessConfig,
    pub align: AlignKeys,
    pub filter_threshold: f64,
    pub sing: SingKeys,
    pub synth_iterations: usize,
    pub synth_count: usize,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| err(format!("{key}: cannot parse {v:?}")))
}

fn optional<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>, ConfigError> {
    if v.is_empty() {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl PipelineConfig {
    pub fn new(workdir: PathBuf) -> Self {
        let mut c = PipelineConfig {
            workdir,
            seed: 0,
            threads: 1,
            precision: Precision::Double,
            corpus: CorpusKeys {
                dir: PathBuf::new(),
                songs: 0,
                sentences: 0,
                seed: 0,
                noise_level: 0.0,
                melisma_prob: 0.0,
            },
            preprocess: PreprocessConfig::default(),
            align: AlignKeys {
                preset: String::new(),
                epochs: 0,
                fine_tune_epochs: 0,
                chunk_size: None,
                guided_weight_initial: None,
                decoder_dropout: None,
            },
            filter_threshold: DEFAULT_FILTER_THRESHOLD,
            sing: SingKeys {
                preset: String::new(),
                steps: 0,
                batch: 0,
                lr_scale: None,
                max_utterances: 0,
            },
            synth_iterations: 0,
            synth_count: 0,
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("defaults parse");
        }
        c
    }

    /// Applies every pair, rejecting unknown keys.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "precision" => self.precision = parse_precision(v)?,
            "corpus.dir" => self.corpus.dir = PathBuf::from(v),
            "corpus.songs" => self.corpus.songs = parse(key, v)?,
            "corpus.sentences" => self.corpus.sentences = parse(key, v)?,
            "corpus.seed" => self.corpus.seed = parse(key, v)?,
            "corpus.noise_level" => self.corpus.noise_level = parse(key, v)?,
            "corpus.melisma_prob" => self.corpus.melisma_prob = parse(key, v)?,
            "preprocess.target_lufs" => self.preprocess.target_lufs = parse(key, v)?,
            "preprocess.mel_bins" => self.preprocess.mel_bins = parse(key, v)?,
            "preprocess.volume_floor_db" => self.preprocess.volume_floor_db = parse(key, v)?,
            "preprocess.compress_silence" => self.preprocess.compress_silence = parse(key, v)?,
            "align.preset" => self.align.preset = v.to_string(),
            "align.epochs" => self.align.epochs = parse(key, v)?,
            "align.fine_tune_epochs" => self.align.fine_tune_epochs = parse(key, v)?,
            "align.chunk_size" => self.align.chunk_size = optional(key, v)?,
            "align.guided_weight_initial" => self.align.guided_weight_initial = optional(key, v)?,
            "align.decoder_dropout" => self.align.decoder_dropout = optional(key, v)?,
            "filter.threshold" => self.filter_threshold = parse(key, v)?,
            "sing.preset" => self.sing.preset = v.to_string(),
            "sing.steps" => self.sing.steps = parse(key, v)?,
            "sing.batch" => self.sing.batch = parse(key, v)?,
            "sing.lr_scale" => self.sing.lr_scale = optional(key, v)?,
            "sing.max_utterances" => self.sing.max_utterances = parse(key, v)?,
            "synth.iterations" => self.synth_iterations = parse(key, v)?,
            "synth.count" => self.synth_count = parse(key, v)?,
            _ => return Err(err(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.threads == 0 {
            return Err(err("threads must be positive"));
        }
        if !["micro", "paper", "tiny"].contains(&self.align.preset.as_str()) {
            return Err(err(format!("align.preset: unknown preset {:?}", self.align.preset)));
        }
        if !["micro", "paper"].contains(&self.sing.preset.as_str()) {
            return Err(err(format!("sing.preset: unknown preset {:?}", self.sing.preset)));
        }
        if self.sing.batch == 0 {
            return Err(err("sing.batch must be positive"));
        }
        if !(0.0..=1.0).contains(&self.filter_threshold) {
            return Err(err("filter.threshold must lie in [0, 1]"));
        }
        if self.corpus.songs == 0 || self.corpus.sentences == 0 {
            return Err(err("corpus.songs and corpus.sentences must be positive"));
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.workdir.join(&self.corpus.dir)
    }

    pub fn aligner_config(&self, vocab: usize, n_mels: usize) -> AlignerConfig {
        let mut c = match self.align.preset.as_str() {
            "paper" => AlignerConfig::paper(vocab),
            "tiny" => AlignerConfig::tiny(vocab, n_mels),
            _ => AlignerConfig::micro(vocab),
        };
        c.n_mels = n_mels;
        c.seed = self.seed;
        if let Some(v) = self.align.chunk_size {
            c.chunk_size = v;
        }
        if let Some(v) = self.align.guided_weight_initial {
            c.guided_weight_initial = v;
        }
        if let Some(v) = self.align.decoder_dropout {
            c.decoder_dropout = v;
        }
        c
    }

    pub fn singer_config(&self, vocab: usize) -> SingerConfig {
        let mut c = match self.sing.preset.as_str() {
            "paper" => SingerConfig::paper(vocab),
            _ => SingerConfig::micro(vocab),
        };
        c.seed = self.seed;
        if let Some(v) = self.sing.lr_scale {
            c.lr_scale = v;
        }
        c
    }
}

pub fn parse_precision(v: &str) -> Result<Precision, ConfigError> {
    match v {
        "single" => Ok(Precision::Single),
        "double" => Ok(Precision::Double),
        _ => Err(err(format!("precision must be single or double, got {v:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::new(PathBuf::from("w"));
        c.validate().unwrap();
        assert_eq!(c.corpus_dir(), PathBuf::from("w/corpus"));
        assert_eq!(c.align.epochs, 100);
        assert_eq!(c.filter_threshold, 0.6);
    }

    #[test]
    fn includes_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "# base\nseed = 3\nalign.epochs = 7\n").unwrap();
        std::fs::write(dir.path().join("run.cfg"), "include base.cfg\nalign.epochs = 9\n\nsing.lr_scale=0.5\n").unwrap();
        let mut pairs = BTreeMap::new();
        read_config_file(&dir.path().join("run.cfg"), &mut pairs).unwrap();
        let mut c = PipelineConfig::new(PathBuf::new());
        c.apply(&pairs).unwrap();
        assert_eq!((c.seed, c.align.epochs, c.sing.lr_scale), (3, 9, Some(0.5)));
    }

    #[test]
    fn bad_input_is_a_config_error() {
        let mut c = PipelineConfig::new(PathBuf::new());
        assert!(c.set("align.epoch", "3").is_err());
        assert!(c.set("seed", "x").is_err());
        assert!(c.set("precision", "half").is_err());
        c.set("align.preset", "huge").unwrap();
        assert!(c.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loop.cfg");
        std::fs::write(&p, "include loop.cfg\n").unwrap();
        assert!(read_config_file(&p, &mut BTreeMap::new()).is_err());
        std::fs::write(&p, "no equals sign\n").unwrap();
        assert!(read_config_file(&p, &mut BTreeMap::new()).is_err());
    }
}
