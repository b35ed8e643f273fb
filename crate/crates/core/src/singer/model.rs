use cantor_tensor::nn::{sinusoid_table, Conv1d, Embedding, LayerNorm, Linear};
use cantor_tensor::{Graph, GraphConfig, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SingerConfig;
use crate::error::{contract, Result};

/// Self-attention followed by a two-layer convolution, each with a residual
/// connection and layer normalisation.
#[derive(Clone, Debug)]
pub struct FftBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    ln2: LayerNorm,
}

impl FftBlock {
    fn new(store: &mut ParamStore, name: &str, c: &SingerConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = c.hidden;
        FftBlock {
            q: Linear::new(store, &format!("{name}.q"), h, h, true, rng),
            k: Linear::new(store, &format!("{name}.k"), h, h, false, rng),
            v: Linear::new(store, &format!("{name}.v"), h, h, true, rng),
            o: Linear::new(store, &format!("{name}.o"), h, h, true, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), h),
            conv1: Conv1d::new(store, &format!("{name}.conv1"), c.conv_kernel, h, c.conv_filter, rng),
            conv2: Conv1d::new(store, &format!("{name}.conv2"), c.conv_kernel, c.conv_filter, h, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), h),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, heads: usize, dropout: f64) -> Result<Var> {
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let att = g.multi_head_attention(q, k, v, heads)?;
        let att = self.o.forward(g, store, att)?;
        let att = g.dropout(att, dropout)?;
        let x = g.add(x, att)?;
        let x = self.ln1.forward(g, store, x)?;
        let h = self.conv1.forward(g, store, x)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, store, h)?;
        let h = g.dropout(h, dropout)?;
        let x = g.add(x, h)?;
        Ok(self.ln2.forward(g, store, x)?)
    }
}

/// Lyrics, pitch and reference encoders summed frame by frame and decoded
/// to linear-spectrogram frames.
#[derive(Clone, Debug)]
pub struct SingerModel {
    pub config: SingerConfig,
    phone_emb: Embedding,
    phone_proj: Option<Linear>,
    lyrics: Vec<FftBlock>,
    pitch_emb: Embedding,
    pitch: Vec<FftBlock>,
    ref_prenet: Vec<Linear>,
    ref_proj: Linear,
    reference: Vec<FftBlock>,
    singer_emb: Option<Embedding>,
    decoder: Vec<FftBlock>,
    output: Linear,
}

/// Conditioning for one utterance. Magnitudes are already scaled.
#[derive(Clone, Copy, Debug)]
pub struct SingerInput<'a> {
    pub phonemes: &'a [usize],
    pub durations: &'a [usize],
    /// Note id per output frame.
    pub pitch: &'a [usize],
    /// `[R, output_dim]` reference frames.
    pub reference: &'a Tensor,
    pub singer: usize,
}

impl SingerModel {
    pub fn new(config: SingerConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let blocks = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, n: usize| -> Vec<FftBlock> {
            (0..n).map(|i| FftBlock::new(store, &format!("singer.{name}.{i}"), c, rng)).collect()
        };
        let phone_emb = Embedding::new(store, "singer.phone_emb", c.vocab, c.embedding_dim, &mut rng);
        let phone_proj = (c.embedding_dim != c.hidden)
            .then(|| Linear::new(store, "singer.phone_proj", c.embedding_dim, c.hidden, false, &mut rng));
        let lyrics = blocks(store, &mut rng, "lyrics", c.lyrics_blocks);
        let pitch_emb = Embedding::new(store, "singer.pitch_emb", c.pitch_vocab, c.hidden, &mut rng);
        let pitch = blocks(store, &mut rng, "pitch", c.pitch_blocks);
        let mut ref_prenet = Vec::with_capacity(c.reference_prenet_layers);
        let mut width = c.output_dim;
        for i in 0..c.reference_prenet_layers {
            ref_prenet.push(Linear::new(store, &format!("singer.ref_prenet.{i}"), width, c.reference_prenet_hidden, true, &mut rng));
            width = c.reference_prenet_hidden;
        }
        let ref_proj = Linear::new(store, "singer.ref_proj", width, c.hidden, true, &mut rng);
        let reference = blocks(store, &mut rng, "reference", c.reference_blocks);
        let singer_emb = c.singer_table.map(|n| Embedding::new(store, "singer.singer_emb", n, c.hidden, &mut rng));
        let decoder = blocks(store, &mut rng, "decoder", c.decoder_blocks);
        let output = Linear::zeroed(store, "singer.output", c.hidden, c.output_dim);
        Ok(SingerModel {
            config,
            phone_emb,
            phone_proj,
            lyrics,
            pitch_emb,
            pitch,
            ref_prenet,
            ref_proj,
            reference,
            singer_emb,
            decoder,
            output,
        })
    }

    fn run_blocks(&self, g: &mut Graph, store: &ParamStore, blocks: &[FftBlock], mut x: Var) -> Result<Var> {
        for b in blocks {
            x = b.forward(g, store, x, self.config.heads, self.config.dropout)?;
        }
        Ok(x)
    }

    /// Reference frames to a single `[1, hidden]` vector.
    pub fn encode_reference(&self, g: &mut Graph, store: &ParamStore, reference: &Tensor) -> Result<Var> {
        let c = &self.config;
        if reference.rows() == 0 {
            return Err(contract("empty reference"));
        }
        if reference.cols() != c.output_dim {
            return Err(contract(format!("reference has {} bins, model expects {}", reference.cols(), c.output_dim)));
        }
        let mut x = g.constant(reference.clone());
        for layer in &self.ref_prenet {
            let y = layer.forward(g, store, x)?;
            let y = g.relu(y)?;
            x = g.dropout(y, c.dropout)?;
        }
        let mut x = self.ref_proj.forward(g, store, x)?;
        if c.reference_positional {
            x = add_positions(g, x)?;
        }
        let x = self.run_blocks(g, store, &self.reference, x)?;
        Ok(g.mean_rows(x)?)
    }

    /// Builds the forward graph and returns the `[S, output_dim]` prediction.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: &SingerInput) -> Result<Var> {
        let c = &self.config;
        let s = input.pitch.len();
        if input.phonemes.len() != input.durations.len() {
            return Err(contract(format!(
                "{} phonemes but {} durations",
                input.phonemes.len(),
                input.durations.len()
            )));
        }
        let idx = regulate_indices(input.durations, s)?;
        if let Some(&bad) = input.phonemes.iter().find(|&&p| p >= c.vocab) {
            return Err(contract(format!("phoneme {bad} outside vocabulary {}", c.vocab)));
        }
        if let Some(&bad) = input.pitch.iter().find(|&&p| p >= c.pitch_vocab) {
            return Err(contract(format!("pitch id {bad} outside vocabulary {}", c.pitch_vocab)));
        }

        let mut lyr = self.phone_emb.forward(g, store, input.phonemes)?;
        if let Some(p) = &self.phone_proj {
            lyr = p.forward(g, store, lyr)?;
        }
        let lyr = add_positions(g, lyr)?;
        let lyr = self.run_blocks(g, store, &self.lyrics, lyr)?;
        let lyr = g.gather_rows(lyr, &idx)?;

        let pit = self.pitch_emb.forward(g, store, input.pitch)?;
        let pit = add_positions(g, pit)?;
        let pit = self.run_blocks(g, store, &self.pitch, pit)?;

        let timbre = match &self.singer_emb {
            Some(table) => {
                let n = c.singer_table.unwrap_or(0);
                if input.singer >= n {
                    return Err(contract(format!("singer {} outside table of {n}", input.singer)));
                }
                table.forward(g, store, &[input.singer])?
            }
            None => self.encode_reference(g, store, input.reference)?,
        };
        let timbre = g.gather_rows(timbre, &vec![0; s])?;

        let x = g.add(lyr, pit)?;
        let x = g.add(x, timbre)?;
        let x = add_positions(g, x)?;
        let x = self.run_blocks(g, store, &self.decoder, x)?;
        Ok(self.output.forward(g, store, x)?)
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, store: &ParamStore, input: &SingerInput) -> Result<Tensor> {
        let mut g = Graph::new(GraphConfig::default());
        let y = self.forward(&mut g, store, input)?;
        Ok(g.value(y).clone())
    }

    /// Evaluation-mode reference embedding.
    pub fn reference_embedding(&self, store: &ParamStore, reference: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new(GraphConfig::default());
        let v = self.encode_reference(&mut g, store, reference)?;
        Ok(g.value(v).data().to_vec())
    }
}

fn add_positions(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let pe = g.constant(sinusoid_table(shape[0], shape[1]));
    Ok(g.add(x, pe)?)
}

/// Source row for every output frame: row `i` repeated `d[i]` times.
pub fn regulate_indices(durations: &[usize], frames: usize) -> Result<Vec<usize>> {
    let total: usize = durations.iter().sum();
    if total != frames {
        return Err(contract(format!("durations sum to {total}, expected {frames} frames")));
    }
    let mut idx = Vec::with_capacity(total);
    for (i, &d) in durations.iter().enumerate() {
        idx.extend(std::iter::repeat(i).take(d));
    }
    Ok(idx)
}

/// Expands `x: [T, H]` to `[sum(D), H]`.
pub fn length_regulate(g: &mut Graph, x: Var, durations: &[usize], frames: usize) -> Result<Var> {
    let t = g.shape(x)[0];
    if t != durations.len() {
        return Err(contract(format!("{t} states but {} durations", durations.len())));
    }
    let idx = regulate_indices(durations, frames)?;
    Ok(g.gather_rows(x, &idx)?)
}

/// Raises durations to at least `min` frames, taking the frames from the
/// longest entries so the total is unchanged.
pub fn renormalize_durations(durations: &[usize], min: usize) -> Result<Vec<usize>> {
    let total: usize = durations.iter().sum();
    if total < min * durations.len() {
        return Err(contract(format!("{total} frames cannot give {} phonemes {min} each", durations.len())));
    }
    let mut d = durations.to_vec();
    let mut debt: usize = d.iter().map(|&x| min.saturating_sub(x)).sum();
    d.iter_mut().for_each(|x| *x = (*x).max(min));
    while debt > 0 {
        let (k, _) = d
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, &x)| if x > best.1 { (i, x) } else { best });
        d[k] -= 1;
        debt -= 1;
    }
    Ok(d)
}
