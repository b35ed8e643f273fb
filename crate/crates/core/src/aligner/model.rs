use std::ops::Range;

use cantor_tensor::nn::{Conv1d, Embedding, Linear, Lstm};
use cantor_tensor::{Graph, GraphConfig, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::AlignerConfig;
use super::mask::band_mask;
use crate::corpus::SIL;
use crate::duration::AttentionMatrix;
use crate::error::{contract, Result};

/// Mel encoder, phoneme decoder and location-sensitive attention.
#[derive(Clone, Debug)]
pub struct AlignerModel {
    pub config: AlignerConfig,
    prenet: Vec<Conv1d>,
    enc_fwd: Lstm,
    enc_bwd: Lstm,
    embedding: Embedding,
    decoder: Vec<Lstm>,
    query: Linear,
    key: Linear,
    loc_conv: ParamId,
    loc_proj: Linear,
    att_v: ParamId,
    output: Linear,
}

impl AlignerModel {
    pub fn new(config: AlignerConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut prenet = Vec::new();
        let mut width = c.n_mels;
        for l in 0..c.prenet_layers {
            prenet.push(Conv1d::new(store, &format!("aligner.prenet{l}"), c.prenet_kernel, width, c.prenet_channels, &mut rng));
            width = c.prenet_channels;
        }
        let half = c.encoder_hidden / 2;
        let enc_fwd = Lstm::new(store, "aligner.enc_fwd", width, half, &mut rng);
        let enc_bwd = Lstm::new(store, "aligner.enc_bwd", width, half, &mut rng);
        let embedding = Embedding::new(store, "aligner.embedding", c.vocab, c.embedding_dim, &mut rng);
        let mut decoder = Vec::new();
        let mut input = c.embedding_dim + c.encoder_hidden;
        for l in 0..c.decoder_layers {
            decoder.push(Lstm::new(store, &format!("aligner.dec{l}"), input, c.decoder_hidden, &mut rng));
            input = c.decoder_hidden;
        }
        let query = Linear::new(store, "aligner.query", c.decoder_hidden, c.attention_dim, false, &mut rng);
        let key = Linear::new(store, "aligner.key", c.encoder_hidden, c.attention_dim, false, &mut rng);
        let loc_conv = store.xavier("aligner.loc_conv.w", &[c.location_kernel, 2, c.location_filters], &mut rng);
        let loc_proj = Linear::new(store, "aligner.loc_proj", c.location_filters, c.attention_dim, false, &mut rng);
        let att_v = store.xavier("aligner.att_v", &[c.attention_dim, 1], &mut rng);
        let output = Linear::new(store, "aligner.output", c.decoder_hidden + c.encoder_hidden, c.vocab, true, &mut rng);
        Ok(AlignerModel {
            config,
            prenet,
            enc_fwd,
            enc_bwd,
            embedding,
            decoder,
            query,
            key,
            loc_conv,
            loc_proj,
            att_v,
            output,
        })
    }
}

/// Decoder state carried from one chunk to the next within a song.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderCarry {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub context: Vec<f64>,
    pub last_phoneme: usize,
    /// Previous attention row over the whole song.
    pub prev_att: Vec<f64>,
    /// Cumulative attention over the whole song.
    pub cum_att: Vec<f64>,
    pub last_frame: usize,
}

impl DecoderCarry {
    /// Fresh state for a song of `frames` frames.
    pub fn new(config: &AlignerConfig, frames: usize) -> Self {
        let mut prev_att = vec![0.0; frames];
        if let Some(p) = prev_att.first_mut() {
            *p = 1.0;
        }
        DecoderCarry {
            h: vec![vec![0.0; config.decoder_hidden]; config.decoder_layers],
            c: vec![vec![0.0; config.decoder_hidden]; config.decoder_layers],
            context: vec![0.0; config.encoder_hidden],
            last_phoneme: SIL,
            prev_att,
            cum_att: vec![0.0; frames],
            last_frame: 0,
        }
    }
}

/// One chunk of a song.
#[derive(Clone, Debug)]
pub struct ChunkInput<'a> {
    /// Whole-song features `[S, n_mels]`.
    pub features: &'a Tensor,
    /// Frame window fed to the encoder.
    pub window: Range<usize>,
    /// Target phonemes of the chunk.
    pub phonemes: &'a [usize],
    /// Next phoneme after the chunk, decoded without loss to locate its
    /// start.
    pub lookahead: Option<usize>,
    /// Mask centre of the first row, relative to the window start.
    pub mask_offset: usize,
    /// Song-level frames-per-phoneme rate as `(S, T)`.
    pub rate: (usize, usize),
    pub bandwidth: usize,
    pub guided_weight: f64,
}

pub struct ChunkGraph {
    pub loss: Var,
    pub ce: Var,
    pub guided: Var,
    pub attention: Var,
    pub lookahead: Option<Var>,
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    pub context: Var,
}

#[derive(Clone, Debug)]
pub struct ChunkOutcome {
    pub loss: f64,
    pub ce: f64,
    pub guided: f64,
    /// `n x window` attention rows.
    pub attention: AttentionMatrix,
    pub lookahead: Option<Vec<f64>>,
    pub carry: DecoderCarry,
}

fn window_features(features: &Tensor, window: &Range<usize>) -> Result<Tensor> {
    let cols = features.cols();
    if window.start >= window.end || window.end > features.rows() {
        return Err(contract(format!("chunk window {window:?} outside {} frames", features.rows())));
    }
    Tensor::new(
        vec![window.len(), cols],
        features.data()[window.start * cols..window.end * cols].to_vec(),
    )
    .map_err(Into::into)
}

/// Builds the chunk's forward graph.
pub fn build_chunk_graph(
    g: &mut Graph,
    model: &AlignerModel,
    store: &ParamStore,
    carry: &DecoderCarry,
    input: &ChunkInput,
) -> Result<ChunkGraph> {
    let cfg = &model.config;
    let n = input.phonemes.len();
    if n == 0 {
        return Err(contract("empty phoneme chunk"));
    }
    if input.features.cols() != cfg.n_mels {
        return Err(contract(format!("features have {} bins, model expects {}", input.features.cols(), cfg.n_mels)));
    }
    if carry.prev_att.len() != input.features.rows() {
        return Err(contract("carry belongs to a different song"));
    }
    if let Some(&bad) = input.phonemes.iter().chain(&input.lookahead).find(|&&p| p >= cfg.vocab) {
        return Err(contract(format!("phoneme {bad} outside vocabulary {}", cfg.vocab)));
    }
    let lw = input.window.len();
    let mut x = g.constant(window_features(input.features, &input.window)?);
    for conv in &model.prenet {
        let y = conv.forward(g, store, x)?;
        x = g.relu(y)?;
    }
    let fwd = model.enc_fwd.run(g, store, x, false)?;
    let bwd = model.enc_bwd.run(g, store, x, true)?;
    let memory = g.concat_cols(&[fwd, bwd])?;
    let keys = model.key.forward(g, store, memory)?;
    let loc_w = g.param(store, model.loc_conv);
    let v = g.param(store, model.att_v);

    let mut h: Vec<Var> = carry.h.iter().map(|s| g.constant(Tensor::row(s.clone()))).collect();
    let mut c: Vec<Var> = carry.c.iter().map(|s| g.constant(Tensor::row(s.clone()))).collect();
    let mut context = g.constant(Tensor::row(carry.context.clone()));
    let win = input.window.clone();
    let mut prev_att = g.constant(Tensor::new(vec![lw, 1], carry.prev_att[win.clone()].to_vec())?);
    let mut cum_att = g.constant(Tensor::new(vec![lw, 1], carry.cum_att[win].to_vec())?);
    let mut prev_ph = carry.last_phoneme;

    let steps = n + usize::from(input.lookahead.is_some());
    let mut logits = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut lookahead = None;
    for i in 0..steps {
        let emb = model.embedding.forward(g, store, &[prev_ph])?;
        let emb = g.dropout(emb, cfg.decoder_dropout)?;
        let mut layer_in = g.concat_cols(&[emb, context])?;
        let mut nh = Vec::with_capacity(h.len());
        let mut nc = Vec::with_capacity(c.len());
        for (l, cell) in model.decoder.iter().enumerate() {
            let (hh, cc) = cell.step(g, store, layer_in, h[l], c[l])?;
            nh.push(hh);
            nc.push(cc);
            layer_in = hh;
        }
        let top = layer_in;
        let q = model.query.forward(g, store, top)?;
        let loc_in = g.concat_cols(&[prev_att, cum_att])?;
        let loc_f = g.conv1d(loc_in, loc_w, None)?;
        let loc = model.loc_proj.forward(g, store, loc_f)?;
        let scores = g.additive_scores(keys, q, loc, v)?;
        let att = g.softmax(scores)?;
        if i == n {
            lookahead = Some(att);
            break;
        }
        let ctx = g.matmul(att, memory)?;
        let out_in = g.concat_cols(&[top, ctx])?;
        logits.push(model.output.forward(g, store, out_in)?);
        rows.push(att);
        h = nh;
        c = nc;
        context = ctx;
        let att_col = g.reshape(att, &[lw, 1])?;
        prev_att = att_col;
        cum_att = g.add(cum_att, att_col)?;
        prev_ph = input.phonemes[i];
    }
    let logits = g.concat_rows(&logits)?;
    let ce = g.cross_entropy(logits, input.phonemes)?;
    let attention = g.concat_rows(&rows)?;
    let (num, den) = input.rate;
    let mask = band_mask(n, lw, input.bandwidth, input.mask_offset, num, den);
    let mask = g.constant(Tensor::new(vec![n, lw], mask.data().to_vec())?);
    let inside = g.mul(attention, mask)?;
    let mean_inside = g.mean(inside)?;
    let guided = g.scale(mean_inside, -1.0)?;
    let weighted = g.scale(guided, input.guided_weight)?;
    let loss = g.add(ce, weighted)?;
    Ok(ChunkGraph {
        loss,
        ce,
        guided,
        attention,
        lookahead,
        h,
        c,
        context,
    })
}

/// Runs one chunk: forward, backward into `store` when training, and the
/// updated carry. Gradients never cross chunk boundaries.
pub fn aligner_chunk_step(
    model: &AlignerModel,
    store: &mut ParamStore,
    carry: &DecoderCarry,
    input: &ChunkInput,
    graph: GraphConfig,
) -> Result<ChunkOutcome> {
    let mut g = Graph::new(graph);
    let cg = build_chunk_graph(&mut g, model, store, carry, input)?;
    if g.is_train() {
        g.backward(cg.loss)?.accumulate_into(store);
    }
    let lw = input.window.len();
    let n = input.phonemes.len();
    let attention = AttentionMatrix::new(n, lw, g.value(cg.attention).data().to_vec())?;
    let mut next = carry.clone();
    next.h = cg.h.iter().map(|&v| g.value(v).data().to_vec()).collect();
    next.c = cg.c.iter().map(|&v| g.value(v).data().to_vec()).collect();
    next.context = g.value(cg.context).data().to_vec();
    next.last_phoneme = input.phonemes[n - 1];
    next.prev_att.iter_mut().for_each(|x| *x = 0.0);
    let last = attention.row(n - 1);
    for (j, &a) in last.iter().enumerate() {
        next.prev_att[input.window.start + j] = a;
    }
    for i in 0..n {
        for (j, &a) in attention.row(i).iter().enumerate() {
            next.cum_att[input.window.start + j] += a;
        }
    }
    let argmax = last
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (j, &a)| if a > best.1 { (j, a) } else { best })
        .0;
    next.last_frame = input.window.start + argmax;
    Ok(ChunkOutcome {
        loss: g.value(cg.loss).item()?,
        ce: g.value(cg.ce).item()?,
        guided: g.value(cg.guided).item()?,
        attention,
        lookahead: cg.lookahead.map(|v| g.value(v).data().to_vec()),
        carry: next,
    })
}
