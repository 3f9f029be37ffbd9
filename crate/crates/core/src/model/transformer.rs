//! Post-norm encoder-decoder forward and backward passes.
//!
//! Sequences are processed one example at a time; batching happens by
//! accumulating gradients in a fixed order, which keeps training
//! reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    apply_mask, attention, attention_backward, dropout_mask, gelu, gelu_backward, AttnMask, LayerNorm, LayerNormCache,
    Linear,
};
use super::params::{Attention, Params};
use super::{ModelConfig, ModelError};
use crate::fretboard::STRING_COUNT;
use crate::tokenizer::{is_string_position, TOKENS_PER_NOTE};

struct EmbedCache {
    ids: Vec<u32>,
    norm: LayerNormCache,
    drop: Option<Array2<f64>>,
}

struct AttnCache {
    xq: Array2<f64>,
    xkv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop: Option<Array2<f64>>,
}

struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    drop: Option<Array2<f64>>,
}

struct EncoderLayerCache {
    attn: AttnCache,
    attn_norm: LayerNormCache,
    ffn: FfnCache,
    ffn_norm: LayerNormCache,
}

struct DecoderLayerCache {
    self_attn: AttnCache,
    self_norm: LayerNormCache,
    cross_attn: AttnCache,
    cross_norm: LayerNormCache,
    ffn: FfnCache,
    ffn_norm: LayerNormCache,
}

struct StackCache<L> {
    embed: EmbedCache,
    layers: Vec<L>,
}

/// Dropout context: probability and the RNG, absent in evaluation mode.
struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn mask(&mut self, shape: (usize, usize)) -> Option<Array2<f64>> {
        dropout_mask(shape, self.p, self.rng.as_deref_mut())
    }
}

fn embed_forward(
    tokens: &Array2<f64>,
    positions: &Array2<f64>,
    norm: &LayerNorm,
    ids: &[u32],
    dropout: &mut Dropout,
) -> (Array2<f64>, EmbedCache) {
    let d = tokens.ncols();
    let mut x = Array2::zeros((ids.len(), d));
    for (i, (mut row, &id)) in x.rows_mut().into_iter().zip(ids).enumerate() {
        row.assign(&tokens.row(id as usize));
        row += &positions.row(i);
    }
    let (mut y, norm_cache) = norm.forward(&x);
    let drop = dropout.mask(y.dim());
    apply_mask(&mut y, &drop);
    (
        y,
        EmbedCache {
            ids: ids.to_vec(),
            norm: norm_cache,
            drop,
        },
    )
}

fn embed_backward(
    norm: &LayerNorm,
    cache: &EmbedCache,
    dy: &Array2<f64>,
    g_tokens: &mut Array2<f64>,
    g_positions: &mut Array2<f64>,
    g_norm: &mut LayerNorm,
) {
    let mut dy = dy.clone();
    apply_mask(&mut dy, &cache.drop);
    let dx = norm.backward(&cache.norm, &dy, g_norm);
    for (i, (row, &id)) in dx.rows().into_iter().zip(&cache.ids).enumerate() {
        let mut t = g_tokens.row_mut(id as usize);
        t += &row;
        let mut p = g_positions.row_mut(i);
        p += &row;
    }
}

fn attn_forward(
    p: &Attention,
    xq: &Array2<f64>,
    xkv: &Array2<f64>,
    heads: usize,
    mask: AttnMask,
    dropout: &mut Dropout,
) -> (Array2<f64>, AttnCache) {
    let q = p.query.forward(xq);
    let k = p.key.forward(xkv);
    let v = p.value.forward(xkv);
    let (ctx, probs) = attention(&q, k.view(), v.view(), heads, mask);
    let mut out = p.output.forward(&ctx);
    let drop = dropout.mask(out.dim());
    apply_mask(&mut out, &drop);
    let cache = AttnCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        probs,
        ctx,
        drop,
    };
    (out, cache)
}

/// Returns the gradients for the query input and the key/value input.
fn attn_backward(p: &Attention, c: &AttnCache, dout: &Array2<f64>, g: &mut Attention) -> (Array2<f64>, Array2<f64>) {
    let mut d = dout.clone();
    apply_mask(&mut d, &c.drop);
    let dctx = p.output.backward(&c.ctx, &d, &mut g.output);
    let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.probs, &dctx);
    let dxq = p.query.backward(&c.xq, &dq, &mut g.query);
    let mut dxkv = p.key.backward(&c.xkv, &dk, &mut g.key);
    dxkv += &p.value.backward(&c.xkv, &dv, &mut g.value);
    (dxq, dxkv)
}

fn ffn_forward(ff_in: &Linear, ff_out: &Linear, x: &Array2<f64>, dropout: &mut Dropout) -> (Array2<f64>, FfnCache) {
    let pre = ff_in.forward(x);
    let act = gelu(&pre);
    let mut out = ff_out.forward(&act);
    let drop = dropout.mask(out.dim());
    apply_mask(&mut out, &drop);
    let cache = FfnCache {
        x: x.clone(),
        pre,
        act,
        drop,
    };
    (out, cache)
}

fn ffn_backward(
    ff_in: &Linear,
    ff_out: &Linear,
    c: &FfnCache,
    dout: &Array2<f64>,
    g_in: &mut Linear,
    g_out: &mut Linear,
) -> Array2<f64> {
    let mut d = dout.clone();
    apply_mask(&mut d, &c.drop);
    let dact = ff_out.backward(&c.act, &d, g_out);
    let dpre = gelu_backward(&c.pre, &dact);
    ff_in.backward(&c.x, &dpre, g_in)
}

/// `None` when no position is padding, so attention can skip the check.
fn key_validity(ids: &[u32], pad: u32) -> Option<Vec<bool>> {
    ids.contains(&pad).then(|| ids.iter().map(|&t| t != pad).collect())
}

/// Loss statistics over the string positions of one or more examples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    /// Summed cross-entropy (natural log).
    pub loss_sum: f64,
    /// Number of string positions scored.
    pub count: usize,
    /// String positions whose highest string logit is the target.
    pub correct: usize,
}

impl LossTerms {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss_sum / self.count as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }

    pub fn add(&mut self, other: LossTerms) {
        self.loss_sum += other.loss_sum;
        self.count += other.count;
        self.correct += other.correct;
    }
}

/// Softmax restricted to the six string tokens.
pub fn string_probabilities(logits: ArrayView1<f64>, string_ids: &[u32; STRING_COUNT]) -> [f64; STRING_COUNT] {
    let raw: Vec<f64> = string_ids.iter().map(|&id| logits[id as usize]).collect();
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut out = [0.0; STRING_COUNT];
    for (o, e) in out.iter_mut().zip(&exps) {
        *o = e / sum;
    }
    out
}

/// Encoder output and the per-layer cross-attention keys and values.
#[derive(Debug, Clone)]
pub struct EncoderMemory {
    pub hidden: Array2<f64>,
    cross_kv: Vec<(Array2<f64>, Array2<f64>)>,
    valid: Option<Vec<bool>>,
}

/// Self-attention keys and values of an incrementally decoded prefix.
/// Cloning a state forks the prefix.
#[derive(Debug, Clone)]
pub struct DecoderState {
    len: usize,
    self_kv: Vec<(Array2<f64>, Array2<f64>)>,
}

impl DecoderState {
    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    config: ModelConfig,
    pub params: Params,
}

impl Transformer {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self, ModelError> {
        config.validate()?;
        let reference = Params::zeros(&config);
        let shapes_match = reference
            .tensors()
            .iter()
            .zip(params.tensors().iter())
            .all(|(a, b)| a.name == b.name && a.shape == b.shape)
            && reference.tensors().len() == params.tensors().len();
        if !shapes_match {
            return Err(ModelError::Config("parameter shapes do not match the configuration".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_ids(&self, ids: &[u32], extra: usize) -> Result<(), ModelError> {
        if ids.len() + extra > self.config.max_positions {
            return Err(ModelError::SequenceTooLong {
                len: ids.len() + extra,
                max: self.config.max_positions,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::UnknownToken(id));
        }
        Ok(())
    }

    fn encoder_forward(&self, ids: &[u32], dropout: &mut Dropout) -> (Array2<f64>, StackCache<EncoderLayerCache>) {
        let p = &self.params;
        let heads = self.config.num_heads;
        let valid = key_validity(ids, self.config.pad_id);
        let mask = AttnMask {
            causal: false,
            query_offset: 0,
            key_valid: valid.as_deref(),
        };
        let (mut x, embed) = embed_forward(
            &p.token_embedding,
            &p.encoder_positions,
            &p.encoder_embed_norm,
            ids,
            dropout,
        );
        let mut layers = Vec::with_capacity(p.encoder.len());
        for layer in &p.encoder {
            let (a, attn) = attn_forward(&layer.self_attn, &x, &x, heads, mask, dropout);
            let (h, attn_norm) = layer.self_attn_norm.forward(&(&x + &a));
            let (f, ffn) = ffn_forward(&layer.ff_in, &layer.ff_out, &h, dropout);
            let (out, ffn_norm) = layer.ff_norm.forward(&(&h + &f));
            layers.push(EncoderLayerCache {
                attn,
                attn_norm,
                ffn,
                ffn_norm,
            });
            x = out;
        }
        (x, StackCache { embed, layers })
    }

    fn encoder_backward(&self, cache: &StackCache<EncoderLayerCache>, dout: Array2<f64>, g: &mut Params) {
        let p = &self.params;
        let mut d = dout;
        for ((layer, c), gl) in p.encoder.iter().zip(&cache.layers).zip(g.encoder.iter_mut()).rev() {
            let d_sum = layer.ff_norm.backward(&c.ffn_norm, &d, &mut gl.ff_norm);
            let mut dh = d_sum.clone();
            dh += &ffn_backward(&layer.ff_in, &layer.ff_out, &c.ffn, &d_sum, &mut gl.ff_in, &mut gl.ff_out);
            let d_sum = layer.self_attn_norm.backward(&c.attn_norm, &dh, &mut gl.self_attn_norm);
            let (dq, dkv) = attn_backward(&layer.self_attn, &c.attn, &d_sum, &mut gl.self_attn);
            d = d_sum + dq + dkv;
        }
        embed_backward(
            &p.encoder_embed_norm,
            &cache.embed,
            &d,
            &mut g.token_embedding,
            &mut g.encoder_positions,
            &mut g.encoder_embed_norm,
        );
    }

    fn decoder_forward(
        &self,
        ids: &[u32],
        memory: &Array2<f64>,
        memory_valid: Option<&[bool]>,
        dropout: &mut Dropout,
    ) -> (Array2<f64>, StackCache<DecoderLayerCache>) {
        let p = &self.params;
        let heads = self.config.num_heads;
        let valid = key_validity(ids, self.config.pad_id);
        let self_mask = AttnMask {
            causal: true,
            query_offset: 0,
            key_valid: valid.as_deref(),
        };
        let cross_mask = AttnMask {
            causal: false,
            query_offset: 0,
            key_valid: memory_valid,
        };
        let (mut x, embed) = embed_forward(
            &p.token_embedding,
            &p.decoder_positions,
            &p.decoder_embed_norm,
            ids,
            dropout,
        );
        let mut layers = Vec::with_capacity(p.decoder.len());
        for layer in &p.decoder {
            let (a, self_attn) = attn_forward(&layer.self_attn, &x, &x, heads, self_mask, dropout);
            let (h1, self_norm) = layer.self_attn_norm.forward(&(&x + &a));
            let (c, cross_attn) = attn_forward(&layer.cross_attn, &h1, memory, heads, cross_mask, dropout);
            let (h2, cross_norm) = layer.cross_attn_norm.forward(&(&h1 + &c));
            let (f, ffn) = ffn_forward(&layer.ff_in, &layer.ff_out, &h2, dropout);
            let (out, ffn_norm) = layer.ff_norm.forward(&(&h2 + &f));
            layers.push(DecoderLayerCache {
                self_attn,
                self_norm,
                cross_attn,
                cross_norm,
                ffn,
                ffn_norm,
            });
            x = out;
        }
        (x, StackCache { embed, layers })
    }

    /// Backpropagates through the decoder; returns the encoder-output gradient.
    fn decoder_backward(
        &self,
        cache: &StackCache<DecoderLayerCache>,
        dout: Array2<f64>,
        memory_rows: usize,
        g: &mut Params,
    ) -> Array2<f64> {
        let p = &self.params;
        let mut d_memory = Array2::zeros((memory_rows, self.config.hidden_size));
        let mut d = dout;
        for ((layer, c), gl) in p.decoder.iter().zip(&cache.layers).zip(g.decoder.iter_mut()).rev() {
            let d_sum = layer.ff_norm.backward(&c.ffn_norm, &d, &mut gl.ff_norm);
            let mut dh2 = d_sum.clone();
            dh2 += &ffn_backward(&layer.ff_in, &layer.ff_out, &c.ffn, &d_sum, &mut gl.ff_in, &mut gl.ff_out);
            let d_sum = layer.cross_attn_norm.backward(&c.cross_norm, &dh2, &mut gl.cross_attn_norm);
            let (dq, dmem) = attn_backward(&layer.cross_attn, &c.cross_attn, &d_sum, &mut gl.cross_attn);
            d_memory += &dmem;
            let dh1 = d_sum + dq;
            let d_sum = layer.self_attn_norm.backward(&c.self_norm, &dh1, &mut gl.self_attn_norm);
            let (dq, dkv) = attn_backward(&layer.self_attn, &c.self_attn, &d_sum, &mut gl.self_attn);
            d = d_sum + dq + dkv;
        }
        embed_backward(
            &p.decoder_embed_norm,
            &cache.embed,
            &d,
            &mut g.token_embedding,
            &mut g.decoder_positions,
            &mut g.decoder_embed_norm,
        );
        d_memory
    }

    fn project(&self, hidden: &Array2<f64>) -> Array2<f64> {
        let mut logits = hidden.dot(&self.params.token_embedding.t());
        logits += &self.params.output_bias;
        logits
    }

    /// Encoder output in evaluation mode, one row per position.
    pub fn encode(&self, encoder_ids: &[u32]) -> Result<Array2<f64>, ModelError> {
        self.check_ids(encoder_ids, 0)?;
        Ok(self.encoder_forward(encoder_ids, &mut Dropout { p: 0.0, rng: None }).0)
    }

    /// Decoder logits for every decoder position, evaluation mode.
    pub fn forward(&self, encoder_ids: &[u32], decoder_ids: &[u32]) -> Result<Array2<f64>, ModelError> {
        self.check_ids(encoder_ids, 0)?;
        self.check_ids(decoder_ids, 0)?;
        let mut dropout = Dropout { p: 0.0, rng: None };
        let (memory, _) = self.encoder_forward(encoder_ids, &mut dropout);
        let valid = key_validity(encoder_ids, self.config.pad_id);
        let (hidden, _) = self.decoder_forward(decoder_ids, &memory, valid.as_deref(), &mut dropout);
        Ok(self.project(&hidden))
    }

    /// [`forward`](Self::forward) over independent examples.
    pub fn forward_batch(&self, batch: &[(Vec<u32>, Vec<u32>)]) -> Result<Vec<Array2<f64>>, ModelError> {
        batch.iter().map(|(e, d)| self.forward(e, d)).collect()
    }

    /// Probabilities of the six strings for the note whose string token
    /// follows `decoder_prefix` (which starts with BOS).
    pub fn string_distribution(
        &self,
        encoder_ids: &[u32],
        decoder_prefix: &[u32],
        string_ids: &[u32; STRING_COUNT],
    ) -> Result<[f64; STRING_COUNT], ModelError> {
        // prefix = BOS + 5k tokens + time shift of note k
        if decoder_prefix.len() % TOKENS_PER_NOTE != 2 {
            return Err(ModelError::NotStringPosition(decoder_prefix.len()));
        }
        let logits = self.forward(encoder_ids, decoder_prefix)?;
        Ok(string_probabilities(logits.row(logits.nrows() - 1), string_ids))
    }

    /// Cross-entropy over the full vocabulary at string positions
    /// (`5k + 1`) whose target is not padding. Other targets are never
    /// read.
    ///
    /// With `grads`, accumulates `scale` times the gradient of the summed
    /// loss. `rng` enables dropout.
    pub fn string_loss(
        &self,
        encoder_ids: &[u32],
        decoder_ids: &[u32],
        targets: &[u32],
        string_ids: &[u32; STRING_COUNT],
        grads: Option<(&mut Params, f64)>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LossTerms, ModelError> {
        assert_eq!(decoder_ids.len(), targets.len(), "one target per decoder position");
        self.check_ids(encoder_ids, 0)?;
        self.check_ids(decoder_ids, 0)?;
        let pad = self.config.pad_id;
        let rows: Vec<usize> = (0..targets.len())
            .filter(|&i| is_string_position(i) && targets[i] != pad)
            .collect();
        if rows.is_empty() {
            return Ok(LossTerms::default());
        }
        let mut dropout = Dropout {
            p: self.config.dropout,
            rng,
        };
        let (memory, enc_cache) = self.encoder_forward(encoder_ids, &mut dropout);
        let valid = key_validity(encoder_ids, pad);
        let (hidden, dec_cache) = self.decoder_forward(decoder_ids, &memory, valid.as_deref(), &mut dropout);

        let picked = hidden.select(Axis(0), &rows);
        let logits = self.project(&picked);
        let mut terms = LossTerms {
            count: rows.len(),
            ..LossTerms::default()
        };
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for ((row, mut drow), &pos) in logits.rows().into_iter().zip(dlogits.rows_mut()).zip(&rows) {
            let target = targets[pos] as usize;
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            terms.loss_sum += lse - row[target];
            let best = string_ids
                .iter()
                .max_by(|&&a, &&b| row[a as usize].total_cmp(&row[b as usize]).then(b.cmp(&a)))
                .expect("six strings");
            if *best as usize == target {
                terms.correct += 1;
            }
            softmax_minus_onehot(&row, &mut drow, lse, target);
        }

        if let Some((g, scale)) = grads {
            dlogits *= scale;
            g.output_bias += &dlogits.sum_axis(Axis(0));
            general_mat_mul(1.0, &dlogits.t(), &picked, 1.0, &mut g.token_embedding);
            let dpicked = dlogits.dot(&self.params.token_embedding);
            let mut dhidden = Array2::zeros(hidden.raw_dim());
            for (src, &pos) in dpicked.rows().into_iter().zip(&rows) {
                dhidden.row_mut(pos).assign(&src);
            }
            let dmemory = self.decoder_backward(&dec_cache, dhidden, memory.nrows(), g);
            self.encoder_backward(&enc_cache, dmemory, g);
        }
        Ok(terms)
    }

    /// Runs the encoder and precomputes cross-attention keys and values.
    pub fn encoder_memory(&self, encoder_ids: &[u32]) -> Result<EncoderMemory, ModelError> {
        let hidden = self.encode(encoder_ids)?;
        let cross_kv = self
            .params
            .decoder
            .iter()
            .map(|l| (l.cross_attn.key.forward(&hidden), l.cross_attn.value.forward(&hidden)))
            .collect();
        Ok(EncoderMemory {
            hidden,
            cross_kv,
            valid: key_validity(encoder_ids, self.config.pad_id),
        })
    }

    pub fn empty_state(&self) -> DecoderState {
        let d = self.config.hidden_size;
        DecoderState {
            len: 0,
            self_kv: (0..self.config.num_layers)
                .map(|_| (Array2::zeros((0, d)), Array2::zeros((0, d))))
                .collect(),
        }
    }

    /// Feeds `tokens[i]` to `states[i]` for every state in one stacked pass
    /// and returns the logits after each state's last new token.
    ///
    /// Decoder inputs are assumed free of padding.
    pub fn decode_step(
        &self,
        memory: &EncoderMemory,
        states: &mut [DecoderState],
        tokens: &[Vec<u32>],
    ) -> Result<Vec<Array1<f64>>, ModelError> {
        assert_eq!(states.len(), tokens.len(), "one token list per state");
        assert!(tokens.iter().all(|t| !t.is_empty()), "every state needs a token");
        for (state, t) in states.iter().zip(tokens) {
            self.check_ids(t, state.len)?;
        }
        let p = &self.params;
        let heads = self.config.num_heads;
        let d = self.config.hidden_size;
        let mut spans = Vec::with_capacity(states.len());
        let mut start = 0;
        for t in tokens {
            spans.push(start..start + t.len());
            start += t.len();
        }
        let mut x = Array2::zeros((start, d));
        for ((state, t), span) in states.iter().zip(tokens).zip(&spans) {
            for (j, &id) in t.iter().enumerate() {
                let mut row = x.row_mut(span.start + j);
                row.assign(&p.token_embedding.row(id as usize));
                row += &p.decoder_positions.row(state.len + j);
            }
        }
        x = p.decoder_embed_norm.apply(&x);

        for (l, layer) in p.decoder.iter().enumerate() {
            let q = layer.self_attn.query.forward(&x);
            let k = layer.self_attn.key.forward(&x);
            let v = layer.self_attn.value.forward(&x);
            let mut ctx = Array2::zeros((start, d));
            for (state, span) in states.iter_mut().zip(&spans) {
                let rows = s![span.clone(), ..];
                let (kc, vc) = &mut state.self_kv[l];
                kc.append(Axis(0), k.slice(rows)).expect("matching width");
                vc.append(Axis(0), v.slice(rows)).expect("matching width");
                let mask = AttnMask {
                    causal: true,
                    query_offset: state.len,
                    key_valid: None,
                };
                let (c, _) = attention(&q.slice(rows).to_owned(), kc.view(), vc.view(), heads, mask);
                ctx.slice_mut(rows).assign(&c);
            }
            let a = layer.self_attn.output.forward(&ctx);
            x = layer.self_attn_norm.apply(&(&x + &a));

            let qc = layer.cross_attn.query.forward(&x);
            let (mk, mv) = &memory.cross_kv[l];
            let mask = AttnMask {
                causal: false,
                query_offset: 0,
                key_valid: memory.valid.as_deref(),
            };
            let (ctx, _) = attention(&qc, mk.view(), mv.view(), heads, mask);
            let c = layer.cross_attn.output.forward(&ctx);
            x = layer.cross_attn_norm.apply(&(&x + &c));

            let f = layer.ff_out.forward(&gelu(&layer.ff_in.forward(&x)));
            x = layer.ff_norm.apply(&(&x + &f));
        }
        for (state, t) in states.iter_mut().zip(tokens) {
            state.len += t.len();
        }
        let last: Vec<usize> = spans.iter().map(|span| span.end - 1).collect();
        let logits = self.project(&x.select(Axis(0), &last));
        Ok(logits.rows().into_iter().map(|r| r.to_owned()).collect())
    }
}

/// `d = softmax(row) - onehot(target)`.
fn softmax_minus_onehot(row: &ArrayView1<f64>, drow: &mut ndarray::ArrayViewMut1<f64>, lse: f64, target: usize) {
    for (d, &v) in drow.iter_mut().zip(row.iter()) {
        *d = (v - lse).exp();
    }
    drow[target] -= 1.0;
}
