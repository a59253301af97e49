//! Sequence encoders producing a sentence vector and per-token vectors.

use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{xavier, ModelError};
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::corpus::Vocabulary;

/// Forward-pass mode. Training mode draws dropout masks from the given RNG.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Graph handles for one encoded utterance: `cls` is `1 x d`, `slots` is `n x d`.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub cls: Var,
    pub slots: Var,
}

/// Seam for plugging in any encoder that yields `(h_cls, H_slot)`.
///
/// Implementations register their tensors in the model's [`ParamStore`] at
/// construction and look them up through the graph during `encode`.
pub trait SequenceEncoder {
    fn dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, g: &mut Graph, tokens: &[String], mode: &mut Mode) -> Result<EncodedVars, ModelError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            max_len: 50,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::ShapeMismatch(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.ff_dim == 0 || self.max_len == 0 {
            return Err(ModelError::ShapeMismatch("ff_dim and max_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::ShapeMismatch(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Token ids: `0` is the sentence token, `1` unknown, then the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocabulary {
    words: Vocabulary,
}

impl TokenVocabulary {
    pub const CLS: usize = 0;
    pub const UNK: usize = 1;
    const RESERVED: usize = 2;

    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            words: Vocabulary::new(words),
        }
    }

    pub fn id(&self, word: &str) -> usize {
        self.words.index(word).map_or(Self::UNK, |i| i + Self::RESERVED)
    }

    pub fn len(&self) -> usize {
        self.words.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[String] {
        self.words.items()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearIds {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), xavier(d_in, d_out, rng)),
            bias: store.add(format!("{name}.bias"), Array2::zeros((1, d_out))),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

impl NormIds {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Array2::ones((1, d))),
            bias: store.add(format!("{name}.bias"), Array2::zeros((1, d))),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm_rows(x, gain, bias, 1e-5)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BlockIds {
    attn_norm: NormIds,
    query: LinearIds,
    key: LinearIds,
    value: LinearIds,
    output: LinearIds,
    ff_norm: NormIds,
    ff_in: LinearIds,
    ff_out: LinearIds,
}

/// Pre-norm transformer encoder with learned positional embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    config: EncoderConfig,
    vocab: TokenVocabulary,
    token_embedding: ParamId,
    position_embedding: ParamId,
    blocks: Vec<BlockIds>,
    final_norm: NormIds,
}

pub(crate) fn dropout(g: &mut Graph, x: Var, p: f64, mode: &mut Mode) -> Var {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 - p;
            let (r, c) = g.shape(x);
            let mask = Array2::from_shape_fn((r, c), |_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            g.mask(x, mask)
        }
        _ => x,
    }
}

/// Multi-head scaled dot-product attention of `queries` over `keys`/`values`,
/// all already projected. Returns the concatenated head outputs and each
/// head's attention matrix.
pub(crate) fn multi_head_attention(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    values: Var,
    heads: usize,
) -> (Var, Vec<Var>) {
    let d = g.shape(queries).1;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (q, k, v) = if heads == 1 {
            (queries, keys, values)
        } else {
            (
                g.slice_cols(queries, lo, hi),
                g.slice_cols(keys, lo, hi),
                g.slice_cols(values, lo, hi),
            )
        };
        let scores = g.matmul_t(q, k);
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores);
        outputs.push(g.matmul(attn, v));
        weights.push(attn);
    }
    let out = if heads == 1 { outputs[0] } else { g.concat_cols(&outputs) };
    (out, weights)
}

impl TransformerEncoder {
    pub fn new(config: EncoderConfig, vocab: TokenVocabulary, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let token_embedding = store.add("encoder.token_embedding", xavier(vocab.len(), d, rng));
        let position_embedding = store.add("encoder.position_embedding", xavier(config.max_len + 1, d, rng));
        let blocks = (0..config.layers)
            .map(|l| {
                let n = |s: &str| format!("encoder.block{l}.{s}");
                BlockIds {
                    attn_norm: NormIds::new(store, &n("attn_norm"), d),
                    query: LinearIds::new(store, &n("query"), d, d, rng),
                    key: LinearIds::new(store, &n("key"), d, d, rng),
                    value: LinearIds::new(store, &n("value"), d, d, rng),
                    output: LinearIds::new(store, &n("output"), d, d, rng),
                    ff_norm: NormIds::new(store, &n("ff_norm"), d),
                    ff_in: LinearIds::new(store, &n("ff_in"), d, config.ff_dim, rng),
                    ff_out: LinearIds::new(store, &n("ff_out"), config.ff_dim, d, rng),
                }
            })
            .collect();
        let final_norm = NormIds::new(store, "encoder.final_norm", d);
        Ok(Self {
            config,
            vocab,
            token_embedding,
            position_embedding,
            blocks,
            final_norm,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &TokenVocabulary {
        &self.vocab
    }
}

impl SequenceEncoder for TransformerEncoder {
    fn dim(&self) -> usize {
        self.config.d_model
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn encode(&self, g: &mut Graph, tokens: &[String], mode: &mut Mode) -> Result<EncodedVars, ModelError> {
        let n = tokens.len();
        if n == 0 {
            return Err(ModelError::EmptySequence);
        }
        if n > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: n,
                max: self.config.max_len,
            });
        }
        let p = self.config.dropout;
        let ids: Vec<usize> = std::iter::once(TokenVocabulary::CLS)
            .chain(tokens.iter().map(|t| self.vocab.id(t)))
            .collect();
        let positions: Vec<usize> = (0..=n).collect();
        let tok_table = g.param(self.token_embedding);
        let pos_table = g.param(self.position_embedding);
        let tok = g.gather_rows(tok_table, &ids);
        let pos = g.gather_rows(pos_table, &positions);
        let x = g.add(tok, pos);
        let mut x = dropout(g, x, p, mode);

        for block in &self.blocks {
            let h = block.attn_norm.forward(g, x);
            let q = block.query.forward(g, h);
            let k = block.key.forward(g, h);
            let v = block.value.forward(g, h);
            let (attn, _) = multi_head_attention(g, q, k, v, self.config.heads);
            let attn = block.output.forward(g, attn);
            let attn = dropout(g, attn, p, mode);
            x = g.add(x, attn);

            let h = block.ff_norm.forward(g, x);
            let h = block.ff_in.forward(g, h);
            let h = g.gelu(h);
            let h = block.ff_out.forward(g, h);
            let h = dropout(g, h, p, mode);
            x = g.add(x, h);
        }
        let x = self.final_norm.forward(g, x);
        Ok(EncodedVars {
            cls: g.slice_rows(x, 0, 1),
            slots: g.slice_rows(x, 1, n + 1),
        })
    }
}
