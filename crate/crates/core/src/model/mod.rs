//! Joint intent/slot model: an encoder, a multi-label intent head on the
//! sentence vector, a tagging head on token vectors, and the intent-slot
//! fusion layer that produces contrastive representations.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{sigmoid, Graph, ParamId, ParamStore, Var};
use crate::corpus::Vocabulary;

pub mod encoder;
pub mod fusion;

pub use encoder::{EncodedVars, EncoderConfig, Mode, SequenceEncoder, TokenVocabulary, TransformerEncoder};
pub use fusion::{fuse_intent_slot, FusionLayer, FusionOutput, FusionParameters, FusionVars};

use encoder::LinearIds;

pub const DEFAULT_INTENT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Glorot-uniform initialization.
pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

/// Encoder output as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub h_cls: Array1<f64>,
    pub h_slot: Array2<f64>,
}

/// Independent per-intent probabilities; entries need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentProbabilities(pub Vec<f64>);

impl IntentProbabilities {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(logits.iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Intents whose probability reaches `threshold` (inclusive).
pub fn predict_intents(p: &IntentProbabilities, threshold: f64) -> BTreeSet<usize> {
    p.0.iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Graph handles for one utterance's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub cls: Var,
    pub slots: Var,
    /// `1 x |intents|`
    pub intent_logits: Var,
    /// `n x |slots|`
    pub slot_logits: Var,
}

/// Decoded prediction for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: IntentProbabilities,
    pub intents: BTreeSet<String>,
    pub slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel<E> {
    pub encoder: E,
    pub params: ParamStore,
    intent_head: LinearIds,
    slot_head: LinearIds,
    fusion: FusionLayer,
    intents: Vocabulary,
    slots: Vocabulary,
}

/// The model with the built-in transformer encoder.
pub type Model = JointModel<TransformerEncoder>;

impl Model {
    pub fn new(
        config: EncoderConfig,
        tokens: TokenVocabulary,
        intents: Vocabulary,
        slots: Vocabulary,
        fusion_heads: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self, ModelError> {
        let mut params = ParamStore::new();
        let encoder = TransformerEncoder::new(config, tokens, &mut params, rng)?;
        JointModel::with_encoder(encoder, params, intents, slots, fusion_heads, rng)
    }
}

impl<E: SequenceEncoder> JointModel<E> {
    /// Adds classification heads and the fusion layer to an encoder whose
    /// tensors already live in `params`.
    pub fn with_encoder(
        encoder: E,
        mut params: ParamStore,
        intents: Vocabulary,
        slots: Vocabulary,
        fusion_heads: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self, ModelError> {
        let d = encoder.dim();
        if intents.is_empty() || slots.is_empty() {
            return Err(ModelError::ShapeMismatch("empty label vocabulary".into()));
        }
        let intent_head = LinearIds::new(&mut params, "intent_head", d, intents.len(), rng);
        let slot_head = LinearIds::new(&mut params, "slot_head", d, slots.len(), rng);
        let fusion = FusionLayer::new(&mut params, d, fusion_heads, rng)?;
        Ok(Self {
            encoder,
            params,
            intent_head,
            slot_head,
            fusion,
            intents,
            slots,
        })
    }

    pub fn intent_vocabulary(&self) -> &Vocabulary {
        &self.intents
    }

    pub fn slot_vocabulary(&self) -> &Vocabulary {
        &self.slots
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn fusion(&self) -> &FusionLayer {
        &self.fusion
    }

    pub fn intent_head_ids(&self) -> (ParamId, ParamId) {
        (self.intent_head.weight, self.intent_head.bias)
    }

    pub fn slot_head_ids(&self) -> (ParamId, ParamId) {
        (self.slot_head.weight, self.slot_head.bias)
    }

    pub fn forward(&self, g: &mut Graph, tokens: &[String], mode: &mut Mode) -> Result<ForwardVars, ModelError> {
        let enc = self.encoder.encode(g, tokens, mode)?;
        let intent_logits = self.intent_head.forward(g, enc.cls);
        let slot_logits = self.slot_head.forward(g, enc.slots);
        Ok(ForwardVars {
            cls: enc.cls,
            slots: enc.slots,
            intent_logits,
            slot_logits,
        })
    }

    /// Contrastive representation `h_intent'`; gradients reach the encoder.
    pub fn representation(&self, g: &mut Graph, cls: Var, slots: Var) -> Result<Var, ModelError> {
        let vars = self.fusion.vars(g);
        Ok(fuse_intent_slot(g, cls, slots, &vars, self.fusion.heads)?.representation)
    }

    /// Intent logits of `h_intent'` for the auxiliary loss. Only the fusion
    /// layer receives gradients: encoder outputs are detached and the intent
    /// classifier is read as a constant.
    pub fn auxiliary_intent_logits(&self, g: &mut Graph, cls: Var, slots: Var) -> Result<Var, ModelError> {
        let cls = g.detach(cls);
        let slots = g.detach(slots);
        let rep = self.representation(g, cls, slots)?;
        let w = g.frozen_param(self.intent_head.weight);
        let b = g.frozen_param(self.intent_head.bias);
        let y = g.matmul(rep, w);
        Ok(g.add_row(y, b))
    }

    /// Evaluation-mode encoding.
    pub fn encode(&self, tokens: &[String]) -> Result<EncoderOutput, ModelError> {
        let mut g = Graph::new(&self.params);
        let enc = self.encoder.encode(&mut g, tokens, &mut Mode::Eval)?;
        Ok(EncoderOutput {
            h_cls: g.value(enc.cls).row(0).to_owned(),
            h_slot: g.value(enc.slots).clone(),
        })
    }

    /// Training-mode encoding with dropout drawn from `rng`.
    pub fn encode_train(&self, tokens: &[String], rng: &mut dyn RngCore) -> Result<EncoderOutput, ModelError> {
        let mut g = Graph::new(&self.params);
        let enc = self.encoder.encode(&mut g, tokens, &mut Mode::Train(rng))?;
        Ok(EncoderOutput {
            h_cls: g.value(enc.cls).row(0).to_owned(),
            h_slot: g.value(enc.slots).clone(),
        })
    }

    pub fn intent_logits(&self, h: &Array1<f64>) -> Result<Array1<f64>, ModelError> {
        let w = self.params.get(self.intent_head.weight);
        if h.len() != w.nrows() {
            return Err(ModelError::ShapeMismatch(format!("h has {} entries, expected {}", h.len(), w.nrows())));
        }
        Ok(h.dot(w) + self.params.get(self.intent_head.bias).row(0))
    }

    pub fn slot_logits(&self, h_slot: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        let w = self.params.get(self.slot_head.weight);
        if h_slot.ncols() != w.nrows() {
            return Err(ModelError::ShapeMismatch(format!(
                "H_slot has width {}, expected {}",
                h_slot.ncols(),
                w.nrows()
            )));
        }
        Ok(h_slot.dot(w) + self.params.get(self.slot_head.bias))
    }

    /// Evaluation-mode prediction: thresholded intents and argmax slot tags.
    pub fn predict(&self, tokens: &[String], threshold: f64) -> Result<Prediction, ModelError> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, tokens, &mut Mode::Eval)?;
        let logits: Vec<f64> = g.value(out.intent_logits).iter().copied().collect();
        let probabilities = IntentProbabilities::from_logits(&logits);
        let intents = predict_intents(&probabilities, threshold)
            .into_iter()
            .map(|j| self.intents.label(j).to_owned())
            .collect();
        let slots = g
            .value(out.slot_logits)
            .rows()
            .into_iter()
            .map(|row| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                    .0;
                self.slots.label(best).to_owned()
            })
            .collect();
        Ok(Prediction {
            probabilities,
            intents,
            slots,
        })
    }

    /// Evaluation-mode intent probabilities only.
    pub fn intent_probabilities(&self, tokens: &[String]) -> Result<IntentProbabilities, ModelError> {
        let mut g = Graph::new(&self.params);
        let enc = self.encoder.encode(&mut g, tokens, &mut Mode::Eval)?;
        let logits = self.intent_head.forward(&mut g, enc.cls);
        let logits: Vec<f64> = g.value(logits).iter().copied().collect();
        Ok(IntentProbabilities::from_logits(&logits))
    }

    /// Evaluation-mode `h_intent'`.
    pub fn contrastive_representation(&self, tokens: &[String]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new(&self.params);
        let enc = self.encoder.encode(&mut g, tokens, &mut Mode::Eval)?;
        let rep = self.representation(&mut g, enc.cls, enc.slots)?;
        Ok(g.value(rep).iter().copied().collect())
    }
}
