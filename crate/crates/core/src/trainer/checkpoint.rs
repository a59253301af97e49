use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, Stage, TrainError, TrainingConfig};
use crate::corpus::Vocabulary;
use crate::model::{EncoderConfig, Model, TokenVocabulary};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Self-describing snapshot of a model and the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub stage: Stage,
    pub epoch: usize,
    pub encoder: EncoderConfig,
    pub fusion_heads: usize,
    pub tokens: TokenVocabulary,
    pub intents: Vocabulary,
    pub slots: Vocabulary,
    pub config: TrainingConfig,
    pub history: Vec<EpochRecord>,
    pub params: Vec<Tensor>,
}

impl Checkpoint {
    pub fn capture(model: &Model, config: &TrainingConfig, stage: Stage, epoch: usize, history: &[EpochRecord]) -> Self {
        let params = model
            .params
            .ids()
            .map(|id| {
                let v = model.params.get(id);
                Tensor {
                    name: model.params.name(id).to_owned(),
                    rows: v.nrows(),
                    cols: v.ncols(),
                    data: v.iter().copied().collect(),
                }
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            stage,
            epoch,
            encoder: *model.encoder.config(),
            fusion_heads: model.fusion().heads,
            tokens: model.encoder.vocab().clone(),
            intents: model.intent_vocabulary().clone(),
            slots: model.slot_vocabulary().clone(),
            config: config.clone(),
            history: history.to_vec(),
            params,
        }
    }

    /// Rebuilds the model with the stored parameter values.
    pub fn restore(&self) -> Result<Model, TrainError> {
        let bad = |reason: String| TrainError::Checkpoint(reason);
        if self.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", self.format_version)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(
            self.encoder,
            self.tokens.clone(),
            self.intents.clone(),
            self.slots.clone(),
            self.fusion_heads,
            &mut rng,
        )?;
        if model.params.len() != self.params.len() {
            return Err(bad(format!("{} tensors stored, model has {}", self.params.len(), model.params.len())));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for (id, t) in ids.into_iter().zip(&self.params) {
            let target = model.params.get(id);
            if model.params.name(id) != t.name || target.dim() != (t.rows, t.cols) {
                return Err(bad(format!("tensor {} does not match the model layout", t.name)));
            }
            let value = Array2::from_shape_vec((t.rows, t.cols), t.data.clone()).map_err(|e| bad(e.to_string()))?;
            *model.params.get_mut(id) = value;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        serde_json::to_string(self).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}
