use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::EncoderConfig;

/// Hyperparameters for both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Pre-training intent loss weight.
    pub lambda1: f64,
    /// Pre-training contrastive loss weight.
    pub lambda2: f64,
    /// Fine-tuning intent loss weight.
    pub lambda3: f64,
    /// Fine-tuning slot loss weight.
    pub lambda4: f64,
    /// Fine-tuning contrastive loss weight.
    pub lambda5: f64,
    pub tau: f64,
    pub k: usize,
    pub intent_threshold: f64,
    pub max_sequence_length: usize,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Run word-level pre-training before fine-tuning.
    pub pretrain: bool,
    /// Let roles follow predictions instead of label equality.
    pub role_switching: bool,
    /// Weight pairs by predicted probabilities.
    pub prediction_aware: bool,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub fusion_heads: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 1.0,
            lambda4: 1.0,
            lambda5: 0.5,
            tau: 0.1,
            k: 5,
            intent_threshold: 0.5,
            max_sequence_length: 50,
            batch_size: 64,
            pretrain_epochs: 3,
            finetune_epochs: 10,
            learning_rate: 1e-3,
            dropout: 0.1,
            seed: 0,
            pretrain: true,
            role_switching: true,
            prediction_aware: true,
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            fusion_heads: 4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| TrainError::Config {
        key: key.to_owned(),
        reason: format!("cannot parse {value:?}: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, TrainError> {
    match value.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(TrainError::Config {
            key: key.to_owned(),
            reason: format!("expected a boolean, got {other:?}"),
        }),
    }
}

impl TrainingConfig {
    pub const KEYS: [&'static str; 23] = [
        "lambda1",
        "lambda2",
        "lambda3",
        "lambda4",
        "lambda5",
        "tau",
        "k",
        "intent_threshold",
        "max_sequence_length",
        "batch_size",
        "pretrain_epochs",
        "finetune_epochs",
        "learning_rate",
        "dropout",
        "seed",
        "pretrain",
        "role_switching",
        "prediction_aware",
        "d_model",
        "layers",
        "heads",
        "ff_dim",
        "fusion_heads",
    ];

    /// Sets one field by name. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        match key {
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lambda3" => self.lambda3 = parse(key, value)?,
            "lambda4" => self.lambda4 = parse(key, value)?,
            "lambda5" => self.lambda5 = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "intent_threshold" => self.intent_threshold = parse(key, value)?,
            "max_sequence_length" => self.max_sequence_length = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "pretrain" => self.pretrain = parse_bool(key, value)?,
            "role_switching" => self.role_switching = parse_bool(key, value)?,
            "prediction_aware" => self.prediction_aware = parse_bool(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ff_dim" => self.ff_dim = parse(key, value)?,
            "fusion_heads" => self.fusion_heads = parse(key, value)?,
            _ => {
                return Err(TrainError::Config {
                    key: key.to_owned(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Every field as `(key, value)` in [`Self::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let v = [
            self.lambda1.to_string(),
            self.lambda2.to_string(),
            self.lambda3.to_string(),
            self.lambda4.to_string(),
            self.lambda5.to_string(),
            self.tau.to_string(),
            self.k.to_string(),
            self.intent_threshold.to_string(),
            self.max_sequence_length.to_string(),
            self.batch_size.to_string(),
            self.pretrain_epochs.to_string(),
            self.finetune_epochs.to_string(),
            self.learning_rate.to_string(),
            self.dropout.to_string(),
            self.seed.to_string(),
            self.pretrain.to_string(),
            self.role_switching.to_string(),
            self.prediction_aware.to_string(),
            self.d_model.to_string(),
            self.layers.to_string(),
            self.heads.to_string(),
            self.ff_dim.to_string(),
            self.fusion_heads.to_string(),
        ];
        Self::KEYS.into_iter().zip(v).collect()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |key: &str, reason: &str| {
            Err(TrainError::Config {
                key: key.to_owned(),
                reason: reason.to_owned(),
            })
        };
        for (key, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(key, "must be a non-negative number");
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau", "must be positive");
        }
        if !(self.intent_threshold > 0.0 && self.intent_threshold < 1.0) {
            return fail("intent_threshold", "must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", "must lie in [0, 1)");
        }
        for (key, v) in [
            ("k", self.k),
            ("max_sequence_length", self.max_sequence_length),
            ("batch_size", self.batch_size),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("fusion_heads", self.fusion_heads),
        ] {
            if v == 0 {
                return fail(key, "must be positive");
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return fail("heads", "must divide d_model");
        }
        if !self.d_model.is_multiple_of(self.fusion_heads) {
            return fail("fusion_heads", "must divide d_model");
        }
        if self.lambda5 > 0.0 && self.batch_size < 2 {
            return fail("batch_size", "contrastive fine-tuning needs at least 2 per batch");
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_len: self.max_sequence_length,
            dropout: self.dropout,
        }
    }

    pub fn contrastive_enabled(&self) -> bool {
        self.lambda5 > 0.0
    }

    /// Name of the fine-tuning loss composition.
    pub fn loss_kind(&self) -> &'static str {
        match (self.contrastive_enabled(), self.prediction_aware, self.role_switching) {
            (false, _, _) => "joint",
            (true, false, false) => "cl_fixed",
            (true, false, true) => "cl_switch",
            (true, true, false) => "pacl_fixed",
            (true, true, true) => "pacl_switch",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainingConfig::default();
        c.validate().unwrap();
        let mut d = TrainingConfig {
            seed: 99,
            ..TrainingConfig::default()
        };
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainingConfig::default();
        assert!(matches!(c.set("lamda1", "1"), Err(TrainError::Config { key, .. }) if key == "lamda1"));
        assert!(c.set("k", "x").is_err());
        c.set("lambda3", "-1").unwrap();
        assert!(matches!(c.validate(), Err(TrainError::Config { key, .. }) if key == "lambda3"));
        let c = TrainingConfig {
            batch_size: 1,
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainingConfig {
            batch_size: 1,
            lambda5: 0.0,
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_ok());
    }

    #[test]
    fn loss_kinds() {
        let mut c = TrainingConfig::default();
        assert_eq!(c.loss_kind(), "pacl_switch");
        c.role_switching = false;
        c.prediction_aware = false;
        assert_eq!(c.loss_kind(), "cl_fixed");
        c.lambda5 = 0.0;
        assert_eq!(c.loss_kind(), "joint");
    }
}
