//! Word-level pre-training, contrastive fine-tuning, evaluation and logs.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Graph, Var};
use crate::contrastive::{
    batch_weights, build_batch, cl_loss, pacl_loss, ContrastiveError, IntentSet, PredictionState, RoleRule,
};
use crate::corpus::{Corpus, Utterance, Vocabulary};
use crate::metrics::{evaluate, EvalRecord, MetricsError};
use crate::model::{Mode, Model, ModelError, TokenVocabulary};
use crate::wordlevel::WordLevelExample;

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{Checkpoint, Tensor, FORMAT_VERSION};
pub use config::TrainingConfig;
pub use optim::Adam;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("config key {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("training example {index} has {len} tokens, more than the maximum of {max}")]
    SequenceTooLong { index: usize, len: usize, max: usize },
    #[error("label {0:?} is not in the training vocabulary")]
    UnknownLabel(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Pretrain,
    Finetune,
}

/// One optimizer step. Absent terms are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "L_ID")]
    pub l_id: f64,
    #[serde(rename = "L_SF")]
    pub l_sf: Option<f64>,
    #[serde(rename = "L_CL_or_PACL")]
    pub l_contrastive: Option<f64>,
    #[serde(rename = "L_aux")]
    pub l_aux: Option<f64>,
    pub loss: f64,
    pub loss_kind: String,
}

/// Validation metrics after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub ic_acc: f64,
    pub sf_f1: f64,
    pub overall_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageLog {
    pub steps: Vec<StepRecord>,
    pub history: Vec<EpochRecord>,
    /// Parameter checksum after each epoch.
    pub checksums: Vec<u64>,
}

/// Called after every epoch with the updated model.
pub type EpochObserver<'a> = dyn FnMut(&Model, &EpochRecord) -> Result<(), TrainError> + 'a;

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Trailing moving average.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window.max(1));
            let w = &values[lo..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

const INIT_STREAM: u64 = 0;
const PRETRAIN_STREAMS: u64 = 10;
const FINETUNE_STREAMS: u64 = 20;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Separate random streams so that enabling one component never shifts the
/// draws of another.
struct Streams {
    shuffle: ChaCha8Rng,
    dropout: ChaCha8Rng,
    batches: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64, base: u64) -> Self {
        Self {
            shuffle: stream(seed, base),
            dropout: stream(seed, base + 1),
            batches: stream(seed, base + 2),
        }
    }
}

/// A fresh model sized by `config` with vocabularies from the train split.
pub fn build_model(corpus: &Corpus, config: &TrainingConfig) -> Result<Model, TrainError> {
    config.validate()?;
    if corpus.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let tokens = TokenVocabulary::new(corpus.train.iter().flat_map(|u| u.tokens().iter().cloned()));
    let mut rng = stream(config.seed, INIT_STREAM);
    Ok(Model::new(
        config.encoder_config(),
        tokens,
        corpus.intent_vocabulary().clone(),
        corpus.slot_vocabulary().clone(),
        config.fusion_heads,
        &mut rng,
    )?)
}

pub fn intent_indices(vocab: &Vocabulary, intents: &BTreeSet<String>) -> Result<IntentSet, TrainError> {
    intents
        .iter()
        .map(|i| vocab.index(i).ok_or_else(|| TrainError::UnknownLabel(i.clone())))
        .collect()
}

fn multi_hot(sets: &[IntentSet], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((sets.len(), width));
    for (r, set) in sets.iter().enumerate() {
        for &j in set {
            out[[r, j]] = 1.0;
        }
    }
    out
}

/// Mean binary cross-entropy of `logits` (`b x |intents|`) against multi-hot gold sets.
pub fn intent_loss(g: &mut Graph, logits: Var, gold: &[IntentSet]) -> Result<Var, TrainError> {
    let (rows, width) = g.shape(logits);
    if rows != gold.len() || gold.iter().flatten().any(|&j| j >= width) {
        return Err(ModelError::ShapeMismatch(format!("{rows}x{width} intent logits vs {} gold sets", gold.len())).into());
    }
    Ok(g.bce_with_logits(logits, multi_hot(gold, width)))
}

/// Mean categorical cross-entropy over tokens.
pub fn slot_loss(g: &mut Graph, logits: Var, gold: &[usize]) -> Result<Var, TrainError> {
    let (rows, width) = g.shape(logits);
    if rows != gold.len() || gold.iter().any(|&t| t >= width) {
        return Err(ModelError::ShapeMismatch(format!("{rows}x{width} slot logits vs {} tags", gold.len())).into());
    }
    Ok(g.cross_entropy_rows(logits, gold))
}

fn check_lengths<'a>(seqs: impl Iterator<Item = &'a [String]>, max: usize) -> Result<(), TrainError> {
    for (index, s) in seqs.enumerate() {
        if s.len() > max {
            return Err(TrainError::SequenceTooLong { index, len: s.len(), max });
        }
    }
    Ok(())
}

/// Predictions of `model` on `utterances`, scored against their gold labels.
pub fn evaluate_split(model: &Model, utterances: &[Utterance], threshold: f64) -> Result<EvalRecord, TrainError> {
    let predictions = utterances
        .par_iter()
        .map(|u| model.predict(u.tokens(), threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let (pi, pt): (Vec<_>, Vec<_>) = predictions.into_iter().map(|p| (p.intents, p.slots)).unzip();
    let gi: Vec<_> = utterances.iter().map(|u| u.intents().clone()).collect();
    let gt: Vec<_> = utterances.iter().map(|u| u.slots().to_vec()).collect();
    Ok(evaluate(&pi, &gi, &pt, &gt)?)
}

/// Evaluation-mode prediction states for every example.
pub fn refresh_states<S: AsRef<[String]> + Sync>(
    model: &Model,
    inputs: &[S],
    gold: &[IntentSet],
    threshold: f64,
) -> Result<Vec<PredictionState>, TrainError> {
    inputs
        .par_iter()
        .zip(gold.par_iter())
        .map(|(tokens, gold)| {
            let p = model.intent_probabilities(tokens.as_ref())?;
            Ok(PredictionState::new(p, gold.clone(), threshold)?)
        })
        .collect()
}

fn epoch_record(
    model: &Model,
    stage: Stage,
    epoch: usize,
    losses: &[f64],
    validation: &[Utterance],
    config: &TrainingConfig,
) -> Result<EpochRecord, TrainError> {
    let eval = evaluate_split(model, validation, config.intent_threshold)?;
    Ok(EpochRecord {
        stage,
        epoch,
        train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
        ic_acc: eval.ic_accuracy,
        sf_f1: eval.sf_f1,
        overall_acc: eval.overall_accuracy,
    })
}

/// Stage one: intent classification and label-equality contrastive learning
/// on intent logits over word-level examples.
pub fn pretrain(
    model: &mut Model,
    data: &[WordLevelExample],
    validation: &[Utterance],
    config: &TrainingConfig,
    observer: &mut EpochObserver,
) -> Result<StageLog, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_lengths(data.iter().map(|e| e.tokens.as_slice()), config.max_sequence_length)?;
    let gold = data
        .iter()
        .map(|e| intent_indices(model.intent_vocabulary(), &e.intents))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = Streams::new(config.seed, PRETRAIN_STREAMS);
    let mut opt = Adam::new(config.learning_rate);
    let mut log = StageLog::default();
    let use_cl = config.lambda2 > 0.0;
    let kind = if use_cl { "pretrain_cl" } else { "pretrain_intent" };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;

    for epoch in 1..=config.pretrain_epochs {
        order.shuffle(&mut rng.shuffle);
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch_gold: Vec<IntentSet> = chunk.iter().map(|&i| gold[i].clone()).collect();
            let (record, grads) = {
                let mut g = Graph::new(&model.params);
                let mut logits = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let out = model.forward(&mut g, &data[i].tokens, &mut Mode::Train(&mut rng.dropout))?;
                    logits.push(out.intent_logits);
                }
                let stacked = g.concat_rows(&logits);
                let l_id = intent_loss(&mut g, stacked, &batch_gold)?;
                let mut terms = vec![(config.lambda1, l_id)];
                let mut l_cl = None;
                if use_cl {
                    let all: Vec<usize> = (0..chunk.len()).collect();
                    let cb = build_batch(&batch_gold, &all, &[], config.k, RoleRule::LabelEquality, rng.batches.gen())?;
                    let mut rows = logits.clone();
                    for &src in &cb.duplicates {
                        let out = model.forward(&mut g, &data[chunk[src]].tokens, &mut Mode::Train(&mut rng.dropout))?;
                        rows.push(out.intent_logits);
                    }
                    let reps = g.concat_rows(&rows);
                    let loss = cl_loss(&mut g, reps, &cb, config.tau)?;
                    l_cl = Some(g.scalar(loss));
                    terms.push((config.lambda2, loss));
                }
                let total = g.weighted_sum(&terms);
                step += 1;
                let record = StepRecord {
                    stage: Stage::Pretrain,
                    epoch,
                    step,
                    l_id: g.scalar(l_id),
                    l_sf: None,
                    l_contrastive: l_cl,
                    l_aux: None,
                    loss: g.scalar(total),
                    loss_kind: kind.to_owned(),
                };
                (record, g.backward(total))
            };
            opt.step(&mut model.params, &grads);
            losses.push(record.loss);
            log.steps.push(record);
        }
        let rec = epoch_record(model, Stage::Pretrain, epoch, &losses, validation, config)?;
        log.checksums.push(model.params.checksum());
        observer(model, &rec)?;
        log.history.push(rec);
    }
    Ok(log)
}

/// Stage two: joint intent and slot losses plus, when `lambda5 > 0`, the
/// contrastive loss on fused representations and the auxiliary intent loss
/// that trains the fusion layer.
pub fn finetune(
    model: &mut Model,
    train: &[Utterance],
    validation: &[Utterance],
    config: &TrainingConfig,
    observer: &mut EpochObserver,
) -> Result<StageLog, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_lengths(train.iter().map(|u| u.tokens()), config.max_sequence_length)?;
    let gold = train
        .iter()
        .map(|u| intent_indices(model.intent_vocabulary(), u.intents()))
        .collect::<Result<Vec<_>, _>>()?;
    let tags = train
        .iter()
        .map(|u| {
            u.slots()
                .iter()
                .map(|t| model.slot_vocabulary().index(t).ok_or_else(|| TrainError::UnknownLabel(t.clone())))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<&[String]> = train.iter().map(|u| u.tokens()).collect();
    let rule = if config.role_switching {
        RoleRule::Switching
    } else {
        RoleRule::LabelEquality
    };
    let contrastive = config.contrastive_enabled();
    let mut rng = Streams::new(config.seed, FINETUNE_STREAMS);
    let mut opt = Adam::new(config.learning_rate);
    let mut log = StageLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    for epoch in 1..=config.finetune_epochs {
        let states = if contrastive {
            refresh_states(model, &inputs, &gold, config.intent_threshold)?
        } else {
            Vec::new()
        };
        order.shuffle(&mut rng.shuffle);
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch_gold: Vec<IntentSet> = chunk.iter().map(|&i| gold[i].clone()).collect();
            let batch_tags: Vec<usize> = chunk.iter().flat_map(|&i| tags[i].iter().copied()).collect();
            let (record, grads) = {
                let mut g = Graph::new(&model.params);
                let mut outs = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    outs.push(model.forward(&mut g, inputs[i], &mut Mode::Train(&mut rng.dropout))?);
                }
                let intent_logits: Vec<Var> = outs.iter().map(|o| o.intent_logits).collect();
                let slot_logits: Vec<Var> = outs.iter().map(|o| o.slot_logits).collect();
                let il = g.concat_rows(&intent_logits);
                let sl = g.concat_rows(&slot_logits);
                let l_id = intent_loss(&mut g, il, &batch_gold)?;
                let l_sf = slot_loss(&mut g, sl, &batch_tags)?;
                let mut terms = vec![(config.lambda3, l_id), (config.lambda4, l_sf)];
                let (mut l_c, mut l_aux) = (None, None);
                if contrastive {
                    let batch_states: Vec<PredictionState> = chunk.iter().map(|&i| states[i].clone()).collect();
                    let all: Vec<usize> = (0..chunk.len()).collect();
                    let cb = build_batch(&batch_gold, &all, &batch_states, config.k, rule, rng.batches.gen())?;
                    let mut rows = Vec::with_capacity(cb.rows());
                    for o in &outs {
                        rows.push(model.representation(&mut g, o.cls, o.slots)?);
                    }
                    for &src in &cb.duplicates {
                        let again = model.forward(&mut g, inputs[chunk[src]], &mut Mode::Train(&mut rng.dropout))?;
                        rows.push(model.representation(&mut g, again.cls, again.slots)?);
                    }
                    let reps = g.concat_rows(&rows);
                    let loss = if config.prediction_aware {
                        let weights = batch_weights(&cb, &batch_gold, &batch_states);
                        pacl_loss(&mut g, reps, &cb, &weights, config.tau)?
                    } else {
                        cl_loss(&mut g, reps, &cb, config.tau)?
                    };
                    let mut aux_logits = Vec::with_capacity(outs.len());
                    for o in &outs {
                        aux_logits.push(model.auxiliary_intent_logits(&mut g, o.cls, o.slots)?);
                    }
                    let al = g.concat_rows(&aux_logits);
                    let aux = intent_loss(&mut g, al, &batch_gold)?;
                    l_c = Some(g.scalar(loss));
                    l_aux = Some(g.scalar(aux));
                    terms.push((config.lambda5, loss));
                    terms.push((1.0, aux));
                }
                let total = g.weighted_sum(&terms);
                step += 1;
                let record = StepRecord {
                    stage: Stage::Finetune,
                    epoch,
                    step,
                    l_id: g.scalar(l_id),
                    l_sf: Some(g.scalar(l_sf)),
                    l_contrastive: l_c,
                    l_aux,
                    loss: g.scalar(total),
                    loss_kind: config.loss_kind().to_owned(),
                };
                (record, g.backward(total))
            };
            opt.step(&mut model.params, &grads);
            losses.push(record.loss);
            log.steps.push(record);
        }
        let rec = epoch_record(model, Stage::Finetune, epoch, &losses, validation, config)?;
        log.checksums.push(model.params.checksum());
        observer(model, &rec)?;
        log.history.push(rec);
    }
    Ok(log)
}

/// Result of a full two-stage run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub pretrain: Option<StageLog>,
    pub finetune: StageLog,
    pub test: EvalRecord,
}

/// Builds a model, optionally pre-trains it on `wordlevel`, fine-tunes it on
/// the train split and scores the test split.
pub fn run(corpus: &Corpus, wordlevel: &[WordLevelExample], config: &TrainingConfig) -> Result<RunOutcome, TrainError> {
    let mut model = build_model(corpus, config)?;
    let mut quiet = |_: &Model, _: &EpochRecord| Ok(());
    let pretrain_log = if config.pretrain {
        Some(pretrain(&mut model, wordlevel, &corpus.validation, config, &mut quiet)?)
    } else {
        None
    };
    let finetune_log = finetune(&mut model, &corpus.train, &corpus.validation, config, &mut quiet)?;
    let test = evaluate_split(&model, &corpus.test, config.intent_threshold)?;
    Ok(RunOutcome {
        model,
        pretrain: pretrain_log,
        finetune: finetune_log,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_loss_closed_form() {
        let store = crate::autograd::ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.input(Array2::zeros((1, 3)));
        let l = intent_loss(&mut g, logits, &[[1].into_iter().collect()]).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(intent_loss(&mut g, logits, &[[3].into_iter().collect()]).is_err());
    }

    #[test]
    fn slot_loss_closed_form() {
        let store = crate::autograd::ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.input(Array2::from_elem((4, 7), 0.3));
        let l = slot_loss(&mut g, logits, &[0, 3, 6, 2]).unwrap();
        assert!((g.scalar(l) - 7f64.ln()).abs() < 1e-12);
        let confident = g.input(ndarray::array![[50.0, -50.0], [-50.0, 50.0]]);
        let l = slot_loss(&mut g, confident, &[0, 1]).unwrap();
        assert!(g.scalar(l) < 1e-12);
        assert!(slot_loss(&mut g, confident, &[0]).is_err());
    }

    #[test]
    fn smoothing() {
        assert_eq!(smoothed(&[3.0, 1.0, 2.0, 6.0], 3), vec![3.0, 2.0, 2.0, 3.0]);
    }
}
