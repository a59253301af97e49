//! Prediction-aware contrastive learning: per-anchor prediction states,
//! dynamic role assignment, K-capped batch construction with self-duplication,
//! pair weighting, and the weighted/unweighted contrastive losses.
//!
//! Intents are identified by their index in the intent vocabulary.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{softmax, Graph, ParamStore, Var};
use crate::model::{predict_intents, IntentProbabilities};

pub type IntentSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContrastiveError {
    #[error("empty intent label set")]
    EmptyLabelSet,
    #[error("representation {0} has zero norm")]
    ZeroVector(usize),
    #[error("intent index {index} outside a vocabulary of {len}")]
    IntentOutOfRange { index: usize, len: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// What the model currently gets right about one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionState {
    pub probabilities: IntentProbabilities,
    pub gold: IntentSet,
    pub predicted: IntentSet,
    /// `gold ∩ predicted`
    pub correct: IntentSet,
    /// `gold \ predicted`
    pub incorrect: IntentSet,
}

impl PredictionState {
    pub fn new(probabilities: IntentProbabilities, gold: IntentSet, threshold: f64) -> Result<Self, ContrastiveError> {
        if gold.is_empty() {
            return Err(ContrastiveError::EmptyLabelSet);
        }
        if let Some(&index) = gold.iter().find(|&&j| j >= probabilities.len()) {
            return Err(ContrastiveError::IntentOutOfRange {
                index,
                len: probabilities.len(),
            });
        }
        let predicted = predict_intents(&probabilities, threshold);
        let correct = gold.intersection(&predicted).copied().collect();
        let incorrect = gold.difference(&predicted).copied().collect();
        Ok(Self {
            probabilities,
            gold,
            predicted,
            correct,
            incorrect,
        })
    }

    /// Share of predicted intents that are gold, `0` when nothing is predicted.
    pub fn alpha(&self) -> f64 {
        self.correct.len() as f64 / self.predicted.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Positive,
    Negative,
}

/// How candidates are sorted into positives and negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleRule {
    /// Roles follow the anchor's current predictions.
    Switching,
    /// Positive iff the label sets are equal.
    LabelEquality,
}

/// Role of a candidate relative to an anchor. A candidate sharing intents
/// with the anchor is positive while any shared intent is still mispredicted
/// for the anchor, and negative once all of them are learned.
pub fn assign_role(state: &PredictionState, anchor_gold: &IntentSet, candidate_gold: &IntentSet) -> Result<Role, ContrastiveError> {
    if anchor_gold.is_empty() || candidate_gold.is_empty() {
        return Err(ContrastiveError::EmptyLabelSet);
    }
    if candidate_gold == anchor_gold {
        return Ok(Role::Positive);
    }
    let mut shared = candidate_gold.intersection(anchor_gold).peekable();
    if shared.peek().is_none() {
        return Ok(Role::Negative);
    }
    if shared.any(|j| state.incorrect.contains(j)) {
        Ok(Role::Positive)
    } else {
        Ok(Role::Negative)
    }
}

pub fn fixed_role(anchor_gold: &IntentSet, candidate_gold: &IntentSet) -> Result<Role, ContrastiveError> {
    if anchor_gold.is_empty() || candidate_gold.is_empty() {
        return Err(ContrastiveError::EmptyLabelSet);
    }
    Ok(if anchor_gold == candidate_gold {
        Role::Positive
    } else {
        Role::Negative
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl AnchorSet {
    /// `H(i)`: positives first, then negatives.
    pub fn candidates(&self) -> Vec<usize> {
        self.positives.iter().chain(&self.negatives).copied().collect()
    }
}

/// Anchors with their sampled positives and negatives.
///
/// Indices `0..items` refer to the mini-batch members; index `items + t`
/// refers to a second dropout pass over member `duplicates[t]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub items: usize,
    pub anchors: Vec<AnchorSet>,
    pub duplicates: Vec<usize>,
}

impl ContrastiveBatch {
    /// Number of representation rows the losses expect.
    pub fn rows(&self) -> usize {
        self.items + self.duplicates.len()
    }

    pub fn duplicated_flags(&self) -> Vec<bool> {
        (0..self.rows()).map(|i| i >= self.items).collect()
    }

    /// The batch member whose input produced representation row `row`.
    pub fn source(&self, row: usize) -> usize {
        if row < self.items {
            row
        } else {
            self.duplicates[row - self.items]
        }
    }
}

/// Samples up to `k` positives and up to `k` negatives per anchor from the
/// other batch members. An anchor left without positives is paired with a
/// duplicate of itself. `states` may be empty under
/// [`RoleRule::LabelEquality`].
pub fn build_batch(
    golds: &[IntentSet],
    anchors: &[usize],
    states: &[PredictionState],
    k: usize,
    rule: RoleRule,
    seed: u64,
) -> Result<ContrastiveBatch, ContrastiveError> {
    if rule == RoleRule::Switching && golds.len() != states.len() {
        return Err(ContrastiveError::ShapeMismatch(format!(
            "{} label sets vs {} prediction states",
            golds.len(),
            states.len()
        )));
    }
    if k == 0 {
        return Err(ContrastiveError::ShapeMismatch("K must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = golds.len();
    let mut duplicates = Vec::new();
    let mut sets = Vec::with_capacity(anchors.len());
    for &i in anchors {
        if i >= items {
            return Err(ContrastiveError::ShapeMismatch(format!("anchor {i} outside a batch of {items}")));
        }
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for j in (0..items).filter(|&j| j != i) {
            let role = match rule {
                RoleRule::Switching => assign_role(&states[i], &golds[i], &golds[j])?,
                RoleRule::LabelEquality => fixed_role(&golds[i], &golds[j])?,
            };
            match role {
                Role::Positive => pos.push(j),
                Role::Negative => neg.push(j),
            }
        }
        let mut positives = sample(&pos, k, &mut rng);
        let negatives = sample(&neg, k, &mut rng);
        if positives.is_empty() {
            positives.push(items + duplicates.len());
            duplicates.push(i);
        }
        sets.push(AnchorSet {
            anchor: i,
            positives,
            negatives,
        });
    }
    Ok(ContrastiveBatch {
        items,
        anchors: sets,
        duplicates,
    })
}

fn sample(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen: Vec<usize> = if pool.len() <= k {
        pool.to_vec()
    } else {
        pool.choose_multiple(rng, k).copied().collect()
    };
    chosen.sort_unstable();
    chosen
}

/// Per-anchor weights aligned with `AnchorSet::positives` and `negatives`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWeights {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl PairWeights {
    /// All-ones weights, under which the weighted loss is the plain one.
    pub fn unit(set: &AnchorSet) -> Self {
        Self {
            positive: vec![1.0; set.positives.len()],
            negative: vec![1.0; set.negatives.len()],
        }
    }
}

/// Softmax over the mean anchor probability of the intents each negative
/// shares with the anchor (`0` when it shares none).
pub fn negative_weights(state: &PredictionState, negatives: &[&IntentSet]) -> Vec<f64> {
    let scores: Vec<f64> = negatives
        .iter()
        .map(|cand| {
            let shared: Vec<f64> = state.gold.intersection(cand).map(|&j| state.probabilities.get(j)).collect();
            if shared.is_empty() {
                0.0
            } else {
                shared.iter().sum::<f64>() / shared.len() as f64
            }
        })
        .collect();
    softmax(&scores)
}

/// Softmax over `α` times the product of anchor probabilities of the intents
/// each positive shares with the anchor.
pub fn positive_weights(state: &PredictionState, positives: &[&IntentSet]) -> Vec<f64> {
    let alpha = state.alpha();
    let scores: Vec<f64> = positives
        .iter()
        .map(|cand| {
            let product: f64 = state.gold.intersection(cand).map(|&j| state.probabilities.get(j)).product();
            alpha * product
        })
        .collect();
    softmax(&scores)
}

/// Prediction-aware weights for every anchor. A duplicate carries its
/// source's labels.
pub fn batch_weights(batch: &ContrastiveBatch, golds: &[IntentSet], states: &[PredictionState]) -> Vec<PairWeights> {
    let gold_of = |row: usize| &golds[batch.source(row)];
    batch
        .anchors
        .iter()
        .map(|set| {
            let state = &states[set.anchor];
            let pos: Vec<&IntentSet> = set.positives.iter().map(|&r| gold_of(r)).collect();
            let neg: Vec<&IntentSet> = set.negatives.iter().map(|&r| gold_of(r)).collect();
            PairWeights {
                positive: positive_weights(state, &pos),
                negative: negative_weights(state, &neg),
            }
        })
        .collect()
}

/// Weighted supervised contrastive loss over `reps` (one row per batch row).
///
/// For anchor `i` with candidates `H = P ∪ N` and logits
/// `s_k = cos(h_i, h_k)/τ + ln w_k`, the anchor loss is
/// `logsumexp_H(s) − mean_P(s)`; the batch loss is the mean over anchors.
pub fn pacl_loss(
    g: &mut Graph,
    reps: Var,
    batch: &ContrastiveBatch,
    weights: &[PairWeights],
    tau: f64,
) -> Result<Var, ContrastiveError> {
    if weights.len() != batch.anchors.len() {
        return Err(ContrastiveError::ShapeMismatch(format!(
            "{} weight sets for {} anchors",
            weights.len(),
            batch.anchors.len()
        )));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(ContrastiveError::InvalidTemperature(tau));
    }
    let (rows, _) = g.shape(reps);
    if rows != batch.rows() {
        return Err(ContrastiveError::ShapeMismatch(format!(
            "{rows} representations for {} batch rows",
            batch.rows()
        )));
    }
    for (r, row) in g.value(reps).rows().into_iter().enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            return Err(ContrastiveError::ZeroVector(r));
        }
    }
    let unit = g.l2_normalize_rows(reps);
    let cos = g.matmul_t(unit, unit);
    let sims = g.scale(cos, 1.0 / tau);
    let mut terms = Vec::with_capacity(batch.anchors.len());
    for (set, w) in batch.anchors.iter().zip(weights) {
        if set.positives.is_empty() || w.positive.len() != set.positives.len() || w.negative.len() != set.negatives.len() {
            return Err(ContrastiveError::ShapeMismatch(format!("anchor {} has mismatched sets", set.anchor)));
        }
        let row = g.slice_rows(sims, set.anchor, set.anchor + 1);
        let logits = g.select_cols(row, &set.candidates());
        let log_w: Vec<f64> = w.positive.iter().chain(&w.negative).map(|v| v.ln()).collect();
        let logits = if log_w.iter().all(|&v| v == 0.0) {
            logits
        } else {
            let shift = g.input(Array2::from_shape_vec((1, log_w.len()), log_w).expect("row shape"));
            g.add(logits, shift)
        };
        let lse = g.log_sum_exp_rows(logits);
        let lse = g.sum(lse);
        let pos = g.slice_cols(logits, 0, set.positives.len());
        let pos = g.mean(pos);
        terms.push(g.weighted_sum(&[(1.0, lse), (-1.0, pos)]));
    }
    let scale = 1.0 / terms.len().max(1) as f64;
    let scaled: Vec<(f64, Var)> = terms.into_iter().map(|t| (scale, t)).collect();
    Ok(g.weighted_sum(&scaled))
}

/// Unweighted supervised contrastive loss.
pub fn cl_loss(g: &mut Graph, reps: Var, batch: &ContrastiveBatch, tau: f64) -> Result<Var, ContrastiveError> {
    let weights: Vec<PairWeights> = batch.anchors.iter().map(PairWeights::unit).collect();
    pacl_loss(g, reps, batch, &weights, tau)
}

pub fn cl_loss_value(reps: &Array2<f64>, batch: &ContrastiveBatch, tau: f64) -> Result<f64, ContrastiveError> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let r = g.input(reps.clone());
    let loss = cl_loss(&mut g, r, batch, tau)?;
    Ok(g.scalar(loss))
}

pub fn pacl_loss_value(
    reps: &Array2<f64>,
    batch: &ContrastiveBatch,
    weights: &[PairWeights],
    tau: f64,
) -> Result<f64, ContrastiveError> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let r = g.input(reps.clone());
    let loss = pacl_loss(&mut g, r, batch, weights, tau)?;
    Ok(g.scalar(loss))
}

/// One audit line per anchor: the anchor, its sampled sets and their weights.
pub fn audit_jsonl(batch: &ContrastiveBatch, weights: &[PairWeights]) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        anchor: usize,
        positives: &'a [usize],
        negatives: &'a [usize],
        w_pos: &'a [f64],
        w_neg: &'a [f64],
    }
    let mut out = String::new();
    for (set, w) in batch.anchors.iter().zip(weights) {
        let line = Line {
            anchor: set.anchor,
            positives: &set.positives,
            negatives: &set.negatives,
            w_pos: &w.positive,
            w_neg: &w.negative,
        };
        out.push_str(&serde_json::to_string(&line).expect("audit line serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn set(items: &[usize]) -> IntentSet {
        items.iter().copied().collect()
    }

    fn state(probs: &[f64], gold: &[usize]) -> PredictionState {
        PredictionState::new(IntentProbabilities(probs.to_vec()), set(gold), 0.5).unwrap()
    }

    #[test]
    fn state_partitions_gold() {
        let s = state(&[0.9, 0.2, 0.7], &[0, 1]);
        assert_eq!(s.predicted, set(&[0, 2]));
        assert_eq!(s.correct, set(&[0]));
        assert_eq!(s.incorrect, set(&[1]));
        assert_eq!(s.alpha(), 0.5);
        assert!(PredictionState::new(IntentProbabilities(vec![0.1]), set(&[]), 0.5).is_err());
        assert!(PredictionState::new(IntentProbabilities(vec![0.1]), set(&[3]), 0.5).is_err());
    }

    #[test]
    fn roles_for_identical_and_disjoint_sets() {
        for probs in [[0.9, 0.9, 0.1], [0.1, 0.1, 0.1]] {
            let s = state(&probs, &[0, 1]);
            assert_eq!(assign_role(&s, &s.gold, &set(&[0, 1])).unwrap(), Role::Positive);
            assert_eq!(assign_role(&s, &s.gold, &set(&[2])).unwrap(), Role::Negative);
        }
    }

    #[test]
    fn roles_for_partially_learned_anchor() {
        // 0 = capacity, 1 = city, 2 = flight
        let s = state(&[0.9, 0.1, 0.0], &[0, 1]);
        assert_eq!(assign_role(&s, &s.gold, &set(&[0])).unwrap(), Role::Negative);
        assert_eq!(assign_role(&s, &s.gold, &set(&[1, 2])).unwrap(), Role::Positive);
        assert_eq!(assign_role(&s, &s.gold, &set(&[0, 1, 2])).unwrap(), Role::Positive);
        assert_eq!(assign_role(&s, &s.gold, &set(&[])), Err(ContrastiveError::EmptyLabelSet));
    }

    #[test]
    fn duplication_when_no_positive() {
        let golds = vec![set(&[0]), set(&[1]), set(&[1])];
        let states: Vec<_> = golds.iter().map(|g| state(&[0.5, 0.5], &g.iter().copied().collect::<Vec<_>>())).collect();
        let batch = build_batch(&golds, &[0, 1, 2], &states, 5, RoleRule::Switching, 1).unwrap();
        assert_eq!(batch.duplicates, vec![0]);
        assert_eq!(batch.anchors[0].positives, vec![3]);
        assert_eq!(batch.anchors[0].negatives, vec![1, 2]);
        assert_eq!(batch.anchors[1].positives, vec![2]);
        assert_eq!(batch.duplicated_flags(), vec![false, false, false, true]);
        assert_eq!(batch.source(3), 0);
    }

    #[test]
    fn caps_at_k() {
        let golds = vec![set(&[0]); 8];
        let states: Vec<_> = (0..8).map(|_| state(&[0.5], &[0])).collect();
        let batch = build_batch(&golds, &[0], &states, 5, RoleRule::Switching, 4).unwrap();
        assert_eq!(batch.anchors[0].positives.len(), 5);
        let again = build_batch(&golds, &[0], &states, 5, RoleRule::Switching, 4).unwrap();
        assert_eq!(batch, again);
    }

    #[test]
    fn negative_weight_example() {
        let s = state(&[0.9, 0.2, 0.0], &[0, 1]);
        let w = negative_weights(&s, &[&set(&[0]), &set(&[2])]);
        let e = 0.9f64.exp();
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((w[0] - 0.7109).abs() < 1e-4 && (w[1] - 0.2891).abs() < 1e-4);
        assert_eq!(negative_weights(&s, &[&set(&[2])]), vec![1.0]);
        assert_eq!(negative_weights(&s, &[&set(&[0]), &set(&[0])]), vec![0.5, 0.5]);
    }

    #[test]
    fn positive_weight_example() {
        let s = state(&[0.9, 0.2], &[0, 1]);
        assert_eq!(s.alpha(), 1.0);
        let w = positive_weights(&s, &[&set(&[1]), &set(&[0, 1])]);
        let (a, b) = (0.2f64.exp(), 0.18f64.exp());
        assert!((w[0] - a / (a + b)).abs() < 1e-12);
        assert!((w[0] - 0.5050).abs() < 1e-4 && (w[1] - 0.4950).abs() < 1e-4);
        assert_eq!(positive_weights(&s, &[&set(&[0, 1])]), vec![1.0]);
        let unlearned = state(&[0.1, 0.3], &[0, 1]);
        assert_eq!(positive_weights(&unlearned, &[&set(&[0]), &set(&[1])]), vec![0.5, 0.5]);
    }

    fn pair_batch() -> ContrastiveBatch {
        ContrastiveBatch {
            items: 3,
            anchors: vec![AnchorSet {
                anchor: 0,
                positives: vec![1],
                negatives: vec![2],
            }],
            duplicates: vec![],
        }
    }

    #[test]
    fn closed_form_value() {
        let reps = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let v = cl_loss_value(&reps, &pair_batch(), 1.0).unwrap();
        let e = 1f64.exp();
        assert!((v + (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((v - 0.3133).abs() < 1e-4);
        let w = vec![PairWeights { positive: vec![1.0], negative: vec![1.0] }];
        assert_eq!(pacl_loss_value(&reps, &pair_batch(), &w, 1.0).unwrap(), v);
    }

    #[test]
    fn lone_positive_gives_zero() {
        let batch = ContrastiveBatch {
            items: 2,
            anchors: vec![AnchorSet { anchor: 0, positives: vec![1], negatives: vec![] }],
            duplicates: vec![],
        };
        let v = cl_loss_value(&array![[0.3, 0.4], [0.3, 0.4]], &batch, 0.1).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let reps = array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]];
        assert_eq!(cl_loss_value(&reps, &pair_batch(), 1.0), Err(ContrastiveError::ZeroVector(1)));
        let reps = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(cl_loss_value(&reps, &pair_batch(), 0.0), Err(ContrastiveError::InvalidTemperature(0.0)));
        assert!(cl_loss_value(&reps.slice(ndarray::s![..2, ..]).to_owned(), &pair_batch(), 1.0).is_err());
    }

    #[test]
    fn heavier_negative_raises_loss() {
        let reps = array![[1.0, 0.2, -0.3], [0.8, 0.1, 0.4], [0.2, 1.0, 0.1], [-0.5, 0.3, 0.9]];
        let batch = ContrastiveBatch {
            items: 4,
            anchors: vec![AnchorSet { anchor: 0, positives: vec![1], negatives: vec![2, 3] }],
            duplicates: vec![],
        };
        let mut prev = f64::NEG_INFINITY;
        for w in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let weights = vec![PairWeights { positive: vec![1.0], negative: vec![w, 1.0 - w] }];
            let v = pacl_loss_value(&reps, &batch, &weights, 0.5).unwrap();
            // Raising w shifts mass to the negative more similar to the anchor.
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn audit_lines() {
        let w = vec![PairWeights { positive: vec![1.0], negative: vec![1.0] }];
        assert_eq!(
            audit_jsonl(&pair_batch(), &w),
            "{\"anchor\":0,\"positives\":[1],\"negatives\":[2],\"w_pos\":[1.0],\"w_neg\":[1.0]}\n"
        );
    }
}
