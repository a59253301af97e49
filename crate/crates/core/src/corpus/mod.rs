//! Utterance data model, corpus splits and label vocabularies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod format;
pub mod synthetic;

pub use format::{parse_block_format, read_jsonl, write_block_format, write_jsonl};
pub use synthetic::{generate_synthetic, GrammarSpec, IntentTemplate};

pub const OUTSIDE_TAG: &str = "O";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("malformed block at line {line}: {reason}")]
    MalformedBlock { line: usize, reason: String },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("invalid subsampling fraction {0}: must lie in (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid grammar: {0}")]
    InvalidSpec(String),
    #[error("invalid utterance: {0}")]
    InvalidUtterance(String),
}

/// One annotated utterance: whitespace tokens, BIO slot tags and its intent set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utterance {
    tokens: Vec<String>,
    slots: Vec<String>,
    intents: BTreeSet<String>,
}

impl Utterance {
    pub fn new<I, S>(tokens: Vec<String>, slots: Vec<String>, intents: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for intent in intents {
            let intent = intent.into();
            if intent.is_empty() || intent.contains('#') || intent.contains(char::is_whitespace) {
                return Err(CorpusError::InvalidUtterance(format!(
                    "invalid intent label {intent:?}"
                )));
            }
            if !set.insert(intent.clone()) {
                return Err(CorpusError::InvalidUtterance(format!(
                    "duplicate intent {intent:?}"
                )));
            }
        }
        if set.is_empty() {
            return Err(CorpusError::InvalidUtterance("empty intent set".into()));
        }
        if tokens.is_empty() {
            return Err(CorpusError::InvalidUtterance("no tokens".into()));
        }
        if tokens.len() != slots.len() {
            return Err(CorpusError::InvalidUtterance(format!(
                "{} tokens but {} slot tags",
                tokens.len(),
                slots.len()
            )));
        }
        if let Some(t) = tokens
            .iter()
            .find(|t| t.is_empty() || t.contains(char::is_whitespace))
        {
            return Err(CorpusError::InvalidUtterance(format!("invalid token {t:?}")));
        }
        validate_bio(&slots).map_err(|(pos, reason)| {
            CorpusError::InvalidUtterance(format!("slot {}: {reason}", pos + 1))
        })?;
        Ok(Self {
            tokens,
            slots,
            intents: set,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn intents(&self) -> &BTreeSet<String> {
        &self.intents
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn label_key(&self) -> LabelSetKey {
        LabelSetKey::from_intents(self.intents.iter())
    }
}

/// Splits a BIO tag into its prefix and slot name.
pub fn split_tag(tag: &str) -> Option<(char, &str)> {
    if tag == OUTSIDE_TAG {
        return Some(('O', ""));
    }
    let (prefix, name) = tag.split_once('-')?;
    match prefix {
        "B" | "I" if !name.is_empty() && !name.contains(char::is_whitespace) => {
            Some((prefix.chars().next().unwrap_or('O'), name))
        }
        _ => None,
    }
}

/// Checks the BIO grammar; on failure returns the offending position.
pub fn validate_bio<S: AsRef<str>>(tags: &[S]) -> Result<(), (usize, String)> {
    let mut open: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        match split_tag(tag) {
            None => return Err((i, format!("tag {tag:?} is not O, B-<name> or I-<name>"))),
            Some(('O', _)) => open = None,
            Some(('B', name)) => open = Some(name),
            Some((_, name)) => {
                if open != Some(name) {
                    return Err((i, format!("{tag} does not continue a B-{name} span")));
                }
            }
        }
    }
    Ok(())
}

/// Canonical identity of a multi-intent label: sorted intents joined by `#`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelSetKey(String);

impl LabelSetKey {
    pub fn from_intents<I, S>(intents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = intents
            .into_iter()
            .map(|s| s.as_ref().to_owned())
            .filter(|s| !s.is_empty())
            .collect();
        Self(set.into_iter().collect::<Vec<_>>().join("#"))
    }

    /// Canonicalizes a `#`-joined label string.
    pub fn canonicalize(raw: &str) -> Self {
        Self::from_intents(raw.split('#'))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn intents(&self) -> impl Iterator<Item = &str> {
        self.0.split('#').filter(|s| !s.is_empty())
    }
}

impl fmt::Display for LabelSetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lexicographically ordered, duplicate-free label list.
///
/// Labels missing from the vocabulary resolve to `None`, the reserved unknown
/// entry; such labels can never be predicted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    items: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let items: Vec<String> = set.into_iter().collect();
        let index = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self { items, index }
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.items[idx]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(items: Vec<String>) -> Self {
        Self::new(items)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "dev" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Train/validation/test splits plus vocabularies built from the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub validation: Vec<Utterance>,
    pub test: Vec<Utterance>,
    intent_vocabulary: Vocabulary,
    slot_vocabulary: Vocabulary,
}

impl Corpus {
    pub fn new(train: Vec<Utterance>, validation: Vec<Utterance>, test: Vec<Utterance>) -> Self {
        let intent_vocabulary = Vocabulary::new(train.iter().flat_map(|u| u.intents.iter().cloned()));
        let slot_vocabulary = Vocabulary::new(
            train
                .iter()
                .flat_map(|u| u.slots.iter().cloned())
                .chain(std::iter::once(OUTSIDE_TAG.to_owned())),
        );
        Self {
            train,
            validation,
            test,
            intent_vocabulary,
            slot_vocabulary,
        }
    }

    pub fn intent_vocabulary(&self) -> &Vocabulary {
        &self.intent_vocabulary
    }

    pub fn slot_vocabulary(&self) -> &Vocabulary {
        &self.slot_vocabulary
    }

    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Utterance counts per label-set stratum of the train split.
    pub fn train_strata(&self) -> BTreeMap<LabelSetKey, usize> {
        let mut counts = BTreeMap::new();
        for u in &self.train {
            *counts.entry(u.label_key()).or_insert(0) += 1;
        }
        counts
    }
}

/// Number of utterances kept from a stratum: round half up, clamped to `[1, size]`.
pub fn stratum_quota(fraction: f64, size: usize) -> usize {
    let raw = (fraction * size as f64 + 0.5).floor() as usize;
    raw.clamp(1, size.max(1))
}

/// Low-data subsample of the train split, stratified by [`LabelSetKey`].
///
/// Kept utterances retain their original order; other splits are untouched.
pub fn stratified_subsample(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let mut strata: BTreeMap<LabelSetKey, Vec<usize>> = BTreeMap::new();
    for (i, u) in corpus.train.iter().enumerate() {
        strata.entry(u.label_key()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in strata.values_mut() {
        let quota = stratum_quota(fraction, members.len());
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..quota]);
    }
    keep.sort_unstable();
    let train = keep.into_iter().map(|i| corpus.train[i].clone()).collect();
    Ok(Corpus::new(train, corpus.validation.clone(), corpus.test.clone()))
}
