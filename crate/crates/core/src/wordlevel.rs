//! Word-level pre-training data.
//!
//! Intent-bearing words are picked out by part of speech, each word's intent
//! set is narrowed to what its occurrences share, and words that still carry
//! several intents are concatenated with one indicator word per intent.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Utterance, OUTSIDE_TAG};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WordLevelError {
    #[error("tagger returned {got} tags for {expected} tokens")]
    TaggerFailure { expected: usize, got: usize },
    #[error("corpus train split is empty")]
    EmptyCorpus,
    #[error("malformed word-level record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

/// Assigns one part-of-speech tag per token.
pub trait PosTagger {
    fn tag(&self, tokens: &[String]) -> Vec<String>;
}

/// Dictionary tagger with suffix rules for unknown words.
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    lexicon: BTreeMap<String, String>,
}

impl LexiconTagger {
    pub fn new(lexicon: BTreeMap<String, String>) -> Self {
        Self { lexicon }
    }

    /// Reads `word<TAB>TAG` lines; blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut lexicon = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected word<TAB>tag", i + 1))?;
            lexicon.insert(word.to_owned(), tag.trim().to_owned());
        }
        Ok(Self { lexicon })
    }

    fn guess(word: &str) -> &'static str {
        if word.chars().all(|c| c.is_ascii_digit()) {
            "CD"
        } else if word.ends_with("ing") && word.len() > 4 {
            "VBG"
        } else if word.ends_with("ly") && word.len() > 3 {
            "RB"
        } else if word.ends_with("ed") && word.len() > 3 {
            "VBD"
        } else if word.ends_with('s') && !word.ends_with("ss") && word.len() > 3 {
            "NNS"
        } else {
            "NN"
        }
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| {
                self.lexicon
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| Self::guess(t).to_owned())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosTaggedWord {
    pub surface: String,
    pub pos: String,
    pub source_intents: BTreeSet<String>,
}

/// A pre-training input: a short word sequence and its intent set, no slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WordLevelExample {
    pub tokens: Vec<String>,
    pub intents: BTreeSet<String>,
}

/// A multi-intent word left unconcatenated because an intent had no
/// single-intent indicator word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoIndicatorWord {
    pub word: String,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordLevelDataset {
    pub examples: Vec<WordLevelExample>,
    pub warnings: Vec<NoIndicatorWord>,
}

pub fn default_keep_tags() -> BTreeSet<String> {
    ["NN", "NNS", "JJ"].iter().map(|s| (*s).to_owned()).collect()
}

pub fn pos_filter(
    utterance: &Utterance,
    keep_tags: &BTreeSet<String>,
    tagger: &dyn PosTagger,
) -> Result<Vec<PosTaggedWord>, WordLevelError> {
    let tags = tagger.tag(utterance.tokens());
    if tags.len() != utterance.len() {
        return Err(WordLevelError::TaggerFailure {
            expected: utterance.len(),
            got: tags.len(),
        });
    }
    Ok(utterance
        .tokens()
        .iter()
        .zip(tags)
        .filter(|(_, pos)| keep_tags.contains(pos))
        .map(|(tok, pos)| PosTaggedWord {
            surface: tok.clone(),
            pos,
            source_intents: utterance.intents().clone(),
        })
        .collect())
}

/// Narrows each word to the intents shared by all of its occurrences.
///
/// An empty intersection falls back to the union, keeping the word as a
/// multi-intent word for concatenation.
pub fn refine_word_intents(
    occurrences: &BTreeMap<String, Vec<BTreeSet<String>>>,
) -> BTreeMap<String, BTreeSet<String>> {
    occurrences
        .iter()
        .filter(|(_, sets)| !sets.is_empty())
        .map(|(word, sets)| {
            let mut shared = sets[0].clone();
            for s in &sets[1..] {
                shared.retain(|i| s.contains(i));
            }
            if shared.is_empty() {
                shared = sets.iter().flatten().cloned().collect();
            }
            (word.clone(), shared)
        })
        .collect()
}

/// Occurrence lists of every POS-filtered word in the train split.
pub fn collect_occurrences(
    corpus: &Corpus,
    keep_tags: &BTreeSet<String>,
    tagger: &dyn PosTagger,
) -> Result<BTreeMap<String, Vec<BTreeSet<String>>>, WordLevelError> {
    let mut occurrences: BTreeMap<String, Vec<BTreeSet<String>>> = BTreeMap::new();
    for u in &corpus.train {
        for w in pos_filter(u, keep_tags, tagger)? {
            occurrences.entry(w.surface).or_default().push(w.source_intents);
        }
    }
    Ok(occurrences)
}

pub fn build_wordlevel_dataset(
    corpus: &Corpus,
    keep_tags: &BTreeSet<String>,
    tagger: &dyn PosTagger,
    seed: u64,
) -> Result<WordLevelDataset, WordLevelError> {
    if corpus.train.is_empty() {
        return Err(WordLevelError::EmptyCorpus);
    }
    let refined = refine_word_intents(&collect_occurrences(corpus, keep_tags, tagger)?);

    let mut indicators: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (word, intents) in &refined {
        if intents.len() == 1 {
            let intent = intents.iter().next().expect("one intent");
            indicators.entry(intent).or_default().push(word);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = WordLevelDataset::default();
    for (word, intents) in &refined {
        if intents.len() == 1 {
            out.examples.push(WordLevelExample {
                tokens: vec![word.clone()],
                intents: intents.clone(),
            });
            continue;
        }
        let missing: Vec<&String> = intents
            .iter()
            .filter(|i| !indicators.contains_key(i.as_str()))
            .collect();
        if !missing.is_empty() {
            out.warnings.extend(missing.into_iter().map(|i| NoIndicatorWord {
                word: word.clone(),
                intent: i.clone(),
            }));
            out.examples.push(WordLevelExample {
                tokens: vec![word.clone()],
                intents: intents.clone(),
            });
            continue;
        }
        let mut tokens = Vec::with_capacity(1 + intents.len());
        tokens.push(word.clone());
        for intent in intents {
            let pick = indicators[intent.as_str()]
                .choose(&mut rng)
                .expect("indicator lists are non-empty");
            tokens.push((*pick).to_owned());
        }
        out.examples.push(WordLevelExample {
            tokens,
            intents: intents.clone(),
        });
    }
    Ok(out)
}

/// Share of each POS tag among intent-linked words (slot tag other than `O`)
/// in the train split.
pub fn pos_intent_report(
    corpus: &Corpus,
    tagger: &dyn PosTagger,
) -> Result<BTreeMap<String, f64>, WordLevelError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for u in &corpus.train {
        let tags = tagger.tag(u.tokens());
        if tags.len() != u.len() {
            return Err(WordLevelError::TaggerFailure {
                expected: u.len(),
                got: tags.len(),
            });
        }
        for (slot, pos) in u.slots().iter().zip(tags) {
            if slot != OUTSIDE_TAG {
                *counts.entry(pos).or_insert(0) += 1;
            }
        }
    }
    let total: usize = counts.values().sum();
    Ok(counts
        .into_iter()
        .map(|(pos, c)| (pos, c as f64 / total as f64))
        .collect())
}

#[derive(Serialize)]
struct RecordOut<'a> {
    tokens: &'a [String],
    intents: Vec<&'a str>,
}

pub fn write_wordlevel_jsonl(examples: &[WordLevelExample]) -> String {
    let mut out = String::new();
    for e in examples {
        let rec = RecordOut {
            tokens: &e.tokens,
            intents: e.intents.iter().map(String::as_str).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("string records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_wordlevel_jsonl(text: &str) -> Result<Vec<WordLevelExample>, WordLevelError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct RecordIn {
        tokens: Vec<String>,
        intents: Vec<String>,
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| WordLevelError::MalformedRecord {
            line: i + 1,
            reason,
        };
        let rec: RecordIn = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let intents: BTreeSet<String> = rec.intents.iter().cloned().collect();
        if rec.tokens.is_empty() || intents.is_empty() || intents.len() != rec.intents.len() {
            return Err(bad("tokens and intents must be non-empty and duplicate-free".into()));
        }
        out.push(WordLevelExample {
            tokens: rec.tokens,
            intents,
        });
    }
    Ok(out)
}
