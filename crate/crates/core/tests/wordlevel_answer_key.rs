use std::collections::BTreeSet;

use pacl::wordlevel::{build_wordlevel_dataset, collect_occurrences, default_keep_tags, refine_word_intents, LexiconTagger};

#[path = "fixtures/wordlevel.rs"]
mod fixture;

use fixture::{corpus, key, labels, LEXICON};

/// Tries every subset of the four intents and keeps the largest one contained
/// in all occurrences of the word; falls back to the union when none is.
fn exhaustive_refinement(occurrences: &[BTreeSet<String>]) -> BTreeSet<String> {
    let universe = ["Meal", "Sport", "Study", "Travel"];
    let mut best = BTreeSet::new();
    for mask in 1u32..16 {
        let subset: BTreeSet<String> = (0..4).filter(|j| mask & (1 << j) != 0).map(|j| universe[j].to_owned()).collect();
        if occurrences.iter().all(|o| subset.is_subset(o)) && subset.len() > best.len() {
            best = subset;
        }
    }
    if best.is_empty() {
        occurrences.iter().flatten().cloned().collect()
    } else {
        best
    }
}

#[test]
fn refinement_matches_answer_key() {
    let tagger = LexiconTagger::from_tsv(LEXICON).unwrap();
    let occurrences = collect_occurrences(&corpus(), &default_keep_tags(), &tagger).unwrap();
    let refined = refine_word_intents(&occurrences);
    assert_eq!(refined, key());
    for (word, sets) in &occurrences {
        assert_eq!(refined[word], exhaustive_refinement(sets), "{word}");
    }
    assert_eq!(occurrences["lunch"].len(), 3);
    assert_eq!(refined["lunch"], labels("Meal"));
}

#[test]
fn dataset_matches_answer_key() {
    let tagger = LexiconTagger::from_tsv(LEXICON).unwrap();
    let key = key();
    for seed in 0..5 {
        let ds = build_wordlevel_dataset(&corpus(), &default_keep_tags(), &tagger, seed).unwrap();
        assert!(ds.warnings.is_empty());
        assert_eq!(ds.examples.len(), key.len());
        for (example, (word, intents)) in ds.examples.iter().zip(&key) {
            assert_eq!(&example.tokens[0], word);
            assert_eq!(&example.intents, intents);
            if intents.len() == 1 {
                assert_eq!(example.tokens.len(), 1);
                continue;
            }
            assert_eq!(example.tokens.len(), 1 + intents.len());
            for (indicator, intent) in example.tokens[1..].iter().zip(intents) {
                assert_eq!(key[indicator], BTreeSet::from([intent.clone()]), "{word}: {indicator}");
            }
        }
        let again = build_wordlevel_dataset(&corpus(), &default_keep_tags(), &tagger, seed).unwrap();
        assert_eq!(ds, again);
    }
}
