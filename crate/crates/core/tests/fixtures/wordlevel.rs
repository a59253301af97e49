//! Thirty hand-written utterances over four intents and the refined intent
//! set of every noun and adjective in them.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pacl::corpus::{Corpus, Utterance};

pub const UTTERANCES: [(&str, &str); 30] = [
    ("eat lunch then play tennis", "Meal#Sport"),
    ("eat lunch then read chapters", "Meal#Study"),
    ("cook dinner", "Meal"),
    ("cheap dinner then book flight", "Meal#Travel"),
    ("play tennis", "Sport"),
    ("play football", "Sport"),
    ("watch football then book hotel", "Sport#Travel"),
    ("read chapters", "Study"),
    ("review notes", "Study"),
    ("review notes then eat breakfast", "Meal#Study"),
    ("book flight", "Travel"),
    ("book hotel", "Travel"),
    ("cheap hotel", "Travel"),
    ("cheap tennis lessons", "Sport"),
    ("study lessons", "Study"),
    ("eat breakfast", "Meal"),
    ("quick breakfast then quick run", "Meal#Sport"),
    ("quick quiz", "Study"),
    ("go run", "Sport"),
    ("take quiz", "Study"),
    ("rent car", "Travel"),
    ("rent car then eat lunch", "Meal#Travel"),
    ("hot soup", "Meal"),
    ("hot yoga", "Sport"),
    ("yoga then quiz", "Sport#Study"),
    ("book train", "Travel"),
    ("take train then review notes", "Study#Travel"),
    ("the quiz", "Study"),
    ("i want soup", "Meal"),
    ("watch tennis with the team", "Sport"),
];

pub const LEXICON: &str = "\
eat\tVB\nthen\tRB\nplay\tVB\nread\tVB\ncook\tVB\nbook\tVB\nwatch\tVB\nreview\tVB\nstudy\tVB\ngo\tVB\ntake\tVB\n\
rent\tVB\nwant\tVBP\ni\tPRP\nthe\tDT\nwith\tIN\n\
lunch\tNN\ntennis\tNN\nchapters\tNNS\ndinner\tNN\ncheap\tJJ\nflight\tNN\nfootball\tNN\nhotel\tNN\nnotes\tNNS\n\
breakfast\tNN\nlessons\tNNS\nquick\tJJ\nrun\tNN\nquiz\tNN\ncar\tNN\nhot\tJJ\nsoup\tNN\nyoga\tNN\ntrain\tNN\nteam\tNN\n";

/// Refined intent set per kept word, worked out by hand.
pub const ANSWER_KEY: [(&str, &str); 20] = [
    ("breakfast", "Meal"),
    ("car", "Travel"),
    ("chapters", "Study"),
    ("cheap", "Meal#Sport#Travel"),
    ("dinner", "Meal"),
    ("flight", "Travel"),
    ("football", "Sport"),
    ("hot", "Meal#Sport"),
    ("hotel", "Travel"),
    ("lessons", "Sport#Study"),
    ("lunch", "Meal"),
    ("notes", "Study"),
    ("quick", "Meal#Sport#Study"),
    ("quiz", "Study"),
    ("run", "Sport"),
    ("soup", "Meal"),
    ("team", "Sport"),
    ("tennis", "Sport"),
    ("train", "Travel"),
    ("yoga", "Sport"),
];

pub fn labels(s: &str) -> BTreeSet<String> {
    s.split('#').map(str::to_owned).collect()
}

pub fn corpus() -> Corpus {
    let train = UTTERANCES
        .iter()
        .map(|(text, intents)| {
            let tokens: Vec<String> = text.split(' ').map(str::to_owned).collect();
            let slots = vec!["O".to_owned(); tokens.len()];
            Utterance::new(tokens, slots, intents.split('#')).unwrap()
        })
        .collect();
    Corpus::new(train, Vec::new(), Vec::new())
}

pub fn key() -> BTreeMap<String, BTreeSet<String>> {
    ANSWER_KEY.iter().map(|(w, i)| ((*w).to_owned(), labels(i))).collect()
}
