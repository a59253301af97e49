//! Seeded multi-intent grammar for desk-scale experiments.
//!
//! Single-intent templates are concatenated with `O`-tagged connector
//! phrases, the same way the Mix* multi-intent datasets were assembled from
//! single-intent utterances.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Utterance};

/// Utterance patterns for one intent. `{name}` placeholders expand to a
/// phrase from [`GrammarSpec::slot_values`] tagged `B-name I-name ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentTemplate {
    pub intent: String,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub templates: Vec<IntentTemplate>,
    pub slot_values: BTreeMap<String, Vec<String>>,
    pub connectors: Vec<String>,
    pub max_intents: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    /// Part-of-speech tags for every word the grammar can emit.
    #[serde(default)]
    pub lexicon: BTreeMap<String, String>,
}

enum Piece<'a> {
    Word(&'a str),
    Slot(&'a str),
}

fn pieces(pattern: &str) -> impl Iterator<Item = Piece<'_>> {
    pattern.split_whitespace().map(|w| {
        match w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(name) => Piece::Slot(name),
            None => Piece::Word(w),
        }
    })
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSpec(m));
        if self.templates.len() < 2 {
            return bad("at least two intent templates are required".into());
        }
        let mut seen = BTreeSet::new();
        for t in &self.templates {
            if t.intent.is_empty() || t.intent.contains('#') {
                return bad(format!("invalid intent name {:?}", t.intent));
            }
            if !seen.insert(&t.intent) {
                return bad(format!("duplicate template for intent {}", t.intent));
            }
            if t.patterns.is_empty() {
                return bad(format!("intent {} has no patterns", t.intent));
            }
            for p in &t.patterns {
                if p.split_whitespace().next().is_none() {
                    return bad(format!("intent {} has an empty pattern", t.intent));
                }
                for piece in pieces(p) {
                    if let Piece::Slot(name) = piece {
                        match self.slot_values.get(name) {
                            Some(values) if values.iter().all(|v| v.split_whitespace().next().is_some()) && !values.is_empty() => {}
                            _ => return bad(format!("slot {{{name}}} has no values")),
                        }
                    }
                }
            }
        }
        if self.max_intents == 0 {
            return bad("max_intents must be at least 1".into());
        }
        if self.max_intents > 1 && self.connectors.iter().all(|c| c.split_whitespace().next().is_none()) {
            return bad("multi-intent generation needs a connector".into());
        }
        Ok(())
    }

    /// Names of every slot type referenced by some pattern.
    pub fn slot_types(&self) -> BTreeSet<&str> {
        self.templates
            .iter()
            .flat_map(|t| t.patterns.iter())
            .flat_map(|p| pieces(p))
            .filter_map(|p| match p {
                Piece::Slot(n) => Some(n),
                Piece::Word(_) => None,
            })
            .collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Utterance {
        let max = self.max_intents.min(self.templates.len());
        let k = rng.gen_range(1..=max);
        let mut chosen = index::sample(rng, self.templates.len(), k).into_vec();
        chosen.shuffle(rng);

        let mut tokens = Vec::new();
        let mut slots = Vec::new();
        let mut intents = Vec::with_capacity(k);
        for (n, &ti) in chosen.iter().enumerate() {
            if n > 0 {
                let conn = self.connectors.choose(rng).expect("validated connectors");
                for w in conn.split_whitespace() {
                    tokens.push(w.to_owned());
                    slots.push("O".to_owned());
                }
            }
            let template = &self.templates[ti];
            intents.push(template.intent.clone());
            let pattern = template.patterns.choose(rng).expect("validated patterns");
            for piece in pieces(pattern) {
                match piece {
                    Piece::Word(w) => {
                        tokens.push(w.to_owned());
                        slots.push("O".to_owned());
                    }
                    Piece::Slot(name) => {
                        let value = self.slot_values[name].choose(rng).expect("validated values");
                        for (i, w) in value.split_whitespace().enumerate() {
                            tokens.push(w.to_owned());
                            slots.push(format!("{}-{name}", if i == 0 { 'B' } else { 'I' }));
                        }
                    }
                }
            }
        }
        Utterance::new(tokens, slots, intents).expect("generated utterances satisfy invariants")
    }

    /// The default desk-scale grammar: 8 intents and 12 slot types over an
    /// airline-travel and personal-assistant domain.
    pub fn desk() -> Self {
        let templates = [
            (
                "flight",
                &[
                    "show me flights from {fromloc} to {toloc}",
                    "list flights to {toloc} on {date}",
                    "i need a flight from {fromloc} to {toloc} {date}",
                    "are there any flights leaving {fromloc} {date}",
                ][..],
            ),
            (
                "airfare",
                &[
                    "how much is a ticket from {fromloc} to {toloc}",
                    "what is the cheapest fare to {toloc}",
                    "show the round trip fares on {airline}",
                    "what are the prices of tickets to {toloc} on {date}",
                ],
            ),
            (
                "airline",
                &[
                    "which airlines fly to {toloc}",
                    "what airline serves {fromloc}",
                    "list the carriers flying to {toloc} on {date}",
                    "does {airline} have service to {toloc}",
                ],
            ),
            (
                "ground_service",
                &[
                    "what ground transportation is available in {city}",
                    "is there a limousine service in {city}",
                    "show me car rentals at the {city} airport",
                    "how do i get downtown from the airport in {city}",
                ],
            ),
            (
                "weather",
                &[
                    "what is the weather in {city} {date}",
                    "will it rain in {city}",
                    "tell me the forecast for {city} {date}",
                    "how cold is it in {city}",
                ],
            ),
            (
                "play_music",
                &[
                    "play {song} by {artist}",
                    "play some {genre} music",
                    "put on the album {album}",
                    "i want to hear {artist} songs",
                ],
            ),
            (
                "book_restaurant",
                &[
                    "book a table at a {restaurant_type} restaurant for {party_size}",
                    "reserve a {restaurant_type} place at {time}",
                    "i want a table for {party_size} at {time}",
                    "find a {restaurant_type} restaurant in {city} for {party_size}",
                ],
            ),
            (
                "set_alarm",
                &[
                    "set an alarm for {time}",
                    "wake me up at {time} {date}",
                    "remind me at {time} with an alarm",
                    "set my alarm clock to {time}",
                ],
            ),
        ];
        let cities = [
            "boston", "denver", "dallas", "atlanta", "seattle", "pittsburgh", "baltimore",
            "new york", "san francisco", "los angeles", "salt lake city", "washington",
        ];
        let slot_values: BTreeMap<String, Vec<String>> = [
            ("fromloc", &cities[..]),
            ("toloc", &cities[..]),
            ("city", &cities[..]),
            ("date", &["today", "tomorrow", "monday", "friday", "next week", "this weekend"][..]),
            ("airline", &["delta", "united", "american airlines", "us air", "continental"][..]),
            ("song", &["yesterday", "hey jude", "imagine", "halo", "blue"][..]),
            ("artist", &["adele", "the beatles", "madonna", "miles davis", "prince"][..]),
            ("genre", &["jazz", "rock", "classical", "hip hop", "blues"][..]),
            ("album", &["journeyman", "thriller", "abbey road", "kind of blue"][..]),
            ("restaurant_type", &["italian", "mexican", "thai", "sushi", "steak"][..]),
            ("party_size", &["two", "three", "four", "six people", "one person"][..]),
            ("time", &["7 am", "noon", "6 pm", "eight", "midnight", "9 30"][..]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.iter().map(|s| (*s).to_owned()).collect()))
        .collect();

        let mut lexicon = BTreeMap::new();
        let tagged: &[(&str, &[&str])] = &[
            ("NN", &[
                "flight", "fare", "ticket", "airline", "transportation", "limousine", "service",
                "airport", "weather", "forecast", "music", "album", "table", "restaurant", "place",
                "alarm", "clock", "trip", "noon", "midnight", "today", "tomorrow", "week",
                "weekend", "jazz", "rock", "blues", "hip", "hop", "person", "am", "pm",
            ]),
            ("NNS", &[
                "flights", "fares", "tickets", "airlines", "carriers", "rentals", "prices",
                "songs", "people",
            ]),
            ("JJ", &["cheapest", "round", "available", "cold", "italian", "mexican", "thai", "classical", "next", "downtown", "car", "ground", "steak", "sushi"]),
            ("VB", &["show", "list", "need", "fly", "book", "reserve", "find", "set", "wake", "remind", "tell", "play", "put", "hear", "get", "rain", "want", "have"]),
            ("VBZ", &["is", "serves", "does"]),
            ("VBP", &["are", "do"]),
            ("VBG", &["leaving", "flying"]),
            ("MD", &["will"]),
            ("PRP", &["me", "i", "it"]),
            ("PRP$", &["my"]),
            ("DT", &["a", "an", "the", "any", "some", "this"]),
            ("IN", &["from", "to", "on", "at", "in", "for", "by", "of", "with", "up"]),
            ("WDT", &["which", "what"]),
            ("WRB", &["how"]),
            ("JJR", &["much"]),
            ("EX", &["there"]),
            ("CC", &["and", "then", "also"]),
            ("RB", &["then", "also"]),
            ("CD", &["6", "7", "9", "30", "eight", "two", "three", "four", "six", "one"]),
            ("NNP", &[
                "boston", "denver", "dallas", "atlanta", "seattle", "pittsburgh", "baltimore",
                "new", "york", "san", "francisco", "los", "angeles", "salt", "lake", "city",
                "washington", "delta", "united", "american", "us", "air", "continental",
                "yesterday", "hey", "jude", "imagine", "halo", "blue", "adele", "beatles",
                "madonna", "miles", "davis", "prince", "journeyman", "thriller", "abbey", "road",
                "kind", "monday", "friday",
            ]),
        ];
        for (tag, words) in tagged {
            for w in *words {
                lexicon.entry((*w).to_owned()).or_insert_with(|| (*tag).to_owned());
            }
        }

        Self {
            templates: templates
                .iter()
                .map(|(intent, pats)| IntentTemplate {
                    intent: (*intent).to_owned(),
                    patterns: pats.iter().map(|p| (*p).to_owned()).collect(),
                })
                .collect(),
            slot_values,
            connectors: vec!["and".into(), "and then".into(), "and also".into()],
            max_intents: 3,
            train_size: 2000,
            validation_size: 200,
            test_size: 200,
            lexicon,
        }
    }
}

pub fn generate_synthetic(spec: &GrammarSpec, seed: u64) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| spec.sample(&mut rng)).collect::<Vec<_>>();
    let train = draw(spec.train_size);
    let validation = draw(spec.validation_size);
    let test = draw(spec.test_size);
    Ok(Corpus::new(train, validation, test))
}
