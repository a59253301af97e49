//! Block text format and JSONL serialization of utterances.
//!
//! Block format: one `<token> <slot-tag>` line per token, closed by a
//! `#intents=a#b` line; blocks are separated by exactly one blank line.

use serde::{Deserialize, Serialize};

use super::{CorpusError, Utterance};

const INTENT_PREFIX: &str = "#intents=";

fn malformed(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedBlock {
        line,
        reason: reason.into(),
    }
}

pub fn parse_block_format(text: &str) -> Result<Vec<Utterance>, CorpusError> {
    let lines: Vec<&str> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    // Trailing blank lines at end of file are not block separators.
    let mut end = lines.len();
    while end > 0 && lines[end - 1].is_empty() {
        end -= 1;
    }

    let mut out = Vec::new();
    let mut i = 0;
    while i < end {
        let start = i;
        let mut block_end = i;
        while block_end < end && !lines[block_end].is_empty() {
            block_end += 1;
        }
        if block_end == start {
            return Err(malformed(start + 1, "empty block"));
        }
        out.push(parse_block(&lines[start..block_end], start + 1)?);
        // Skip the single separator line.
        i = block_end + 1;
    }
    Ok(out)
}

fn parse_block(lines: &[&str], first_line: usize) -> Result<Utterance, CorpusError> {
    let (last, body) = lines.split_last().expect("non-empty block");
    let last_no = first_line + lines.len() - 1;
    let Some(raw_intents) = last.strip_prefix(INTENT_PREFIX) else {
        return Err(malformed(last_no, "missing #intents= line"));
    };
    if body.is_empty() {
        return Err(malformed(first_line, "block has no tokens"));
    }
    let mut tokens = Vec::with_capacity(body.len());
    let mut slots = Vec::with_capacity(body.len());
    for (offset, line) in body.iter().enumerate() {
        let line_no = first_line + offset;
        if line.starts_with(INTENT_PREFIX) {
            return Err(malformed(line_no, "#intents= line before end of block"));
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.is_empty() => {
                tokens.push(tok.to_owned());
                slots.push(tag.to_owned());
            }
            _ => {
                return Err(malformed(
                    line_no,
                    format!("expected `<token> <slot-tag>`, got {line:?}"),
                ))
            }
        }
    }
    if let Err((pos, reason)) = super::validate_bio(&slots) {
        return Err(malformed(first_line + pos, reason));
    }
    let intents: Vec<&str> = raw_intents.split('#').collect();
    if intents.iter().any(|s| s.is_empty()) {
        return Err(malformed(last_no, "empty intent label"));
    }
    Utterance::new(tokens, slots, intents).map_err(|e| malformed(last_no, e.to_string()))
}

pub fn write_block_format(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for (i, u) in utterances.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in u.tokens().iter().zip(u.slots()) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(tag);
            out.push('\n');
        }
        out.push_str(INTENT_PREFIX);
        out.push_str(&u.intents().iter().cloned().collect::<Vec<_>>().join("#"));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct RecordOut<'a> {
    tokens: &'a [String],
    slots: &'a [String],
    intents: Vec<&'a str>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    tokens: Vec<String>,
    slots: Vec<String>,
    intents: Vec<String>,
}

/// One JSON object per line with keys `tokens`, `slots`, `intents` in that order.
pub fn write_jsonl(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        let rec = RecordOut {
            tokens: u.tokens(),
            slots: u.slots(),
            intents: u.intents().iter().map(String::as_str).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("string records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(text: &str) -> Result<Vec<Utterance>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| CorpusError::MalformedRecord {
            line: i + 1,
            reason,
        };
        let rec: RecordIn = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        out.push(Utterance::new(rec.tokens, rec.slots, rec.intents).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TABLE3: &str = "list O\nla B-city_name\nand O\nalso O\nhow O\nmany O\ncanadian B-airline_name\nairlines I-airline_name\nflights O\nuse O\naircraft O\ndh8 B-aircraft_code\n#intents=atis_city#atis_quantity\n";

    #[test]
    fn parses_case_study_block() {
        let us = parse_block_format(TABLE3).unwrap();
        assert_eq!(us.len(), 1);
        assert_eq!(us[0].len(), 12);
        assert_eq!(us[0].intents().len(), 2);
        assert_eq!(us[0].slots()[1], "B-city_name");
    }

    #[test]
    fn parses_minimal_block() {
        let us = parse_block_format("hi O\n#intents=Greet").unwrap();
        assert_eq!(us[0].tokens(), ["hi"]);
        assert_eq!(us[0].slots(), ["O"]);
        assert!(us[0].intents().contains("Greet"));
    }

    #[test]
    fn rejects_orphan_inside_tag() {
        let err = parse_block_format("x O\nboston I-city_name\n#intents=a\n").unwrap_err();
        assert_eq!(
            err,
            CorpusError::MalformedBlock {
                line: 2,
                reason: "I-city_name does not continue a B-city_name span".into()
            }
        );
    }

    #[test]
    fn reports_line_numbers_for_later_blocks() {
        let text = "a O\n#intents=x\n\nb O\nc\n#intents=y\n";
        match parse_block_format(text) {
            Err(CorpusError::MalformedBlock { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_intents_and_empty_blocks() {
        assert!(matches!(
            parse_block_format("a O\nb O\n"),
            Err(CorpusError::MalformedBlock { line: 2, .. })
        ));
        assert!(matches!(
            parse_block_format("a O\n#intents=x\n\n\nb O\n#intents=y\n"),
            Err(CorpusError::MalformedBlock { line: 4, .. })
        ));
        assert!(parse_block_format("#intents=x\n").is_err());
        assert!(parse_block_format("a  O\n#intents=x\n").is_err());
        assert!(parse_block_format("a O\n#intents=x#\n").is_err());
    }

    #[test]
    fn empty_inputs() {
        assert!(parse_block_format("").unwrap().is_empty());
        assert_eq!(write_jsonl(&[]), "");
        assert!(read_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn jsonl_key_order_is_fixed() {
        let us = parse_block_format("hi O\n#intents=b#a").unwrap();
        assert_eq!(
            write_jsonl(&us),
            "{\"tokens\":[\"hi\"],\"slots\":[\"O\"],\"intents\":[\"a\",\"b\"]}\n"
        );
    }

    #[test]
    fn jsonl_missing_slots_is_rejected() {
        let text = "{\"tokens\":[\"hi\"],\"slots\":[\"O\"],\"intents\":[\"a\"]}\n{\"tokens\":[\"hi\"],\"intents\":[\"a\"]}\n";
        assert!(matches!(
            read_jsonl(text),
            Err(CorpusError::MalformedRecord { line: 2, .. })
        ));
    }

    fn arb_utterance() -> impl Strategy<Value = Utterance> {
        let tag = prop_oneof![Just("O".to_string()), "[a-c]".prop_map(|n| format!("B-{n}")), Just("I".into())];
        (1usize..8)
            .prop_flat_map(move |n| {
                (
                    proptest::collection::vec("[a-z]{1,5}", n),
                    proptest::collection::vec(tag.clone(), n),
                    proptest::collection::btree_set("[A-D][a-z]{0,3}", 1..4),
                )
            })
            .prop_map(|(tokens, raw, intents)| {
                // Turn bare "I" markers into valid continuations of the open span.
                let mut slots = Vec::with_capacity(raw.len());
                let mut open: Option<String> = None;
                for t in raw {
                    if t == "I" {
                        match &open {
                            Some(name) => slots.push(format!("I-{name}")),
                            None => slots.push("O".into()),
                        }
                    } else {
                        open = t.strip_prefix("B-").map(str::to_owned);
                        slots.push(t);
                    }
                }
                Utterance::new(tokens, slots, intents).unwrap()
            })
    }

    proptest! {
        #[test]
        fn block_round_trip(us in proptest::collection::vec(arb_utterance(), 0..6)) {
            let text = write_block_format(&us);
            prop_assert_eq!(parse_block_format(&text).unwrap(), us.clone());
            let json = write_jsonl(&us);
            let back = read_jsonl(&json).unwrap();
            prop_assert_eq!(&back, &us);
            prop_assert_eq!(write_jsonl(&back), json);
        }
    }
}
