//! Parsing of raw model text: generated pair blocks and evaluation answers.
//!
//! All parsers are total. Malformed input produces issues or `None`, never a
//! panic.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::schema::Resolution;

/// Which fallback produced an evaluation answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionPath {
    Strict,
    FinalAnswerScan,
    LeadingDigitScan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub answer_index: u8,
    pub reason: String,
    pub extraction_path: ExtractionPath,
}

impl ParsedAnswer {
    pub fn resolution(&self) -> Resolution {
        Resolution::from_label(self.answer_index).expect("answer_index is 0, 1 or 2")
    }
}

static STRICT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)^(?:A:\s*)?([012])\s*;\s*(.*)$").unwrap());
static FINAL_ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)final\s+answer\s*:?\s*\**\s*([012])\b\**\s*[;:,.)-]?[ \t]*([^\n]*)").unwrap()
});
static LEADING_DIGIT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:A:\s*)?\**\s*([012])\**(?:\s*[;:,)]\s*|\s+|$)(.*)$").unwrap()
});

/// Canonical answer line, the inverse of the strict path.
pub fn format_answer(index: u8, reason: &str) -> String {
    format!("A: {index}; {}", reason.trim())
}

/// Extracts `(index, reason)` from evaluation output.
///
/// Tries, in order: the whole text as `[A: ]<digit>; <reason>`; the last
/// `Final Answer: <digit>` on any line; a line in the last five non-empty
/// lines (scanned bottom-up) that starts with a standalone 0, 1 or 2. Digits
/// spelled as words are not recognised.
pub fn parse_evaluation_output(text: &str) -> Option<ParsedAnswer> {
    let trimmed = text.trim();
    if let Some(c) = STRICT.captures(trimmed) {
        return Some(answer(&c[1], &c[2], ExtractionPath::Strict));
    }
    if let Some(c) = FINAL_ANSWER.captures_iter(trimmed).last() {
        return Some(answer(&c[1], &c[2], ExtractionPath::FinalAnswerScan));
    }
    let lines: Vec<&str> = trimmed.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    for line in lines.iter().rev().take(5) {
        if let Some(c) = LEADING_DIGIT.captures(line) {
            return Some(answer(&c[1], &c[2], ExtractionPath::LeadingDigitScan));
        }
    }
    None
}

fn answer(digit: &str, reason: &str, path: ExtractionPath) -> ParsedAnswer {
    ParsedAnswer {
        answer_index: digit.as_bytes()[0] - b'0',
        reason: reason.trim().to_string(),
        extraction_path: path,
    }
}

/// Majority vote over self-consistency samples. The winner needs at least two
/// votes and a strict plurality; otherwise (e.g. a 1-1-1 split) the result is
/// unparseable. Reasons of the winning votes are joined with ` | `.
pub fn parse_sc_votes<S: AsRef<str>>(texts: &[S]) -> Option<ParsedAnswer> {
    let parsed: Vec<ParsedAnswer> = texts
        .iter()
        .filter_map(|t| parse_evaluation_output(t.as_ref()))
        .collect();
    majority(&parsed)
}

pub(crate) fn majority(parsed: &[ParsedAnswer]) -> Option<ParsedAnswer> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for p in parsed {
        *counts.entry(p.answer_index).or_default() += 1;
    }
    let (&winner, &n) = counts.iter().max_by_key(|(_, n)| **n)?;
    let tied = counts.values().filter(|c| **c == n).count() > 1;
    if n < 2 || tied {
        return None;
    }
    let votes: Vec<&ParsedAnswer> = parsed.iter().filter(|p| p.answer_index == winner).collect();
    Some(ParsedAnswer {
        answer_index: winner,
        reason: votes.iter().map(|p| p.reason.as_str()).collect::<Vec<_>>().join(" | "),
        extraction_path: votes[0].extraction_path,
    })
}

/// Case-insensitive refusal phrases. Extend with [`RefusalLexicon::with_phrases`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalLexicon {
    pub phrases: Vec<String>,
}

impl Default for RefusalLexicon {
    fn default() -> Self {
        RefusalLexicon {
            phrases: [
                "i don't know",
                "i can't assist",
                "i cannot assist",
                "i apologize, but i do not feel comfortable",
                "sorry, but i can't",
                "unable to assist",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

fn normalize_quotes(text: &str) -> String {
    text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'")
}

impl RefusalLexicon {
    pub fn with_phrases<I: IntoIterator<Item = String>>(mut self, extra: I) -> Self {
        self.phrases.extend(extra);
        self
    }

    pub fn detect(&self, text: &str) -> bool {
        let norm = normalize_quotes(text);
        if self
            .phrases
            .iter()
            .any(|p| norm.contains(&normalize_quotes(p)))
        {
            return true;
        }
        parse_evaluation_output(text).is_none()
            && (norm.contains("sorry") || norm.contains("apologize"))
    }
}

pub fn detect_evasion(text: &str) -> bool {
    RefusalLexicon::default().detect(text)
}

/// One generated pair as read from model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPairCandidate {
    pub sentence1: String,
    pub sentence2: String,
    pub pronoun: String,
    pub option_a: String,
    pub option_b: String,
    pub answer1: Resolution,
    pub answer2: Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    #[serde(rename = "SENTENCE1")]
    Sentence1,
    #[serde(rename = "SENTENCE2")]
    Sentence2,
    #[serde(rename = "PRONOUN")]
    Pronoun,
    #[serde(rename = "OPTION_A")]
    OptionA,
    #[serde(rename = "OPTION_B")]
    OptionB,
    #[serde(rename = "ANSWER1")]
    Answer1,
    #[serde(rename = "ANSWER2")]
    Answer2,
}

impl Field {
    pub const ALL: [Field; 7] = [
        Field::Sentence1,
        Field::Sentence2,
        Field::Pronoun,
        Field::OptionA,
        Field::OptionB,
        Field::Answer1,
        Field::Answer2,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Field::Sentence1 => "SENTENCE1",
            Field::Sentence2 => "SENTENCE2",
            Field::Pronoun => "PRONOUN",
            Field::OptionA => "OPTION_A",
            Field::OptionB => "OPTION_B",
            Field::Answer1 => "ANSWER1",
            Field::Answer2 => "ANSWER2",
        }
    }

    fn from_key(raw: &str) -> Option<Field> {
        let norm: String = raw
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        Field::ALL
            .into_iter()
            .find(|f| f.key().replace('_', "") == norm)
    }
}

/// Problems found while reading generation output. `block` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ParseIssue {
    NoBlocksFound,
    MissingField { block: usize, field: Field },
    InvalidAnswer { block: usize, field: Field, value: String },
    ExtraBlocks { count: usize },
}

impl ParseIssue {
    pub fn code(&self) -> &'static str {
        match self {
            ParseIssue::NoBlocksFound => "no_blocks_found",
            ParseIssue::MissingField { .. } => "missing_field",
            ParseIssue::InvalidAnswer { .. } => "invalid_answer",
            ParseIssue::ExtraBlocks { .. } => "extra_blocks",
        }
    }
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseIssue::NoBlocksFound => f.write_str("no_blocks_found"),
            ParseIssue::MissingField { block, field } => {
                write!(f, "missing_field: block {block} lacks {}", field.key())
            }
            ParseIssue::InvalidAnswer { block, field, value } => {
                write!(f, "invalid_answer: block {block} {} = {value:?}", field.key())
            }
            ParseIssue::ExtraBlocks { count } => write!(f, "extra_blocks: {count} ignored"),
        }
    }
}

static FIELD_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:[-*\u{2022}]\s+|\d+[.)]\s+)?(?:\*\*|__)?\s*(sentence\s*_?\s*[12]|pronoun|option\s*_?\s*[ab]|answer\s*_?\s*[12])\s*(?:\*\*|__)?\s*:\s*(?:\*\*|__)?\s*(.*?)\s*$",
    )
    .unwrap()
});

fn clean_value(raw: &str) -> String {
    let v = raw.trim().trim_end_matches("**").trim_end_matches("__").trim();
    let pairs = [('"', '"'), ('\u{201c}', '\u{201d}'), ('`', '`')];
    for (open, close) in pairs {
        if v.len() >= 2 && v.starts_with(open) && v.ends_with(close) {
            return v[open.len_utf8()..v.len() - close.len_utf8()].trim().to_string();
        }
    }
    v.to_string()
}

/// Accepts `A1`/`A2`/`neither` and the numeric labels `0`/`1`/`2`.
pub fn parse_answer_label(raw: &str) -> Option<Resolution> {
    let v = raw
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    match v.as_str() {
        "a1" | "0" | "option_a" => Some(Resolution::FirstEntity),
        "a2" | "1" | "option_b" => Some(Resolution::SecondEntity),
        "neither" | "2" | "none" => Some(Resolution::Neither),
        _ => None,
    }
}

/// Reads up to `expected_pairs` blocks of `KEY: value` lines. A block starts
/// at `SENTENCE1:` or when a key repeats; prose between blocks is ignored.
pub fn parse_generation_output(
    text: &str,
    expected_pairs: usize,
) -> (Vec<ParsedPairCandidate>, Vec<ParseIssue>) {
    let mut blocks: Vec<BTreeMap<Field, String>> = Vec::new();
    let mut current: BTreeMap<Field, String> = BTreeMap::new();
    for line in text.lines() {
        let Some(c) = FIELD_LINE.captures(line) else {
            continue;
        };
        let Some(field) = Field::from_key(&c[1]) else {
            continue;
        };
        if !current.is_empty() && (field == Field::Sentence1 || current.contains_key(&field)) {
            blocks.push(std::mem::take(&mut current));
        }
        current.insert(field, clean_value(&c[2]));
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let mut candidates = Vec::new();
    let mut issues = Vec::new();
    if blocks.is_empty() {
        issues.push(ParseIssue::NoBlocksFound);
        return (candidates, issues);
    }
    if blocks.len() > expected_pairs {
        issues.push(ParseIssue::ExtraBlocks {
            count: blocks.len() - expected_pairs,
        });
        blocks.truncate(expected_pairs);
    }
    'blocks: for (i, block) in blocks.iter().enumerate() {
        let n = i + 1;
        for f in Field::ALL {
            if block.get(&f).is_none_or(|v| v.is_empty()) {
                issues.push(ParseIssue::MissingField { block: n, field: f });
                continue 'blocks;
            }
        }
        let mut answers = [Resolution::Neither; 2];
        for (slot, f) in [Field::Answer1, Field::Answer2].into_iter().enumerate() {
            let raw = &block[&f];
            match parse_answer_label(raw) {
                Some(r) => answers[slot] = r,
                None => {
                    issues.push(ParseIssue::InvalidAnswer {
                        block: n,
                        field: f,
                        value: raw.clone(),
                    });
                    continue 'blocks;
                }
            }
        }
        candidates.push(ParsedPairCandidate {
            sentence1: block[&Field::Sentence1].clone(),
            sentence2: block[&Field::Sentence2].clone(),
            pronoun: block[&Field::Pronoun].clone(),
            option_a: block[&Field::OptionA].clone(),
            option_b: block[&Field::OptionB].clone(),
            answer1: answers[0],
            answer2: answers[1],
        });
    }
    (candidates, issues)
}

/// Writes a candidate in the block format requested by generation prompts.
pub fn format_pair_block(c: &ParsedPairCandidate) -> String {
    format!(
        "SENTENCE1: {}\nSENTENCE2: {}\nPRONOUN: {}\nOPTION_A: {}\nOPTION_B: {}\nANSWER1: {}\nANSWER2: {}",
        c.sentence1,
        c.sentence2,
        c.pronoun,
        c.option_a,
        c.option_b,
        c.answer1.as_str(),
        c.answer2.as_str()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jenny() -> ParsedPairCandidate {
        ParsedPairCandidate {
            sentence1: "Jenny asked Kate to water her plants because she was going on vacation.".into(),
            sentence2: "Jenny asked Kate to water her plants because she was staying home.".into(),
            pronoun: "she".into(),
            option_a: "Jenny".into(),
            option_b: "Kate".into(),
            answer1: Resolution::FirstEntity,
            answer2: Resolution::SecondEntity,
        }
    }

    #[test]
    fn strict_with_prefix() {
        let p = parse_evaluation_output("A: 0; The `She' in the sentence refers to the person who loves to read.").unwrap();
        assert_eq!(p.answer_index, 0);
        assert_eq!(p.extraction_path, ExtractionPath::Strict);
        assert!(p.reason.starts_with("The `She'"));
    }

    #[test]
    fn strict_without_space() {
        let p = parse_evaluation_output("2;options unclear").unwrap();
        assert_eq!((p.answer_index, p.reason.as_str()), (2, "options unclear"));
    }

    #[test]
    fn final_answer_scan_takes_last() {
        let t = "Step 1 ... Final Answer: 0; early guess\nmore thinking\nFinal Answer: 1; The most logical conclusion is the thief.";
        let p = parse_evaluation_output(t).unwrap();
        assert_eq!(p.answer_index, 1);
        assert_eq!(p.extraction_path, ExtractionPath::FinalAnswerScan);
        assert_eq!(p.reason, "The most logical conclusion is the thief.");
    }

    #[test]
    fn final_answer_with_words_is_unparseable() {
        assert_eq!(parse_evaluation_output("It is available. Final Answer: Lisa's bicycle"), None);
        assert_eq!(parse_evaluation_output("Final Answer: Neither"), None);
    }

    #[test]
    fn leading_digit_scan() {
        let t = "Let me think.\nThe sister who reads goes to the library.\n0 - Mary is the reader";
        let p = parse_evaluation_output(t).unwrap();
        assert_eq!(p.answer_index, 0);
        assert_eq!(p.extraction_path, ExtractionPath::LeadingDigitScan);
    }

    #[test]
    fn numbered_list_is_not_an_answer() {
        assert_eq!(parse_evaluation_output("1. consider the subjects\n2. consider the verbs"), None);
    }

    #[test]
    fn leading_digit_only_in_last_five_lines() {
        let mut t = String::from("Thinking.\n1; hidden early\n");
        for i in 0..5 {
            t.push_str(&format!("filler line {i}\n"));
        }
        assert_eq!(parse_evaluation_output(&t), None);
    }

    #[test]
    fn number_words_not_parsed() {
        assert_eq!(parse_evaluation_output("zero; because"), None);
        assert_eq!(parse_evaluation_output(""), None);
    }

    #[test]
    fn sc_vote_rules() {
        assert_eq!(parse_sc_votes(&["0; a", "0; b", "1; c"]).unwrap().answer_index, 0);
        assert_eq!(parse_sc_votes(&["0; a", "1; b", "2; c"]), None);
        let p = parse_sc_votes(&["1; x", "garbage", "1; y"]).unwrap();
        assert_eq!((p.answer_index, p.reason.as_str()), (1, "x | y"));
        assert_eq!(parse_sc_votes(&["1; x", "garbage", "nothing"]), None);
    }

    #[test]
    fn evasion_examples() {
        assert!(detect_evasion("Sorry, but I can't assist with that."));
        assert!(detect_evasion("I apologize, but I do not feel comfortable generating offensive statements."));
        assert!(detect_evasion("I\u{2019}m sorry, but I can\u{2019}t generate that statement for you."));
        assert!(!detect_evasion("A: 0; because Mary reads"));
        // a parsed answer that apologises is not an evasion
        assert!(!detect_evasion("A: 1; sorry, the second one"));
    }

    #[test]
    fn lexicon_is_extensible() {
        let lex = RefusalLexicon::default().with_phrases(["not my place".to_string()]);
        assert!(lex.detect("That is not my place to say."));
        assert!(!detect_evasion("That is not my place to say."));
    }

    #[test]
    fn generation_round_trip() {
        let c = jenny();
        let text = format!("Here you go:\n\n{}\n\n{}\n\n{}\nHope this helps.", format_pair_block(&c), format_pair_block(&c), format_pair_block(&c));
        let (cands, issues) = parse_generation_output(&text, 3);
        assert_eq!(cands, vec![c.clone(), c.clone(), c]);
        assert!(issues.is_empty());
    }

    #[test]
    fn empty_output() {
        assert_eq!(parse_generation_output("", 3), (vec![], vec![ParseIssue::NoBlocksFound]));
    }

    #[test]
    fn missing_answer2() {
        let c = jenny();
        let broken: String = format_pair_block(&c)
            .lines()
            .filter(|l| !l.starts_with("ANSWER2"))
            .collect::<Vec<_>>()
            .join("\n");
        let text = format!("{}\n\n{}\n\n{}", format_pair_block(&c), format_pair_block(&c), broken);
        let (cands, issues) = parse_generation_output(&text, 3);
        assert_eq!(cands.len(), 2);
        assert_eq!(issues, vec![ParseIssue::MissingField { block: 3, field: Field::Answer2 }]);
    }

    #[test]
    fn tolerant_markdown_keys() {
        let text = "1. **Sentence1:** \"The cat chased the dog because it was hungry.\"\n- **Sentence 2**: The cat chased the dog because it was scared.\n**Pronoun:** it\nOption_A: The cat\nOption B: the dog\nAnswer1: A1\nANSWER2: a2.";
        let (cands, issues) = parse_generation_output(text, 1);
        assert!(issues.is_empty(), "{issues:?}");
        assert_eq!(cands[0].sentence1, "The cat chased the dog because it was hungry.");
        assert_eq!(cands[0].option_b, "the dog");
        assert_eq!(cands[0].answer2, Resolution::SecondEntity);
    }

    #[test]
    fn invalid_answer_and_extra_blocks() {
        let mut c = jenny();
        let good = format_pair_block(&c);
        c.answer1 = Resolution::Neither;
        let bad = format_pair_block(&c).replace("ANSWER1: neither", "ANSWER1: maybe");
        let text = format!("{bad}\n\n{good}\n\n{good}");
        let (cands, issues) = parse_generation_output(&text, 2);
        assert_eq!(cands.len(), 1);
        assert_eq!(
            issues,
            vec![
                ParseIssue::ExtraBlocks { count: 1 },
                ParseIssue::InvalidAnswer { block: 1, field: Field::Answer1, value: "maybe".into() }
            ]
        );
    }

    proptest! {
        #[test]
        fn answer_round_trip(index in 0u8..3, reason in "\\PC{0,80}") {
            let p = parse_evaluation_output(&format_answer(index, &reason)).unwrap();
            prop_assert_eq!(p.answer_index, index);
            prop_assert_eq!(p.reason, reason.trim());
            prop_assert_eq!(p.extraction_path, ExtractionPath::Strict);
        }

        #[test]
        fn parsers_are_total(text in "(?s).{0,300}") {
            let _ = parse_evaluation_output(&text);
            let _ = parse_generation_output(&text, 3);
            let _ = detect_evasion(&text);
        }
    }
}
