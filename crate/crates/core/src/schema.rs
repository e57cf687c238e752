//! Instance data model and the machine-checkable structural rules.
//!
//! A structural check is necessary but not sufficient for validity. Two of the
//! classic Winograd criteria cannot be decided by code: whether a sentence is
//! easily disambiguated by a human reader, and whether it is "Google-proof"
//! (not solvable by corpus co-occurrence statistics). Those are left to the
//! human annotation workflow; the [`Violation`] codes below only cover what can
//! be verified from the text itself.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The correct antecedent of the target pronoun.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "A1")]
    FirstEntity,
    #[serde(rename = "A2")]
    SecondEntity,
    #[serde(rename = "neither")]
    Neither,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [
        Resolution::FirstEntity,
        Resolution::SecondEntity,
        Resolution::Neither,
    ];

    /// Evaluation label: 0 for the first entity, 1 for the second, 2 for neither.
    pub fn label(self) -> u8 {
        match self {
            Resolution::FirstEntity => 0,
            Resolution::SecondEntity => 1,
            Resolution::Neither => 2,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(Resolution::FirstEntity),
            1 => Some(Resolution::SecondEntity),
            2 => Some(Resolution::Neither),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::FirstEntity => "A1",
            Resolution::SecondEntity => "A2",
            Resolution::Neither => "neither",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasTag {
    Religion,
    Race,
    Sex,
    SexualOrientation,
    Socioeconomic,
    Appearance,
    Disability,
    SocialStatus,
    Ageism,
    Other,
}

impl BiasTag {
    pub const ALL: [BiasTag; 10] = [
        BiasTag::Religion,
        BiasTag::Race,
        BiasTag::Sex,
        BiasTag::SexualOrientation,
        BiasTag::Socioeconomic,
        BiasTag::Appearance,
        BiasTag::Disability,
        BiasTag::SocialStatus,
        BiasTag::Ageism,
        BiasTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasTag::Religion => "religion",
            BiasTag::Race => "race",
            BiasTag::Sex => "sex",
            BiasTag::SexualOrientation => "sexual_orientation",
            BiasTag::Socioeconomic => "socioeconomic",
            BiasTag::Appearance => "appearance",
            BiasTag::Disability => "disability",
            BiasTag::SocialStatus => "social_status",
            BiasTag::Ageism => "ageism",
            BiasTag::Other => "other",
        }
    }
}

impl fmt::Display for BiasTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasTag {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BiasTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Traditional,
    Ambiguous,
    Offensive(BiasTag),
}

/// Category without the bias tag; the axis used for reporting and stratification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Traditional,
    Ambiguous,
    Offensive,
}

impl CategoryKind {
    pub const ALL: [CategoryKind; 3] = [
        CategoryKind::Traditional,
        CategoryKind::Ambiguous,
        CategoryKind::Offensive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryKind::Traditional => "traditional",
            CategoryKind::Ambiguous => "ambiguous",
            CategoryKind::Offensive => "offensive",
        }
    }
}

impl fmt::Display for CategoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Category {
    pub fn kind(self) -> CategoryKind {
        match self {
            Category::Traditional => CategoryKind::Traditional,
            Category::Ambiguous => CategoryKind::Ambiguous,
            Category::Offensive(_) => CategoryKind::Offensive,
        }
    }

    pub fn bias_tag(self) -> Option<BiasTag> {
        match self {
            Category::Offensive(tag) => Some(tag),
            _ => None,
        }
    }

    /// Ambiguous and offensive instances always resolve to "neither".
    pub fn requires_neither(self) -> bool {
        !matches!(self, Category::Traditional)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Offensive(tag) => write!(f, "offensive:{tag}"),
            other => f.write_str(other.kind().as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityLabel {
    Valid,
    SemiValid,
    Invalid,
}

impl ValidityLabel {
    pub const ALL: [ValidityLabel; 3] = [
        ValidityLabel::Valid,
        ValidityLabel::SemiValid,
        ValidityLabel::Invalid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValidityLabel::Valid => "valid",
            ValidityLabel::SemiValid => "semi_valid",
            ValidityLabel::Invalid => "invalid",
        }
    }
}

impl fmt::Display for ValidityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValidityLabel {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ValidityLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// One sentence with a target pronoun and two candidate antecedents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct WscInstance {
    pub id: String,
    pub sentence: String,
    pub candidate_a: String,
    pub candidate_b: String,
    pub pronoun: String,
    pub gold: Resolution,
    pub category: Category,
    pub generator_model: String,
    pub pair_id: Option<String>,
    pub special_word: Option<String>,
}

/// Flat on-disk shape: the category is a plain string with a sibling `bias_tag`.
#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    id: String,
    sentence: String,
    candidate_a: String,
    candidate_b: String,
    pronoun: String,
    gold: Resolution,
    category: CategoryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias_tag: Option<BiasTag>,
    generator_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    special_word: Option<String>,
}

impl TryFrom<InstanceRepr> for WscInstance {
    type Error = String;

    fn try_from(r: InstanceRepr) -> Result<Self, Self::Error> {
        let category = match (r.category, r.bias_tag) {
            (CategoryKind::Traditional, None) => Category::Traditional,
            (CategoryKind::Ambiguous, None) => Category::Ambiguous,
            (CategoryKind::Offensive, Some(tag)) => Category::Offensive(tag),
            (CategoryKind::Offensive, None) => {
                return Err("offensive instance requires a bias_tag".into())
            }
            (kind, Some(_)) => return Err(format!("bias_tag is only allowed on offensive instances, not {kind}")),
        };
        Ok(WscInstance {
            id: r.id,
            sentence: r.sentence,
            candidate_a: r.candidate_a,
            candidate_b: r.candidate_b,
            pronoun: r.pronoun,
            gold: r.gold,
            category,
            generator_model: r.generator_model,
            pair_id: r.pair_id,
            special_word: r.special_word,
        })
    }
}

impl From<WscInstance> for InstanceRepr {
    fn from(i: WscInstance) -> Self {
        InstanceRepr {
            id: i.id,
            sentence: i.sentence,
            candidate_a: i.candidate_a,
            candidate_b: i.candidate_b,
            pronoun: i.pronoun,
            gold: i.gold,
            category: i.category.kind(),
            bias_tag: i.category.bias_tag(),
            generator_model: i.generator_model,
            pair_id: i.pair_id,
            special_word: i.special_word,
        }
    }
}

impl WscInstance {
    /// The candidate text a resolution points at, if any.
    pub fn candidate(&self, r: Resolution) -> Option<&str> {
        match r {
            Resolution::FirstEntity => Some(&self.candidate_a),
            Resolution::SecondEntity => Some(&self.candidate_b),
            Resolution::Neither => None,
        }
    }

    pub fn has_pronoun(&self) -> bool {
        contains_token_seq(&self.sentence, &self.pronoun)
    }

    pub fn has_candidates(&self) -> bool {
        contains_phrase(&self.sentence, &self.candidate_a)
            && contains_phrase(&self.sentence, &self.candidate_b)
    }
}

/// Which member of a pair a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Member {
    First,
    Second,
}

impl Member {
    fn as_str(self) -> &'static str {
        match self {
            Member::First => "first",
            Member::Second => "second",
        }
    }
}

/// Structural rule violation. The string form (see [`Violation::code`]) is
/// stable and is what gets stored in dataset records.
///
/// None of these codes can tell whether a sentence is easily resolved by a
/// human reader or resistant to search-engine lookups; those judgements belong
/// to annotators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    /// The two sentences of a pair tokenize identically.
    NoDiff,
    /// The pair differs in more than two tokens.
    TooManyDiffs,
    /// A traditional pair resolves to the same entity in both sentences.
    NoResolutionFlip,
    /// The pronoun is not a whole token of the sentence.
    MissingPronoun(Option<Member>),
    /// One or both candidates are not substrings of the sentence.
    MissingCandidate(Option<Member>),
    AmbiguousGoldNotNeither,
    OffensiveGoldNotNeither,
    IdenticalCandidates,
}

impl Violation {
    pub fn code(&self) -> String {
        match self {
            Violation::NoDiff => "no_diff".into(),
            Violation::TooManyDiffs => "too_many_diffs".into(),
            Violation::NoResolutionFlip => "no_resolution_flip".into(),
            Violation::MissingPronoun(None) => "missing_pronoun".into(),
            Violation::MissingPronoun(Some(m)) => format!("missing_pronoun:{}", m.as_str()),
            Violation::MissingCandidate(None) => "missing_candidate".into(),
            Violation::MissingCandidate(Some(m)) => format!("missing_candidate:{}", m.as_str()),
            Violation::AmbiguousGoldNotNeither => "ambiguous_gold_not_neither".into(),
            Violation::OffensiveGoldNotNeither => "offensive_gold_not_neither".into(),
            Violation::IdenticalCandidates => "identical_candidates".into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for Violation {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, member) = match s.split_once(':') {
            Some((h, "first")) => (h, Some(Member::First)),
            Some((h, "second")) => (h, Some(Member::Second)),
            Some(_) => return Err(UnknownName(s.to_string())),
            None => (s, None),
        };
        let v = match (head, member) {
            ("no_diff", None) => Violation::NoDiff,
            ("too_many_diffs", None) => Violation::TooManyDiffs,
            ("no_resolution_flip", None) => Violation::NoResolutionFlip,
            ("missing_pronoun", m) => Violation::MissingPronoun(m),
            ("missing_candidate", m) => Violation::MissingCandidate(m),
            ("ambiguous_gold_not_neither", None) => Violation::AmbiguousGoldNotNeither,
            ("offensive_gold_not_neither", None) => Violation::OffensiveGoldNotNeither,
            ("identical_candidates", None) => Violation::IdenticalCandidates,
            _ => return Err(UnknownName(s.to_string())),
        };
        Ok(v)
    }
}

impl Serialize for Violation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for Violation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffKind {
    Substitution,
    /// Token counts differ; the entry covers the whole unaligned region.
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub position: usize,
    pub first: String,
    pub second: String,
    pub kind: DiffKind,
}

impl DiffEntry {
    /// Number of differing words this entry stands for.
    pub fn span(&self) -> usize {
        match self.kind {
            DiffKind::Substitution => 1,
            DiffKind::LengthMismatch => {
                let a = self.first.split_whitespace().count();
                let b = self.second.split_whitespace().count();
                a.max(b)
            }
        }
    }
}

/// Lowercase, split on whitespace, strip leading/trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word-level difference between two sentences.
///
/// Equal token counts yield one [`DiffKind::Substitution`] per differing
/// position. Different counts yield a single [`DiffKind::LengthMismatch`]
/// entry spanning everything between the common prefix and common suffix.
pub fn token_diff(s1: &str, s2: &str) -> Vec<DiffEntry> {
    let t1 = tokenize(s1);
    let t2 = tokenize(s2);
    if t1.len() == t2.len() {
        return t1
            .iter()
            .zip(&t2)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(position, (a, b))| DiffEntry {
                position,
                first: a.clone(),
                second: b.clone(),
                kind: DiffKind::Substitution,
            })
            .collect();
    }
    let prefix = t1.iter().zip(&t2).take_while(|(a, b)| a == b).count();
    let max_suffix = t1.len().min(t2.len()) - prefix;
    let suffix = t1
        .iter()
        .rev()
        .zip(t2.iter().rev())
        .take(max_suffix)
        .take_while(|(a, b)| a == b)
        .count();
    vec![DiffEntry {
        position: prefix,
        first: t1[prefix..t1.len() - suffix].join(" "),
        second: t2[prefix..t2.len() - suffix].join(" "),
        kind: DiffKind::LengthMismatch,
    }]
}

/// Whole-token, case-insensitive match. Multi-word pronouns ("one of them")
/// must appear as a contiguous token run.
pub fn contains_token_seq(sentence: &str, needle: &str) -> bool {
    let needle = tokenize(needle);
    if needle.is_empty() {
        return false;
    }
    find_token_seq(&tokenize(sentence), &needle).is_some()
}

pub(crate) fn find_token_seq(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Case-insensitive contiguous substring match for candidate noun phrases.
pub fn contains_phrase(sentence: &str, phrase: &str) -> bool {
    let phrase = phrase.trim();
    !phrase.is_empty() && sentence.to_lowercase().contains(&phrase.to_lowercase())
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("pair member `{0}` has no pair_id")]
    MissingPairId(String),
    #[error("pair ids differ: `{0}` vs `{1}`")]
    MismatchedPairId(String, String),
}

/// Two instances that differ by one or two words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WscPair {
    pub first: WscInstance,
    pub second: WscInstance,
    pub diff_words: Vec<DiffEntry>,
}

impl WscPair {
    pub fn new(first: WscInstance, second: WscInstance) -> Result<Self, PairError> {
        match (&first.pair_id, &second.pair_id) {
            (None, _) => return Err(PairError::MissingPairId(first.id.clone())),
            (_, None) => return Err(PairError::MissingPairId(second.id.clone())),
            (Some(a), Some(b)) if a != b => {
                return Err(PairError::MismatchedPairId(a.clone(), b.clone()))
            }
            _ => {}
        }
        let diff_words = token_diff(&first.sentence, &second.sentence);
        Ok(WscPair {
            first,
            second,
            diff_words,
        })
    }

    pub fn swapped(&self) -> WscPair {
        WscPair {
            first: self.second.clone(),
            second: self.first.clone(),
            diff_words: token_diff(&self.second.sentence, &self.first.sentence),
        }
    }

    pub fn diff_span(&self) -> usize {
        self.diff_words.iter().map(DiffEntry::span).sum()
    }
}

pub fn check_instance_structure(inst: &WscInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    if !inst.has_pronoun() {
        out.push(Violation::MissingPronoun(None));
    }
    if !inst.has_candidates() {
        out.push(Violation::MissingCandidate(None));
    }
    match inst.category {
        Category::Ambiguous if inst.gold != Resolution::Neither => {
            out.push(Violation::AmbiguousGoldNotNeither)
        }
        Category::Offensive(_) if inst.gold != Resolution::Neither => {
            out.push(Violation::OffensiveGoldNotNeither)
        }
        _ => {}
    }
    if inst.candidate_a.trim().to_lowercase() == inst.candidate_b.trim().to_lowercase() {
        out.push(Violation::IdenticalCandidates);
    }
    out
}

/// Checks the pair-level rules. A pair with no difference also reports
/// [`Violation::NoResolutionFlip`] when it is traditional, whatever the gold
/// labels say: identical sentences cannot flip.
pub fn check_pair_structure(pair: &WscPair) -> Vec<Violation> {
    let mut out = Vec::new();
    let traditional = pair.first.category == Category::Traditional;
    let span = pair.diff_span();
    if span == 0 {
        out.push(Violation::NoDiff);
        if traditional {
            out.push(Violation::NoResolutionFlip);
        }
    } else {
        if span > 2 {
            out.push(Violation::TooManyDiffs);
        }
        if traditional && pair.first.gold == pair.second.gold {
            out.push(Violation::NoResolutionFlip);
        }
    }
    for (member, inst) in [(Member::First, &pair.first), (Member::Second, &pair.second)] {
        if !inst.has_pronoun() {
            out.push(Violation::MissingPronoun(Some(member)));
        }
    }
    for (member, inst) in [(Member::First, &pair.first), (Member::Second, &pair.second)] {
        if !inst.has_candidates() {
            out.push(Violation::MissingCandidate(Some(member)));
        }
    }
    out
}

/// 0 violations is valid, exactly 1 is semi-valid, 2 or more is invalid.
pub fn classify_validity(violations: &[Violation]) -> ValidityLabel {
    match violations.len() {
        0 => ValidityLabel::Valid,
        1 => ValidityLabel::SemiValid,
        _ => ValidityLabel::Invalid,
    }
}

/// Errors raised when a record breaks a hard [`WscInstance`] invariant.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InvariantError {
    #[error("pronoun `{0}` is not a token of the sentence")]
    Pronoun(String),
    #[error("candidate `{0}` is not a substring of the sentence")]
    CandidateA(String),
    #[error("candidate `{0}` is not a substring of the sentence")]
    CandidateB(String),
    #[error("{0} instance must resolve to neither")]
    Gold(CategoryKind),
    #[error("candidates are identical")]
    IdenticalCandidates,
}

impl InvariantError {
    /// Name of the offending field in the on-disk record.
    pub fn field(&self) -> &'static str {
        match self {
            InvariantError::Pronoun(_) => "pronoun",
            InvariantError::CandidateA(_) => "candidate_a",
            InvariantError::CandidateB(_) | InvariantError::IdenticalCandidates => "candidate_b",
            InvariantError::Gold(_) => "gold",
        }
    }
}

/// Hard invariants required of every stored (non-candidate) instance.
pub fn check_invariants(inst: &WscInstance) -> Result<(), InvariantError> {
    if !inst.has_pronoun() {
        return Err(InvariantError::Pronoun(inst.pronoun.clone()));
    }
    if !contains_phrase(&inst.sentence, &inst.candidate_a) {
        return Err(InvariantError::CandidateA(inst.candidate_a.clone()));
    }
    if !contains_phrase(&inst.sentence, &inst.candidate_b) {
        return Err(InvariantError::CandidateB(inst.candidate_b.clone()));
    }
    if inst.category.requires_neither() && inst.gold != Resolution::Neither {
        return Err(InvariantError::Gold(inst.category.kind()));
    }
    if inst.candidate_a.trim().to_lowercase() == inst.candidate_b.trim().to_lowercase() {
        return Err(InvariantError::IdenticalCandidates);
    }
    Ok(())
}
