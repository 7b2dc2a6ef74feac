//! BIO-tagged corpora: tokens, tag sequences, spans and labeled sentences.
//!
//! Spans are half-open token ranges. Tag decoding is lenient: an `I-X` that
//! does not continue an open `X` span opens a new one, which is what seqeval
//! does by default.

mod io;
mod stats;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::io::{load_split, parse_conll, parse_jsonl, read_split_file, write_conll, write_jsonl, SplitFormat};
pub use self::stats::{compute_stats, CorpusStats};

/// Label given to every span in the collapsed (single-label) view.
pub const SKILL_LABEL: &str = "SKILL";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected 2 columns (token, tag), found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("line {line}: illegal tag {tag:?}")]
    IllegalTag { line: usize, tag: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("overlapping spans at token {at}")]
    OverlappingSpans { at: usize },
    #[error("span {start}..{end} out of bounds for sentence of length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("invalid token {0:?}: tokens are non-empty and contain no whitespace")]
    InvalidToken(String),
    #[error("sentence id {0:?} appears in more than one split")]
    DuplicateId(String),
    #[error("record {record}: {message}")]
    BadRecord { record: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single whitespace-free word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidToken(text));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when the token has no alphanumeric character (",", "/", "--").
    pub fn is_punctuation(&self) -> bool {
        is_punctuation_only(&self.0)
    }
}

pub(crate) fn is_punctuation_only(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_alphanumeric)
}

impl TryFrom<String> for Token {
    type Error = CorpusError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Token::new(value)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Builds tokens from string slices, failing on the first invalid one.
pub fn tokens<S: AsRef<str>>(words: &[S]) -> Result<Vec<Token>, CorpusError> {
    words.iter().map(|w| Token::new(w.as_ref())).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn label(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(l) | Tag::Inside(l) => Some(l),
        }
    }
}

#[derive(Debug, Error)]
#[error("illegal tag {0:?}")]
pub struct IllegalTag(pub String);

impl FromStr for Tag {
    type Err = IllegalTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, label) = s.split_at_checked(2).ok_or_else(|| IllegalTag(s.to_string()))?;
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(IllegalTag(s.to_string()));
        }
        match prefix {
            "B-" => Ok(Tag::Begin(label.to_string())),
            "I-" => Ok(Tag::Inside(label.to_string())),
            _ => Err(IllegalTag(s.to_string())),
        }
    }
}

impl TryFrom<String> for Tag {
    type Error = IllegalTag;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Tag> for String {
    fn from(t: Tag) -> String {
        t.to_string()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(l) => write!(f, "B-{l}"),
            Tag::Inside(l) => write!(f, "I-{l}"),
        }
    }
}

/// Parses a list of tag strings.
pub fn parse_tags<S: AsRef<str>>(tags: &[S]) -> Result<TagSequence, IllegalTag> {
    tags.iter().map(|t| t.as_ref().parse()).collect::<Result<Vec<_>, _>>().map(TagSequence)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tag> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Tag] {
        &self.0
    }
}

impl From<Vec<Tag>> for TagSequence {
    fn from(v: Vec<Tag>) -> Self {
        TagSequence(v)
    }
}

/// A strict-IOB2 violation: an `I-X` that does not continue an `X` span.
/// Lenient decoding accepts these; the CLI reports them on request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BioViolation {
    pub position: usize,
    pub tag: String,
    pub previous: String,
}

pub fn bio_violations(tags: &TagSequence) -> Vec<BioViolation> {
    let mut out = Vec::new();
    let mut prev = &Tag::Outside;
    for (i, tag) in tags.iter().enumerate() {
        if let Tag::Inside(label) = tag {
            if prev.label() != Some(label.as_str()) {
                out.push(BioViolation { position: i, tag: tag.to_string(), previous: prev.to_string() });
            }
        }
        prev = tag;
    }
    out
}

/// Half-open token range with its label and surface text.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub text: String,
}

impl Span {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        ranges_overlap(&self.range(), &other.range())
    }
}

pub(crate) fn ranges_overlap(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Joins tokens with single spaces. This is the canonical sentence string
/// used by prompts and alignment.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::with_capacity(tokens.iter().map(|t| t.0.len() + 1).sum());
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.0);
    }
    out
}

/// Label-carrying token ranges decoded from a tag sequence (lenient IOB2).
pub fn tags_to_ranges(tags: &[Tag]) -> Vec<(Range<usize>, String)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                if let Some((s, l)) = open.take() {
                    out.push((s..i, l.to_string()));
                }
            }
            Tag::Begin(label) => {
                if let Some((s, l)) = open.take() {
                    out.push((s..i, l.to_string()));
                }
                open = Some((i, label));
            }
            Tag::Inside(label) => match open {
                Some((_, l)) if l == label => {}
                _ => {
                    if let Some((s, l)) = open.take() {
                        out.push((s..i, l.to_string()));
                    }
                    open = Some((i, label));
                }
            },
        }
    }
    if let Some((s, l)) = open {
        out.push((s..tags.len(), l.to_string()));
    }
    out
}

pub fn tags_to_spans(tags: &TagSequence, tokens: &[Token]) -> Vec<Span> {
    debug_assert_eq!(tags.len(), tokens.len());
    tags_to_ranges(tags.as_slice())
        .into_iter()
        .map(|(r, label)| Span {
            text: detokenize(&tokens[r.start.min(tokens.len())..r.end.min(tokens.len())]),
            start: r.start,
            end: r.end,
            label,
        })
        .collect()
}

/// Inverse of [`tags_to_spans`]. Every span opens with `B-`, so adjacent
/// same-label spans stay distinct.
pub fn spans_to_tags(spans: &[Span], len: usize) -> Result<TagSequence, CorpusError> {
    let mut tags = vec![Tag::Outside; len];
    let mut ordered: Vec<&Span> = spans.iter().collect();
    ordered.sort_by_key(|s| (s.start, s.end));
    let mut covered_to = 0;
    for span in ordered {
        if span.start >= span.end || span.end > len {
            return Err(CorpusError::SpanOutOfBounds { start: span.start, end: span.end, len });
        }
        if span.start < covered_to {
            return Err(CorpusError::OverlappingSpans { at: span.start });
        }
        tags[span.start] = Tag::Begin(span.label.clone());
        for t in &mut tags[span.start + 1..span.end] {
            *t = Tag::Inside(span.label.clone());
        }
        covered_to = span.end;
    }
    Ok(TagSequence(tags))
}

/// Tokens, their BIO tags, and the spans derived from them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    id: String,
    tokens: Vec<Token>,
    tags: TagSequence,
    spans: Vec<Span>,
    text: String,
}

impl LabeledSentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, tags: TagSequence) -> Result<Self, CorpusError> {
        if tokens.len() != tags.len() {
            return Err(CorpusError::LengthMismatch { tokens: tokens.len(), tags: tags.len() });
        }
        let spans = tags_to_spans(&tags, &tokens);
        let text = detokenize(&tokens);
        Ok(LabeledSentence { id: id.into(), tokens, tags, spans, text })
    }

    pub fn from_spans(id: impl Into<String>, tokens: Vec<Token>, spans: &[Span]) -> Result<Self, CorpusError> {
        let tags = spans_to_tags(spans, tokens.len())?;
        Self::new(id, tokens, tags)
    }

    /// Convenience constructor from whitespace-separated words and tag strings.
    pub fn parse(id: impl Into<String>, words: &str, tags: &str) -> Result<Self, CorpusError> {
        let toks = tokens(&words.split_whitespace().collect::<Vec<_>>())?;
        let tag_strs: Vec<&str> = tags.split_whitespace().collect();
        let tags = parse_tags(&tag_strs).map_err(|e| CorpusError::IllegalTag { line: 0, tag: e.0 })?;
        Self::new(id, toks, tags)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn tags(&self) -> &TagSequence {
        &self.tags
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    /// Canonical (detokenized) sentence string.
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_positive(&self) -> bool {
        !self.spans.is_empty()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Same spans, every label replaced by [`SKILL_LABEL`]. Span boundaries
    /// are preserved even where two differently-labeled spans touch.
    pub fn collapsed(&self) -> LabeledSentence {
        let spans: Vec<Span> =
            self.spans.iter().map(|s| Span { label: SKILL_LABEL.to_string(), ..s.clone() }).collect();
        let tags = spans_to_tags(&spans, self.tokens.len()).expect("derived spans are disjoint");
        LabeledSentence { id: self.id.clone(), tokens: self.tokens.clone(), tags, spans, text: self.text.clone() }
    }

    /// Char offsets `[start, end)` of each token within [`Self::text`].
    pub fn token_char_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(self.tokens.len());
        let mut pos = 0;
        for t in &self.tokens {
            let n = t.0.chars().count();
            out.push(pos..pos + n);
            pos += n + 1;
        }
        out
    }

    /// Builds a span over `range` carrying this sentence's surface text.
    pub fn span(&self, range: Range<usize>, label: &str) -> Span {
        Span {
            text: detokenize(&self.tokens[range.clone()]),
            start: range.start,
            end: range.end,
            label: label.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Prefixes positional ids with the split name (`"test-17"`) so that ids
/// stay unique across the splits of one dataset.
pub fn qualify_ids(sentences: Vec<LabeledSentence>, split: Split) -> Vec<LabeledSentence> {
    sentences
        .into_iter()
        .map(|s| {
            let id = format!("{split}-{}", s.id);
            s.with_id(id)
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub name: String,
    pub language: String,
    pub domain: String,
    train: Vec<LabeledSentence>,
    dev: Vec<LabeledSentence>,
    test: Vec<LabeledSentence>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        language: impl Into<String>,
        domain: impl Into<String>,
        train: Vec<LabeledSentence>,
        dev: Vec<LabeledSentence>,
        test: Vec<LabeledSentence>,
    ) -> Result<Self, CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for s in train.iter().chain(&dev).chain(&test) {
            if !seen.insert(s.id()) {
                return Err(CorpusError::DuplicateId(s.id().to_string()));
            }
        }
        Ok(Dataset { name: name.into(), language: language.into(), domain: domain.into(), train, dev, test })
    }

    pub fn split(&self, split: Split) -> &[LabeledSentence] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> TagSequence {
        parse_tags(&s.split_whitespace().collect::<Vec<_>>()).unwrap()
    }

    fn ranges(s: &str) -> Vec<(usize, usize, String)> {
        tags_to_ranges(tags(s).as_slice()).into_iter().map(|(r, l)| (r.start, r.end, l)).collect()
    }

    #[test]
    fn bio_run_becomes_one_span() {
        assert_eq!(ranges("O B-Skill I-Skill O"), vec![(1, 3, "Skill".into())]);
    }

    #[test]
    fn inside_after_outside_opens_span() {
        assert_eq!(ranges("I-Skill O B-Skill"), vec![(0, 1, "Skill".into()), (2, 3, "Skill".into())]);
    }

    #[test]
    fn label_change_splits_span() {
        assert_eq!(ranges("B-A I-B"), vec![(0, 1, "A".into()), (1, 2, "B".into())]);
    }

    #[test]
    fn spans_to_tags_examples() {
        let s = Span { start: 1, end: 3, label: "Skill".into(), text: String::new() };
        assert_eq!(spans_to_tags(&[s], 4).unwrap(), tags("O B-Skill I-Skill O"));
        assert_eq!(spans_to_tags(&[], 2).unwrap(), tags("O O"));
        let a = Span { start: 0, end: 1, label: "X".into(), text: String::new() };
        let b = Span { start: 1, end: 2, label: "X".into(), text: String::new() };
        assert_eq!(spans_to_tags(&[a.clone(), b], 2).unwrap(), tags("B-X B-X"));
        let c = Span { start: 0, end: 2, label: "X".into(), text: String::new() };
        assert!(matches!(spans_to_tags(&[a, c], 2), Err(CorpusError::OverlappingSpans { .. })));
    }

    #[test]
    fn detokenize_examples() {
        assert_eq!(detokenize(&tokens(&["Windows", "and", "Linux"]).unwrap()), "Windows and Linux");
        assert_eq!(detokenize(&tokens(&["HTML", ",", "JavaScript"]).unwrap()), "HTML , JavaScript");
        assert_eq!(detokenize(&[]), "");
    }

    #[test]
    fn tag_grammar() {
        assert_eq!("O".parse::<Tag>().unwrap(), Tag::Outside);
        assert_eq!("B-Skill".parse::<Tag>().unwrap(), Tag::Begin("Skill".into()));
        for bad in ["B-", "I", "X-Skill", "o", "", "B_Skill", "BSkill"] {
            assert!(bad.parse::<Tag>().is_err(), "{bad}");
        }
    }

    #[test]
    fn token_rejects_whitespace() {
        assert!(Token::new("a b").is_err());
        assert!(Token::new("").is_err());
        assert!(Token::new(",").unwrap().is_punctuation());
        assert!(!Token::new("C++").unwrap().is_punctuation());
    }

    #[test]
    fn sentence_polarity_and_text() {
        let s = LabeledSentence::parse("0", "team player wanted", "B-Skill I-Skill O").unwrap();
        assert!(s.is_positive());
        assert_eq!(s.spans()[0].text, "team player");
        assert_eq!(s.text(), "team player wanted");
        assert_eq!(s.token_char_ranges(), vec![0..4, 5..11, 12..18]);
        let n = LabeledSentence::parse("1", "hello", "O").unwrap();
        assert!(!n.is_positive());
    }

    #[test]
    fn collapse_keeps_boundaries() {
        let s = LabeledSentence::parse("0", "a b c", "B-A I-B O").unwrap();
        let c = s.collapsed();
        assert_eq!(c.spans().len(), 2);
        assert!(c.spans().iter().all(|sp| sp.label == SKILL_LABEL));
        assert_eq!(c.tags(), &tags("B-SKILL B-SKILL O"));
    }

    #[test]
    fn violations_reported() {
        let v = bio_violations(&tags("I-A O B-A I-A I-B"));
        assert_eq!(v.iter().map(|v| v.position).collect::<Vec<_>>(), vec![0, 4]);
    }

    #[test]
    fn dataset_rejects_shared_ids() {
        let s = LabeledSentence::parse("0", "a", "O").unwrap();
        let err = Dataset::new("d", "en", "x", vec![s.clone()], vec![], vec![s.clone()]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(_)));
        let ok = Dataset::new(
            "d",
            "en",
            "x",
            qualify_ids(vec![s.clone()], Split::Train),
            vec![],
            qualify_ids(vec![s], Split::Test),
        )
        .unwrap();
        assert_eq!(ok.split(Split::Test)[0].id(), "test-0");
    }
}
