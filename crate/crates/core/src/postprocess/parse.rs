use std::ops::Range;

use super::MismatchKind;
use crate::prompting::{NER_CLOSE, NER_OPEN, NONE_ANSWER};

fn unify(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '`' | '\u{00B4}' => '\'',
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' => '"',
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' | '\u{2212}' => '-',
        c => c,
    }
}

fn no_space_before(c: char) -> bool {
    matches!(c, ',' | '.' | ';' | ':' | '!' | '?' | ')' | ']' | '}' | '%')
}

fn no_space_after(c: char) -> bool {
    matches!(c, '(' | '[' | '{')
}

/// [`normalize_for_match`] plus, for every output char, the index of the
/// input char it came from.
pub fn normalize_mapped(s: &str) -> (String, Vec<usize>) {
    let mut collapsed: Vec<(char, usize)> = Vec::with_capacity(s.len());
    for (i, c) in s.chars().enumerate() {
        if c.is_whitespace() {
            if collapsed.last().is_some_and(|&(p, _)| p != ' ') {
                collapsed.push((' ', i));
            }
        } else {
            collapsed.push((unify(c), i));
        }
    }
    if collapsed.last().is_some_and(|&(c, _)| c == ' ') {
        collapsed.pop();
    }
    let mut text = String::with_capacity(collapsed.len());
    let mut map = Vec::with_capacity(collapsed.len());
    for (k, &(c, src)) in collapsed.iter().enumerate() {
        if c == ' ' {
            let next = collapsed.get(k + 1).map(|&(n, _)| n);
            let prev = k.checked_sub(1).map(|p| collapsed[p].0);
            if next.is_some_and(no_space_before) || prev.is_some_and(no_space_after) {
                continue;
            }
        }
        text.push(c);
        map.push(src);
    }
    (text, map)
}

/// Canonical form used for lenient comparison: quotes and dashes unified,
/// whitespace collapsed, spaces dropped before closing punctuation and
/// after opening brackets, ends trimmed. Case is kept.
pub fn normalize_for_match(s: &str) -> String {
    normalize_mapped(s).0
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedPrediction {
    pub items: Vec<String>,
    pub is_none: bool,
}

fn strip_marker(line: &str) -> &str {
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return rest;
    }
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r;
        }
    }
    line
}

fn is_none_answer(item: &str) -> bool {
    let item = item.strip_suffix('.').unwrap_or(item);
    item.eq_ignore_ascii_case(NONE_ANSWER)
}

/// One skill per line, with list markers removed. A lone "None" means the
/// model found nothing.
pub fn parse_extraction_output(text: &str) -> Result<ParsedPrediction, MismatchKind> {
    if text.trim().is_empty() {
        return Err(MismatchKind::FormatDrift);
    }
    let items: Vec<String> =
        text.lines().map(|l| strip_marker(l.trim()).trim()).filter(|l| !l.is_empty()).map(str::to_string).collect();
    if let [only] = items.as_slice() {
        if is_none_answer(only) {
            return Ok(ParsedPrediction { items: Vec::new(), is_none: true });
        }
    }
    Ok(ParsedPrediction { items, is_none: false })
}

/// A tagged item and the token range it covers in the original sentence,
/// when the tags sit on (or inside) tokens of a faithful copy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedItem {
    pub text: String,
    pub tokens: Option<Range<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NerPrediction {
    pub items: Vec<TaggedItem>,
}

impl NerPrediction {
    pub fn is_none(&self) -> bool {
        self.items.is_empty()
    }
}

/// Why a tagged output was rejected, with whatever items could be read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NerRejection {
    pub kind: MismatchKind,
    pub items: Vec<String>,
    pub stripped: String,
}

/// Removes balanced `@@…##` pairs, returning the plain text and the char
/// range of each tagged item within it.
fn strip_tags(text: &str) -> Result<(String, Vec<Range<usize>>), MismatchKind> {
    let mut plain = String::with_capacity(text.len());
    let mut chars = 0usize;
    let mut ranges = Vec::new();
    let mut open: Option<usize> = None;
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix(NER_OPEN) {
            if open.is_some() {
                return Err(MismatchKind::TagMalformed);
            }
            open = Some(chars);
            rest = r;
        } else if let Some(r) = rest.strip_prefix(NER_CLOSE) {
            let start = open.take().ok_or(MismatchKind::TagMalformed)?;
            ranges.push(start..chars);
            rest = r;
        } else {
            let c = rest.chars().next().expect("non-empty");
            plain.push(c);
            chars += 1;
            rest = &rest[c.len_utf8()..];
        }
    }
    if open.is_some() {
        return Err(MismatchKind::TagMalformed);
    }
    Ok((plain, ranges))
}

fn char_slice(s: &str, r: Range<usize>) -> String {
    s.chars().skip(r.start).take(r.len()).collect()
}

/// Reads a tagged copy of `original` (the canonical, single-space-joined
/// sentence). The copy must match the original under
/// [`normalize_for_match`] once tags are removed.
pub fn parse_ner_output(text: &str, original: &str) -> Result<NerPrediction, NerRejection> {
    if text.trim().is_empty() {
        return Err(NerRejection { kind: MismatchKind::FormatDrift, items: Vec::new(), stripped: String::new() });
    }
    let (plain, ranges) = strip_tags(text).map_err(|kind| NerRejection {
        kind,
        items: Vec::new(),
        stripped: text.replace(NER_OPEN, "").replace(NER_CLOSE, ""),
    })?;
    let texts: Vec<String> = ranges.iter().map(|r| char_slice(&plain, r.clone()).trim().to_string()).collect();

    let (norm_out, map_out) = normalize_mapped(&plain);
    let (norm_orig, map_orig) = normalize_mapped(original);
    if norm_out != norm_orig {
        return Err(NerRejection { kind: MismatchKind::SentenceEdited, items: texts, stripped: plain });
    }

    // token char ranges of the canonical sentence
    let mut token_starts = Vec::new();
    let mut pos = 0;
    for w in original.split(' ') {
        let n = w.chars().count();
        token_starts.push(pos..pos + n);
        pos += n + 1;
    }

    let items = ranges
        .iter()
        .zip(texts)
        .map(|(r, text)| {
            let first = map_out.iter().position(|&src| src >= r.start && src < r.end);
            let last = map_out.iter().rposition(|&src| src >= r.start && src < r.end);
            let tokens = match (first, last) {
                (Some(a), Some(b)) => {
                    let (ca, cb) = (map_orig[a], map_orig[b]);
                    let start = token_starts.iter().position(|t| t.end > ca);
                    let end = token_starts.iter().rposition(|t| t.start <= cb).map(|e| e + 1);
                    match (start, end) {
                        (Some(s), Some(e)) if s < e => Some(s..e),
                        _ => None,
                    }
                }
                _ => None,
            };
            TaggedItem { text, tokens }
        })
        .collect();
    Ok(NerPrediction { items })
}
