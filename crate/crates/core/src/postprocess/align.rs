use std::ops::Range;

use super::parse::normalize_for_match;
use super::MismatchKind;
use crate::corpus::{is_punctuation_only, ranges_overlap, LabeledSentence, Span, SKILL_LABEL};

/// Which matching stage produced an alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AlignStage {
    Exact,
    Normalized,
    CaseInsensitive,
    TokenSequence,
}

fn squash(s: &str) -> String {
    normalize_for_match(s).chars().filter(|c| !c.is_whitespace()).flat_map(char::to_lowercase).collect()
}

/// Leftmost token range whose text satisfies `accept`, skipping ranges that
/// overlap `consumed`. Shorter ranges win at the same start.
fn scan(
    sentence: &LabeledSentence,
    consumed: &[Range<usize>],
    mut accept: impl FnMut(Range<usize>, &str) -> bool,
) -> Option<Range<usize>> {
    let tokens = sentence.tokens();
    for start in 0..tokens.len() {
        let mut text = String::new();
        for end in start + 1..=tokens.len() {
            if end > start + 1 {
                text.push(' ');
            }
            text.push_str(tokens[end - 1].as_str());
            let range = start..end;
            if consumed.iter().any(|c| ranges_overlap(c, &range)) {
                break;
            }
            if accept(range.clone(), &text) {
                return Some(range);
            }
        }
    }
    None
}

/// Finds `item` in `sentence` with progressively looser matching and marks
/// the hit in `consumed`. Stages, first hit wins: exact text at token
/// boundaries; both sides normalized; normalized and case-folded; and
/// case-folded token concatenation with whitespace ignored and
/// punctuation-only pieces trimmed from the item's edges.
pub fn align_span(
    item: &str,
    sentence: &LabeledSentence,
    consumed: &mut Vec<Range<usize>>,
) -> Result<(Span, AlignStage), MismatchKind> {
    let item = item.trim();
    if item.is_empty() {
        return Err(MismatchKind::SpanNotFound);
    }
    let found = scan(sentence, consumed, |_, text| text == item)
        .map(|r| (r, AlignStage::Exact))
        .or_else(|| {
            let target = normalize_for_match(item);
            scan(sentence, consumed, |_, text| normalize_for_match(text) == target).map(|r| (r, AlignStage::Normalized))
        })
        .or_else(|| {
            let target = normalize_for_match(item).to_lowercase();
            scan(sentence, consumed, |_, text| normalize_for_match(text).to_lowercase() == target)
                .map(|r| (r, AlignStage::CaseInsensitive))
        })
        .or_else(|| {
            let pieces: Vec<&str> = item.split_whitespace().collect();
            let first = pieces.iter().position(|p| !is_punctuation_only(p))?;
            let last = pieces.iter().rposition(|p| !is_punctuation_only(p))?;
            let target = squash(&pieces[first..=last].join(" "));
            let tokens = sentence.tokens();
            scan(sentence, consumed, |r, text| {
                !tokens[r.start].is_punctuation() && !tokens[r.end - 1].is_punctuation() && squash(text) == target
            })
            .map(|r| (r, AlignStage::TokenSequence))
        });
    let (range, stage) = found.ok_or(MismatchKind::SpanNotFound)?;
    consumed.push(range.clone());
    Ok((sentence.span(range, SKILL_LABEL), stage))
}
