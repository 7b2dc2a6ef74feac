use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CorpusError, LabeledSentence};
use crate::scalar::Scalar;

/// Descriptive statistics of one split, in words and percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CorpusStats<T> {
    pub sentences: usize,
    pub spans: usize,
    pub avg_sentence_len: T,
    pub avg_skills_per_sentence: T,
    pub pct_without_skills: T,
    pub avg_span_len: T,
    /// Distinct span surface forms, case-sensitive.
    pub unique_skills: usize,
}

pub fn compute_stats<T: Scalar>(sentences: &[LabeledSentence]) -> Result<CorpusStats<T>, CorpusError> {
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = sentences.len();
    let tokens: usize = sentences.iter().map(LabeledSentence::len).sum();
    let spans: usize = sentences.iter().map(|s| s.spans().len()).sum();
    let span_tokens: usize = sentences.iter().flat_map(|s| s.spans()).map(|sp| sp.len()).sum();
    let negatives = sentences.iter().filter(|s| !s.is_positive()).count();
    let unique: BTreeSet<&str> = sentences.iter().flat_map(|s| s.spans()).map(|sp| sp.text.as_str()).collect();

    Ok(CorpusStats {
        sentences: n,
        spans,
        avg_sentence_len: T::ratio(tokens, n),
        avg_skills_per_sentence: T::ratio(spans, n),
        pct_without_skills: T::hundred() * T::ratio(negatives, n),
        avg_span_len: T::ratio(span_tokens, spans),
        unique_skills: unique.len(),
    })
}
