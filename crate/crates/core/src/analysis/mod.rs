//! Diagnostics over a results file: failure rates, how predictions differ
//! from gold in size and count, empty-prediction counts, and how often gold
//! spans join two skills with a conjunction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledSentence, Span};
use crate::evaluate::{bucket_report, pair_results, Bucket, BucketFeature, EvalError, LabelMode, MatchMode};
use crate::postprocess::{SampleResult, SampleStatus};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("result {0:?} has no gold sentence")]
    IdMismatch(String),
    #[error("no conjunction list for language {0:?}")]
    MissingConjunctionList(String),
    #[error("result {id:?}: {message}")]
    BadPrediction { id: String, message: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FailureStats<T> {
    pub failed: usize,
    /// Samples that got an answer (provider failures excluded).
    pub total: usize,
    /// Percentage of `total`.
    pub rate: T,
    pub provider_failed: usize,
}

pub fn failure_rate<T: Scalar>(results: &[SampleResult]) -> FailureStats<T> {
    let provider_failed = results.iter().filter(|r| r.status == SampleStatus::ProviderFailed).count();
    let failed = results.iter().filter(|r| r.status == SampleStatus::Failed).count();
    let total = results.len() - provider_failed;
    FailureStats { failed, total, rate: T::ratio(failed, total) * T::hundred(), provider_failed }
}

/// Predicted minus gold, over successful samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiffStats<T> {
    /// Mean over samples with both predicted and gold spans of
    /// (mean predicted span length - mean gold span length), in tokens.
    pub span_length_delta: T,
    /// Mean of (#predicted - #gold) spans per sample.
    pub skill_count_delta: T,
    pub samples: usize,
    pub samples_with_both: usize,
}

fn mean_len<T: Scalar>(spans: &[Span]) -> T {
    T::mean(spans.iter().map(|s| T::from_count(s.len())))
}

fn gold_index<'a>(
    results: &'a [SampleResult],
    gold: &'a [LabeledSentence],
) -> Result<Vec<(&'a SampleResult, &'a LabeledSentence)>, AnalysisError> {
    let by_id: HashMap<&str, &LabeledSentence> = gold.iter().map(|s| (s.id(), s)).collect();
    results
        .iter()
        .map(|r| by_id.get(r.id.as_str()).map(|g| (r, *g)).ok_or_else(|| AnalysisError::IdMismatch(r.id.clone())))
        .collect()
}

pub fn diff_stats<T: Scalar>(
    results: &[SampleResult],
    gold: &[LabeledSentence],
) -> Result<DiffStats<T>, AnalysisError> {
    let pairs = gold_index(results, gold)?;
    let mut count_deltas = Vec::new();
    let mut length_deltas = Vec::new();
    for (r, g) in pairs.into_iter().filter(|(r, _)| r.status == SampleStatus::Success) {
        let pred = r.predicted_spans();
        let gold_spans = g.spans();
        count_deltas.push(T::from_count(pred.len()) - T::from_count(gold_spans.len()));
        if !pred.is_empty() && !gold_spans.is_empty() {
            length_deltas.push(mean_len::<T>(&pred) - mean_len::<T>(gold_spans));
        }
    }
    Ok(DiffStats {
        samples: count_deltas.len(),
        samples_with_both: length_deltas.len(),
        span_length_delta: T::mean(length_deltas),
        skill_count_delta: T::mean(count_deltas),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeCounts {
    /// Empty prediction, no gold spans.
    pub true_negatives: usize,
    /// Empty prediction, some gold spans.
    pub false_negatives: usize,
}

/// Failed samples count as predicting nothing; provider failures are
/// skipped.
pub fn negative_counts(results: &[SampleResult], gold: &[LabeledSentence]) -> Result<NegativeCounts, AnalysisError> {
    let mut out = NegativeCounts::default();
    for (r, g) in gold_index(results, gold)? {
        if r.status == SampleStatus::ProviderFailed || !r.predicted.is_empty() {
            continue;
        }
        if g.is_positive() {
            out.false_negatives += 1;
        } else {
            out.true_negatives += 1;
        }
    }
    Ok(out)
}

/// Coordinating conjunctions for the corpora's languages.
pub fn builtin_conjunctions(language: &str) -> Option<&'static [&'static str]> {
    match language.to_ascii_lowercase().as_str() {
        "en" | "english" => Some(&["and", "or"]),
        "de" | "german" => Some(&["und", "oder"]),
        "fr" | "french" => Some(&["et", "ou"]),
        "da" | "danish" => Some(&["og", "eller"]),
        _ => None,
    }
}

/// True when a conjunction sits strictly inside the span with a
/// non-punctuation token somewhere on each side.
pub fn is_conjoined<S: AsRef<str>>(sentence: &LabeledSentence, span: &Span, conjunctions: &[S]) -> bool {
    let toks = &sentence.tokens()[span.range()];
    (1..toks.len().saturating_sub(1)).any(|i| {
        let word = toks[i].as_str();
        conjunctions.iter().any(|c| c.as_ref().eq_ignore_ascii_case(word))
            && toks[..i].iter().any(|t| !t.is_punctuation())
            && toks[i + 1..].iter().any(|t| !t.is_punctuation())
    })
}

/// Percentage of gold spans flagged by [`is_conjoined`].
pub fn conjoined_rate<T: Scalar, S: AsRef<str>>(
    sentences: &[LabeledSentence],
    conjunctions: &[S],
    language: &str,
) -> Result<T, AnalysisError> {
    if conjunctions.is_empty() {
        return Err(AnalysisError::MissingConjunctionList(language.to_string()));
    }
    let mut total = 0;
    let mut flagged = 0;
    for s in sentences {
        for span in s.spans() {
            total += 1;
            flagged += usize::from(is_conjoined(s, span, conjunctions));
        }
    }
    Ok(T::ratio(flagged, total) * T::hundred())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BucketTable<T> {
    pub feature: BucketFeature,
    pub mode: MatchMode,
    pub buckets: Vec<Bucket<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AnalysisReport<T> {
    pub failure: FailureStats<T>,
    pub diff: DiffStats<T>,
    pub negatives: NegativeCounts,
    /// Percentage of gold spans (of the analysed sentences) that are conjoined.
    pub conjoined_gold: T,
    /// Same measure over successful predictions.
    pub conjoined_predicted: T,
    pub buckets: Vec<BucketTable<T>>,
}

/// Everything the `analyze` command reports, computed from one results
/// file and its gold split.
pub fn analyze<T: Scalar, S: AsRef<str>>(
    results: &[SampleResult],
    gold: &[LabeledSentence],
    conjunctions: &[S],
    language: &str,
    edges: &HashMap<BucketFeature, Vec<usize>>,
) -> Result<AnalysisReport<T>, AnalysisError> {
    let paired = pair_results(results, gold)?;
    let predicted_as_gold: Vec<LabeledSentence> = gold_index(results, gold)?
        .into_iter()
        .filter(|(r, _)| r.status == SampleStatus::Success)
        .map(|(r, g)| {
            LabeledSentence::from_spans(g.id(), g.tokens().to_vec(), &r.predicted_spans())
                .map_err(|e| AnalysisError::BadPrediction { id: r.id.clone(), message: e.to_string() })
        })
        .collect::<Result<_, _>>()?;
    let mut buckets = Vec::new();
    for feature in BucketFeature::ALL {
        let feature_edges = edges.get(&feature).map(Vec::as_slice).unwrap_or(feature.default_edges());
        for mode in MatchMode::ALL {
            buckets.push(BucketTable {
                feature,
                mode,
                buckets: bucket_report(&paired.gold, &paired.pred, feature, feature_edges, mode, LabelMode::Agnostic)?,
            });
        }
    }
    Ok(AnalysisReport {
        failure: failure_rate(results),
        diff: diff_stats(results, gold)?,
        negatives: negative_counts(results, gold)?,
        conjoined_gold: conjoined_rate(&paired.gold, conjunctions, language)?,
        conjoined_predicted: conjoined_rate(&predicted_as_gold, conjunctions, language)?,
        buckets,
    })
}
