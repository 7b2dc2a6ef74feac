//! Span-level precision, recall and F1 under exact and overlap matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ranges_overlap, LabeledSentence, Span};
use crate::postprocess::{SampleResult, SampleStatus};
use crate::scalar::Scalar;

/// Spans per sentence id.
pub type SpanMap = BTreeMap<String, Vec<Span>>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("sentence ids differ: {only_gold} only in gold, {only_pred} only in predictions (e.g. {example:?})")]
    SentenceIdMismatch { only_gold: usize, only_pred: usize, example: String },
    #[error("bucket edges must be a non-empty list")]
    EmptyBucketsConfig,
    #[error("nothing to average")]
    NoReports,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp_pred: usize,
    pub n_pred: usize,
    pub tp_gold: usize,
    pub n_gold: usize,
}

impl MatchCounts {
    fn add(&mut self, other: MatchCounts) {
        self.tp_pred += other.tp_pred;
        self.n_pred += other.n_pred;
        self.tp_gold += other.tp_gold;
        self.n_gold += other.n_gold;
    }

    /// Micro P/R/F1. Zero denominators give 0.
    pub fn report<T: Scalar>(self) -> Report<T> {
        let p = T::ratio(self.tp_pred, self.n_pred);
        let r = T::ratio(self.tp_gold, self.n_gold);
        let two = T::one() + T::one();
        let f1 = if (p + r).is_zero() { T::zero() } else { two * p * r / (p + r) };
        Report { precision: p, recall: r, f1, counts: self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Report<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub counts: MatchCounts,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Only boundaries matter.
    #[default]
    Agnostic,
    /// Labels must agree too.
    Aware,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Strict,
    Relax,
}

impl MatchMode {
    pub const ALL: [MatchMode; 2] = [MatchMode::Strict, MatchMode::Relax];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Strict => "strict",
            MatchMode::Relax => "relax",
        }
    }
}

fn check_ids(gold: &SpanMap, pred: &SpanMap) -> Result<(), EvalError> {
    if gold.len() == pred.len() && gold.keys().eq(pred.keys()) {
        return Ok(());
    }
    let only_gold: Vec<&String> = gold.keys().filter(|k| !pred.contains_key(*k)).collect();
    let only_pred: Vec<&String> = pred.keys().filter(|k| !gold.contains_key(*k)).collect();
    Err(EvalError::SentenceIdMismatch {
        only_gold: only_gold.len(),
        only_pred: only_pred.len(),
        example: only_gold.first().or(only_pred.first()).map(|s| s.to_string()).unwrap_or_default(),
    })
}

fn labels_agree(mode: LabelMode, a: &Span, b: &Span) -> bool {
    mode == LabelMode::Agnostic || a.label == b.label
}

fn strict_counts(gold: &[Span], pred: &[Span], mode: LabelMode) -> MatchCounts {
    let key = |s: &Span| (s.start, s.end, if mode == LabelMode::Aware { s.label.clone() } else { String::new() });
    let g: BTreeSet<_> = gold.iter().map(key).collect();
    let p: BTreeSet<_> = pred.iter().map(key).collect();
    let tp = g.intersection(&p).count();
    MatchCounts { tp_pred: tp, n_pred: p.len(), tp_gold: tp, n_gold: g.len() }
}

fn relax_counts(gold: &[Span], pred: &[Span], mode: LabelMode) -> MatchCounts {
    let hit = |a: &Span, others: &[Span]| {
        others.iter().any(|o| labels_agree(mode, a, o) && ranges_overlap(&a.range(), &o.range()))
    };
    MatchCounts {
        tp_pred: pred.iter().filter(|p| hit(p, gold)).count(),
        n_pred: pred.len(),
        tp_gold: gold.iter().filter(|g| hit(g, pred)).count(),
        n_gold: gold.len(),
    }
}

fn counts(gold: &SpanMap, pred: &SpanMap, match_mode: MatchMode, labels: LabelMode) -> Result<MatchCounts, EvalError> {
    check_ids(gold, pred)?;
    let mut total = MatchCounts::default();
    for (id, g) in gold {
        let p = &pred[id];
        total.add(match match_mode {
            MatchMode::Strict => strict_counts(g, p, labels),
            MatchMode::Relax => relax_counts(g, p, labels),
        });
    }
    Ok(total)
}

/// Exact-boundary matching, micro-averaged over sentences. Duplicate spans
/// within a sentence count once.
pub fn strict_prf<T: Scalar>(gold: &SpanMap, pred: &SpanMap, labels: LabelMode) -> Result<Report<T>, EvalError> {
    counts(gold, pred, MatchMode::Strict, labels).map(MatchCounts::report)
}

/// Overlap matching: a prediction is correct when it shares a token with
/// some gold span; a gold span is found when some prediction overlaps it.
pub fn relax_prf<T: Scalar>(gold: &SpanMap, pred: &SpanMap, labels: LabelMode) -> Result<Report<T>, EvalError> {
    counts(gold, pred, MatchMode::Relax, labels).map(MatchCounts::report)
}

pub fn prf<T: Scalar>(
    gold: &SpanMap,
    pred: &SpanMap,
    mode: MatchMode,
    labels: LabelMode,
) -> Result<Report<T>, EvalError> {
    counts(gold, pred, mode, labels).map(MatchCounts::report)
}

/// Gold spans of `sentences` keyed by id, with labels collapsed when
/// `labels` is agnostic.
pub fn gold_span_map(sentences: &[LabeledSentence], labels: LabelMode) -> SpanMap {
    sentences
        .iter()
        .map(|s| {
            let spans = match labels {
                LabelMode::Agnostic => s.collapsed().spans().to_vec(),
                LabelMode::Aware => s.spans().to_vec(),
            };
            (s.id().to_string(), spans)
        })
        .collect()
}

/// Gold sentences and predictions for the samples in a results file.
#[derive(Clone, Debug, Default)]
pub struct Paired {
    pub gold: Vec<LabeledSentence>,
    pub pred: SpanMap,
    /// Samples left out because the provider never answered.
    pub provider_failed: usize,
}

/// Lines results up with their gold sentences. Gold sentences without a
/// result are left out, so partial runs evaluate on what was run.
/// Provider failures are not model predictions and are skipped.
pub fn pair_results(results: &[SampleResult], gold: &[LabeledSentence]) -> Result<Paired, EvalError> {
    let by_id: BTreeMap<&str, &LabeledSentence> = gold.iter().map(|s| (s.id(), s)).collect();
    let unknown: Vec<&str> = results.iter().map(|r| r.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    if let Some(first) = unknown.first() {
        return Err(EvalError::SentenceIdMismatch {
            only_gold: 0,
            only_pred: unknown.len(),
            example: first.to_string(),
        });
    }
    let mut paired = Paired::default();
    for r in results {
        if r.status == SampleStatus::ProviderFailed {
            paired.provider_failed += 1;
            continue;
        }
        paired.gold.push(by_id[r.id.as_str()].clone());
        paired.pred.insert(r.id.clone(), r.predicted_spans());
    }
    Ok(paired)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketFeature {
    NumSkills,
    SpanLength,
    SentenceLength,
}

impl BucketFeature {
    pub const ALL: [BucketFeature; 3] =
        [BucketFeature::NumSkills, BucketFeature::SpanLength, BucketFeature::SentenceLength];

    /// Lower bounds of the default buckets; the last bucket is open.
    pub fn default_edges(self) -> &'static [usize] {
        match self {
            BucketFeature::NumSkills => &[1, 2, 3, 4, 5],
            BucketFeature::SpanLength => &[1, 2, 3, 4, 6],
            BucketFeature::SentenceLength => &[1, 3, 6, 11, 21, 41],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Bucket<T> {
    pub label: String,
    pub lower: usize,
    /// Inclusive upper bound; `None` for the last, open bucket.
    pub upper: Option<usize>,
    pub report: Report<T>,
}

fn bucket_of(edges: &[usize], value: usize) -> Option<usize> {
    edges.iter().rposition(|&e| value >= e)
}

/// Metrics within buckets of a feature. Sentences are bucketed by gold skill
/// count (skill-free sentences left out) or token count; for span length,
/// gold and predicted spans are each bucketed by their own length. `edges`
/// are ascending lower bounds and the last bucket is unbounded. Values
/// below the first edge are not counted.
pub fn bucket_report<T: Scalar>(
    gold: &[LabeledSentence],
    pred: &SpanMap,
    feature: BucketFeature,
    edges: &[usize],
    mode: MatchMode,
    labels: LabelMode,
) -> Result<Vec<Bucket<T>>, EvalError> {
    if edges.is_empty() {
        return Err(EvalError::EmptyBucketsConfig);
    }
    let mut edges = edges.to_vec();
    edges.sort_unstable();
    edges.dedup();
    let gold_map = gold_span_map(gold, labels);
    check_ids(&gold_map, pred)?;

    let mut per_bucket: Vec<(SpanMap, SpanMap)> = vec![Default::default(); edges.len()];
    for s in gold {
        let id = s.id().to_string();
        let (g, p) = (&gold_map[&id], &pred[&id]);
        match feature {
            BucketFeature::NumSkills | BucketFeature::SentenceLength => {
                let value = if feature == BucketFeature::NumSkills { g.len() } else { s.len() };
                if feature == BucketFeature::NumSkills && value == 0 {
                    continue;
                }
                if let Some(b) = bucket_of(&edges, value) {
                    per_bucket[b].0.insert(id.clone(), g.clone());
                    per_bucket[b].1.insert(id, p.clone());
                }
            }
            BucketFeature::SpanLength => {
                for (b, (gm, pm)) in per_bucket.iter_mut().enumerate() {
                    let keep = |sp: &&Span| bucket_of(&edges, sp.len()) == Some(b);
                    gm.insert(id.clone(), g.iter().filter(keep).cloned().collect());
                    pm.insert(id.clone(), p.iter().filter(keep).cloned().collect());
                }
            }
        }
    }

    per_bucket
        .into_iter()
        .enumerate()
        .map(|(b, (gm, pm))| {
            let lower = edges[b];
            let upper = edges.get(b + 1).map(|n| n - 1);
            let label = match upper {
                Some(u) if u == lower => lower.to_string(),
                Some(u) => format!("{lower}-{u}"),
                None => format!("{lower}+"),
            };
            Ok(Bucket { label, lower, upper, report: prf(&gm, &pm, mode, labels)? })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MacroAverage<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub datasets: usize,
}

/// Unweighted mean of per-dataset P, R and F1.
pub fn macro_average<T: Scalar>(reports: &[Report<T>]) -> Result<MacroAverage<T>, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    Ok(MacroAverage {
        precision: T::mean(reports.iter().map(|r| r.precision)),
        recall: T::mean(reports.iter().map(|r| r.recall)),
        f1: T::mean(reports.iter().map(|r| r.f1)),
        datasets: reports.len(),
    })
}

/// One line of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalRow<T> {
    pub dataset: String,
    pub mode: MatchMode,
    #[serde(flatten)]
    pub report: Report<T>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `dataset,mode,precision,recall,f1` with scores as percentages.
pub fn rows_to_csv<T: Scalar>(rows: &[EvalRow<T>]) -> String {
    let mut out = String::from("dataset,mode,precision,recall,f1\n");
    for r in rows {
        let pct = |x: T| x * T::hundred();
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2}",
            csv_field(&r.dataset),
            r.mode.as_str(),
            pct(r.report.precision),
            pct(r.report.recall),
            pct(r.report.f1)
        );
    }
    out
}
