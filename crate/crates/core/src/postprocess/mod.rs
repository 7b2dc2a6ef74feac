//! Turning model output into token spans, and the feedback loop that asks
//! the model to repair outputs that do not match the sentence.

mod align;
mod parse;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledSentence, Span, SKILL_LABEL};
use crate::llm::Client;
use crate::prompting::{build_feedback, ChatMessage, PromptError, PromptStyle, RenderedPrompt, TemplateStore};

pub use self::align::{align_span, AlignStage};
pub use self::parse::{
    normalize_for_match, normalize_mapped, parse_extraction_output, parse_ner_output, NerPrediction, NerRejection,
    ParsedPrediction, TaggedItem,
};

/// Feedback rounds after the first completion.
pub const MAX_FEEDBACK_ROUNDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MismatchKind {
    TagMalformed,
    SentenceEdited,
    SpanNotFound,
    FormatDrift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SampleStatus {
    Success,
    Failed,
    ProviderFailed,
}

/// A predicted span as stored in results files. The label is implied.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl SpanRecord {
    pub fn to_span(&self) -> Span {
        Span { start: self.start, end: self.end, label: SKILL_LABEL.to_string(), text: self.text.clone() }
    }
}

impl From<&Span> for SpanRecord {
    fn from(s: &Span) -> Self {
        SpanRecord { start: s.start, end: s.end, text: s.text.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Misaligned {
    pub text: String,
    pub kind: MismatchKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionAttempt {
    pub attempt_index: usize,
    pub raw_output: String,
    pub aligned: Vec<SpanRecord>,
    pub misaligned: Vec<Misaligned>,
}

impl ExtractionAttempt {
    pub fn is_clean(&self) -> bool {
        self.misaligned.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub dataset: String,
    pub style: PromptStyle,
    pub status: SampleStatus,
    pub attempts: Vec<ExtractionAttempt>,
    pub predicted: Vec<SpanRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleResult {
    pub fn predicted_spans(&self) -> Vec<Span> {
        self.predicted.iter().map(SpanRecord::to_span).collect()
    }
}

/// Outcome of checking one completion: the attempt record plus the items to
/// quote back in the feedback message.
struct Checked {
    attempt: ExtractionAttempt,
    correct: Vec<String>,
    incorrect: Vec<String>,
}

fn check_extraction(index: usize, raw: &str, sentence: &LabeledSentence) -> Checked {
    let mut attempt =
        ExtractionAttempt { attempt_index: index, raw_output: raw.to_string(), aligned: vec![], misaligned: vec![] };
    let (mut correct, mut incorrect) = (Vec::new(), Vec::new());
    match parse_extraction_output(raw) {
        Err(kind) => attempt.misaligned.push(Misaligned { text: raw.to_string(), kind }),
        Ok(parsed) => {
            let mut consumed = Vec::new();
            for item in parsed.items {
                match align_span(&item, sentence, &mut consumed) {
                    Ok((span, _)) => {
                        attempt.aligned.push(SpanRecord::from(&span));
                        correct.push(item);
                    }
                    Err(kind) => {
                        attempt.misaligned.push(Misaligned { text: item.clone(), kind });
                        incorrect.push(item);
                    }
                }
            }
        }
    }
    attempt.aligned.sort_by_key(|s| s.start);
    Checked { attempt, correct, incorrect }
}

fn check_ner(index: usize, raw: &str, sentence: &LabeledSentence) -> Checked {
    let mut attempt =
        ExtractionAttempt { attempt_index: index, raw_output: raw.to_string(), aligned: vec![], misaligned: vec![] };
    let mut correct = Vec::new();
    match parse_ner_output(raw, sentence.text()) {
        Ok(parsed) => {
            let mut taken: Vec<std::ops::Range<usize>> = Vec::new();
            for item in parsed.items {
                match item.tokens {
                    Some(r) if !taken.iter().any(|t| t.start < r.end && r.start < t.end) => {
                        attempt.aligned.push(SpanRecord::from(&sentence.span(r.clone(), SKILL_LABEL)));
                        taken.push(r);
                        correct.push(item.text);
                    }
                    // a tag pair that snapped onto no token or onto an already
                    // tagged token is dropped; the copy itself is still faithful
                    _ => tracing::debug!(item = %item.text, "tagged item has no token span"),
                }
            }
        }
        Err(rejection) => {
            let mut consumed = Vec::new();
            correct =
                rejection.items.into_iter().filter(|item| align_span(item, sentence, &mut consumed).is_ok()).collect();
            let text =
                if rejection.kind == MismatchKind::SentenceEdited { rejection.stripped } else { raw.to_string() };
            attempt.misaligned.push(Misaligned { text, kind: rejection.kind });
        }
    }
    Checked { attempt, correct, incorrect: Vec::new() }
}

/// Queries the model for one sentence, re-prompting with feedback after
/// any unusable answer, for at most `max_feedback` rounds.
///
/// A sample that is still not clean after the last round is `Failed` and
/// predicts nothing; its attempts are kept. Provider errors end the sample
/// as `ProviderFailed`.
pub fn run_sample(
    dataset: &str,
    style: PromptStyle,
    sentence: &LabeledSentence,
    prompt: &RenderedPrompt,
    client: &Client,
    store: &TemplateStore,
    max_feedback: usize,
) -> Result<SampleResult, PromptError> {
    let mut result = SampleResult {
        id: sentence.id().to_string(),
        dataset: dataset.to_string(),
        style,
        status: SampleStatus::Failed,
        attempts: Vec::new(),
        predicted: Vec::new(),
        error: None,
    };
    let mut messages = prompt.messages.clone();
    for index in 0..=max_feedback {
        let raw = match client.complete(&messages) {
            Ok(c) => c.text,
            Err(e) => {
                result.status = SampleStatus::ProviderFailed;
                result.error = Some(e.to_string());
                return Ok(result);
            }
        };
        let checked = match style {
            PromptStyle::Extraction => check_extraction(index, &raw, sentence),
            PromptStyle::Ner => check_ner(index, &raw, sentence),
        };
        let clean = checked.attempt.is_clean();
        result.attempts.push(checked.attempt);
        if clean {
            result.status = SampleStatus::Success;
            result.predicted = result.attempts.last().expect("just pushed").aligned.clone();
            return Ok(result);
        }
        if index < max_feedback {
            messages.push(ChatMessage::assistant(raw));
            messages.push(ChatMessage::user(build_feedback(store, style, &checked.correct, &checked.incorrect)?));
        }
    }
    Ok(result)
}

pub fn write_result<W: Write>(result: &SampleResult, mut w: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, result)?;
    writeln!(w)
}

#[derive(Debug, thiserror::Error)]
pub enum ResultsError {
    #[error("{path}:{line}: {message}")]
    BadRecord { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a results file. A truncated final line (an interrupted write) is
/// skipped with a warning; corruption elsewhere is an error.
pub fn read_results(path: &Path) -> Result<Vec<SampleResult>, ResultsError> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if Some(i) == last && e.is_eof() => {
                tracing::warn!(path = %path.display(), line = i + 1, "ignoring truncated final record");
            }
            Err(e) => {
                return Err(ResultsError::BadRecord {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Keeps the last record per id, in order of first appearance. A rerun
/// appends fresh records for retried samples, so the last one is current.
pub fn latest_by_id(results: Vec<SampleResult>) -> Vec<SampleResult> {
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut out: Vec<SampleResult> = Vec::with_capacity(results.len());
    for r in results {
        match index.get(&r.id) {
            Some(&i) => out[i] = r,
            None => {
                index.insert(r.id.clone(), out.len());
                out.push(r);
            }
        }
    }
    out
}
