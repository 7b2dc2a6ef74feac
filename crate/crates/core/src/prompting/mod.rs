//! Prompt rendering for the two output formats.
//!
//! Extraction-style answers list one skill per line (`None` when empty);
//! NER-style answers replicate the sentence with every skill wrapped in
//! `@@` … `##`.

mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledSentence;

pub use self::templates::{render, DatasetProfile, TemplateStore};

pub const NER_OPEN: &str = "@@";
pub const NER_CLOSE: &str = "##";
pub const NONE_ANSWER: &str = "None";
pub const DEFAULT_CONTEXT_BUDGET: usize = 4096;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt needs ~{estimated} tokens, budget is {budget}")]
    ContextOverflow { estimated: usize, budget: usize },
    #[error("demonstration rendered for {found} used in a {expected} prompt")]
    StyleMismatch { expected: PromptStyle, found: PromptStyle },
    #[error("template: {0}")]
    Template(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PromptStyle {
    Extraction,
    Ner,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 2] = [PromptStyle::Extraction, PromptStyle::Ner];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::Extraction => "EXTRACTION",
            PromptStyle::Ner => "NER",
        }
    }

    fn template_file(self) -> &'static str {
        match self {
            PromptStyle::Extraction => "extraction.txt",
            PromptStyle::Ner => "ner.txt",
        }
    }

    /// The gold answer for `sentence` in this style.
    pub fn render_answer(self, sentence: &LabeledSentence) -> String {
        match self {
            PromptStyle::Extraction => render_extraction_answer(sentence),
            PromptStyle::Ner => render_ner_answer(sentence),
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "extraction" | "extract" => Ok(PromptStyle::Extraction),
            "ner" => Ok(PromptStyle::Ner),
            other => Err(format!("unknown prompt style {other:?} (expected extraction or ner)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub system: String,
    pub task: String,
    pub dataset_specific: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn of(sentence: &LabeledSentence) -> Self {
        if sentence.is_positive() {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Demonstration {
    pub sentence: LabeledSentence,
    pub rendered_answer: String,
    pub polarity: Polarity,
    pub style: PromptStyle,
}

impl Demonstration {
    pub fn new(sentence: LabeledSentence, style: PromptStyle) -> Self {
        Demonstration {
            rendered_answer: style.render_answer(&sentence),
            polarity: Polarity::of(&sentence),
            sentence,
            style,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
}

impl RenderedPrompt {
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.messages)
    }
}

/// Character-count heuristic: ceil(chars / 4) per message.
pub fn estimate_tokens(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| m.content.chars().count().div_ceil(4)).sum()
}

pub fn render_extraction_answer(sentence: &LabeledSentence) -> String {
    if sentence.spans().is_empty() {
        return NONE_ANSWER.to_string();
    }
    sentence.spans().iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n")
}

pub fn render_ner_answer(sentence: &LabeledSentence) -> String {
    let mut out = String::with_capacity(sentence.text().len() + 4 * sentence.spans().len());
    let mut spans = sentence.spans().iter().peekable();
    let mut open_end = None;
    for (i, tok) in sentence.tokens().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        if let Some(span) = spans.next_if(|s| s.start == i) {
            out.push_str(NER_OPEN);
            open_end = Some(span.end);
        }
        out.push_str(tok.as_str());
        if open_end == Some(i + 1) {
            out.push_str(NER_CLOSE);
            open_end = None;
        }
    }
    out
}

/// Orders demonstrations so polarities alternate and the most similar
/// candidates sit nearest the query. Inputs are ranked best-first.
pub fn order_demonstrations<T>(positives: Vec<T>, negatives: Vec<T>) -> Vec<T> {
    let depth = positives.len().max(negatives.len());
    let mut pos: Vec<Option<T>> = positives.into_iter().map(Some).collect();
    let mut neg: Vec<Option<T>> = negatives.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(pos.len() + neg.len());
    for rank in (0..depth).rev() {
        if let Some(p) = pos.get_mut(rank).and_then(Option::take) {
            out.push(p);
        }
        if let Some(n) = neg.get_mut(rank).and_then(Option::take) {
            out.push(n);
        }
    }
    out
}

/// Renders `[system] + (user, assistant) per demonstration + [user query]`.
pub fn build_prompt(
    style: PromptStyle,
    instructions: &InstructionSet,
    demos: &[Demonstration],
    query: &LabeledSentence,
    context_budget: usize,
) -> Result<RenderedPrompt, PromptError> {
    let mut messages = Vec::with_capacity(2 + 2 * demos.len());
    let system = if instructions.system.is_empty() {
        instructions.task.clone()
    } else {
        format!("{}\n{}", instructions.system, instructions.task)
    };
    messages.push(ChatMessage::system(system));
    for d in demos {
        if d.style != style {
            return Err(PromptError::StyleMismatch { expected: style, found: d.style });
        }
        messages.push(ChatMessage::user(d.sentence.text()));
        messages.push(ChatMessage::assistant(d.rendered_answer.clone()));
    }
    messages.push(ChatMessage::user(query.text()));

    let estimated = estimate_tokens(&messages);
    if estimated > context_budget {
        return Err(PromptError::ContextOverflow { estimated, budget: context_budget });
    }
    Ok(RenderedPrompt { messages })
}

/// [`build_prompt`], dropping demonstrations from the front (least similar
/// first) until the prompt fits. Returns the prompt and the number dropped.
pub fn fit_prompt(
    style: PromptStyle,
    instructions: &InstructionSet,
    demos: &[Demonstration],
    query: &LabeledSentence,
    context_budget: usize,
) -> Result<(RenderedPrompt, usize), PromptError> {
    let mut dropped = 0;
    loop {
        match build_prompt(style, instructions, &demos[dropped..], query, context_budget) {
            Ok(p) => return Ok((p, dropped)),
            Err(PromptError::ContextOverflow { .. }) if dropped < demos.len() => dropped += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Fills the style's feedback template with comma-separated skill lists.
pub fn build_feedback(
    store: &TemplateStore,
    style: PromptStyle,
    correct: &[String],
    incorrect: &[String],
) -> Result<String, PromptError> {
    let template = store.feedback(style)?;
    let correct = correct.join(", ");
    let incorrect = incorrect.join(", ");
    let vars = BTreeMap::from([("correct", correct.as_str()), ("incorrect", incorrect.as_str())]);
    render(&template, &vars)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(words: &str, tags: &str) -> LabeledSentence {
        LabeledSentence::parse("q", words, tags).unwrap()
    }

    fn instr() -> InstructionSet {
        InstructionSet { system: "sys".into(), task: "task".into(), dataset_specific: false }
    }

    #[test]
    fn extraction_answers() {
        let s = sent("creative and confident", "B-S O B-S");
        assert_eq!(render_extraction_answer(&s), "creative\nconfident");
        assert_eq!(render_extraction_answer(&sent("nothing here", "O O")), "None");
        let s = sent("meeting deadlines this could be", "B-S I-S O O O");
        assert_eq!(render_extraction_answer(&s), "meeting deadlines");
    }

    #[test]
    fn ner_answers() {
        assert_eq!(render_ner_answer(&sent("good with Selenium", "O O B-S")), "good with @@Selenium##");
        assert_eq!(render_ner_answer(&sent("good with Selenium", "O O O")), "good with Selenium");
        assert_eq!(render_ner_answer(&sent("a b", "B-S B-S")), "@@a## @@b##");
        assert_eq!(render_ner_answer(&sent("x a b c", "O B-S I-S I-S")), "x @@a b c##");
    }

    #[test]
    fn prompt_shapes() {
        let q = sent("query text", "O O");
        let p = build_prompt(PromptStyle::Ner, &instr(), &[], &q, DEFAULT_CONTEXT_BUDGET).unwrap();
        assert_eq!(p.messages.len(), 2);
        assert_eq!(p.messages[0], ChatMessage::system("sys\ntask"));
        assert_eq!(p.messages[1], ChatMessage::user("query text"));

        let pos: Vec<_> = (0..5).map(|i| Demonstration::new(sent(&format!("p{i}"), "B-S"), PromptStyle::Ner)).collect();
        let neg: Vec<_> = (0..5).map(|i| Demonstration::new(sent(&format!("n{i}"), "O"), PromptStyle::Ner)).collect();
        let demos = order_demonstrations(pos, neg);
        let p = build_prompt(PromptStyle::Ner, &instr(), &demos, &q, DEFAULT_CONTEXT_BUDGET).unwrap();
        // system + 10 (user, assistant) pairs + query
        assert_eq!(p.messages.len(), 22);
        assert_eq!(p.messages[17].content, "p0");
        assert_eq!(p.messages[18].content, "@@p0##");
        assert_eq!(p.messages[19].content, "n0");
        assert_eq!(p.messages[20].content, "n0");
        assert_eq!(p.messages[21].content, "query text");
        let roles: Vec<Role> = p.messages[1..21].iter().map(|m| m.role).collect();
        assert!(roles.chunks(2).all(|c| c == [Role::User, Role::Assistant]));
    }

    #[test]
    fn style_mismatch_rejected() {
        let d = Demonstration::new(sent("a", "B-S"), PromptStyle::Extraction);
        let err = build_prompt(PromptStyle::Ner, &instr(), &[d], &sent("q", "O"), 4096).unwrap_err();
        assert!(matches!(err, PromptError::StyleMismatch { .. }));
    }

    #[test]
    fn ordering_alternates_best_last() {
        assert_eq!(order_demonstrations(vec!["p0", "p1"], vec!["n0", "n1"]), ["p1", "n1", "p0", "n0"]);
        assert_eq!(order_demonstrations(vec!["p0", "p1", "p2"], vec!["n0"]), ["p2", "p1", "p0", "n0"]);
        assert!(order_demonstrations::<u8>(vec![], vec![]).is_empty());
    }

    #[test]
    fn overflow_and_truncation() {
        let q = sent("q", "O");
        let long = "w ".repeat(40);
        let demos: Vec<_> = (0..4)
            .map(|i| Demonstration::new(sent(&format!("{long} d{i}"), &"O ".repeat(41)), PromptStyle::Extraction))
            .collect();
        let full = build_prompt(PromptStyle::Extraction, &instr(), &demos, &q, 100_000).unwrap();
        let budget = full.estimated_tokens() - 10;
        assert!(matches!(
            build_prompt(PromptStyle::Extraction, &instr(), &demos, &q, budget),
            Err(PromptError::ContextOverflow { .. })
        ));
        let (p, dropped) = fit_prompt(PromptStyle::Extraction, &instr(), &demos, &q, budget).unwrap();
        assert_eq!(dropped, 1);
        assert!(p.messages[1].content.ends_with("d1"));
        assert!(fit_prompt(PromptStyle::Extraction, &instr(), &demos, &q, 1).is_err());
    }

    #[test]
    fn feedback_templates() {
        let store = TemplateStore::builtin();
        let msg =
            build_feedback(&store, PromptStyle::Extraction, &["HTML".to_string()], &["web based testing".to_string()])
                .unwrap();
        assert!(msg.starts_with("You have correctly extracted these skills: HTML. "));
        assert!(
            msg.contains("either absent or not written the same way as in the original sentence: web based testing.")
        );

        let msg = build_feedback(&store, PromptStyle::Extraction, &[], &["x".into(), "y".into()]).unwrap();
        assert!(msg.starts_with("You have correctly extracted these skills: . "));
        assert!(msg.contains("original sentence: x, y."));

        let msg = build_feedback(&store, PromptStyle::Ner, &[], &[]).unwrap();
        assert!(msg.starts_with("You didn't correctly replicate the given sentence."));
        assert!(msg.ends_with("with tags '@@' and '##': "));
    }

    #[test]
    fn style_parsing() {
        assert_eq!("ner".parse::<PromptStyle>().unwrap(), PromptStyle::Ner);
        assert_eq!("EXTRACTION".parse::<PromptStyle>().unwrap(), PromptStyle::Extraction);
        assert_eq!(serde_json::to_string(&PromptStyle::Ner).unwrap(), "\"NER\"");
    }
}
