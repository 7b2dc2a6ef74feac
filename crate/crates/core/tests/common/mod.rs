#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde::Deserialize;
use skillharness::corpus::{parse_tags, tags_to_spans, tokens, LabeledSentence};
use skillharness::evaluate::SpanMap;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[derive(Deserialize)]
pub struct EntityCase {
    pub tags: Vec<String>,
    pub entities: Vec<(String, usize, usize)>,
}

#[derive(Deserialize)]
pub struct PrfCase {
    pub gold: Vec<Vec<String>>,
    pub pred: Vec<Vec<String>>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Deserialize)]
pub struct PrfFixtures {
    pub named: PrfCase,
    pub cases: Vec<PrfCase>,
}

pub fn entity_cases() -> Vec<EntityCase> {
    let text = std::fs::read_to_string(fixtures().join("seqeval_entities.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn prf_fixtures() -> PrfFixtures {
    let text = std::fs::read_to_string(fixtures().join("seqeval_prf.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Span map over placeholder tokens, one entry per tag sequence.
pub fn span_map(sequences: &[Vec<String>]) -> SpanMap {
    sequences
        .iter()
        .enumerate()
        .map(|(i, tags)| {
            let words: Vec<String> = (0..tags.len()).map(|j| format!("w{j}")).collect();
            let spans = tags_to_spans(&parse_tags(tags).unwrap(), &tokens(&words).unwrap());
            (i.to_string(), spans)
        })
        .collect()
}

/// Sentence `w0 w1 ...` of length `n` with the given spans labeled SKILL.
pub fn sentence_with(id: &str, n: usize, ranges: &[(usize, usize)]) -> LabeledSentence {
    let words: Vec<String> = (0..n).map(|j| format!("w{j}")).collect();
    let mut tags = vec!["O".to_string(); n];
    for &(s, e) in ranges {
        tags[s] = "B-SKILL".into();
        for t in &mut tags[s + 1..e] {
            *t = "I-SKILL".into();
        }
    }
    LabeledSentence::new(id, tokens(&words).unwrap(), parse_tags(&tags).unwrap()).unwrap()
}

/// Minimal mock-oracle experiment config over the bundled mini corpus.
pub fn mini_config(dir: &Path, style: &str, k: usize, extra: &str) -> PathBuf {
    let mini = fixtures().join("mini");
    let text = format!(
        r#"[dataset]
name = "mini"
language = "en"
domain = "general job ads"
skill_type = "hard and soft skills"
train = "{train}"
test = "{test}"

[prompt]
style = "{style}"

[selection]
mode = "random"
k = {k}
seed = 11

[provider]
kind = "mock"
mock_oracle = true
model = "mock-model"

[run]
output = "results.jsonl"
cache = "cache.jsonl"
{extra}
"#,
        train = mini.join("train.conll").display(),
        test = mini.join("test.conll").display(),
    );
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}
