//! Scripted provider for offline runs and tests.
//!
//! A script maps a query-sentence fingerprint to an ordered list of
//! responses. The response for a request is chosen by how many assistant
//! turns follow the query message, so attempt `i` of the feedback loop gets
//! `responses[i]` (the last response repeats once the list runs out). This
//! keeps the mock stateless and safe to call concurrently.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, CompletionRequest, LlmError};
use crate::corpus::LabeledSentence;
use crate::prompting::{PromptStyle, Role};

/// SHA-256 hex digest of the canonical sentence text.
pub fn fingerprint(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
    responses: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MockScript {
    responses: HashMap<String, Vec<String>>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sentence_text: &str, responses: Vec<String>) {
        self.responses.insert(fingerprint(sentence_text), responses);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// One gold-rendered answer per sentence.
    pub fn oracle<'a>(sentences: impl IntoIterator<Item = &'a LabeledSentence>, style: PromptStyle) -> Self {
        let mut script = MockScript::new();
        for s in sentences {
            script.insert(s.text(), vec![style.render_answer(s)]);
        }
        script
    }

    /// Reads JSONL records `{"sentence" | "fingerprint": …, "responses": […]}`.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let err =
            |e: String| LlmError::Provider { status: None, message: format!("mock script {}: {e}", path.display()) };
        let reader = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
        let mut script = MockScript::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScriptRecord = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            let key = match (rec.fingerprint, rec.sentence) {
                (Some(fp), _) => fp,
                (None, Some(s)) => fingerprint(&s),
                (None, None) => return Err(err(format!("line {}: needs sentence or fingerprint", i + 1))),
            };
            script.responses.insert(key, rec.responses);
        }
        Ok(script)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut keys: Vec<&String> = self.responses.keys().collect();
        keys.sort();
        let mut w = std::io::BufWriter::new(File::create(path)?);
        for k in keys {
            let rec =
                ScriptRecord { sentence: None, fingerprint: Some(k.clone()), responses: self.responses[k].clone() };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        w.flush()
    }
}

pub struct MockProvider {
    script: MockScript,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        MockProvider { script, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        request.validate()?;
        let msgs = &request.messages;
        // the query is the last user message the script knows about
        let found = msgs
            .iter()
            .enumerate()
            .rev()
            .filter(|(_, m)| m.role == Role::User)
            .find_map(|(i, m)| self.script.responses.get(&fingerprint(&m.content)).map(|r| (i, r)));
        let (query_at, responses) = found.ok_or_else(|| LlmError::Provider {
            status: Some(404),
            message: "mock script has no entry for this query".to_string(),
        })?;
        let attempt = msgs[query_at + 1..].iter().filter(|m| m.role == Role::Assistant).count();
        responses
            .get(attempt)
            .or_else(|| responses.last())
            .cloned()
            .ok_or_else(|| LlmError::MalformedResponse("mock script entry has no responses".to_string()))
    }
}
