use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_tags, CorpusError, LabeledSentence, Tag, TagSequence, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitFormat {
    Conll,
    Jsonl,
}

impl SplitFormat {
    /// `.jsonl` / `.json` are JSON lines; anything else is CoNLL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => SplitFormat::Jsonl,
            _ => SplitFormat::Conll,
        }
    }
}

/// Reads two-column CoNLL: `token<ws>tag` per line, blank line between
/// sentences. Sentence ids are their 0-based position in the stream.
pub fn parse_conll<R: BufRead>(reader: R) -> Result<Vec<LabeledSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut words: Vec<Token> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();

    let flush = |words: &mut Vec<Token>, tags: &mut Vec<Tag>, out: &mut Vec<LabeledSentence>| {
        if !words.is_empty() {
            let id = out.len().to_string();
            let s = LabeledSentence::new(id, std::mem::take(words), TagSequence(std::mem::take(tags)))
                .expect("columns are paired per line");
            out.push(s);
        }
    };

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let line = if idx == 0 { line.trim_start_matches('\u{feff}') } else { line.as_str() };
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols.as_slice() {
            [] => flush(&mut words, &mut tags, &mut out),
            [token, tag] => {
                let tag = tag.parse::<Tag>().map_err(|e| CorpusError::IllegalTag { line: lineno, tag: e.0 })?;
                words.push(Token::new(*token)?);
                tags.push(tag);
            }
            other => return Err(CorpusError::MalformedLine { line: lineno, found: other.len() }),
        }
    }
    flush(&mut words, &mut tags, &mut out);
    Ok(out)
}

pub fn write_conll<W: Write>(sentences: &[LabeledSentence], mut w: W) -> std::io::Result<()> {
    for s in sentences {
        for (tok, tag) in s.tokens().iter().zip(s.tags().iter()) {
            writeln!(w, "{tok}\t{tag}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    tokens: Vec<String>,
    tags: Vec<String>,
}

/// Reads `{"tokens": [...], "tags": [...]}` records, one per line. An
/// optional `"id"` overrides the positional id.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<LabeledSentence>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::BadRecord { record: lineno, message: e.to_string() })?;
        let tags = parse_tags(&rec.tags).map_err(|e| CorpusError::IllegalTag { line: lineno, tag: e.0 })?;
        let tokens = rec.tokens.into_iter().map(Token::new).collect::<Result<Vec<_>, _>>()?;
        let id = rec.id.unwrap_or_else(|| out.len().to_string());
        let s = LabeledSentence::new(id, tokens, tags).map_err(|e| match e {
            CorpusError::LengthMismatch { .. } => CorpusError::BadRecord { record: lineno, message: e.to_string() },
            other => other,
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(sentences: &[LabeledSentence], mut w: W) -> std::io::Result<()> {
    for s in sentences {
        let rec = JsonRecord {
            id: Some(s.id().to_string()),
            tokens: s.tokens().iter().map(|t| t.as_str().to_string()).collect(),
            tags: s.tags().iter().map(Tag::to_string).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a split file in either format, chosen by extension.
pub fn read_split_file(path: &Path) -> Result<Vec<LabeledSentence>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    match SplitFormat::from_path(path) {
        SplitFormat::Conll => parse_conll(reader),
        SplitFormat::Jsonl => parse_jsonl(reader),
    }
}

/// Like [`read_split_file`] but rejects a file with no sentences.
pub fn load_split(path: &Path) -> Result<Vec<LabeledSentence>, CorpusError> {
    let sentences = read_split_file(path)?;
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(sentences)
}
