use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EmbeddingVector, RetrievalError};
use crate::llm::{post_json_with_retry, RetryPolicy};
use crate::scalar::Scalar;

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct VectorRecord<T> {
    id: String,
    vector: Vec<T>,
}

/// Reads precomputed vectors, one `{"id": …, "vector": […]}` per line.
pub fn load_vectors<T: Scalar>(path: &Path) -> Result<HashMap<String, EmbeddingVector<T>>, RetrievalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| RetrievalError::BadVectors { line: i + 1, message };
        let rec: VectorRecord<T> = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        match dim {
            None => dim = Some(rec.vector.len()),
            Some(d) if d != rec.vector.len() => {
                return Err(bad(format!("dimension {} differs from {d}", rec.vector.len())))
            }
            _ => {}
        }
        if out.insert(rec.id.clone(), EmbeddingVector(rec.vector)).is_some() {
            return Err(bad(format!("duplicate id {:?}", rec.id)));
        }
    }
    Ok(out)
}

/// Writes vectors sorted by id.
pub fn write_vectors<T: Scalar>(vectors: &HashMap<String, EmbeddingVector<T>>, path: &Path) -> std::io::Result<()> {
    let mut ids: Vec<&String> = vectors.keys().collect();
    ids.sort();
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for id in ids {
        let rec = VectorRecord { id: id.clone(), vector: vectors[id].0.clone() };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsEndpoint {
    /// Full URL; receives `{"input": [texts]}` and answers with
    /// `{"data": [{"embedding": […]}, …]}` in input order.
    pub url: String,
    pub model: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub api_key_env: Option<String>,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingsEndpoint {
    fn default() -> Self {
        EmbeddingsEndpoint {
            url: "http://127.0.0.1:8080/embeddings".to_string(),
            model: None,
            batch_size: 64,
            timeout_secs: 60,
            api_key_env: None,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct EmbeddingClient {
    client: reqwest::blocking::Client,
    endpoint: EmbeddingsEndpoint,
    api_key: Option<String>,
}

impl EmbeddingClient {
    pub fn new(endpoint: EmbeddingsEndpoint) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs.max(1)))
            .build()
            .map_err(|e| RetrievalError::Endpoint(e.to_string()))?;
        let api_key = endpoint.api_key_env.as_deref().and_then(|var| std::env::var(var).ok()).filter(|k| !k.is_empty());
        Ok(EmbeddingClient { client, endpoint, api_key })
    }

    pub fn embed<T: Scalar>(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.endpoint.batch_size.max(1)) {
            let mut body = json!({ "input": batch });
            if let Some(model) = &self.endpoint.model {
                body["model"] = json!(model);
            }
            let value = post_json_with_retry(
                &self.client,
                &self.endpoint.url,
                self.api_key.as_deref(),
                &body,
                &self.endpoint.retry,
            )
            .map_err(|e| RetrievalError::Endpoint(e.to_string()))?;
            let data = value
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| RetrievalError::Endpoint("response has no data array".to_string()))?;
            if data.len() != batch.len() {
                return Err(RetrievalError::Endpoint(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    data.len()
                )));
            }
            for item in data {
                let v: Vec<T> = item
                    .get("embedding")
                    .cloned()
                    .map(serde_json::from_value)
                    .transpose()
                    .map_err(|e| RetrievalError::Endpoint(e.to_string()))?
                    .ok_or_else(|| RetrievalError::Endpoint("item has no embedding".to_string()))?;
                out.push(EmbeddingVector(v));
            }
        }
        Ok(out)
    }

    /// Embeds `(id, text)` pairs into an id-keyed map.
    pub fn embed_ids<'a, T: Scalar>(
        &self,
        items: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<HashMap<String, EmbeddingVector<T>>, RetrievalError> {
        let (ids, texts): (Vec<&str>, Vec<&str>) = items.into_iter().unzip();
        let vectors = self.embed(&texts)?;
        Ok(ids.into_iter().map(str::to_string).zip(vectors).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let map: HashMap<String, EmbeddingVector<f64>> = HashMap::from([
            ("b".to_string(), EmbeddingVector(vec![0.5, 1.0])),
            ("a".to_string(), EmbeddingVector(vec![-1.0, 0.25])),
        ]);
        write_vectors(&map, &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("{\"id\":\"a\""));
        assert_eq!(load_vectors::<f64>(&path).unwrap(), map);
        let narrow = load_vectors::<f32>(&path).unwrap();
        assert_eq!(narrow["b"].0, vec![0.5f32, 1.0]);
    }

    #[test]
    fn ragged_vectors_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[1]}\n").unwrap();
        assert!(matches!(load_vectors::<f64>(&path), Err(RetrievalError::BadVectors { line: 2, .. })));
    }
}
