//! Demonstration selection: seeded random sampling or exact cosine kNN,
//! drawn separately from the positive and negative halves of a train pool.

mod embeddings;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledSentence;
use crate::prompting::{order_demonstrations, Demonstration, Polarity, PromptStyle};
use crate::scalar::Scalar;

pub use self::embeddings::{load_vectors, write_vectors, EmbeddingClient, EmbeddingsEndpoint};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no embedding for sentence {0:?}")]
    MissingEmbeddings(String),
    #[error("vectors file line {line}: {message}")]
    BadVectors { line: usize, message: String },
    #[error("embeddings endpoint: {0}")]
    Endpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct EmbeddingVector<T>(pub Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn scaled(&self, factor: T) -> Self {
        EmbeddingVector(self.0.iter().map(|&x| x * factor).collect())
    }
}

impl<T> From<Vec<T>> for EmbeddingVector<T> {
    fn from(v: Vec<T>) -> Self {
        EmbeddingVector(v)
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na.is_zero() || nb.is_zero() {
        return Err(RetrievalError::ZeroVector);
    }
    let dot: T = a.0.iter().zip(&b.0).map(|(&x, &y)| x * y).sum();
    let one = T::one();
    Ok((dot / (na * nb)).max(-one).min(one))
}

#[derive(Clone, Debug)]
pub struct PoolEntry<T> {
    pub sentence: LabeledSentence,
    pub vector: Option<EmbeddingVector<T>>,
}

/// Train sentences split by polarity, minus manually excluded ids.
#[derive(Clone, Debug, Default)]
pub struct DemonstrationPool<T> {
    positives: Vec<PoolEntry<T>>,
    negatives: Vec<PoolEntry<T>>,
    exclusions: HashSet<String>,
}

impl<T: Scalar> DemonstrationPool<T> {
    /// Builds a pool. Excluded ids are dropped here and can never be
    /// selected. All vectors that are present must share one dimension.
    pub fn new(
        sentences: impl IntoIterator<Item = LabeledSentence>,
        vectors: Option<&HashMap<String, EmbeddingVector<T>>>,
        exclusions: HashSet<String>,
    ) -> Result<Self, RetrievalError> {
        let mut pool = DemonstrationPool { positives: Vec::new(), negatives: Vec::new(), exclusions };
        let mut dim = None;
        for sentence in sentences {
            if pool.exclusions.contains(sentence.id()) {
                continue;
            }
            let vector = vectors.and_then(|v| v.get(sentence.id())).cloned();
            if let Some(v) = &vector {
                match dim {
                    None => dim = Some(v.dim()),
                    Some(d) if d != v.dim() => {
                        return Err(RetrievalError::DimensionMismatch { left: d, right: v.dim() })
                    }
                    _ => {}
                }
            }
            let entry = PoolEntry { sentence, vector };
            match Polarity::of(&entry.sentence) {
                Polarity::Positive => pool.positives.push(entry),
                Polarity::Negative => pool.negatives.push(entry),
            }
        }
        Ok(pool)
    }

    pub fn entries(&self, polarity: Polarity) -> &[PoolEntry<T>] {
        match polarity {
            Polarity::Positive => &self.positives,
            Polarity::Negative => &self.negatives,
        }
    }

    pub fn len(&self, polarity: Polarity) -> usize {
        self.entries(polarity).len()
    }

    pub fn exclusions(&self) -> &HashSet<String> {
        &self.exclusions
    }
}

/// Top-`k` entries of one polarity by descending cosine similarity to
/// `query`; ties go to the lexicographically smaller id. `skip_id` (the
/// query's own id) is never returned.
pub fn knn_select<'p, T: Scalar>(
    query: &EmbeddingVector<T>,
    pool: &'p DemonstrationPool<T>,
    k: usize,
    polarity: Polarity,
    skip_id: Option<&str>,
) -> Result<Vec<&'p LabeledSentence>, RetrievalError> {
    let mut scored = Vec::with_capacity(pool.len(polarity));
    for entry in pool.entries(polarity) {
        if Some(entry.sentence.id()) == skip_id {
            continue;
        }
        let v =
            entry.vector.as_ref().ok_or_else(|| RetrievalError::MissingEmbeddings(entry.sentence.id().to_string()))?;
        scored.push((cosine_similarity(query, v)?, &entry.sentence));
    }
    scored.sort_by(|(sa, a), (sb, b)| sb.partial_cmp(sa).unwrap_or(Ordering::Equal).then_with(|| a.id().cmp(b.id())));
    Ok(scored.into_iter().take(k).map(|(_, s)| s).collect())
}

/// Uniform sample of `k` entries without replacement. Each polarity draws
/// from its own ChaCha stream, so the result depends only on
/// `(seed, pool, k, polarity)`.
pub fn random_select<'p, T: Scalar>(
    pool: &'p DemonstrationPool<T>,
    k: usize,
    polarity: Polarity,
    seed: u64,
    skip_id: Option<&str>,
) -> Vec<&'p LabeledSentence> {
    let candidates: Vec<&LabeledSentence> =
        pool.entries(polarity).iter().map(|e| &e.sentence).filter(|s| Some(s.id()) != skip_id).collect();
    let amount = k.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match polarity {
        Polarity::Positive => 0,
        Polarity::Negative => 1,
    });
    rand::seq::index::sample(&mut rng, candidates.len(), amount).into_iter().map(|i| candidates[i]).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    #[default]
    Random,
    Knn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoMix {
    #[default]
    Mixed,
    PositiveOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionPolicy {
    pub mode: SelectionMode,
    /// Demonstrations per polarity (`k`-shot = k positives + k negatives).
    pub k: usize,
    pub mix: DemoMix,
    pub seed: u64,
}

/// Selects and orders the demonstrations for one query.
///
/// Mixed mode yields up to `k` of each polarity; positive-only yields up to
/// `2k` positives so both settings show the same number of examples.
pub fn assemble_demonstrations<T: Scalar>(
    policy: &SelectionPolicy,
    pool: &DemonstrationPool<T>,
    query: &LabeledSentence,
    query_vector: Option<&EmbeddingVector<T>>,
    style: PromptStyle,
) -> Result<Vec<Demonstration>, RetrievalError> {
    if policy.k == 0 {
        return Ok(Vec::new());
    }
    let skip = Some(query.id());
    let select = |k: usize, polarity: Polarity| -> Result<Vec<&LabeledSentence>, RetrievalError> {
        match policy.mode {
            SelectionMode::Random => Ok(random_select(pool, k, polarity, policy.seed, skip)),
            SelectionMode::Knn => {
                let q = query_vector.ok_or_else(|| RetrievalError::MissingEmbeddings(query.id().to_string()))?;
                knn_select(q, pool, k, polarity, skip)
            }
        }
    };
    let (positives, negatives) = match policy.mix {
        DemoMix::Mixed => (select(policy.k, Polarity::Positive)?, select(policy.k, Polarity::Negative)?),
        DemoMix::PositiveOnly => (select(2 * policy.k, Polarity::Positive)?, Vec::new()),
    };
    let to_demo = |s: &LabeledSentence| Demonstration::new(s.clone(), style);
    Ok(order_demonstrations(positives.into_iter().map(to_demo).collect(), negatives.into_iter().map(to_demo).collect()))
}
