//! One experiment end to end: load a dataset, build prompts, query the
//! model for every test sentence, and write a results file that can be
//! resumed and evaluated offline.

mod config;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::builtin_conjunctions;
use crate::corpus::{load_split, qualify_ids, LabeledSentence, Split};
use crate::evaluate::{pair_results, prf, LabelMode, MatchMode, Report};
use crate::llm::{ChatProvider, Client, HttpProvider, MockProvider, MockScript, ResponseCache};
use crate::postprocess::{latest_by_id, read_results, run_sample, write_result, SampleResult, SampleStatus};
use crate::prompting::{fit_prompt, DatasetProfile, Polarity, RenderedPrompt, TemplateStore};
use crate::retrieval::{
    assemble_demonstrations, load_vectors, write_vectors, DemoMix, DemonstrationPool, EmbeddingClient, EmbeddingVector,
    SelectionMode,
};
use crate::scalar::Scalar;

pub use self::config::{
    apply_override, DatasetConfig, EmbeddingsConfig, ExperimentConfig, PromptConfig, ProviderKind, ProviderSection,
    RunConfig,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("provider: {0}")]
    Provider(String),
}

impl ExperimentError {
    /// Process exit status: 1 usage/config, 2 data, 3 provider.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Data(_) => 2,
            ExperimentError::Provider(_) => 3,
        }
    }
}

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(Box<dyn std::error::Error>) -> ExperimentError {
    move |e| ExperimentError::Data(format!("{context}: {e}"))
}

/// Known languages of the bundled instruction sets, for defaults.
pub fn builtin_language(dataset: &str) -> Option<&'static str> {
    match dataset.to_ascii_lowercase().as_str() {
        "fijo" => Some("fr"),
        "gnehm" => Some("de"),
        "kompetencer" => Some("da"),
        "green" | "skillspan" | "sayfullina" => Some("en"),
        _ => None,
    }
}

fn load_qualified(path: &Path, split: Split) -> Result<Vec<LabeledSentence>, ExperimentError> {
    let sentences = load_split(path).map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))?;
    Ok(qualify_ids(sentences, split))
}

fn read_exclusions(path: &Path) -> Result<HashSet<String>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(path.display())(e.into()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| if l.bytes().all(|b| b.is_ascii_digit()) { format!("{}-{l}", Split::Train) } else { l.to_string() })
        .collect())
}

/// Counters for one run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Test sentences selected for this run.
    pub selected: usize,
    /// Already present in the output and not re-run.
    pub skipped: usize,
    pub processed: usize,
    pub success: usize,
    pub failed: usize,
    pub provider_failed: usize,
    pub provider_calls: usize,
    pub cache_hits: usize,
    /// Demonstrations dropped to fit the context budget, summed over samples.
    pub demos_dropped: usize,
}

pub struct Experiment<T: Scalar> {
    pub config: ExperimentConfig,
    pub train: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    pub profile: DatasetProfile,
    pub store: TemplateStore,
    pool: DemonstrationPool<T>,
    vectors: HashMap<String, EmbeddingVector<T>>,
}

impl<T: Scalar> Experiment<T> {
    pub fn load(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        let test = load_qualified(&config.dataset.test, Split::Test)?;
        let train = match &config.dataset.train {
            Some(p) if config.selection.k > 0 => load_qualified(p, Split::Train)?,
            _ => Vec::new(),
        };
        let exclusions = match &config.dataset.exclude_ids {
            Some(p) => read_exclusions(p)?,
            None => HashSet::new(),
        };
        let d = &config.dataset;
        let profile = DatasetProfile {
            name: d.name.clone(),
            language: d.language.clone().or_else(|| builtin_language(&d.name).map(str::to_string)).unwrap_or_default(),
            domain: d.domain.clone().unwrap_or_default(),
            skill_type: d.skill_type.clone().unwrap_or_default(),
        };
        let store = match &config.prompt.templates_dir {
            Some(dir) => TemplateStore::with_dir(dir),
            None => TemplateStore::builtin(),
        };
        let mut exp = Experiment {
            config,
            train,
            test,
            profile,
            store,
            pool: DemonstrationPool::default(),
            vectors: HashMap::new(),
        };
        if exp.config.selection.k > 0 && exp.config.selection.mode == SelectionMode::Knn {
            exp.vectors = exp.load_embeddings()?;
        }
        let vectors = (!exp.vectors.is_empty()).then_some(&exp.vectors);
        exp.pool = DemonstrationPool::new(exp.train.iter().cloned(), vectors, exclusions)
            .map_err(|e| ExperimentError::Data(format!("demonstration pool: {e}")))?;
        exp.warn_if_pool_short();
        let specific = exp.config.prompt.dataset_specific || exp.config.selection.k == 0;
        exp.store
            .instructions(exp.config.prompt.style, &exp.profile, specific)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(exp)
    }

    fn load_embeddings(&self) -> Result<HashMap<String, EmbeddingVector<T>>, ExperimentError> {
        let emb = &self.config.embeddings;
        let mut vectors = match &emb.vectors {
            Some(p) if p.is_file() => {
                load_vectors(p).map_err(|e| ExperimentError::Data(format!("{}: {e}", p.display())))?
            }
            _ => HashMap::new(),
        };
        let Some(endpoint) = &emb.endpoint else {
            if vectors.is_empty() {
                return Err(ExperimentError::Config(
                    "kNN selection needs embeddings.vectors or embeddings.endpoint".into(),
                ));
            }
            return Ok(vectors);
        };
        let missing: Vec<(&str, &str)> = self
            .train
            .iter()
            .chain(self.selected_test())
            .filter(|s| !vectors.contains_key(s.id()))
            .map(|s| (s.id(), s.text()))
            .collect();
        if !missing.is_empty() {
            tracing::info!(count = missing.len(), "embedding sentences");
            let client =
                EmbeddingClient::new(endpoint.clone()).map_err(|e| ExperimentError::Provider(e.to_string()))?;
            let fresh = client.embed_ids(missing).map_err(|e| ExperimentError::Provider(e.to_string()))?;
            vectors.extend(fresh);
            if let Some(p) = &emb.vectors {
                write_vectors(&vectors, p).map_err(|e| data_err(p.display())(e.into()))?;
            }
        }
        Ok(vectors)
    }

    fn warn_if_pool_short(&self) {
        let k = self.config.selection.k;
        if k == 0 {
            return;
        }
        let wanted = match self.config.selection.mix {
            DemoMix::Mixed => vec![(Polarity::Positive, k), (Polarity::Negative, k)],
            DemoMix::PositiveOnly => vec![(Polarity::Positive, 2 * k)],
        };
        for (polarity, n) in wanted {
            let have = self.pool.len(polarity);
            if have < n {
                tracing::warn!(
                    ?polarity,
                    requested = n,
                    available = have,
                    "demonstration pool is smaller than k; capping"
                );
            }
        }
    }

    /// True when the pool cannot supply the configured number of demos.
    pub fn pool_capped(&self) -> bool {
        let k = self.config.selection.k;
        match self.config.selection.mix {
            DemoMix::Mixed => self.pool.len(Polarity::Positive) < k || self.pool.len(Polarity::Negative) < k,
            DemoMix::PositiveOnly => self.pool.len(Polarity::Positive) < 2 * k,
        }
    }

    /// Test sentences to run, in corpus order. With `run.limit`, a seeded
    /// uniform subset.
    pub fn selected_test(&self) -> Vec<&LabeledSentence> {
        match self.config.run.limit {
            Some(n) if n < self.test.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.run.limit_seed);
                let mut idx = rand::seq::index::sample(&mut rng, self.test.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| &self.test[i]).collect()
            }
            _ => self.test.iter().collect(),
        }
    }

    pub fn provider(&self) -> Result<Arc<dyn ChatProvider>, ExperimentError> {
        let p = &self.config.provider;
        Ok(match p.kind {
            ProviderKind::Http => {
                Arc::new(HttpProvider::from_env(&p.settings).map_err(|e| ExperimentError::Provider(e.to_string()))?)
            }
            ProviderKind::Mock => {
                let script = match &p.mock_script {
                    Some(path) => MockScript::load(path).map_err(|e| ExperimentError::Config(e.to_string()))?,
                    None => MockScript::oracle(&self.test, self.config.prompt.style),
                };
                Arc::new(MockProvider::new(script))
            }
        })
    }

    /// Client with the configured provider and cache.
    pub fn client(&self) -> Result<Client, ExperimentError> {
        let mut client = Client::new(
            self.provider()?,
            self.config.provider.settings.model.clone(),
            self.config.provider.settings.temperature,
        );
        if let Some(path) = &self.config.run.cache {
            let cache = ResponseCache::open(path).map_err(|e| ExperimentError::Data(e.to_string()))?;
            client = client.with_cache(Arc::new(cache));
        }
        Ok(client)
    }

    /// The prompt for one query and how many demonstrations were dropped to
    /// fit the context budget. Zero-shot prompts always carry the
    /// dataset-specific instructions.
    pub fn prompt_for(&self, query: &LabeledSentence) -> Result<(RenderedPrompt, usize), ExperimentError> {
        let style = self.config.prompt.style;
        let policy = &self.config.selection;
        let specific = self.config.prompt.dataset_specific || policy.k == 0;
        let instructions = self
            .store
            .instructions(style, &self.profile, specific)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let demos = assemble_demonstrations(policy, &self.pool, query, self.vectors.get(query.id()), style)
            .map_err(|e| ExperimentError::Data(e.to_string()))?;
        fit_prompt(style, &instructions, &demos, query, self.config.prompt.context_budget)
            .map_err(|e| ExperimentError::Config(format!("sentence {}: {e}", query.id())))
    }

    /// Runs every selected test sentence that is not already in the output
    /// file and appends the results in corpus order. Samples recorded as
    /// provider failures are retried.
    pub fn run(&self, client: &Client) -> Result<RunSummary, ExperimentError> {
        let output = &self.config.run.output;
        let done = completed_ids(output)?;
        let selected = self.selected_test();
        let todo: Vec<&LabeledSentence> = selected.iter().copied().filter(|s| !done.contains(s.id())).collect();
        let mut summary =
            RunSummary { selected: selected.len(), skipped: selected.len() - todo.len(), ..Default::default() };
        tracing::info!(dataset = %self.profile.name, todo = todo.len(), skipped = summary.skipped, "starting run");

        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| data_err(parent.display())(e.into()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(output)
            .map_err(|e| data_err(output.display())(e.into()))?;
        let mut writer = BufWriter::new(file);

        let workers = self.config.provider.settings.max_parallel.max(1).min(todo.len().max(1));
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let dataset = self.profile.name.as_str();
        let max_feedback = self.config.prompt.max_feedback;
        let style = self.config.prompt.style;
        let calls_before = (client.provider_calls(), client.cache_hits());

        let mut first_error = None;
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<(usize, Result<(SampleResult, usize), ExperimentError>)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let (todo, next, stop) = (&todo, &next, &stop);
                scope.spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(sentence) = todo.get(i) else { break };
                    let outcome = self.prompt_for(sentence).and_then(|(prompt, dropped)| {
                        run_sample(dataset, style, sentence, &prompt, client, &self.store, max_feedback)
                            .map(|r| (r, dropped))
                            .map_err(|e| ExperimentError::Config(e.to_string()))
                    });
                    if tx.send((i, outcome)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            // single writer: emit results in corpus order as they complete
            let mut pending: BTreeMap<usize, (SampleResult, usize)> = BTreeMap::new();
            let mut next_out = 0;
            for (i, outcome) in rx {
                match outcome {
                    Ok(done) => {
                        pending.insert(i, done);
                    }
                    Err(e) => {
                        stop.store(true, Ordering::Relaxed);
                        first_error.get_or_insert(e);
                        continue;
                    }
                }
                while let Some((result, dropped)) = pending.remove(&next_out) {
                    if first_error.is_none() {
                        if let Err(e) = write_result(&result, &mut writer).and_then(|_| writer.flush()) {
                            stop.store(true, Ordering::Relaxed);
                            first_error = Some(data_err(output.display())(e.into()));
                        }
                    }
                    summary.processed += 1;
                    summary.demos_dropped += dropped;
                    match result.status {
                        SampleStatus::Success => summary.success += 1,
                        SampleStatus::Failed => summary.failed += 1,
                        SampleStatus::ProviderFailed => {
                            tracing::warn!(id = %result.id, error = result.error.as_deref().unwrap_or(""), "provider failed");
                            summary.provider_failed += 1
                        }
                    }
                    next_out += 1;
                    if next_out % 50 == 0 {
                        tracing::info!(
                            done = next_out,
                            of = todo.len(),
                            calls = client.provider_calls() - calls_before.0,
                            "progress"
                        );
                    }
                }
            }
        });
        if let Some(e) = first_error {
            return Err(e);
        }
        summary.provider_calls = client.provider_calls() - calls_before.0;
        summary.cache_hits = client.cache_hits() - calls_before.1;
        tracing::info!(?summary, "run finished");
        Ok(summary)
    }

    /// Conjunction words for the conjoined-span statistic.
    pub fn conjunctions(&self) -> Option<Vec<String>> {
        self.config
            .dataset
            .conjunctions
            .clone()
            .or_else(|| builtin_conjunctions(&self.profile.language).map(|c| c.iter().map(|s| s.to_string()).collect()))
    }
}

/// Ids already answered in an existing results file. A partial last line
/// left by an interrupted run is cut off so appends stay well-formed.
fn completed_ids(output: &Path) -> Result<HashSet<String>, ExperimentError> {
    if !output.is_file() {
        return Ok(HashSet::new());
    }
    let io = |e: std::io::Error| ExperimentError::Data(format!("{}: {e}", output.display()));
    let mut file = OpenOptions::new().read(true).write(true).open(output).map_err(io)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io)?;
    if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        tracing::warn!(path = %output.display(), "dropping incomplete last record");
        file.set_len(keep as u64).map_err(io)?;
        file.seek(SeekFrom::End(0)).map_err(io)?;
    }
    drop(file);
    let results = read_results(output).map_err(|e| ExperimentError::Data(e.to_string()))?;
    Ok(latest_by_id(results).into_iter().filter(|r| r.status != SampleStatus::ProviderFailed).map(|r| r.id).collect())
}

/// Strict and relaxed scores for a results file against its gold split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scores<T> {
    pub dataset: String,
    pub samples: usize,
    pub provider_failed: usize,
    pub strict: Report<T>,
    pub relax: Report<T>,
}

pub fn score_results<T: Scalar>(
    dataset: &str,
    results: &[SampleResult],
    gold: &[LabeledSentence],
    labels: LabelMode,
) -> Result<Scores<T>, ExperimentError> {
    let paired = pair_results(results, gold).map_err(|e| ExperimentError::Data(e.to_string()))?;
    let gold_map = crate::evaluate::gold_span_map(&paired.gold, labels);
    let score = |mode| prf(&gold_map, &paired.pred, mode, labels).map_err(|e| ExperimentError::Data(e.to_string()));
    Ok(Scores {
        dataset: dataset.to_string(),
        samples: paired.gold.len(),
        provider_failed: paired.provider_failed,
        strict: score(MatchMode::Strict)?,
        relax: score(MatchMode::Relax)?,
    })
}

/// Reads a results file keeping the latest record per id.
pub fn load_results(path: &Path) -> Result<Vec<SampleResult>, ExperimentError> {
    read_results(path).map(latest_by_id).map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SweepPoint<T> {
    pub k: usize,
    pub output: PathBuf,
    pub capped: bool,
    pub summary: RunSummary,
    pub scores: Scores<T>,
}

/// `results.jsonl` becomes `results.k5.jsonl`.
pub fn sweep_output(base: &Path, k: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("jsonl");
    base.with_file_name(format!("{stem}.k{k}.{ext}"))
}

/// Runs the experiment once per `k`, sharing one client (and cache).
pub fn sweep<T: Scalar>(
    config: &ExperimentConfig,
    ks: &[usize],
    client: &Client,
) -> Result<Vec<SweepPoint<T>>, ExperimentError> {
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut cfg = config.clone();
        cfg.selection.k = k;
        cfg.run.output = sweep_output(&config.run.output, k);
        let exp = Experiment::<T>::load(cfg)?;
        let summary = exp.run(client)?;
        let results = load_results(&exp.config.run.output)?;
        let scores = score_results(&exp.profile.name, &results, &exp.test, LabelMode::Agnostic)?;
        points.push(SweepPoint {
            k,
            output: exp.config.run.output.clone(),
            capped: exp.pool_capped(),
            summary,
            scores,
        });
    }
    Ok(points)
}

/// Plot-ready `k,strict_p,strict_r,strict_f1,relax_p,relax_r,relax_f1` in
/// percent.
pub fn sweep_csv<T: Scalar>(points: &[SweepPoint<T>]) -> String {
    let mut out = String::from("k,strict_p,strict_r,strict_f1,relax_p,relax_r,relax_f1,capped\n");
    let pct = |x: T| x * T::hundred();
    for p in points {
        let (s, r) = (&p.scores.strict, &p.scores.relax);
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{}\n",
            p.k,
            pct(s.precision),
            pct(s.recall),
            pct(s.f1),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            p.capped
        ));
    }
    out
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| data_err(parent.display())(e.into()))?;
    }
    let mut f = File::create(path).map_err(|e| data_err(path.display())(e.into()))?;
    f.write_all(text.as_bytes()).map_err(|e| data_err(path.display())(e.into()))
}
