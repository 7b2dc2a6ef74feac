//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1 and 8 need the six public test splits laid out as
//! `$SKILLHARNESS_DATA_DIR/<dataset>/test.{conll,jsonl}`. Without them they
//! are reported as failed for missing input; the process only exits non-zero
//! for those when `SKILLHARNESS_ACCEPTANCE_STRICT=1`. Criterion 10 runs only
//! when `SKILLHARNESS_API_KEY` is set and is never gated on scores.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillharness::analysis::{builtin_conjunctions, conjoined_rate, failure_rate};
use skillharness::corpus::{compute_stats, read_split_file, LabeledSentence};
use skillharness::evaluate::{macro_average, relax_prf, strict_prf, LabelMode, MatchCounts, SpanMap};
use skillharness::experiment::{load_results, score_results, ExperimentConfig};
use skillharness::llm::{ChatProvider, Client, CompletionRequest, LlmError, MockProvider, MockScript, API_KEY_ENV};
use skillharness::postprocess::{
    align_span, parse_ner_output, run_sample, AlignStage, MismatchKind, SampleStatus, MAX_FEEDBACK_ROUNDS,
};
use skillharness::prompting::{ChatMessage, PromptStyle, RenderedPrompt, Role, TemplateStore};
use skillharness::Experiment;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Required input is absent here.
    Missing(String),
    Skip(String),
}

use Outcome::*;

type Criterion = (&'static str, fn() -> Outcome);

const DATA_ENV: &str = "SKILLHARNESS_DATA_DIR";
const DATASETS: [&str; 6] = ["green", "skillspan", "sayfullina", "gnehm", "fijo", "kompetencer"];

fn hosted_split(name: &str) -> Result<Vec<LabeledSentence>, String> {
    let dir = std::env::var_os(DATA_ENV).ok_or_else(|| format!("{DATA_ENV} is not set"))?;
    let base = PathBuf::from(dir).join(name);
    let path = ["test.conll", "test.jsonl"]
        .iter()
        .map(|f| base.join(f))
        .find(|p| p.is_file())
        .ok_or_else(|| format!("no test split under {}", base.display()))?;
    read_split_file(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn corpus_statistics() -> Outcome {
    // avg sentence length, avg #skills, % without skills, avg span length
    let expected: BTreeMap<&str, [f64; 4]> = BTreeMap::from([
        ("green", [22.94, 2.0, 30.45, 2.68]),
        ("skillspan", [11.99, 0.3, 83.64, 3.56]),
        ("sayfullina", [14.35, 1.0, 0.1, 1.75]),
        ("gnehm", [10.77, 0.3, 82.82, 1.32]),
        ("fijo", [31.70, 2.4, 16.0, 9.7]),
        ("kompetencer", [13.16, 0.4, 83.2, 3.79]),
    ]);
    let start = Instant::now();
    let mut misses = Vec::new();
    for name in DATASETS {
        let sentences = match hosted_split(name) {
            Ok(s) => s,
            Err(e) => return Missing(e),
        };
        let st = match compute_stats::<f64>(&sentences) {
            Ok(s) => s,
            Err(e) => return Fail(format!("{name}: {e}")),
        };
        let got = [st.avg_sentence_len, st.avg_skills_per_sentence, st.pct_without_skills, st.avg_span_len];
        for (i, (g, e)) in got.iter().zip(expected[name]).enumerate() {
            if (g - e).abs() > 0.05 + 1e-9 {
                misses.push(format!("{name}[{i}] {g:.3} vs {e}"));
            }
        }
        println!("    {name}: {got:.2?} unique={}", st.unique_skills);
    }
    let elapsed = start.elapsed();
    if !misses.is_empty() {
        return Fail(misses.join("; "));
    }
    if elapsed > Duration::from_secs(5) {
        return Fail(format!("took {elapsed:?}"));
    }
    Pass(format!("six datasets within 0.05 in {elapsed:?}"))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let fx = common::prf_fixtures();
    for (i, case) in fx.cases.iter().enumerate() {
        let r = match strict_prf::<f64>(&common::span_map(&case.gold), &common::span_map(&case.pred), LabelMode::Aware)
        {
            Ok(r) => r,
            Err(e) => return Fail(format!("case {i}: {e}")),
        };
        if (r.precision, r.recall, r.f1) != (case.precision, case.recall, case.f1) {
            return Fail(format!(
                "case {i}: ({}, {}, {}) vs reference ({}, {}, {})",
                r.precision, r.recall, r.f1, case.precision, case.recall, case.f1
            ));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(30) {
        return Fail(format!("took {elapsed:?}"));
    }
    Pass(format!("{} instances identical to reference in {elapsed:?}", fx.cases.len()))
}

fn random_map(rng: &mut ChaCha8Rng, lengths: &[usize]) -> SpanMap {
    lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut ranges = Vec::new();
            let mut pos = 0;
            for _ in 0..rng.random_range(0..=4) {
                if pos >= n {
                    break;
                }
                let start = rng.random_range(pos..n);
                let end = rng.random_range(start + 1..=n.min(start + 4));
                ranges.push((start, end));
                pos = end + rng.random_range(0..2);
            }
            (i.to_string(), common::sentence_with("x", n, &ranges).spans().to_vec())
        })
        .collect()
}

fn relax_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let lengths: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=15)).collect();
        let gold = random_map(&mut rng, &lengths);
        let pred = random_map(&mut rng, &lengths);
        let s = strict_prf::<f64>(&gold, &pred, LabelMode::Agnostic).unwrap();
        let r = relax_prf::<f64>(&gold, &pred, LabelMode::Agnostic).unwrap();
        if r.f1 < s.f1 {
            return Fail(format!("instance {i}: relax {} < strict {}", r.f1, s.f1));
        }
    }
    let gold = SpanMap::from([("0".to_string(), common::sentence_with("0", 8, &[(2, 5)]).spans().to_vec())]);
    let pred = SpanMap::from([("0".to_string(), common::sentence_with("0", 8, &[(3, 4)]).spans().to_vec())]);
    let r = relax_prf::<f64>(&gold, &pred, LabelMode::Agnostic).unwrap();
    if r.f1 != 1.0 {
        return Fail(format!("overlap fixture gives relax F1 {}", r.f1));
    }
    Pass("1000 instances, overlap fixture F1 = 1.0".into())
}

fn end_to_end_identity() -> Outcome {
    for style in ["EXTRACTION", "NER"] {
        let dir = tempfile::tempdir().unwrap();
        let path = common::mini_config(dir.path(), style, 2, "");
        let outcome = (|| {
            let exp = Experiment::load(ExperimentConfig::load(&path, &[])?)?;
            exp.run(&exp.client()?)?;
            let results = load_results(&exp.config.run.output)?;
            let scores = score_results::<f64>("mini", &results, &exp.test, LabelMode::Agnostic)?;
            Ok::<_, skillharness::experiment::ExperimentError>((scores, failure_rate::<f64>(&results), exp.test.len()))
        })();
        match outcome {
            Err(e) => return Fail(format!("{style}: {e}")),
            Ok((scores, fr, n)) => {
                let s = scores.strict;
                if n != 50 || (s.precision, s.recall, s.f1) != (1.0, 1.0, 1.0) || fr.rate != 0.0 {
                    return Fail(format!(
                        "{style}: n={n} P={} R={} F1={} failure={}%",
                        s.precision, s.recall, s.f1, fr.rate
                    ));
                }
            }
        }
    }
    Pass("both styles: P = R = F1 = 1.0, failure rate 0% on 50 sentences".into())
}

/// Records every request before delegating.
struct Recording {
    inner: MockProvider,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl ChatProvider for Recording {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}

fn feedback_contract() -> Outcome {
    let s = LabeledSentence::parse(
        "test-0",
        "good experience of web based testing , HTML and JavaScript",
        "O O O B-SKILL I-SKILL I-SKILL O B-SKILL O B-SKILL",
    )
    .unwrap();
    let prompt = RenderedPrompt { messages: vec![ChatMessage::system("Extract skills."), ChatMessage::user(s.text())] };
    let run = |responses: &[&str]| {
        let mut script = MockScript::new();
        script.insert(s.text(), responses.iter().map(|r| r.to_string()).collect());
        let provider = Arc::new(Recording { inner: MockProvider::new(script), seen: Mutex::new(Vec::new()) });
        let client = Client::new(provider.clone(), "mock", 0.0);
        let r = run_sample(
            "mini",
            PromptStyle::Extraction,
            &s,
            &prompt,
            &client,
            &TemplateStore::builtin(),
            MAX_FEEDBACK_ROUNDS,
        )
        .unwrap();
        let seen = provider.seen.lock().unwrap().clone();
        (r, seen)
    };

    let (r, seen) = run(&["teamwork skills"]);
    if r.status != SampleStatus::Failed || r.attempts.len() != 4 || !r.predicted.is_empty() || seen.len() != 4 {
        return Fail(format!("always wrong: {:?} after {} attempts", r.status, r.attempts.len()));
    }

    let bad = "HTML\nweb-based testing";
    let (r, seen) = run(&[bad, bad, "HTML\nweb based testing\nJavaScript"]);
    if r.status != SampleStatus::Success || r.attempts.len() != 3 || r.predicted.len() != 3 {
        return Fail(format!("late fix: {:?} after {} attempts", r.status, r.attempts.len()));
    }
    let feedback =
        seen[1].messages.last().filter(|m| m.role == Role::User).map(|m| m.content.clone()).unwrap_or_default();
    if !feedback.starts_with("You have correctly extracted these skills: HTML.")
        || !feedback.contains("web-based testing")
    {
        return Fail(format!("feedback message: {feedback:?}"));
    }
    Pass("4 wrong answers -> FAILED with 4 attempts; fix on third attempt -> SUCCESS, item quoted".into())
}

fn alignment_repairs() -> Outcome {
    let sentence = LabeledSentence::parse(
        "test-0",
        "Test Consultant / Automation Test Analyst will ideally be confident with Selenium and good experience of web based testing , HTML and JavaScript .",
        "B-SKILL I-SKILL I-SKILL I-SKILL I-SKILL I-SKILL O O O O O B-SKILL O O O O B-SKILL I-SKILL I-SKILL O B-SKILL O B-SKILL O",
    )
    .unwrap();
    let cases = [
        ("Test Consultant/Automation Test Analyst", 0..6, AlignStage::TokenSequence),
        ("testing, HTML", 18..21, AlignStage::Normalized),
        ("web based testing, HTML", 16..21, AlignStage::Normalized),
        ("Selenium", 11..12, AlignStage::Exact),
    ];
    for (item, range, stage) in cases {
        let mut consumed = Vec::new();
        match align_span(item, &sentence, &mut consumed) {
            Ok((span, got)) if span.range() == range && got == stage => {}
            other => return Fail(format!("{item:?}: {other:?}")),
        }
    }

    let generation =
        "@@Test Consultant/Automation Test Analyst## will ideally be confident with @@Selenium## and good \
                      experience of @@web based testing##, @@HTML## and @@JavaScript##.";
    let items = match parse_ner_output(generation, sentence.text()) {
        Ok(p) => p.items.into_iter().map(|i| i.text).collect::<Vec<_>>(),
        Err(rej) => rej.items,
    };
    let mut consumed = Vec::new();
    let aligned: Vec<_> =
        items.iter().filter_map(|i| align_span(i, &sentence, &mut consumed).ok()).map(|(s, _)| s).collect();
    if aligned != sentence.spans() {
        return Fail(format!("tagged items {items:?} aligned to {aligned:?}"));
    }

    let original = "be considered for the General Manager post you will have at least 2years management experience within the health and fitness industry ideally as a General Manager .";
    let over_fixed = "To be considered for the @@General Manager## post you will have at least 2years management experience within the @@health and fitness industry## ideally as a @@General Manager## .";
    match parse_ner_output(over_fixed, original) {
        Err(rej) if rej.kind == MismatchKind::SentenceEdited => {}
        other => return Fail(format!("over-fix case: {other:?}")),
    }
    Pass("spacing and slash cases repaired by the staged matcher; added \"To\" is SENTENCE_EDITED".into())
}

fn macro_check() -> Outcome {
    let reports: Vec<_> = [42.0, 88.4, 49.8, 51.2, 62.6, 92.2]
        .into_iter()
        .map(|f1| {
            let mut r = MatchCounts::default().report::<f64>();
            r.f1 = f1;
            r
        })
        .collect();
    let avg = macro_average(&reports).unwrap();
    let shown = format!("{:.1}", avg.f1);
    if shown == "64.4" {
        Pass(format!("average F1 {shown}"))
    } else {
        Fail(format!("average F1 {shown}"))
    }
}

fn conjoined_ordering() -> Outcome {
    let lang = |n: &str| match n {
        "fijo" => "fr",
        "gnehm" => "de",
        "kompetencer" => "da",
        _ => "en",
    };
    let mut rates = BTreeMap::new();
    for name in DATASETS {
        let sentences = match hosted_split(name) {
            Ok(s) => s,
            Err(e) => return Missing(e),
        };
        let conj = builtin_conjunctions(lang(name)).unwrap();
        rates.insert(name, conjoined_rate::<f64, _>(&sentences, conj, lang(name)).unwrap());
    }
    let say = rates["sayfullina"];
    let higher = ["green", "skillspan", "fijo", "kompetencer"].iter().all(|n| rates[n] > say);
    let gnehm_min = rates.iter().all(|(n, r)| *n == "gnehm" || *r > rates["gnehm"]);
    let detail = format!("{rates:.2?}");
    if higher && gnehm_min {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn warm_cache() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = common::mini_config(dir.path(), "NER", 2, "");
    let outcome = (|| {
        let exp = Experiment::load(ExperimentConfig::load(&path, &[])?)?;
        let cold = exp.run(&exp.client()?)?;
        let first = std::fs::read(&exp.config.run.output).unwrap();
        std::fs::remove_file(&exp.config.run.output).unwrap();
        let warm = exp.run(&exp.client()?)?;
        let second = std::fs::read(&exp.config.run.output).unwrap();
        Ok::<_, skillharness::experiment::ExperimentError>((cold, warm, first == second))
    })();
    match outcome {
        Err(e) => Fail(e.to_string()),
        Ok((cold, warm, same)) if same && warm.provider_calls == 0 && cold.provider_calls > 0 => {
            Pass(format!("{} cold calls, 0 warm calls, identical bytes", cold.provider_calls))
        }
        Ok((_, warm, same)) => Fail(format!("identical={same}, warm provider calls={}", warm.provider_calls)),
    }
}

fn live_smoke() -> Outcome {
    if std::env::var(API_KEY_ENV).map(|k| k.is_empty()).unwrap_or(true) {
        return Skip(format!("{API_KEY_ENV} not set"));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = common::mini_config(dir.path(), "EXTRACTION", 2, "limit = 25");
    let mut sets = vec!["provider.kind=\"http\"".to_string(), "provider.mock_oracle=false".to_string()];
    if let Ok(url) = std::env::var("SKILLHARNESS_BASE_URL") {
        sets.push(format!("provider.base_url=\"{url}\""));
    }
    let outcome = (|| {
        let exp = Experiment::load(ExperimentConfig::load(&path, &sets)?)?;
        exp.run(&exp.client()?)
    })();
    match outcome {
        Ok(s) if s.provider_failed == 0 => {
            Pass(format!("{} samples, {} failed answers (not gated)", s.processed, s.failed))
        }
        Ok(s) => Fail(format!("{} provider failures", s.provider_failed)),
        Err(e) => Fail(e.to_string()),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("corpus statistics", corpus_statistics),
        ("metric oracle equivalence", metric_oracle),
        ("relax dominance", relax_dominance),
        ("end-to-end identity", end_to_end_identity),
        ("feedback-loop contract", feedback_contract),
        ("alignment repair corpus", alignment_repairs),
        ("macro average", macro_check),
        ("conjoined ordering", conjoined_ordering),
        ("determinism and caching", warm_cache),
        ("live smoke test", live_smoke),
    ];
    let strict = std::env::var("SKILLHARNESS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut fatal = 0;
    let mut missing = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        match check() {
            Pass(d) => println!("criterion {n:>2} PASS {name}: {d}"),
            Skip(d) => println!("criterion {n:>2} SKIP {name}: {d}"),
            Fail(d) => {
                fatal += 1;
                println!("criterion {n:>2} FAIL {name}: {d}");
            }
            Missing(d) => {
                missing += 1;
                println!("criterion {n:>2} FAIL {name}: input unavailable ({d})");
            }
        }
    }
    println!("acceptance: {fatal} failed, {missing} without input");
    if fatal > 0 || (strict && missing > 0) {
        std::process::exit(1);
    }
}
