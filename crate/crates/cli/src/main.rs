use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use skillharness::analysis::{analyze, builtin_conjunctions};
use skillharness::corpus::{bio_violations, compute_stats, read_split_file, LabeledSentence};
use skillharness::evaluate::{macro_average, rows_to_csv, BucketFeature, EvalRow, LabelMode, MatchMode, Report};
use skillharness::experiment::{
    builtin_language, load_results, score_results, sweep, sweep_csv, write_text, ExperimentConfig, ExperimentError,
};
use skillharness::Experiment;

#[derive(Parser)]
#[command(name = "skillharness", version, about = "In-context skill extraction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics of dataset splits.
    Stats(StatsArgs),
    /// Query the model for every test sentence and write results.
    Run(RunArgs),
    /// Strict and relaxed P/R/F1 of results files.
    Eval(EvalArgs),
    /// Failure rate, length and count deltas, negatives, conjoined spans and bucketed scores.
    Analyze(AnalyzeArgs),
    /// Run once per number of demonstrations and tabulate scores.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set selection.k=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Permit a non-zero sampling temperature.
    #[arg(long)]
    allow_temperature: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, ExperimentError> {
        let cfg = ExperimentConfig::load(&self.config, &self.overrides)?;
        cfg.validate(self.allow_temperature)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct StatsArgs {
    /// Split files (.conll or .jsonl).
    files: Vec<PathBuf>,
    /// Take train/dev/test from an experiment config instead.
    #[arg(long, conflicts_with = "files")]
    config: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Fail when a tag sequence is not strict IOB2.
    #[arg(long)]
    strict_bio: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Only a seeded random subset of this many test sentences.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Labels {
    Agnostic,
    Aware,
}

impl From<Labels> for LabelMode {
    fn from(l: Labels) -> Self {
        match l {
            Labels::Agnostic => LabelMode::Agnostic,
            Labels::Aware => LabelMode::Aware,
        }
    }
}

#[derive(Args)]
struct Source {
    /// Experiment configs; each contributes its results file and test split.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Config overrides applied to every config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// A results file (with --gold).
    #[arg(long, requires = "gold", conflicts_with = "configs")]
    results: Option<PathBuf>,
    /// Gold split for --results.
    #[arg(long, requires = "results")]
    gold: Option<PathBuf>,
    /// Dataset name for --results.
    #[arg(long)]
    name: Option<String>,
}

struct Job {
    name: String,
    results: PathBuf,
    gold: PathBuf,
    language: Option<String>,
    conjunctions: Option<Vec<String>>,
}

impl Source {
    fn jobs(&self) -> Result<Vec<Job>, ExperimentError> {
        if let (Some(results), Some(gold)) = (&self.results, &self.gold) {
            let name = self
                .name
                .clone()
                .unwrap_or_else(|| results.file_stem().and_then(|s| s.to_str()).unwrap_or("results").to_string());
            return Ok(vec![Job {
                name,
                results: results.clone(),
                gold: gold.clone(),
                language: None,
                conjunctions: None,
            }]);
        }
        if self.configs.is_empty() {
            return Err(ExperimentError::Config("give --config or --results with --gold".into()));
        }
        self.configs
            .iter()
            .map(|p| {
                let cfg = ExperimentConfig::load(p, &self.overrides)?;
                Ok(Job {
                    name: cfg.dataset.name.clone(),
                    results: cfg.run.output,
                    gold: cfg.dataset.test,
                    language: cfg.dataset.language,
                    conjunctions: cfg.dataset.conjunctions,
                })
            })
            .collect()
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long, value_enum, default_value = "agnostic")]
    labels: Labels,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: Source,
    /// Language for the default conjunction list (en, de, fr, da).
    #[arg(long)]
    language: Option<String>,
    /// File with one conjunction word per line.
    #[arg(long)]
    conjunctions: Option<PathBuf>,
    /// Bucket lower bounds, e.g. `span_length=1,2,3,5`. Repeatable.
    #[arg(long = "buckets", value_name = "FEATURE=EDGES")]
    buckets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Numbers of demonstrations per polarity.
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5")]
    k: Vec<usize>,
    /// CSV of scores per k (stdout when omitted).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn data(path: &Path) -> impl FnOnce(skillharness::corpus::CorpusError) -> ExperimentError + '_ {
    move |e| ExperimentError::Data(format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), ExperimentError> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<S: serde::Serialize>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn stats(args: &StatsArgs) -> Result<i32, ExperimentError> {
    let files: Vec<PathBuf> = match &args.config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p, &[])?;
            [cfg.dataset.train, cfg.dataset.dev, Some(cfg.dataset.test)].into_iter().flatten().collect()
        }
        None => args.files.clone(),
    };
    if files.is_empty() {
        return Err(ExperimentError::Config("no split files given".into()));
    }
    let mut rows = Vec::new();
    let mut violations = 0;
    for path in &files {
        let sentences = read_split_file(path).map_err(data(path))?;
        if args.strict_bio {
            for s in &sentences {
                for v in bio_violations(s.tags()) {
                    eprintln!(
                        "{}: sentence {} token {}: {} after {}",
                        path.display(),
                        s.id(),
                        v.position,
                        v.tag,
                        v.previous
                    );
                    violations += 1;
                }
            }
        }
        let st = compute_stats::<f64>(&sentences).map_err(data(path))?;
        rows.push((path.display().to_string(), st));
    }
    if args.json {
        let obj: serde_json::Map<String, serde_json::Value> =
            rows.iter().map(|(p, s)| (p.clone(), serde_json::to_value(s).expect("stats serialize"))).collect();
        print!("{}", to_json(&obj));
    } else {
        println!(
            "{:<40} {:>8} {:>8} {:>9} {:>10} {:>8} {:>8} {:>8}",
            "file", "sents", "spans", "avg_len", "skills/s", "%neg", "span_len", "unique"
        );
        for (p, s) in &rows {
            println!(
                "{:<40} {:>8} {:>8} {:>9.2} {:>10.2} {:>8.2} {:>8.2} {:>8}",
                p,
                s.sentences,
                s.spans,
                s.avg_sentence_len,
                s.avg_skills_per_sentence,
                s.pct_without_skills,
                s.avg_span_len,
                s.unique_skills
            );
        }
    }
    if violations > 0 {
        return Err(ExperimentError::Data(format!("{violations} strict IOB2 violations")));
    }
    Ok(0)
}

fn run(args: &RunArgs) -> Result<i32, ExperimentError> {
    let mut cfg = args.config.load()?;
    if args.limit.is_some() {
        cfg.run.limit = args.limit;
    }
    let exp = Experiment::load(cfg)?;
    let client = exp.client()?;
    let summary = exp.run(&client)?;
    print!("{}", to_json(&summary));
    Ok(if summary.provider_failed > 0 { 3 } else { 0 })
}

fn load_gold(path: &Path) -> Result<Vec<LabeledSentence>, ExperimentError> {
    let sentences = read_split_file(path).map_err(data(path))?;
    Ok(skillharness::corpus::qualify_ids(sentences, skillharness::corpus::Split::Test))
}

fn eval(args: &EvalArgs) -> Result<i32, ExperimentError> {
    let labels = args.labels.into();
    let mut rows: Vec<EvalRow<f64>> = Vec::new();
    let mut per_mode: HashMap<MatchMode, Vec<Report<f64>>> = HashMap::new();
    let mut failed = 0;
    for job in args.source.jobs()? {
        let results = load_results(&job.results)?;
        let gold = load_gold(&job.gold)?;
        let scores = score_results::<f64>(&job.name, &results, &gold, labels)?;
        if scores.provider_failed > 0 {
            tracing::warn!(dataset = %job.name, count = scores.provider_failed, "provider failures left out of the scores");
            failed += scores.provider_failed;
        }
        for (mode, report) in [(MatchMode::Strict, scores.strict), (MatchMode::Relax, scores.relax)] {
            per_mode.entry(mode).or_default().push(report);
            rows.push(EvalRow { dataset: job.name.clone(), mode, report });
        }
    }
    if rows.len() > 2 {
        for mode in MatchMode::ALL {
            let m = macro_average(&per_mode[&mode]).map_err(|e| ExperimentError::Data(e.to_string()))?;
            let report = Report { precision: m.precision, recall: m.recall, f1: m.f1, counts: Default::default() };
            rows.push(EvalRow { dataset: "macro".into(), mode, report });
        }
    }
    let text = match args.format {
        Format::Csv => rows_to_csv(&rows),
        Format::Json => to_json(&rows),
        Format::Table => {
            let mut s = format!("{:<16} {:<7} {:>9} {:>9} {:>9}\n", "dataset", "mode", "precision", "recall", "f1");
            for r in &rows {
                s.push_str(&format!(
                    "{:<16} {:<7} {:>9.2} {:>9.2} {:>9.2}\n",
                    r.dataset,
                    r.mode.as_str(),
                    100.0 * r.report.precision,
                    100.0 * r.report.recall,
                    100.0 * r.report.f1
                ));
            }
            s
        }
    };
    emit(args.out.as_deref(), &text)?;
    Ok(if failed > 0 { 3 } else { 0 })
}

fn parse_buckets(specs: &[String]) -> Result<HashMap<BucketFeature, Vec<usize>>, ExperimentError> {
    let mut out: HashMap<BucketFeature, Vec<usize>> =
        [BucketFeature::NumSkills, BucketFeature::SpanLength, BucketFeature::SentenceLength]
            .into_iter()
            .map(|f| (f, f.default_edges().to_vec()))
            .collect();
    for spec in specs {
        let bad = || ExperimentError::Config(format!("bad --buckets {spec:?}; expected feature=1,2,3"));
        let (name, edges) = spec.split_once('=').ok_or_else(bad)?;
        let feature: BucketFeature =
            serde_json::from_value(serde_json::Value::String(name.trim().into())).map_err(|_| bad())?;
        let edges: Vec<usize> =
            edges.split(',').map(|e| e.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        out.insert(feature, edges);
    }
    Ok(out)
}

fn analyze_cmd(args: &AnalyzeArgs) -> Result<i32, ExperimentError> {
    let edges = parse_buckets(&args.buckets)?;
    let custom = match &args.conjunctions {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| ExperimentError::Data(format!("{}: {e}", p.display())))?;
            Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect::<Vec<_>>())
        }
        None => None,
    };
    let mut reports = serde_json::Map::new();
    for job in args.source.jobs()? {
        let language = args
            .language
            .clone()
            .or(job.language.clone())
            .or_else(|| builtin_language(&job.name).map(String::from))
            .unwrap_or_else(|| "en".into());
        let conjunctions: Vec<String> = custom
            .clone()
            .or(job.conjunctions.clone())
            .or_else(|| builtin_conjunctions(&language).map(|c| c.iter().map(|s| s.to_string()).collect()))
            .unwrap_or_default();
        let results = load_results(&job.results)?;
        let gold = load_gold(&job.gold)?;
        let report = analyze::<f64, _>(&results, &gold, &conjunctions, &language, &edges)
            .map_err(|e| ExperimentError::Data(format!("{}: {e}", job.name)))?;
        reports.insert(job.name, serde_json::to_value(&report).expect("report serializes"));
    }
    emit(args.out.as_deref(), &to_json(&reports))?;
    Ok(0)
}

fn sweep_cmd(args: &SweepArgs) -> Result<i32, ExperimentError> {
    let cfg = args.config.load()?;
    let client = Experiment::load(cfg.clone())?.client()?;
    let points = sweep::<f64>(&cfg, &args.k, &client)?;
    emit(args.csv.as_deref(), &sweep_csv(&points))?;
    let failed: usize = points.iter().map(|p| p.summary.provider_failed).sum();
    Ok(if failed > 0 { 3 } else { 0 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let outcome = match &cli.command {
        Command::Stats(a) => stats(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
