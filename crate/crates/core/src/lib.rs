pub mod analysis;
pub mod corpus;
pub mod evaluate;
pub mod experiment;
pub mod llm;
pub mod postprocess;
pub mod prompting;
pub mod retrieval;
pub mod scalar;

pub use scalar::Scalar;

/// Double-precision defaults.
pub type Report = evaluate::Report<f64>;
pub type MacroAverage = evaluate::MacroAverage<f64>;
pub type CorpusStats = corpus::CorpusStats<f64>;
pub type AnalysisReport = analysis::AnalysisReport<f64>;
pub type Experiment = experiment::Experiment<f64>;
pub type Scores = experiment::Scores<f64>;
pub type EmbeddingVector = retrieval::EmbeddingVector<f64>;
pub type DemonstrationPool = retrieval::DemonstrationPool<f64>;

/// Single-precision variants, mainly for large embedding pools.
pub type ReportF32 = evaluate::Report<f32>;
pub type ExperimentF32 = experiment::Experiment<f32>;
pub type EmbeddingVectorF32 = retrieval::EmbeddingVector<f32>;
pub type DemonstrationPoolF32 = retrieval::DemonstrationPool<f32>;
