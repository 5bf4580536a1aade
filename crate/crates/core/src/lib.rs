//! Expert-panel consensus engine.
//!
//! A query is triaged into a task type and a specialist panel; each
//! specialist answers concurrently with a rationale and a full probability
//! distribution over the candidate answers; the distributions are combined
//! by a weighted log opinion pool, rank-boosted, and renormalized; a final
//! consensus stage reads the rationales and the aggregated distribution and
//! issues the panel's determination with a complete provenance trace.
//!
//! Backends are configuration, not code: one HTTP client covers servers
//! speaking the common chat-completions shape, and a scripted mock covers
//! offline runs and tests.

pub mod aggregation;
pub mod backends;
pub mod config;
pub mod consensus;
pub mod domain;
pub mod evaluation;
pub mod experts;
pub mod extract;
pub mod triage;

pub use aggregation::{
    aggregate, align_support, cascade_boost, rank_frequencies, theta_sequence, BoostedDistribution,
    CascadeConfig, PooledDistribution, RankFrequencyTable,
};
pub use backends::{Backend, BackendError, BackendPool, ChatRequest, HttpBackend, MockBackend};
pub use config::{load_engine, ConfigError, EngineConfig};
pub use consensus::{
    build_consensus_prompt, parse_consensus_reply, Engine, EngineSettings, PipelineError,
    PipelineErrorKind, Stage, StageBinding, WeightsMode,
};
pub use domain::{
    validate_distribution, AnswerDistribution, ConsensusResult, DistributionError, DomainError,
    DroppedExpert, ExpertResponse, ExpertWeights, ProvenanceTrace, Query, QueryKind, Specialty,
    StageTimings, TaskType, TriagePlan,
};
pub use evaluation::{
    ddx_metrics, judge_standardize, load_ddx_dataset, load_mcq_dataset, reliability,
    run_ddx_bench, run_mcq_bench, sample_subset, stratified_accuracy, top_k_accuracy,
    BenchOptions, CalibrationReport, DdxBenchOptions, DdxCase, DdxReport, EvalError, EvalRecord,
    JudgeBinding, JudgeOutcome, McqItem, McqReport,
};
pub use experts::{
    build_expert_prompt, parse_expert_reply, run_expert_panel, PanelError, PanelOptions,
    PanelOutcome,
};
pub use extract::{first_json_object, ParseError};
pub use triage::{build_triage_prompt, parse_triage_reply, route, ExpertConfig, ExpertRegistry};
