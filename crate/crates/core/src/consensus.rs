//! The consensus stage and the end-to-end pipeline.
//!
//! The consensus agent receives every expert's specialty, rationale, and
//! top choices together with the final aggregated distribution, and gives
//! the panel's determination. It may override the distribution argmax — the
//! trace records both so overrides stay auditable — but it can only choose
//! labels present in the final distribution. If it fails after one retry,
//! the pipeline falls back to the argmax and marks the trace.

use std::sync::Arc;
use std::time::Instant;

use serde::Deserialize;
use thiserror::Error;

use crate::aggregation::{aggregate, AggregationError, CascadeConfig};
use crate::backends::{BackendError, BackendPool, ChatRequest};
use crate::domain::{
    AnswerDistribution, ConsensusResult, DomainError, ExpertResponse, ExpertWeights,
    ProvenanceTrace, Query, QueryKind, StageTimings, TriagePlan,
};
use crate::experts::{
    jittered, run_expert_panel, PanelError, PanelOptions, FORMAT_REMINDER,
};
use crate::extract::{parse_first_object, ParseError};
use crate::triage::{build_triage_prompt, options_block, parse_triage_reply, route, ExpertRegistry};

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Triage,
    Experts,
    Aggregation,
    Consensus,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Triage => "triage",
            Stage::Experts => "experts",
            Stage::Aggregation => "aggregation",
            Stage::Consensus => "consensus",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineErrorKind {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// A stage-tagged pipeline failure.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage: {kind}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: PipelineErrorKind,
}

impl PipelineError {
    fn at(stage: Stage, kind: impl Into<PipelineErrorKind>) -> Self {
        Self {
            stage,
            kind: kind.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Prompts and parsing

/// Builds the consensus prompt: the original task, every expert's
/// specialty-tagged rationale and top choices, and the final aggregated
/// distribution rendered to 4 decimal places.
pub fn build_consensus_prompt(
    query: &Query,
    responses: &[ExpertResponse],
    final_dist: &AnswerDistribution,
) -> String {
    let mut prompt = String::from(
        "You are the consensus stage of a multi-specialty clinical panel. The \
         specialists below assessed the task independently. Weigh their \
         reasoning and confidence against the aggregated panel distribution, \
         then give the panel's final determination.\n\nTask:\n",
    );
    prompt.push_str(query.text());
    if query.kind() == QueryKind::MultipleChoice {
        prompt.push_str("\n\nAnswer options:\n");
        prompt.push_str(&options_block(query));
    }
    prompt.push_str("\n\nSpecialist assessments:\n");
    for response in responses {
        prompt.push_str(&format!("\n--- {} ---\n", response.specialty()));
        match response.second_answer() {
            Some(second) => prompt.push_str(&format!(
                "Top answer: {} (second: {})\n",
                response.top_answer(),
                second
            )),
            None => prompt.push_str(&format!("Top answer: {}\n", response.top_answer())),
        }
        prompt.push_str(response.rationale());
        prompt.push('\n');
    }
    prompt.push_str("\nAggregated panel distribution:\n");
    for (label, p) in final_dist.ranked() {
        prompt.push_str(&format!("{label}: {p:.4}\n"));
    }
    prompt.push_str(
        "\nReply with a single JSON object and nothing else, shaped exactly like:\n\
         {\"final_answer\": \"<answer>\", \"narrative\": \"<the panel's synthesis>\"}\n",
    );
    prompt
}

#[derive(Deserialize)]
struct RawConsensusReply {
    final_answer: String,
    #[serde(default)]
    narrative: String,
}

/// Parses the consensus reply; the answer must be one of the legal labels.
pub fn parse_consensus_reply(
    text: &str,
    legal_labels: &[String],
) -> Result<(String, String), ParseError> {
    let raw: RawConsensusReply = parse_first_object(text)?;
    if !legal_labels.iter().any(|l| l == &raw.final_answer) {
        return Err(ParseError::IllegalAnswerLabel(raw.final_answer));
    }
    Ok((raw.final_answer, raw.narrative))
}

// ---------------------------------------------------------------------------
// Engine

/// Backend binding for a single pipeline stage (triage or consensus).
#[derive(Debug, Clone, PartialEq)]
pub struct StageBinding {
    pub backend_id: String,
    pub model_name: String,
    pub system_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// How surviving experts are weighted in the pool.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsMode {
    /// w_i = 1/n over the surviving panel.
    Uniform,
    /// Relative per-specialty weights, renormalized over the surviving
    /// panel; specialties missing from the map weigh 1.
    Specialty(std::collections::BTreeMap<String, f64>),
}

/// Resolved runtime settings for the pipeline.
#[derive(Debug, Clone)]
pub struct EngineSettings {
    pub triage: StageBinding,
    pub consensus: StageBinding,
    pub weights_mode: WeightsMode,
    pub cascade: CascadeConfig,
    pub panel: PanelOptions,
}

/// The full pipeline: triage -> route -> expert panel -> aggregate ->
/// consensus. Instances are independent and safe to run concurrently over
/// one shared backend pool.
#[derive(Debug)]
pub struct Engine {
    settings: EngineSettings,
    registry: ExpertRegistry,
    pool: Arc<BackendPool>,
}

impl Engine {
    pub fn new(settings: EngineSettings, registry: ExpertRegistry, pool: Arc<BackendPool>) -> Self {
        Self {
            settings,
            registry,
            pool,
        }
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn registry(&self) -> &ExpertRegistry {
        &self.registry
    }

    pub fn pool(&self) -> &Arc<BackendPool> {
        &self.pool
    }

    /// Runs one query through the whole pipeline.
    pub async fn run(&self, query: &Query) -> Result<ConsensusResult, PipelineError> {
        let start = Instant::now();

        let triage_started = Instant::now();
        let plan = self.run_triage(query).await?;
        let triage_ms = triage_started.elapsed().as_millis() as u64;

        let configs = route(&plan, &self.registry);

        let panel_started = Instant::now();
        let outcome =
            run_expert_panel(query, &configs, &plan, &self.pool, &self.settings.panel)
                .await
                .map_err(|e| PipelineError::at(Stage::Experts, e))?;
        let panel_ms = panel_started.elapsed().as_millis() as u64;

        let aggregation_started = Instant::now();
        let weights = self
            .survivor_weights(&outcome.responses)
            .map_err(|e| PipelineError::at(Stage::Aggregation, e))?;
        let (pooled, boosted) = aggregate(&outcome.responses, &weights, &self.settings.cascade)
            .map_err(|e| PipelineError::at(Stage::Aggregation, e))?;
        let aggregation_ms = aggregation_started.elapsed().as_millis() as u64;

        let consensus_started = Instant::now();
        let final_dist = boosted.final_distribution().clone();
        let (final_answer, narrative, fallback) = self
            .run_consensus(query, &outcome.responses, &final_dist)
            .await;
        let consensus_ms = consensus_started.elapsed().as_millis() as u64;

        let timings = StageTimings {
            triage_ms,
            panel_ms,
            aggregation_ms,
            consensus_ms,
            total_ms: start.elapsed().as_millis() as u64,
        };
        let trace = ProvenanceTrace::new(
            plan,
            outcome.responses,
            outcome.dropped,
            weights,
            pooled,
            boosted,
            fallback,
            Some(timings),
        )
        .map_err(|e| PipelineError::at(Stage::Aggregation, e))?;

        ConsensusResult::new(final_answer, narrative, final_dist, trace)
            .map_err(|e| PipelineError::at(Stage::Consensus, e))
    }

    /// Uniform or per-specialty weights over the surviving panel; dropped
    /// experts never contribute weight.
    fn survivor_weights(&self, responses: &[ExpertResponse]) -> Result<ExpertWeights, DomainError> {
        match &self.settings.weights_mode {
            WeightsMode::Uniform => ExpertWeights::uniform(responses.len()),
            WeightsMode::Specialty(map) => ExpertWeights::normalized(
                responses
                    .iter()
                    .map(|r| map.get(r.specialty().as_str()).copied().unwrap_or(1.0))
                    .collect(),
            ),
        }
    }

    async fn run_triage(&self, query: &Query) -> Result<TriagePlan, PipelineError> {
        let binding = &self.settings.triage;
        let prompt = build_triage_prompt(query);
        self.call_with_retry(binding, &prompt, Stage::Triage, |text| {
            parse_triage_reply(text).map_err(PipelineErrorKind::from)
        })
        .await
    }

    async fn run_consensus(
        &self,
        query: &Query,
        responses: &[ExpertResponse],
        final_dist: &AnswerDistribution,
    ) -> (String, String, bool) {
        let binding = &self.settings.consensus;
        let prompt = build_consensus_prompt(query, responses, final_dist);
        let legal: Vec<String> = final_dist.labels().map(str::to_string).collect();
        let parsed = self
            .call_with_retry(binding, &prompt, Stage::Consensus, |text| {
                parse_consensus_reply(text, &legal).map_err(PipelineErrorKind::from)
            })
            .await;
        match parsed {
            Ok((answer, narrative)) => (answer, narrative, false),
            Err(_) => {
                let answer = final_dist.argmax().to_string();
                let narrative = format!(
                    "Consensus synthesis was unavailable; this is the aggregated panel \
                     distribution's highest-probability answer ({answer}), ties broken \
                     by ascending label order."
                );
                (answer, narrative, true)
            }
        }
    }

    /// One attempt plus one retry after a jittered backoff; a parse failure
    /// retries with a format reminder appended, a backend failure resends
    /// the identical request.
    async fn call_with_retry<T>(
        &self,
        binding: &StageBinding,
        user_prompt: &str,
        stage: Stage,
        parse: impl Fn(&str) -> Result<T, PipelineErrorKind>,
    ) -> Result<T, PipelineError> {
        let first = self.attempt(binding, user_prompt, &parse).await;
        let first_err = match first {
            Ok(value) => return Ok(value),
            Err(kind) => kind,
        };

        tokio::time::sleep(jittered(self.settings.panel.retry_backoff)).await;
        let retry_prompt = match &first_err {
            PipelineErrorKind::Parse(_) => format!("{user_prompt}{FORMAT_REMINDER}"),
            _ => user_prompt.to_string(),
        };
        self.attempt(binding, &retry_prompt, &parse)
            .await
            .map_err(|kind| PipelineError { stage, kind })
    }

    async fn attempt<T>(
        &self,
        binding: &StageBinding,
        user_prompt: &str,
        parse: &impl Fn(&str) -> Result<T, PipelineErrorKind>,
    ) -> Result<T, PipelineErrorKind> {
        let request = ChatRequest::new(
            &binding.model_name,
            &binding.system_prompt,
            user_prompt,
            binding.temperature,
            binding.max_tokens,
        )?;
        let reply = tokio::time::timeout(
            self.settings.panel.timeout,
            self.pool.complete(&binding.backend_id, &request),
        )
        .await
        .map_err(|_| BackendError::Timeout {
            ms: self.settings.panel.timeout.as_millis() as u64,
        })??;
        parse(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Specialty;
    use indexmap::IndexMap;

    fn dist(pairs: &[(&str, f64)]) -> AnswerDistribution {
        AnswerDistribution::new(pairs.iter().map(|(l, p)| (l.to_string(), *p)).collect())
            .unwrap()
    }

    fn response(specialty: &str, rationale: &str, pairs: &[(&str, f64)]) -> ExpertResponse {
        ExpertResponse::from_distribution(
            Specialty::new(specialty).unwrap(),
            rationale,
            dist(pairs),
            None,
        )
    }

    fn mcq_query() -> Query {
        let options: IndexMap<String, String> = [
            ("A".to_string(), "first".to_string()),
            ("B".to_string(), "second".to_string()),
            ("C".to_string(), "third".to_string()),
        ]
        .into();
        Query::multiple_choice("q1", "Pick the best next step.", options).unwrap()
    }

    #[test]
    fn consensus_prompt_has_one_block_per_expert() {
        let responses = vec![
            response("hematologist", "filter reasoning", &[("B", 0.6), ("C", 0.4)]),
            response("nephrologist", "heparin reasoning", &[("C", 0.7), ("B", 0.3)]),
            response("vascular surgeon", "lmwh reasoning", &[("B", 0.5), ("C", 0.5)]),
            response("infectious disease specialist", "unlikely cellulitis", &[("B", 0.8), ("C", 0.2)]),
        ];
        let prompt = build_consensus_prompt(&mcq_query(), &responses, &dist(&[("B", 0.6), ("C", 0.4)]));
        for r in &responses {
            assert!(prompt.contains(&format!("--- {} ---", r.specialty())));
            assert!(prompt.contains(r.rationale()));
        }
    }

    #[test]
    fn consensus_prompt_renders_distribution_to_four_decimals() {
        let final_dist = dist(&[("B", 0.55), ("C", 0.30), ("J", 0.10), ("A", 0.05)]);
        let prompt = build_consensus_prompt(
            &mcq_query(),
            &[response("hematologist", "r", &[("B", 1.0)]), response("nephrologist", "r", &[("B", 1.0)])],
            &final_dist,
        );
        assert!(prompt.contains("B: 0.5500"));
        assert!(prompt.contains("C: 0.3000"));
        assert!(prompt.contains("J: 0.1000"));
        assert!(prompt.contains("A: 0.0500"));
    }

    #[test]
    fn parse_consensus_accepts_legal_label() {
        let labels: Vec<String> = ('A'..='J').map(|c| c.to_string()).collect();
        let (answer, narrative) =
            parse_consensus_reply(r#"{"final_answer":"B","narrative":"the panel agrees"}"#, &labels)
                .unwrap();
        assert_eq!(answer, "B");
        assert_eq!(narrative, "the panel agrees");
    }

    #[test]
    fn parse_consensus_rejects_illegal_label() {
        let labels: Vec<String> = ('A'..='J').map(|c| c.to_string()).collect();
        let err = parse_consensus_reply(r#"{"final_answer":"K","narrative":"n"}"#, &labels)
            .unwrap_err();
        assert_eq!(err, ParseError::IllegalAnswerLabel("K".to_string()));
    }

    #[test]
    fn parse_consensus_handles_prose_wrapping() {
        let labels = vec!["A".to_string(), "B".to_string()];
        let text = "After weighing the panel input:\n{\"final_answer\": \"A\", \"narrative\": \"ok\"}\nDone.";
        assert_eq!(
            parse_consensus_reply(text, &labels).unwrap().0,
            "A".to_string()
        );
    }
}
