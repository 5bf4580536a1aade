//! Expert panel execution: per-specialty prompts, concurrent fan-out to
//! backends, and structured parsing of specialist replies.
//!
//! Experts are independent by design: no inter-expert communication, no
//! shared mutable state across in-flight calls. Results always come back in
//! panel order regardless of completion order.

use std::time::Duration;

use futures::future::join_all;
use indexmap::IndexMap;
use serde::Deserialize;
use thiserror::Error;

use crate::backends::{BackendError, BackendPool, ChatRequest};
use crate::domain::{
    DroppedExpert, ExpertResponse, Query, QueryKind, Specialty, TaskType, TriagePlan,
};
use crate::extract::{parse_first_object, ParseError};
use crate::triage::{options_block, ExpertConfig};

/// Appended to the user prompt when retrying after a malformed reply.
pub(crate) const FORMAT_REMINDER: &str = "\n\nReminder: reply with a single JSON object exactly \
     in the shape specified above, with no surrounding prose.";

/// Minimum number of surviving experts for a panel result to stand.
pub const MIN_SURVIVORS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("only {survivors} of {panel} experts survived, need at least {MIN_SURVIVORS}")]
    PanelTooSmall {
        survivors: usize,
        panel: usize,
        failures: Vec<DroppedExpert>,
    },
    #[error("{configs} expert configs for {specialties} specialties")]
    LengthMismatch { configs: usize, specialties: usize },
}

/// Knobs for panel execution; the defaults bound latency without starving
/// slow reasoning models.
#[derive(Debug, Clone)]
pub struct PanelOptions {
    pub timeout: Duration,
    pub retry_backoff: Duration,
    pub max_tokens: u32,
}

impl Default for PanelOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            retry_backoff: Duration::from_millis(250),
            max_tokens: 4096,
        }
    }
}

/// Panel result in panel order, plus the experts the failure policy dropped.
#[derive(Debug, Clone)]
pub struct PanelOutcome {
    pub responses: Vec<ExpertResponse>,
    pub dropped: Vec<DroppedExpert>,
}

/// Builds one specialist's user prompt: persona, task type, reply contract,
/// and the task itself. Multiple-choice tasks pin the distribution keys to
/// the option labels; open-differential tasks ask for a diagnosis-name
/// dictionary under ICD-10 naming.
pub fn build_expert_prompt(query: &Query, specialty: &Specialty, task_type: &TaskType) -> String {
    let mut prompt = format!(
        "You are a {specialty} on a multi-specialty clinical panel, analyzing \
         the task below strictly from your specialist perspective. \
         The task type is: {task_type}.\n\n\
         Reply with a single JSON object and nothing else, shaped exactly like:\n\
         {{\"rationale\": \"<your clinical reasoning>\", \
         \"distribution\": {{\"<answer>\": <probability>, \"...\": 0.0}}, \
         \"top_answer\": \"<answer>\", \"second_answer\": \"<answer>\"}}\n\n"
    );
    match query.kind() {
        QueryKind::MultipleChoice => {
            prompt.push_str(
                "The distribution keys must be exactly the option labels listed \
                 below — every label, no other keys — and the probabilities must \
                 sum to 1.\n\nTask:\n",
            );
            prompt.push_str(query.text());
            prompt.push_str("\n\nAnswer options:\n");
            prompt.push_str(&options_block(query));
        }
        QueryKind::OpenDifferential => {
            prompt.push_str(
                "Produce a differential diagnosis for the patient below. The \
                 distribution keys are your diagnoses and the values their \
                 probabilities, as floats between 0 and 1 whose sum equals 1. \
                 Name each diagnosis by its ICD-10 name (the name, not the code), \
                 and if the diagnosis has a common acronym, append the acronym in \
                 parentheses after the name.\n\nPatient case:\n",
            );
            prompt.push_str(query.text());
        }
    }
    prompt.push('\n');
    prompt
}

#[derive(Deserialize)]
struct RawExpertReply {
    rationale: String,
    distribution: IndexMap<String, f64>,
    #[serde(default)]
    #[allow(dead_code)] // the claimed top answer is always recomputed
    top_answer: Option<String>,
    #[serde(default)]
    second_answer: Option<String>,
}

/// Parses a specialist reply. When `legal_labels` is given, stray
/// distribution keys are dropped before validation; the distribution then
/// goes through the repair policy, and the top answer is recomputed as the
/// argmax regardless of what the model claimed.
pub fn parse_expert_reply(
    text: &str,
    specialty: &Specialty,
    legal_labels: Option<&[String]>,
) -> Result<ExpertResponse, ParseError> {
    let raw: RawExpertReply = parse_first_object(text)?;

    let mut entries = raw.distribution;
    if let Some(legal) = legal_labels {
        entries.retain(|label, _| legal.iter().any(|l| l == label));
        if entries.is_empty() {
            return Err(ParseError::EmptyAfterFiltering);
        }
    }
    let distribution = crate::domain::validate_distribution(entries)?;
    Ok(ExpertResponse::from_distribution(
        specialty.clone(),
        raw.rationale,
        distribution,
        raw.second_answer,
    ))
}

enum AttemptError {
    Backend(BackendError),
    Parse(ParseError),
}

impl std::fmt::Display for AttemptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttemptError::Backend(e) => write!(f, "backend: {e}"),
            AttemptError::Parse(e) => write!(f, "parse: {e}"),
        }
    }
}

async fn attempt_expert(
    pool: &BackendPool,
    config: &ExpertConfig,
    specialty: &Specialty,
    user_prompt: &str,
    legal_labels: Option<&[String]>,
    opts: &PanelOptions,
) -> Result<ExpertResponse, AttemptError> {
    let request = ChatRequest::new(
        &config.model_name,
        &config.system_prompt_template,
        user_prompt,
        config.temperature,
        opts.max_tokens,
    )
    .map_err(AttemptError::Backend)?;

    let reply = tokio::time::timeout(opts.timeout, pool.complete(&config.backend_id, &request))
        .await
        .map_err(|_| {
            AttemptError::Backend(BackendError::Timeout {
                ms: opts.timeout.as_millis() as u64,
            })
        })?
        .map_err(AttemptError::Backend)?;

    parse_expert_reply(&reply, specialty, legal_labels).map_err(AttemptError::Parse)
}

/// One expert end to end: a first attempt, and on failure one retry after a
/// jittered backoff (with a format reminder when the failure was a parse).
async fn run_one_expert(
    pool: &BackendPool,
    config: &ExpertConfig,
    specialty: &Specialty,
    query: &Query,
    task_type: &TaskType,
    opts: &PanelOptions,
) -> Result<ExpertResponse, String> {
    let base_prompt = build_expert_prompt(query, specialty, task_type);
    let legal = match query.kind() {
        QueryKind::MultipleChoice => Some(query.labels()),
        QueryKind::OpenDifferential => None,
    };

    let first = attempt_expert(pool, config, specialty, &base_prompt, legal.as_deref(), opts).await;
    let first_err = match first {
        Ok(response) => return Ok(response),
        Err(e) => e,
    };

    tokio::time::sleep(jittered(opts.retry_backoff)).await;
    let retry_prompt = match &first_err {
        AttemptError::Parse(_) => format!("{base_prompt}{FORMAT_REMINDER}"),
        AttemptError::Backend(_) => base_prompt,
    };
    match attempt_expert(pool, config, specialty, &retry_prompt, legal.as_deref(), opts).await {
        Ok(response) => Ok(response),
        Err(second_err) => Err(format!("{first_err}; retry: {second_err}")),
    }
}

pub(crate) fn jittered(base: Duration) -> Duration {
    base.mul_f64(1.0 + rand::random::<f64>())
}

/// Runs the whole panel concurrently and fans results back in panel order.
///
/// Failure policy: each expert gets one retry, then it is dropped; at least
/// [`MIN_SURVIVORS`] experts must survive. Dropped experts are reported so
/// the trace can record them and their weights can be renormalized away.
pub async fn run_expert_panel(
    query: &Query,
    configs: &[ExpertConfig],
    plan: &TriagePlan,
    pool: &BackendPool,
    opts: &PanelOptions,
) -> Result<PanelOutcome, PanelError> {
    if configs.len() != plan.specialties().len() {
        return Err(PanelError::LengthMismatch {
            configs: configs.len(),
            specialties: plan.specialties().len(),
        });
    }

    let tasks = configs.iter().zip(plan.specialties()).map(|(config, specialty)| {
        run_one_expert(pool, config, specialty, query, plan.task_type(), opts)
    });
    let results = join_all(tasks).await;

    let mut responses = Vec::new();
    let mut dropped = Vec::new();
    for (specialty, result) in plan.specialties().iter().zip(results) {
        match result {
            Ok(response) => responses.push(response),
            Err(error) => dropped.push(DroppedExpert {
                specialty: specialty.clone(),
                error,
            }),
        }
    }

    if responses.len() < MIN_SURVIVORS {
        return Err(PanelError::PanelTooSmall {
            survivors: responses.len(),
            panel: configs.len(),
            failures: dropped,
        });
    }
    Ok(PanelOutcome { responses, dropped })
}
