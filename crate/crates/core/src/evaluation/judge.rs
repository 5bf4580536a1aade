//! Judge standardization for differential diagnoses.
//!
//! Predicted diagnosis names often differ from ground truth only by
//! synonym or formatting. A judge model renames clear matches to the
//! ground-truth spelling so set metrics compare like with like. The judge
//! is never trusted with anything beyond renaming: entry count and
//! per-entry probabilities are enforced locally, and any violation (after
//! one retry) falls back to the unmodified prediction.

use std::time::Duration;

use indexmap::IndexMap;

use crate::backends::{BackendPool, ChatRequest};
use crate::consensus::StageBinding;
use crate::domain::AnswerDistribution;
use crate::experts::jittered;
use crate::extract::parse_first_object;

/// Result of one standardization pass. On `fallback`, `distribution` is the
/// unmodified prediction and `detail` says why the judge reply was refused.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeOutcome {
    pub distribution: AnswerDistribution,
    pub fallback: bool,
    pub detail: Option<String>,
}

/// Judge backend binding plus call bounds.
#[derive(Debug, Clone)]
pub struct JudgeBinding {
    pub stage: StageBinding,
    pub timeout: Duration,
    pub retry_backoff: Duration,
}

/// Builds the standardization instructions with both dictionaries inline.
pub fn build_judge_prompt(gold: &AnswerDistribution, predicted: &AnswerDistribution) -> String {
    format!(
        "You are standardizing a student's differential diagnosis list against \
         a ground-truth list so the two can be compared name by name.\n\n\
         You are given two JSON dictionaries: the ground-truth differential and \
         the student's differential.\n\nRules:\n\
         1. Rename a student diagnosis ONLY when it clearly and directly denotes \
         the same condition as a ground-truth diagnosis.\n\
         2. Never rename between medically distinct conditions.\n\
         3. Never broaden or narrow a diagnosis just to force a match; rename only \
         exact clinical equivalents.\n\
         4. When unsure, keep the student's original name.\n\
         5. Keep every probability value exactly as given.\n\
         6. Keep every student diagnosis that has no ground-truth match.\n\n\
         Ground truth:\n{}\n\nStudent:\n{}\n\n\
         Reply with a single JSON object — the standardized student dictionary — \
         and nothing else.\n",
        serde_json::to_string(gold.probs()).expect("distribution serializes"),
        serde_json::to_string(predicted.probs()).expect("distribution serializes"),
    )
}

/// A reply is a pure key-renaming of the prediction: same entry count, and
/// the i-th probability exactly equal to the i-th predicted probability.
fn validate_renaming(
    predicted: &AnswerDistribution,
    reply: &IndexMap<String, f64>,
) -> Result<(), String> {
    if reply.len() != predicted.len() {
        return Err(format!(
            "entry count changed: {} -> {}",
            predicted.len(),
            reply.len()
        ));
    }
    for ((_, &expected), (name, &got)) in predicted.probs().iter().zip(reply.iter()) {
        if got != expected {
            return Err(format!(
                "probability changed for {name:?}: {expected} -> {got}"
            ));
        }
    }
    Ok(())
}

async fn attempt_judge(
    pool: &BackendPool,
    binding: &JudgeBinding,
    prompt: &str,
    predicted: &AnswerDistribution,
) -> Result<AnswerDistribution, String> {
    let request = ChatRequest::new(
        &binding.stage.model_name,
        &binding.stage.system_prompt,
        prompt,
        binding.stage.temperature,
        binding.stage.max_tokens,
    )
    .map_err(|e| e.to_string())?;
    let reply = tokio::time::timeout(
        binding.timeout,
        pool.complete(&binding.stage.backend_id, &request),
    )
    .await
    .map_err(|_| "judge call timed out".to_string())?
    .map_err(|e| e.to_string())?;

    let parsed: IndexMap<String, f64> =
        parse_first_object(&reply).map_err(|e| e.to_string())?;
    validate_renaming(predicted, &parsed)?;
    AnswerDistribution::new(parsed).map_err(|e| e.to_string())
}

/// Standardizes `predicted` against `gold` via the judge backend. Violations
/// of the rename-only contract trigger one retry and then a fallback to the
/// unmodified prediction; the outcome records which path was taken.
pub async fn judge_standardize(
    gold: &AnswerDistribution,
    predicted: &AnswerDistribution,
    pool: &BackendPool,
    binding: &JudgeBinding,
) -> JudgeOutcome {
    let prompt = build_judge_prompt(gold, predicted);

    let first = attempt_judge(pool, binding, &prompt, predicted).await;
    let first_err = match first {
        Ok(distribution) => {
            return JudgeOutcome {
                distribution,
                fallback: false,
                detail: None,
            }
        }
        Err(e) => e,
    };

    tokio::time::sleep(jittered(binding.retry_backoff)).await;
    let retry_prompt = format!(
        "{prompt}\nReminder: only diagnosis names may change. Keep the entry \
         count and every probability value exactly as in the student dictionary."
    );
    match attempt_judge(pool, binding, &retry_prompt, predicted).await {
        Ok(distribution) => JudgeOutcome {
            distribution,
            fallback: false,
            detail: None,
        },
        Err(second_err) => JudgeOutcome {
            distribution: predicted.clone(),
            fallback: true,
            detail: Some(format!("{first_err}; retry: {second_err}")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use std::sync::Arc;

    fn dist(pairs: &[(&str, f64)]) -> AnswerDistribution {
        AnswerDistribution::new(pairs.iter().map(|(l, p)| (l.to_string(), *p)).collect())
            .unwrap()
    }

    fn binding() -> JudgeBinding {
        JudgeBinding {
            stage: StageBinding {
                backend_id: "judge".to_string(),
                model_name: "judge-model".to_string(),
                system_prompt: "You compare differential diagnosis lists.".to_string(),
                temperature: 0.0,
                max_tokens: 1024,
            },
            timeout: Duration::from_secs(5),
            retry_backoff: Duration::from_millis(1),
        }
    }

    fn pool_with(mock: MockBackend) -> BackendPool {
        let mut pool = BackendPool::new();
        pool.register("judge", Arc::new(mock));
        pool
    }

    #[tokio::test]
    async fn pure_rename_passes_through() {
        let gold = dist(&[("myocardial infarction", 0.6), ("angina", 0.4)]);
        let predicted = dist(&[("heart attack", 0.6), ("angina", 0.4)]);
        let mock = MockBackend::new();
        mock.script(
            "standardizing",
            r#"{"myocardial infarction": 0.6, "angina": 0.4}"#,
        );
        let pool = pool_with(mock);

        let outcome = judge_standardize(&gold, &predicted, &pool, &binding()).await;
        assert!(!outcome.fallback);
        assert_eq!(outcome.distribution.get("myocardial infarction"), Some(0.6));
        assert!(!outcome.distribution.contains("heart attack"));
    }

    #[tokio::test]
    async fn identity_reply_is_accepted() {
        let gold = dist(&[("anemia", 1.0)]);
        let predicted = dist(&[("anemia", 0.7), ("thalassemia", 0.3)]);
        let mock = MockBackend::new();
        mock.script("standardizing", r#"{"anemia": 0.7, "thalassemia": 0.3}"#);
        let pool = pool_with(mock);

        let outcome = judge_standardize(&gold, &predicted, &pool, &binding()).await;
        assert!(!outcome.fallback);
        assert_eq!(outcome.distribution, predicted);
    }

    #[tokio::test]
    async fn altered_probabilities_trigger_fallback() {
        let gold = dist(&[("anemia", 1.0)]);
        let predicted = dist(&[("anemia", 0.7), ("thalassemia", 0.3)]);
        let mock = MockBackend::new();
        mock.script("standardizing", r#"{"anemia": 0.8, "thalassemia": 0.2}"#);
        let pool = pool_with(mock);

        let outcome = judge_standardize(&gold, &predicted, &pool, &binding()).await;
        assert!(outcome.fallback);
        assert_eq!(outcome.distribution, predicted);
        assert!(outcome.detail.unwrap().contains("probability changed"));
    }

    #[tokio::test]
    async fn added_keys_trigger_fallback() {
        let gold = dist(&[("anemia", 1.0)]);
        let predicted = dist(&[("anemia", 0.7), ("thalassemia", 0.3)]);
        let mock = MockBackend::new();
        mock.script(
            "standardizing",
            r#"{"anemia": 0.7, "thalassemia": 0.2, "lead poisoning": 0.1}"#,
        );
        let pool = pool_with(mock);

        let outcome = judge_standardize(&gold, &predicted, &pool, &binding()).await;
        assert!(outcome.fallback);
        assert_eq!(outcome.distribution, predicted);
    }

    #[tokio::test]
    async fn judge_backend_failure_falls_back_after_retry() {
        let gold = dist(&[("anemia", 1.0)]);
        let predicted = dist(&[("anemia", 0.7), ("thalassemia", 0.3)]);
        let pool = pool_with(MockBackend::new()); // nothing scripted: MockUnmatched twice

        let outcome = judge_standardize(&gold, &predicted, &pool, &binding()).await;
        assert!(outcome.fallback);
        assert_eq!(outcome.distribution, predicted);
    }
}
