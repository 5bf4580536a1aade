//! Shared domain types and their invariants.
//!
//! Everything here is immutable after construction and safe to share across
//! concurrent tasks. Canonical serialization of every type is a JSON object
//! with snake_case fields; probabilities are plain decimal numbers.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "sums to 1" checks on probability vectors and weights.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Sum band accepted by [`validate_distribution`]: anything further off than
/// this is a malformed model reply, not a rounding artifact.
pub const REPAIR_BAND: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("empty distribution")]
    Empty,
    #[error("non-finite probability for label {label:?}")]
    NonFinite { label: String },
    #[error("negative probability {value} for label {label:?}")]
    Negative { label: String, value: f64 },
    #[error("probability sum {sum} outside repair band [{}, {}]", REPAIR_BAND.0, REPAIR_BAND.1)]
    SumOutOfBand { sum: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("query label must be non-empty")]
    EmptyLabel,
    #[error("multiple-choice query needs at least 2 options, got {0}")]
    TooFewOptions(usize),
    #[error("open-differential query must not carry options")]
    UnexpectedOptions,
    #[error("specialty must be non-empty")]
    EmptySpecialty,
    #[error("specialty count {0} outside [2, 6]")]
    SpecialtyCountOutOfBounds(usize),
    #[error("duplicate specialty {0:?}")]
    DuplicateSpecialty(String),
    #[error("expert weight {0} is not strictly positive")]
    NonPositiveWeight(f64),
    #[error("expert weights sum to {0}, expected 1")]
    WeightSumOffOne(f64),
    #[error("top_answer {top:?} is not the distribution argmax {argmax:?}")]
    TopAnswerMismatch { top: String, argmax: String },
    #[error("second_answer {0:?} must be distinct from top_answer and present in the distribution")]
    SecondAnswerInvalid(String),
    #[error("final_answer {0:?} is not a key of the final distribution")]
    FinalAnswerMissing(String),
    #[error("trace has {responses} responses + {dropped} drops for {specialties} specialties")]
    TraceArityMismatch {
        responses: usize,
        dropped: usize,
        specialties: usize,
    },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

// ---------------------------------------------------------------------------
// Query

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    MultipleChoice,
    OpenDifferential,
}

/// One clinical task: free text plus labeled answer options for
/// multiple-choice, or no options for open-differential tasks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Query {
    id: String,
    text: String,
    options: IndexMap<String, String>,
    kind: QueryKind,
}

impl Query {
    pub fn multiple_choice(
        id: impl Into<String>,
        text: impl Into<String>,
        options: IndexMap<String, String>,
    ) -> Result<Self, DomainError> {
        if options.len() < 2 {
            return Err(DomainError::TooFewOptions(options.len()));
        }
        if options.keys().any(|l| l.trim().is_empty()) {
            return Err(DomainError::EmptyLabel);
        }
        Ok(Self {
            id: id.into(),
            text: text.into(),
            options,
            kind: QueryKind::MultipleChoice,
        })
    }

    pub fn open_differential(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            options: IndexMap::new(),
            kind: QueryKind::OpenDifferential,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Option labels in input order (empty for open-differential queries).
    pub fn options(&self) -> &IndexMap<String, String> {
        &self.options
    }

    pub fn kind(&self) -> QueryKind {
        self.kind
    }

    pub fn labels(&self) -> Vec<String> {
        self.options.keys().cloned().collect()
    }
}

#[derive(Deserialize)]
struct RawQuery {
    id: String,
    text: String,
    #[serde(default)]
    options: IndexMap<String, String>,
    kind: QueryKind,
}

impl TryFrom<RawQuery> for Query {
    type Error = DomainError;

    fn try_from(raw: RawQuery) -> Result<Self, DomainError> {
        match raw.kind {
            QueryKind::MultipleChoice => Query::multiple_choice(raw.id, raw.text, raw.options),
            QueryKind::OpenDifferential => {
                if !raw.options.is_empty() {
                    return Err(DomainError::UnexpectedOptions);
                }
                Ok(Query::open_differential(raw.id, raw.text))
            }
        }
    }
}

impl<'de> Deserialize<'de> for Query {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawQuery::deserialize(deserializer)?;
        Query::try_from(raw).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// TaskType

/// The kind of medical task the triage stage inferred for a query.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TaskType {
    Diagnosis,
    Treatment,
    BasicScience,
    Other(String),
}

impl TaskType {
    /// Canonical form: known names map to their variants (case-insensitive,
    /// spaces and underscores treated as hyphens), everything else is kept
    /// verbatim under `Other`.
    pub fn parse(s: &str) -> Self {
        let trimmed = s.trim();
        let canon = trimmed.to_lowercase().replace([' ', '_'], "-");
        match canon.as_str() {
            "diagnosis" => TaskType::Diagnosis,
            "treatment" => TaskType::Treatment,
            "basic-science" => TaskType::BasicScience,
            _ => TaskType::Other(trimmed.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            TaskType::Diagnosis => "diagnosis",
            TaskType::Treatment => "treatment",
            TaskType::BasicScience => "basic-science",
            TaskType::Other(s) => s,
        }
    }
}

impl std::fmt::Display for TaskType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TaskType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(TaskType::parse(&s))
    }
}

// ---------------------------------------------------------------------------
// Specialty

/// A medical specialty name, canonicalized to trimmed lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Specialty(String);

impl Specialty {
    pub fn new(name: &str) -> Result<Self, DomainError> {
        let canon = name.trim().to_lowercase();
        if canon.is_empty() {
            return Err(DomainError::EmptySpecialty);
        }
        Ok(Self(canon))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Specialty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Specialty {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Specialty::new(&s).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// AnswerDistribution

/// A normalized probability map over candidate answer labels.
///
/// Invariants: non-empty, every probability finite and >= 0, and the sum is
/// 1 within [`PROB_TOLERANCE`]. Label insertion order is preserved; ranking
/// ties are broken by ascending label order so argmax and ranks are stable
/// regardless of map order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AnswerDistribution {
    probs: IndexMap<String, f64>,
}

impl AnswerDistribution {
    /// Strict constructor: the map must already satisfy every invariant.
    pub fn new(probs: IndexMap<String, f64>) -> Result<Self, DistributionError> {
        check_entries(&probs)?;
        let sum: f64 = probs.values().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(DistributionError::SumOutOfBand { sum });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &IndexMap<String, f64> {
        &self.probs
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.probs.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.probs.contains_key(label)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.probs.keys().map(String::as_str)
    }

    /// Highest-probability label; ties broken by ascending label order.
    pub fn argmax(&self) -> &str {
        let mut best: Option<(&str, f64)> = None;
        for (label, &p) in &self.probs {
            let replace = match best {
                None => true,
                Some((bl, bp)) => p > bp || (p == bp && label.as_str() < bl),
            };
            if replace {
                best = Some((label, p));
            }
        }
        best.expect("distribution is never empty").0
    }

    /// Labels ranked by descending probability, ties by ascending label.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut pairs: Vec<(&str, f64)> = self
            .probs
            .iter()
            .map(|(l, &p)| (l.as_str(), p))
            .collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
        pairs
    }

    /// The `k` highest-ranked labels (fewer when the support is smaller).
    pub fn top_k(&self, k: usize) -> Vec<&str> {
        self.ranked().into_iter().take(k).map(|(l, _)| l).collect()
    }
}

impl<'de> Deserialize<'de> for AnswerDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let probs = IndexMap::<String, f64>::deserialize(deserializer)?;
        AnswerDistribution::new(probs).map_err(serde::de::Error::custom)
    }
}

fn check_entries(probs: &IndexMap<String, f64>) -> Result<(), DistributionError> {
    if probs.is_empty() {
        return Err(DistributionError::Empty);
    }
    for (label, &p) in probs {
        if !p.is_finite() {
            return Err(DistributionError::NonFinite {
                label: label.clone(),
            });
        }
        if p < 0.0 {
            return Err(DistributionError::Negative {
                label: label.clone(),
                value: p,
            });
        }
    }
    Ok(())
}

/// Repair policy for model-emitted probabilities: a sum within
/// [`REPAIR_BAND`] is treated as a rounding artifact and divided out;
/// anything further off is rejected as a protocol violation.
///
/// Idempotent, and never changes the argmax of its input.
pub fn validate_distribution(
    raw: IndexMap<String, f64>,
) -> Result<AnswerDistribution, DistributionError> {
    check_entries(&raw)?;
    let sum: f64 = raw.values().sum();
    if sum < REPAIR_BAND.0 || sum > REPAIR_BAND.1 {
        return Err(DistributionError::SumOutOfBand { sum });
    }
    let probs = raw.into_iter().map(|(l, p)| (l, p / sum)).collect();
    AnswerDistribution::new(probs)
}

// ---------------------------------------------------------------------------
// ExpertResponse

/// One specialist's assessment: rationale plus a full answer distribution.
///
/// `top_answer` is always the distribution argmax; `second_answer`, when
/// present, is a distinct label from the same distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertResponse {
    specialty: Specialty,
    rationale: String,
    distribution: AnswerDistribution,
    top_answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    second_answer: Option<String>,
}

impl ExpertResponse {
    /// Builds a response from a validated distribution. The top answer is
    /// computed as the argmax; a claimed second answer is kept only when it
    /// is a distinct in-distribution label, otherwise the second-ranked
    /// label stands in (or nothing, for single-entry supports).
    pub fn from_distribution(
        specialty: Specialty,
        rationale: impl Into<String>,
        distribution: AnswerDistribution,
        claimed_second: Option<String>,
    ) -> Self {
        let top_answer = distribution.argmax().to_string();
        let second_answer = match claimed_second {
            Some(s) if s != top_answer && distribution.contains(&s) => Some(s),
            _ => distribution
                .ranked()
                .get(1)
                .map(|(label, _)| label.to_string()),
        };
        Self {
            specialty,
            rationale: rationale.into(),
            distribution,
            top_answer,
            second_answer,
        }
    }

    pub fn specialty(&self) -> &Specialty {
        &self.specialty
    }

    pub fn rationale(&self) -> &str {
        &self.rationale
    }

    pub fn distribution(&self) -> &AnswerDistribution {
        &self.distribution
    }

    pub fn top_answer(&self) -> &str {
        &self.top_answer
    }

    pub fn second_answer(&self) -> Option<&str> {
        self.second_answer.as_deref()
    }
}

#[derive(Deserialize)]
struct RawExpertResponse {
    specialty: Specialty,
    rationale: String,
    distribution: AnswerDistribution,
    top_answer: String,
    #[serde(default)]
    second_answer: Option<String>,
}

impl TryFrom<RawExpertResponse> for ExpertResponse {
    type Error = DomainError;

    fn try_from(raw: RawExpertResponse) -> Result<Self, DomainError> {
        let argmax = raw.distribution.argmax();
        if raw.top_answer != argmax {
            return Err(DomainError::TopAnswerMismatch {
                top: raw.top_answer,
                argmax: argmax.to_string(),
            });
        }
        if let Some(second) = &raw.second_answer {
            if second == &raw.top_answer || !raw.distribution.contains(second) {
                return Err(DomainError::SecondAnswerInvalid(second.clone()));
            }
        }
        Ok(Self {
            specialty: raw.specialty,
            rationale: raw.rationale,
            distribution: raw.distribution,
            top_answer: raw.top_answer,
            second_answer: raw.second_answer,
        })
    }
}

impl<'de> Deserialize<'de> for ExpertResponse {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawExpertResponse::deserialize(deserializer)?;
        ExpertResponse::try_from(raw).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// TriagePlan

/// Output of the triage stage: the task type plus an ordered specialist
/// panel of 2 to 6 distinct specialties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriagePlan {
    task_type: TaskType,
    specialties: Vec<Specialty>,
}

pub const MIN_SPECIALTIES: usize = 2;
pub const MAX_SPECIALTIES: usize = 6;

impl TriagePlan {
    pub fn new(task_type: TaskType, specialties: Vec<Specialty>) -> Result<Self, DomainError> {
        if specialties.len() < MIN_SPECIALTIES || specialties.len() > MAX_SPECIALTIES {
            return Err(DomainError::SpecialtyCountOutOfBounds(specialties.len()));
        }
        for (i, s) in specialties.iter().enumerate() {
            if specialties[..i].contains(s) {
                return Err(DomainError::DuplicateSpecialty(s.as_str().to_string()));
            }
        }
        Ok(Self {
            task_type,
            specialties,
        })
    }

    pub fn task_type(&self) -> &TaskType {
        &self.task_type
    }

    pub fn specialties(&self) -> &[Specialty] {
        &self.specialties
    }
}

#[derive(Deserialize)]
struct RawTriagePlan {
    task_type: TaskType,
    specialties: Vec<Specialty>,
}

impl<'de> Deserialize<'de> for TriagePlan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawTriagePlan::deserialize(deserializer)?;
        TriagePlan::new(raw.task_type, raw.specialties).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// ExpertWeights

/// Per-expert pooling weights, aligned with panel order: strictly positive
/// and summing to 1 within [`PROB_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ExpertWeights(Vec<f64>);

impl ExpertWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, DomainError> {
        for &w in &weights {
            if !(w > 0.0) || !w.is_finite() {
                return Err(DomainError::NonPositiveWeight(w));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(DomainError::WeightSumOffOne(sum));
        }
        Ok(Self(weights))
    }

    /// Uniform weights 1/n over a panel of `n` experts.
    pub fn uniform(n: usize) -> Result<Self, DomainError> {
        if n == 0 {
            return Err(DomainError::WeightSumOffOne(0.0));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Normalizes strictly positive relative weights to sum to 1.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, DomainError> {
        for &w in &raw {
            if !(w > 0.0) || !w.is_finite() {
                return Err(DomainError::NonPositiveWeight(w));
            }
        }
        let sum: f64 = raw.iter().sum();
        Self::new(raw.into_iter().map(|w| w / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'de> Deserialize<'de> for ExpertWeights {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        ExpertWeights::new(raw).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Consensus output and provenance

/// Wall-clock stage durations in milliseconds. Excluded from canonical
/// trace serialization when absent so golden-file comparisons stay exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub triage_ms: u64,
    pub panel_ms: u64,
    pub aggregation_ms: u64,
    pub consensus_ms: u64,
    pub total_ms: u64,
}

/// Record of an expert dropped by the panel failure policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedExpert {
    pub specialty: Specialty,
    pub error: String,
}

/// Full audit trail of one pipeline run: enough to replay the aggregation
/// offline and to see exactly what each stage produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceTrace {
    triage_plan: TriagePlan,
    expert_responses: Vec<ExpertResponse>,
    dropped_experts: Vec<DroppedExpert>,
    weights: ExpertWeights,
    pooled: crate::aggregation::PooledDistribution,
    boosted: crate::aggregation::BoostedDistribution,
    aggregated_argmax: String,
    consensus_fallback: bool,
    distribution_source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings: Option<StageTimings>,
}

/// How expert answer distributions were obtained. Prompt elicitation is the
/// only backend-agnostic option; recorded in every trace.
pub const DISTRIBUTION_SOURCE_PROMPTED: &str = "prompt-elicited";

impl ProvenanceTrace {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        triage_plan: TriagePlan,
        expert_responses: Vec<ExpertResponse>,
        dropped_experts: Vec<DroppedExpert>,
        weights: ExpertWeights,
        pooled: crate::aggregation::PooledDistribution,
        boosted: crate::aggregation::BoostedDistribution,
        consensus_fallback: bool,
        timings: Option<StageTimings>,
    ) -> Result<Self, DomainError> {
        if expert_responses.len() + dropped_experts.len() != triage_plan.specialties().len() {
            return Err(DomainError::TraceArityMismatch {
                responses: expert_responses.len(),
                dropped: dropped_experts.len(),
                specialties: triage_plan.specialties().len(),
            });
        }
        let aggregated_argmax = boosted.final_distribution().argmax().to_string();
        Ok(Self {
            triage_plan,
            expert_responses,
            dropped_experts,
            weights,
            pooled,
            boosted,
            aggregated_argmax,
            consensus_fallback,
            distribution_source: DISTRIBUTION_SOURCE_PROMPTED.to_string(),
            timings,
        })
    }

    pub fn triage_plan(&self) -> &TriagePlan {
        &self.triage_plan
    }

    pub fn expert_responses(&self) -> &[ExpertResponse] {
        &self.expert_responses
    }

    pub fn dropped_experts(&self) -> &[DroppedExpert] {
        &self.dropped_experts
    }

    pub fn weights(&self) -> &ExpertWeights {
        &self.weights
    }

    pub fn pooled(&self) -> &crate::aggregation::PooledDistribution {
        &self.pooled
    }

    pub fn boosted(&self) -> &crate::aggregation::BoostedDistribution {
        &self.boosted
    }

    /// Argmax of the final aggregated distribution, kept alongside the
    /// consensus choice so overrides are auditable.
    pub fn aggregated_argmax(&self) -> &str {
        &self.aggregated_argmax
    }

    pub fn consensus_fallback(&self) -> bool {
        self.consensus_fallback
    }

    pub fn distribution_source(&self) -> &str {
        &self.distribution_source
    }

    pub fn timings(&self) -> Option<&StageTimings> {
        self.timings.as_ref()
    }

    /// Copy without timings, for byte-stable serialization.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        t.timings = None;
        t
    }
}

#[derive(Deserialize)]
struct RawProvenanceTrace {
    triage_plan: TriagePlan,
    expert_responses: Vec<ExpertResponse>,
    dropped_experts: Vec<DroppedExpert>,
    weights: ExpertWeights,
    pooled: crate::aggregation::PooledDistribution,
    boosted: crate::aggregation::BoostedDistribution,
    #[allow(dead_code)]
    aggregated_argmax: String,
    consensus_fallback: bool,
    #[allow(dead_code)]
    distribution_source: String,
    #[serde(default)]
    timings: Option<StageTimings>,
}

impl<'de> Deserialize<'de> for ProvenanceTrace {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawProvenanceTrace::deserialize(deserializer)?;
        ProvenanceTrace::new(
            raw.triage_plan,
            raw.expert_responses,
            raw.dropped_experts,
            raw.weights,
            raw.pooled,
            raw.boosted,
            raw.consensus_fallback,
            raw.timings,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// The pipeline's final determination plus its full provenance trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusResult {
    final_answer: String,
    narrative: String,
    final_distribution: AnswerDistribution,
    trace: ProvenanceTrace,
}

impl ConsensusResult {
    pub fn new(
        final_answer: String,
        narrative: String,
        final_distribution: AnswerDistribution,
        trace: ProvenanceTrace,
    ) -> Result<Self, DomainError> {
        if !final_distribution.contains(&final_answer) {
            return Err(DomainError::FinalAnswerMissing(final_answer));
        }
        Ok(Self {
            final_answer,
            narrative,
            final_distribution,
            trace,
        })
    }

    pub fn final_answer(&self) -> &str {
        &self.final_answer
    }

    pub fn narrative(&self) -> &str {
        &self.narrative
    }

    pub fn final_distribution(&self) -> &AnswerDistribution {
        &self.final_distribution
    }

    pub fn trace(&self) -> &ProvenanceTrace {
        &self.trace
    }

    /// Copy with trace timings removed, for byte-stable output.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.trace = r.trace.without_timings();
        r
    }
}

#[derive(Deserialize)]
struct RawConsensusResult {
    final_answer: String,
    narrative: String,
    final_distribution: AnswerDistribution,
    trace: ProvenanceTrace,
}

impl<'de> Deserialize<'de> for ConsensusResult {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawConsensusResult::deserialize(deserializer)?;
        ConsensusResult::new(
            raw.final_answer,
            raw.narrative,
            raw.final_distribution,
            raw.trace,
        )
        .map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
