//! Triage stage: infers the task type, picks the specialist panel, and maps
//! each specialty to an expert configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, Query, QueryKind, Specialty, TaskType, TriagePlan};
use crate::extract::{parse_first_object, ParseError};

/// Placeholder in prompt templates replaced by the specialty name.
pub const SPECIALTY_PLACEHOLDER: &str = "{specialty}";

/// One expert's model binding: which backend and model answer for a
/// specialty, under which persona and temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub backend_id: String,
    pub model_name: String,
    pub system_prompt_template: String,
    pub temperature: f64,
}

/// Specialty-to-expert mapping with a mandatory fallback, so routing is
/// total under open-vocabulary triage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRegistry {
    #[serde(rename = "default")]
    default_config: ExpertConfig,
    #[serde(rename = "experts", default)]
    entries: BTreeMap<Specialty, ExpertConfig>,
}

impl ExpertRegistry {
    pub fn new(default_config: ExpertConfig) -> Self {
        Self {
            default_config,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, specialty: Specialty, config: ExpertConfig) {
        self.entries.insert(specialty, config);
    }

    pub fn default_config(&self) -> &ExpertConfig {
        &self.default_config
    }

    pub fn entries(&self) -> &BTreeMap<Specialty, ExpertConfig> {
        &self.entries
    }

    /// The config answering for `specialty`: its registry entry, or the
    /// default config otherwise. The specialty name is substituted into the
    /// prompt template either way.
    pub fn resolve(&self, specialty: &Specialty) -> ExpertConfig {
        let base = self.entries.get(specialty).unwrap_or(&self.default_config);
        let mut config = base.clone();
        config.system_prompt_template = config
            .system_prompt_template
            .replace(SPECIALTY_PLACEHOLDER, specialty.as_str());
        config
    }

    /// Every backend id this registry can hand out (default included).
    pub fn backend_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = std::iter::once(self.default_config.backend_id.as_str())
            .chain(self.entries.values().map(|c| c.backend_id.as_str()))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Resolves a triage plan to expert configurations, in plan order.
pub fn route(plan: &TriagePlan, registry: &ExpertRegistry) -> Vec<ExpertConfig> {
    plan.specialties()
        .iter()
        .map(|s| registry.resolve(s))
        .collect()
}

/// Renders the labeled answer options, one per line (empty for
/// open-differential queries).
pub(crate) fn options_block(query: &Query) -> String {
    query
        .options()
        .iter()
        .map(|(label, text)| format!("{label}. {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the triage prompt: a preliminary-assessment instruction, the
/// reply contract, and the query (options included verbatim for
/// multiple-choice tasks — they carry contextual signal).
pub fn build_triage_prompt(query: &Query) -> String {
    let mut prompt = String::from(
        "You are the triage stage of a multi-specialty clinical panel. \
         Perform a preliminary assessment of the task below: infer what kind \
         of medical task it is, then select the panel of medical specialties \
         best suited to answer it.\n\n\
         Reply with a single JSON object and nothing else, shaped exactly like:\n\
         {\"task_type\": \"<diagnosis | treatment | basic-science | short label>\", \
         \"specialties\": [\"<specialty>\", \"...\"]}\n\n\
         Select between 2 and 6 distinct specialties, most relevant first.\n\n",
    );
    prompt.push_str("Task:\n");
    prompt.push_str(query.text());
    if query.kind() == QueryKind::MultipleChoice {
        prompt.push_str("\n\nAnswer options:\n");
        prompt.push_str(&options_block(query));
    }
    prompt.push('\n');
    prompt
}

#[derive(Deserialize)]
struct RawTriageReply {
    task_type: String,
    specialties: Vec<String>,
}

/// Parses the first JSON object of a triage reply into a validated plan.
///
/// Unknown task types become `TaskType::Other`; specialties are
/// canonicalized, with duplicates (after canonicalization) collapsed to
/// their first occurrence before the 2..=6 panel bound is checked.
pub fn parse_triage_reply(text: &str) -> Result<TriagePlan, ParseError> {
    let raw: RawTriageReply = parse_first_object(text)?;
    let task_type = TaskType::parse(&raw.task_type);

    let mut specialties: Vec<Specialty> = Vec::new();
    for name in &raw.specialties {
        let specialty = Specialty::new(name)
            .map_err(|e| ParseError::SchemaViolation(e.to_string()))?;
        if !specialties.contains(&specialty) {
            specialties.push(specialty);
        }
    }

    TriagePlan::new(task_type, specialties).map_err(|e| match e {
        DomainError::SpecialtyCountOutOfBounds(n) => ParseError::SpecialtyCountOutOfBounds(n),
        other => ParseError::SchemaViolation(other.to_string()),
    })
}
