//! JSONL dataset formats.
//!
//! Multiple-choice items:
//! `{"id","question","options":{"A":...},"answer","metadata":{...}}`
//! Differential-diagnosis cases:
//! `{"id","age","sex","chief_complaint","evidence":[["q","a"],...],"differential":{"name":prob}}`
//!
//! One object per line; blank lines are ignored; errors carry the 1-based
//! line number. Converters from upstream dataset releases are out of scope —
//! fixtures in this layout ship with the tests.

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{AnswerDistribution, Query};

/// One multiple-choice benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub options: IndexMap<String, String>,
    pub gold_label: String,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawMcqItem {
    id: String,
    question: String,
    options: IndexMap<String, String>,
    answer: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl McqItem {
    pub fn to_query(&self) -> Query {
        Query::multiple_choice(self.id.clone(), self.question.clone(), self.options.clone())
            .expect("items are validated at load time")
    }
}

/// Loads a multiple-choice JSONL dataset, validating that each gold label
/// is one of the item's options.
pub fn load_mcq_dataset(path: &Path) -> Result<Vec<McqItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut items = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = index + 1;
        let raw: RawMcqItem =
            serde_json::from_str(line).map_err(|e| EvalError::ParseAtLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if raw.options.len() < 2 {
            return Err(EvalError::ParseAtLine {
                line: line_no,
                message: format!("item {:?} has fewer than 2 options", raw.id),
            });
        }
        if !raw.options.contains_key(&raw.answer) {
            return Err(EvalError::ParseAtLine {
                line: line_no,
                message: format!(
                    "gold label {:?} is not among the options of item {:?}",
                    raw.answer, raw.id
                ),
            });
        }
        items.push(McqItem {
            id: raw.id,
            question: raw.question,
            options: raw.options,
            gold_label: raw.answer,
            metadata: raw.metadata,
        });
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: u32,
    pub sex: String,
}

/// One differential-diagnosis case: a synthetic patient presentation plus
/// the gold differential over diagnosis names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DdxCase {
    pub id: String,
    pub demographics: Demographics,
    pub chief_complaint: String,
    pub evidence: Vec<(String, String)>,
    pub gold_differential: AnswerDistribution,
}

#[derive(Deserialize)]
struct RawDdxCase {
    id: String,
    age: u32,
    sex: String,
    chief_complaint: String,
    #[serde(default)]
    evidence: Vec<(String, String)>,
    differential: AnswerDistribution,
}

impl DdxCase {
    /// Renders the standardized case presentation handed to the pipeline:
    /// general characteristics, the initial presentation, and every piece
    /// of clinical evidence as question => answer lines.
    pub fn presentation(&self) -> String {
        let mut text = format!(
            "PATIENT PROFILE\nAge: {}\nSex: {}\n\nINITIAL PRESENTATION (chief complaint): {}\n",
            self.demographics.age, self.demographics.sex, self.chief_complaint
        );
        if !self.evidence.is_empty() {
            text.push_str("\nCLINICAL EVIDENCE\n");
            for (question, answer) in &self.evidence {
                text.push_str(&format!("Q: {question} => A: {answer}\n"));
            }
        }
        text
    }

    pub fn to_query(&self) -> Query {
        Query::open_differential(self.id.clone(), self.presentation())
    }
}

/// Loads a differential-diagnosis JSONL dataset.
pub fn load_ddx_dataset(path: &Path) -> Result<Vec<DdxCase>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cases = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDdxCase = serde_json::from_str(line).map_err(|e| EvalError::ParseAtLine {
            line: index + 1,
            message: e.to_string(),
        })?;
        cases.push(DdxCase {
            id: raw.id,
            demographics: Demographics {
                age: raw.age,
                sex: raw.sex,
            },
            chief_complaint: raw.chief_complaint,
            evidence: raw.evidence,
            gold_differential: raw.differential,
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn loads_valid_mcq_fixture() {
        let file = write_lines(&[
            r#"{"id":"q1","question":"first?","options":{"A":"yes","B":"no"},"answer":"A"}"#,
            r#"{"id":"q2","question":"second?","options":{"A":"x","B":"y"},"answer":"B","metadata":{"task_type":"diagnosis"}}"#,
            r#"{"id":"q3","question":"third?","options":{"A":"1","B":"2","C":"3"},"answer":"C"}"#,
        ]);
        let items = load_mcq_dataset(file.path()).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[1].metadata["task_type"], "diagnosis");
        assert_eq!(items[2].gold_label, "C");
        let query = items[0].to_query();
        assert_eq!(query.labels(), vec!["A", "B"]);
    }

    #[test]
    fn gold_label_outside_options_names_the_line() {
        let file = write_lines(&[
            r#"{"id":"q1","question":"ok","options":{"A":"a","B":"b"},"answer":"A"}"#,
            r#"{"id":"q2","question":"bad","options":{"A":"a","B":"b"},"answer":"Z"}"#,
        ]);
        match load_mcq_dataset(file.path()).unwrap_err() {
            EvalError::ParseAtLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let file = write_lines(&[]);
        assert!(load_mcq_dataset(file.path()).unwrap().is_empty());
    }

    #[test]
    fn loads_ddx_fixture_and_renders_presentation() {
        let file = write_lines(&[
            r#"{"id":"p1","age":55,"sex":"F","chief_complaint":"Anemia","evidence":[["Do you have a poor diet?","false"],["How intense is the pain?","2"]],"differential":{"anemia":0.7,"iron deficiency":0.3}}"#,
        ]);
        let cases = load_ddx_dataset(file.path()).unwrap();
        assert_eq!(cases.len(), 1);
        let text = cases[0].presentation();
        assert!(text.contains("Age: 55"));
        assert!(text.contains("chief complaint): Anemia"));
        assert!(text.contains("Q: Do you have a poor diet? => A: false"));
        assert_eq!(cases[0].gold_differential.argmax(), "anemia");
    }

    #[test]
    fn invalid_ddx_differential_is_a_line_error() {
        let file = write_lines(&[
            r#"{"id":"p1","age":40,"sex":"M","chief_complaint":"x","differential":{"a":0.2,"b":0.2}}"#,
        ]);
        assert!(matches!(
            load_ddx_dataset(file.path()).unwrap_err(),
            EvalError::ParseAtLine { line: 1, .. }
        ));
    }
}
