//! First-JSON-object extraction from chatty model replies.
//!
//! Models frequently wrap their structured reply in prose or code fences.
//! The contract here is deterministic: the first substring that parses as a
//! JSON object wins; schema validation is a separate, later step.

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::domain::DistributionError;

/// Errors shared by the triage, expert, and consensus reply parsers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no JSON object found in reply")]
    NoJsonFound,
    #[error("reply does not match the expected schema: {0}")]
    SchemaViolation(String),
    #[error("triage selected {0} specialties, outside [2, 6]")]
    SpecialtyCountOutOfBounds(usize),
    #[error("distribution empty after filtering to legal labels")]
    EmptyAfterFiltering,
    #[error("answer label {0:?} is not among the legal labels")]
    IllegalAnswerLabel(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Returns the first balanced `{...}` substring that parses as JSON.
pub fn first_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let start = search_from + rel;
        if let Some(end) = balanced_end(bytes, start) {
            let candidate = &text[start..end];
            if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                return Some(candidate);
            }
        }
        search_from = start + 1;
    }
    None
}

/// Byte index one past the brace matching `bytes[start]`, skipping braces
/// inside string literals.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else {
                match b {
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts the first JSON object and deserializes it into `T`. Extraction
/// failure is `NoJsonFound`; a shape mismatch is `SchemaViolation`.
pub fn parse_first_object<T: DeserializeOwned>(text: &str) -> Result<T, ParseError> {
    let object = first_json_object(text).ok_or(ParseError::NoJsonFound)?;
    serde_json::from_str(object).map_err(|e| ParseError::SchemaViolation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_bare_object() {
        assert_eq!(first_json_object(r#"{"a":1}"#), Some(r#"{"a":1}"#));
    }

    #[test]
    fn finds_object_inside_prose() {
        let text = r#"Sure! Here is my answer: {"a": 1, "b": {"c": 2}} hope that helps."#;
        assert_eq!(first_json_object(text), Some(r#"{"a": 1, "b": {"c": 2}}"#));
    }

    #[test]
    fn finds_object_inside_code_fence() {
        let text = "```json\n{\"a\": 1}\n```";
        assert_eq!(first_json_object(text), Some("{\"a\": 1}"));
    }

    #[test]
    fn skips_non_json_braces() {
        let text = r#"set {x} first, then {"a": 1}"#;
        assert_eq!(first_json_object(text), Some(r#"{"a": 1}"#));
    }

    #[test]
    fn recovers_from_unbalanced_prefix() {
        let text = r#"{ broken {"a": 1}"#;
        assert_eq!(first_json_object(text), Some(r#"{"a": 1}"#));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_matching() {
        let text = r#"{"a": "closing } inside", "b": 2}"#;
        assert_eq!(first_json_object(text), Some(text));
    }

    #[test]
    fn none_when_no_object_present() {
        assert_eq!(first_json_object("no json here"), None);
        assert_eq!(first_json_object("{ never closed"), None);
    }

    #[test]
    fn parse_first_object_maps_errors() {
        #[derive(serde::Deserialize)]
        struct Shape {
            #[allow(dead_code)]
            a: u32,
        }
        assert!(matches!(
            parse_first_object::<Shape>("nothing"),
            Err(ParseError::NoJsonFound)
        ));
        assert!(matches!(
            parse_first_object::<Shape>(r#"{"b": 1}"#),
            Err(ParseError::SchemaViolation(_))
        ));
        assert!(parse_first_object::<Shape>(r#"{"a": 1}"#).is_ok());
    }
}
