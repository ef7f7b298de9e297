//! JSON-lines records exchanged between pipeline stages.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub topic_id: String,
    pub turn_id: u32,
    pub rewrite: String,
    pub was_copied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub topic_id: String,
    pub turn_id: u32,
    pub qa_input_mode: String,
    /// `None` is a No-Answer prediction.
    pub answer: Option<String>,
    pub score: f64,
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

pub fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, to_jsonl(records).as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&fsutil::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_null_answer() {
        let p = PredictionRecord {
            topic_id: "1".into(),
            turn_id: 2,
            qa_input_mode: "human".into(),
            answer: None,
            score: 0.5,
        };
        let line = to_jsonl(&[p.clone()]);
        assert_eq!(
            line,
            "{\"topic_id\":\"1\",\"turn_id\":2,\"qa_input_mode\":\"human\",\"answer\":null,\"score\":0.5}\n"
        );
        let back: Vec<PredictionRecord> = parse_jsonl(&line, Path::new("p")).unwrap();
        assert_eq!(back, vec![p]);
    }

    #[test]
    fn bad_line_reports_number() {
        let err = parse_jsonl::<RewriteRecord>("\n{}\n", Path::new("r.jsonl")).unwrap_err().to_string();
        assert!(err.starts_with("r.jsonl:2:"), "{err}");
    }
}
