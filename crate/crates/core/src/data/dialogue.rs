//! Dialogue files: a JSON array of topics, each an ordered list of turns.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DialogueFormat {
    /// Questions with human rewrites, answers and answer spans.
    CanardJson,
    /// Questions only, possibly with manual rewrites.
    CastJson,
}

impl DialogueFormat {
    /// Whether answers are expected to be part of the conversation history.
    pub fn has_answers(self) -> bool {
        matches!(self, DialogueFormat::CanardJson)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub passage_id: String,
    /// Unicode scalar offset of the first answer character.
    pub start: usize,
    /// Exclusive end offset.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub turn_id: u32,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<String>,
    /// Gold answer, also the answer shown to the user in the history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_span: Option<AnswerSpan>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub answerable: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl Turn {
    pub fn new(turn_id: u32, question: impl Into<String>) -> Self {
        Turn {
            turn_id,
            question: question.into(),
            rewrite: None,
            answer_text: None,
            answer_span: None,
            answerable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialogue {
    pub topic_id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// TREC-style query id of turn `index`, `"{topic}_{turn_id}"`.
    pub fn query_id(&self, index: usize) -> String {
        query_id(&self.topic_id, self.turns[index].turn_id)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, t) in self.turns.iter().enumerate() {
            if i > 0 && t.turn_id <= self.turns[i - 1].turn_id {
                return Err(format!("turn {i}: turn_id {} does not increase", t.turn_id));
            }
            if !t.answerable && t.answer_span.is_some() {
                return Err(format!("turn {i}: unanswerable turn carries an answer_span"));
            }
            if let Some(s) = &t.answer_span {
                if s.start > s.end {
                    return Err(format!("turn {i}: answer_span start {} after end {}", s.start, s.end));
                }
            }
        }
        Ok(())
    }
}

pub fn query_id(topic_id: &str, turn_id: u32) -> String {
    format!("{topic_id}_{turn_id}")
}

fn schema_err(path: &Path, record: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        file: path.display().to_string(),
        record: record.into(),
        message: message.into(),
    }
}

/// Parses dialogue JSON text. `path` is used only in error messages.
pub fn parse_dialogues(text: &str, path: &Path) -> Result<Vec<Dialogue>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let Value::Array(records) = root else {
        return Err(schema_err(path, "root", "expected a JSON array of topics"));
    };
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        // Per-turn decoding so the error can point at the failing turn.
        let mut obj = match rec {
            Value::Object(m) => m,
            _ => return Err(schema_err(path, i.to_string(), "expected an object")),
        };
        let turns = match obj.remove("turns") {
            Some(Value::Array(t)) => t,
            Some(_) => return Err(schema_err(path, i.to_string(), "field `turns` must be an array")),
            None => return Err(schema_err(path, i.to_string(), "missing field `turns`")),
        };
        let topic_id = match obj.remove("topic_id") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(schema_err(path, i.to_string(), "field `topic_id` must be a string")),
            None => return Err(schema_err(path, i.to_string(), "missing field `topic_id`")),
        };
        if let Some(k) = obj.keys().next() {
            return Err(schema_err(path, i.to_string(), format!("unknown field `{k}`")));
        }
        let mut parsed = Vec::with_capacity(turns.len());
        for (j, t) in turns.into_iter().enumerate() {
            let turn: Turn =
                serde_json::from_value(t).map_err(|e| schema_err(path, format!("{i} turn {j}"), e.to_string()))?;
            parsed.push(turn);
        }
        let d = Dialogue { topic_id, turns: parsed };
        d.validate().map_err(|m| schema_err(path, i.to_string(), m))?;
        out.push(d);
    }
    Ok(out)
}

/// Both formats share one schema; `format` only documents what the file is
/// expected to carry.
pub fn load_dialogues(path: &Path, _format: DialogueFormat) -> Result<Vec<Dialogue>> {
    let text = fsutil::read_to_string(path)?;
    parse_dialogues(&text, path)
}

/// Canonical form: pretty-printed JSON, absent optionals omitted, trailing
/// newline.
pub fn dialogues_to_string(dialogues: &[Dialogue]) -> String {
    let mut s = serde_json::to_string_pretty(dialogues).expect("dialogues serialize");
    s.push('\n');
    s
}

pub fn write_dialogues(dialogues: &[Dialogue], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, dialogues_to_string(dialogues).as_bytes())
}

/// Checks every gold span against the length of its passage text.
pub fn check_spans<'a>(dialogues: &[Dialogue], passage_text: impl Fn(&str) -> Option<&'a str>) -> Result<()> {
    for d in dialogues {
        for t in &d.turns {
            let Some(s) = &t.answer_span else { continue };
            let qid = query_id(&d.topic_id, t.turn_id);
            let text = passage_text(&s.passage_id)
                .ok_or_else(|| Error::invalid(format!("{qid}: unknown passage `{}`", s.passage_id)))?;
            let len = text.chars().count();
            if s.end > len {
                return Err(Error::invalid(format!(
                    "{qid}: answer_span end {} beyond passage `{}` of {len} chars",
                    s.end, s.passage_id
                )));
            }
        }
    }
    Ok(())
}
