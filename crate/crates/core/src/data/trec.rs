//! TREC relevance judgments and run files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAX_GRADE: u8 = 4;

/// `query_id -> passage_id -> grade`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u8>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a judgment. Re-adding the same grade is a no-op; a different
    /// grade for the same pair is an error.
    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u8) -> std::result::Result<(), String> {
        if grade > MAX_GRADE {
            return Err(format!("grade {grade} outside 0..={MAX_GRADE}"));
        }
        let q = self.judgments.entry(query_id.to_string()).or_default();
        match q.get(passage_id) {
            Some(&g) if g != grade => Err(format!(
                "conflicting grades {g} and {grade} for ({query_id}, {passage_id})"
            )),
            _ => {
                q.insert(passage_id.to_string(), grade);
                Ok(())
            }
        }
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u8>> {
        self.judgments.get(query_id)
    }

    /// Grade of a pair; unjudged passages are grade 0.
    pub fn grade(&self, query_id: &str, passage_id: &str) -> u8 {
        self.judgments
            .get(query_id)
            .and_then(|q| q.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Judgments of the given queries only.
    pub fn restrict<'a>(&self, query_ids: impl IntoIterator<Item = &'a str>) -> Qrels {
        let judgments = query_ids
            .into_iter()
            .filter_map(|q| self.judgments.get_key_value(q))
            .map(|(q, d)| (q.clone(), d.clone()))
            .collect();
        Qrels { judgments }
    }
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _, pid, grade] = fields[..] else {
            return Err(Error::parse(path, i + 1, format!("expected 4 fields, found {}", fields.len())));
        };
        let grade: u8 = grade
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("non-numeric grade `{grade}`")))?;
        qrels.insert(qid, pid, grade).map_err(|m| Error::parse(path, i + 1, m))?;
    }
    Ok(qrels)
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(&fsutil::read_to_string(path)?, path)
}

pub fn qrels_to_string(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, docs) in &qrels.judgments {
        for (p, g) in docs {
            out.push_str(&format!("{q} 0 {p} {g}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub passage_id: String,
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RunEntry>,
    pub tag: String,
}

impl RankedList {
    /// Builds a list from `(passage_id, score)` pairs already in rank order.
    pub fn from_scored(query_id: impl Into<String>, tag: impl Into<String>, scored: Vec<(String, f64)>) -> Self {
        RankedList {
            query_id: query_id.into(),
            tag: tag.into(),
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (passage_id, score))| RunEntry {
                    passage_id,
                    rank: i + 1,
                    score,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(format!("{}: rank {} at position {}", self.query_id, e.rank, i + 1));
            }
            if i > 0 && e.score > self.entries[i - 1].score {
                return Err(format!("{}: score increases at rank {}", self.query_id, e.rank));
            }
            if !seen.insert(e.passage_id.as_str()) {
                return Err(format!("{}: duplicate passage `{}`", self.query_id, e.passage_id));
            }
        }
        Ok(())
    }

    pub fn passage_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }
}

/// Fixed six decimals with trailing zeros removed: `12.5`, `3`, `0.000001`.
pub fn format_score(score: f64) -> String {
    let s = format!("{score:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Rounds to the precision a run file preserves.
pub fn round_score(score: f64) -> f64 {
    format_score(score).parse().expect("formatted score parses")
}

pub fn run_to_string(run: &[RankedList]) -> String {
    let mut out = String::new();
    for list in run {
        for e in &list.entries {
            out.push_str(&format!(
                "{} Q0 {} {} {} {}\n",
                list.query_id,
                e.passage_id,
                e.rank,
                format_score(e.score),
                list.tag
            ));
        }
    }
    out
}

pub fn write_run(run: &[RankedList], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, run_to_string(run).as_bytes())
}

pub fn parse_run(text: &str, path: &Path) -> Result<Vec<RankedList>> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut by_query: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _, pid, rank, score, tag] = fields[..] else {
            return Err(Error::parse(path, i + 1, format!("expected 6 fields, found {}", fields.len())));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("non-numeric rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(path, i + 1, format!("non-numeric score `{score}`")))?;
        let idx = *by_query.entry(qid.to_string()).or_insert_with(|| {
            lists.push(RankedList {
                query_id: qid.to_string(),
                entries: Vec::new(),
                tag: tag.to_string(),
            });
            lists.len() - 1
        });
        let list = &mut lists[idx];
        if list.tag != tag {
            return Err(Error::parse(path, i + 1, format!("tag `{tag}` differs from `{}`", list.tag)));
        }
        list.entries.push(RunEntry {
            passage_id: pid.to_string(),
            rank,
            score,
        });
        list.validate().map_err(|m| Error::parse(path, i + 1, m))?;
    }
    Ok(lists)
}

pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    parse_run(&fsutil::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_line() {
        let q = parse_qrels("31_1 0 MARCO_955948 2\n", Path::new("q")).unwrap();
        assert_eq!(q.grade("31_1", "MARCO_955948"), 2);
        assert_eq!(q.grade("31_1", "other"), 0);
    }

    #[test]
    fn qrels_duplicates_and_conflicts() {
        let q = parse_qrels("a 0 p 1\na 0 p 1\n", Path::new("q")).unwrap();
        assert_eq!(q.query("a").unwrap().len(), 1);
        let err = parse_qrels("a 0 p 1\na 0 p 3\n", Path::new("q")).unwrap_err().to_string();
        assert!(err.contains("q:2:"), "{err}");
        assert!(parse_qrels("a 0 p 5\n", Path::new("q")).is_err());
        assert!(parse_qrels("a 0 p x\n", Path::new("q")).unwrap_err().to_string().contains("q:1:"));
    }

    #[test]
    fn run_line_format() {
        let run = vec![RankedList::from_scored("q1", "bm25", vec![("p9".into(), 12.5)])];
        assert_eq!(run_to_string(&run), "q1 Q0 p9 1 12.5 bm25\n");
    }

    #[test]
    fn score_formatting() {
        assert_eq!(format_score(3.0), "3");
        assert_eq!(format_score(0.1234567), "0.123457");
        assert_eq!(format_score(-0.0000001), "0");
        assert_eq!(format_score(-2.25), "-2.25");
    }

    #[test]
    fn run_rejects_bad_rank_order() {
        let err = parse_run("q Q0 a 2 1 t\n", Path::new("r")).unwrap_err().to_string();
        assert!(err.contains("r:1:"), "{err}");
        assert!(parse_run("q Q0 a 1 1 t\nq Q0 b 2 2 t\n", Path::new("r")).is_err());
        assert!(parse_run("q Q0 a 1 x t\n", Path::new("r")).is_err());
    }
}
