//! Ranking metrics over TREC runs and graded judgments.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{Qrels, RankedList};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Minimum grade counted as relevant for MAP, MRR, P@1 and PR curves.
    pub cutoff_grade: u8,
    pub depth: usize,
    pub ndcg_k: usize,
    /// Use binary instead of graded NDCG gains.
    pub ndcg_binarize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoff_grade: 2,
            depth: 1000,
            ndcg_k: 3,
            ndcg_binarize: false,
        }
    }
}

/// Passage ids in rank order.
pub type Ranking<'a> = [&'a str];

/// Grades of one query; unjudged passages are grade 0.
pub type Judgments = BTreeMap<String, u8>;

fn grade(j: &Judgments, pid: &str) -> u8 {
    j.get(pid).copied().unwrap_or(0)
}

fn num_relevant(j: &Judgments, cutoff: u8) -> usize {
    j.values().filter(|&&g| g >= cutoff).count()
}

fn relevant(j: &Judgments, pid: &str, cutoff: u8) -> bool {
    grade(j, pid) >= cutoff
}

/// Mean precision at each relevant rank within `depth`, over all relevant
/// passages in the judgments.
pub fn average_precision(ranking: &Ranking, j: &Judgments, cutoff: u8, depth: usize) -> f64 {
    let total = num_relevant(j, cutoff);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, pid) in ranking.iter().take(depth).enumerate() {
        if relevant(j, pid, cutoff) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

pub fn reciprocal_rank(ranking: &Ranking, j: &Judgments, cutoff: u8, depth: usize) -> f64 {
    ranking
        .iter()
        .take(depth)
        .position(|p| relevant(j, p, cutoff))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn precision_at_1(ranking: &Ranking, j: &Judgments, cutoff: u8) -> f64 {
    match ranking.first() {
        Some(p) if relevant(j, p, cutoff) => 1.0,
        _ => 0.0,
    }
}

/// `DCG / IDCG` with gain `grade` (or `1[grade >= cutoff]` when
/// `binarize`) and discount `log2(rank + 1)`. `None` when the ideal DCG is 0.
pub fn ndcg_at_k(ranking: &Ranking, j: &Judgments, k: usize, binarize: Option<u8>) -> Option<f64> {
    let gain = |g: u8| -> f64 {
        match binarize {
            Some(c) => f64::from(u8::from(g >= c)),
            None => f64::from(g),
        }
    };
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, p)| gain(grade(j, p)) / discount(i))
        .sum();
    let mut ideal: Vec<f64> = j.values().map(|&g| gain(g)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| g / discount(i)).sum();
    (idcg > 0.0).then(|| dcg / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub ap: f64,
    pub rr: f64,
    pub p1: f64,
    pub ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalEval {
    pub map: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub p1: f64,
    pub queries: usize,
    pub per_query: BTreeMap<String, QueryMetrics>,
    /// Run queries without judgments; not scored.
    pub unjudged_queries: Vec<String>,
    /// Judged queries absent from the run; scored as empty rankings.
    pub missing_queries: Vec<String>,
    /// Queries left out of the NDCG mean because their ideal DCG is 0.
    pub ndcg_excluded: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

struct Split<'a> {
    rankings: BTreeMap<&'a str, Vec<&'a str>>,
    unjudged: Vec<String>,
    missing: Vec<String>,
}

fn split<'a>(run: &'a [RankedList], qrels: &'a Qrels) -> Result<Split<'a>> {
    let in_run: HashSet<&str> = run.iter().map(|l| l.query_id.as_str()).collect();
    if !qrels.query_ids().any(|q| in_run.contains(q)) {
        return Err(Error::invalid("run and qrels share no query"));
    }
    let mut rankings = BTreeMap::new();
    let mut unjudged = Vec::new();
    for l in run {
        if qrels.query(&l.query_id).is_some() {
            rankings.insert(l.query_id.as_str(), l.passage_ids().collect());
        } else {
            unjudged.push(l.query_id.clone());
        }
    }
    let mut missing = Vec::new();
    for q in qrels.query_ids() {
        if !rankings.contains_key(q) {
            missing.push(q.to_string());
            rankings.insert(q, Vec::new());
        }
    }
    unjudged.sort();
    Ok(Split {
        rankings,
        unjudged,
        missing,
    })
}

/// Per-query metrics and their macro averages over the judged queries.
pub fn evaluate_run(run: &[RankedList], qrels: &Qrels, cfg: &EvalConfig) -> Result<RetrievalEval> {
    let s = split(run, qrels)?;
    let mut per_query = BTreeMap::new();
    let mut ndcg_excluded = Vec::new();
    for (q, ranking) in &s.rankings {
        let j = qrels.query(q).expect("judged");
        let binarize = cfg.ndcg_binarize.then_some(cfg.cutoff_grade);
        let ndcg = ndcg_at_k(ranking, j, cfg.ndcg_k, binarize);
        if ndcg.is_none() {
            ndcg_excluded.push(q.to_string());
        }
        per_query.insert(
            q.to_string(),
            QueryMetrics {
                ap: average_precision(ranking, j, cfg.cutoff_grade, cfg.depth),
                rr: reciprocal_rank(ranking, j, cfg.cutoff_grade, cfg.depth),
                p1: precision_at_1(ranking, j, cfg.cutoff_grade),
                ndcg,
            },
        );
    }
    Ok(RetrievalEval {
        map: mean(per_query.values().map(|m| m.ap)),
        mrr: mean(per_query.values().map(|m| m.rr)),
        ndcg: mean(per_query.values().filter_map(|m| m.ndcg)),
        p1: mean(per_query.values().map(|m| m.p1)),
        queries: per_query.len(),
        per_query,
        unjudged_queries: s.unjudged,
        missing_queries: s.missing,
        ndcg_excluded,
    })
}

pub const RECALL_LEVELS: usize = 11;

/// Interpolated precision at recall 0.0, 0.1, ..., 1.0 for one query, or
/// `None` without relevant passages.
pub fn interpolated_pr(ranking: &Ranking, j: &Judgments, cutoff: u8, depth: usize) -> Option<[f64; RECALL_LEVELS]> {
    let total = num_relevant(j, cutoff);
    if total == 0 {
        return None;
    }
    let mut points = Vec::new();
    let mut hits = 0;
    for (i, p) in ranking.iter().take(depth).enumerate() {
        if relevant(j, p, cutoff) {
            hits += 1;
        }
        points.push((hits as f64 / total as f64, hits as f64 / (i + 1) as f64));
    }
    let mut out = [0.0; RECALL_LEVELS];
    for (l, slot) in out.iter_mut().enumerate() {
        let level = l as f64 / 10.0;
        *slot = points
            .iter()
            .filter(|(r, _)| *r >= level - 1e-12)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
    }
    Some(out)
}

/// Macro-averaged 11-point curve as `(recall, precision)` pairs.
pub fn pr_curve(run: &[RankedList], qrels: &Qrels, cfg: &EvalConfig) -> Result<Vec<(f64, f64)>> {
    let s = split(run, qrels)?;
    let curves: Vec<[f64; RECALL_LEVELS]> = s
        .rankings
        .iter()
        .filter_map(|(q, r)| interpolated_pr(r, qrels.query(q).expect("judged"), cfg.cutoff_grade, cfg.depth))
        .collect();
    Ok((0..RECALL_LEVELS)
        .map(|l| (l as f64 / 10.0, mean(curves.iter().map(|c| c[l]))))
        .collect())
}

pub fn pr_curve_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("recall,precision\n");
    for (r, p) in points {
        s.push_str(&format!("{r:.1},{p:.6}\n"));
    }
    s
}
