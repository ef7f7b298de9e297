//! Error attribution by bucketing each question on whether the answer was
//! correct for the original question, the model rewrite and the human
//! rewrite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row labels in table order; columns are original, model rewrite, human.
pub const ROW_LABELS: [&str; 8] = ["✗✗✗", "✓✗✗", "✗✓✗", "✓✓✗", "✗✗✓", "✓✗✓", "✗✓✓", "✓✓✓"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleOutcome {
    pub key: String,
    pub original: f64,
    pub qr: f64,
    pub human: f64,
    /// The model rewrite equals the original question.
    pub was_copied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Comparison {
    Gt,
    Ge,
    Eq,
}

/// A correctness predicate such as `F1>=0.5` or `P@1=1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub metric: String,
    pub comparison: Comparison,
    pub value: f64,
}

impl Threshold {
    pub fn holds(&self, v: f64) -> bool {
        match self.comparison {
            Comparison::Gt => v > self.value,
            Comparison::Ge => v >= self.value,
            Comparison::Eq => (v - self.value).abs() <= 1e-12,
        }
    }

    pub fn label(&self) -> String {
        let op = match self.comparison {
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
            Comparison::Eq => "=",
        };
        format!("{}{op}{}", self.metric, self.value)
    }
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (pos, op, comparison) = [(">=", Comparison::Ge), ("≥", Comparison::Ge), (">", Comparison::Gt), ("=", Comparison::Eq)]
            .into_iter()
            .find_map(|(op, c)| s.find(op).map(|p| (p, op, c)))
            .ok_or_else(|| Error::invalid(format!("threshold `{s}` needs one of >, >=, =")))?;
        let metric = s[..pos].to_string();
        let value: f64 = s[pos + op.len()..]
            .parse()
            .map_err(|_| Error::invalid(format!("threshold `{s}` has a non-numeric value")))?;
        if metric.is_empty() {
            return Err(Error::invalid(format!("threshold `{s}` names no metric")));
        }
        Ok(Threshold {
            metric,
            comparison,
            value,
        })
    }
}

/// Row 1..=8: `1 + original + 2 qr + 4 human`, each term 1 when correct.
pub fn classify(o: &TripleOutcome, t: &Threshold) -> usize {
    1 + usize::from(t.holds(o.original)) + 2 * usize::from(t.holds(o.qr)) + 4 * usize::from(t.holds(o.human))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub threshold: String,
    pub counts: [usize; 8],
    /// Copied rewrites within each row.
    pub copies: [usize; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    pub qa_errors: usize,
    pub qr_errors: usize,
    pub true_positives: usize,
    /// Rows 2-4: the original succeeded where the human rewrite failed.
    pub anomalies: usize,
}

impl Column {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn from_counts(threshold: impl Into<String>, counts: [usize; 8], copies: [usize; 8]) -> Self {
        Column {
            threshold: threshold.into(),
            counts,
            copies,
        }
    }

    /// Rows 1-4 are QA errors, 5-6 QR errors and 7-8 true positives.
    pub fn attribute_errors(&self) -> Attribution {
        let sum = |r: std::ops::Range<usize>| self.counts[r].iter().sum();
        Attribution {
            qa_errors: sum(0..4),
            qr_errors: sum(4..6),
            true_positives: sum(6..8),
            anomalies: sum(1..4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownTable {
    pub total: usize,
    pub columns: Vec<Column>,
}

pub fn breakdown_table(outcomes: &[TripleOutcome], thresholds: &[Threshold]) -> Result<BreakdownTable> {
    if outcomes.is_empty() {
        return Err(Error::invalid("break-down needs at least one outcome"));
    }
    let columns = thresholds
        .iter()
        .map(|t| {
            let mut counts = [0; 8];
            let mut copies = [0; 8];
            for o in outcomes {
                let row = classify(o, t) - 1;
                counts[row] += 1;
                copies[row] += usize::from(o.was_copied);
            }
            Column::from_counts(t.label(), counts, copies)
        })
        .collect();
    Ok(BreakdownTable {
        total: outcomes.len(),
        columns,
    })
}

/// Joins per-question metric values of the three inputs by key.
pub fn join_outcomes(
    original: &BTreeMap<String, f64>,
    qr: &BTreeMap<String, f64>,
    human: &BTreeMap<String, f64>,
    copied: &BTreeMap<String, bool>,
) -> Result<Vec<TripleOutcome>> {
    let mut missing = Vec::new();
    for (name, m) in [("qr", qr), ("human", human)] {
        for k in original.keys().filter(|k| !m.contains_key(*k)) {
            missing.push(format!("{k} ({name})"));
        }
        for k in m.keys().filter(|k| !original.contains_key(*k)) {
            missing.push(format!("{k} (original)"));
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::invalid(format!("predictions cover different questions: missing {}", missing.join(", "))));
    }
    Ok(original
        .iter()
        .map(|(k, &o)| TripleOutcome {
            key: k.clone(),
            original: o,
            qr: qr[k],
            human: human[k],
            was_copied: copied.get(k).copied().unwrap_or(false),
        })
        .collect())
}

impl BreakdownTable {
    /// Fixed row order, copies in parentheses.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<6}", "O QR H");
        for c in &self.columns {
            let _ = write!(s, " {:>14}", c.threshold);
        }
        s.push('\n');
        for (r, label) in ROW_LABELS.iter().enumerate() {
            let _ = write!(s, "{:<6}", label);
            for c in &self.columns {
                let _ = write!(s, " {:>14}", format!("{} ({})", c.counts[r], c.copies[r]));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<6}", "total");
        for _ in &self.columns {
            let _ = write!(s, " {:>14}", self.total);
        }
        s.push('\n');
        for (name, f) in [
            ("QA err", (|a: &Attribution| a.qa_errors) as fn(&Attribution) -> usize),
            ("QR err", |a| a.qr_errors),
            ("TP", |a| a.true_positives),
        ] {
            let _ = write!(s, "{:<6}", name);
            for c in &self.columns {
                let v = f(&c.attribute_errors());
                let _ = write!(s, " {:>14}", format!("{v} ({:.3})", v as f64 / self.total as f64));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,row,pattern,count,copies\n");
        for c in &self.columns {
            for (r, label) in ROW_LABELS.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{}", c.threshold, r + 1, label, c.counts[r], c.copies[r]);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(o: f64, q: f64, h: f64, copied: bool) -> TripleOutcome {
        TripleOutcome {
            key: String::new(),
            original: o,
            qr: q,
            human: h,
            was_copied: copied,
        }
    }

    #[test]
    fn row_order() {
        let t: Threshold = "P@1=1".parse().unwrap();
        assert_eq!(classify(&outcome(0.0, 1.0, 1.0, false), &t), 7);
        assert_eq!(classify(&outcome(1.0, 1.0, 1.0, false), &t), 8);
        assert_eq!(classify(&outcome(0.0, 0.0, 0.0, false), &t), 1);
        let f: Threshold = "F1>=0.5".parse().unwrap();
        assert!(!f.holds(0.499));
        assert_eq!(f.comparison, Comparison::Ge);
        assert_eq!("F1 > 0".parse::<Threshold>().unwrap().comparison, Comparison::Gt);
        assert!("F1".parse::<Threshold>().is_err());
    }

    #[test]
    fn table_and_attribution() {
        let t: Threshold = "F1>0".parse().unwrap();
        let outs = vec![outcome(1.0, 0.0, 0.0, true), outcome(0.0, 0.0, 1.0, false), outcome(1.0, 1.0, 1.0, true)];
        let table = breakdown_table(&outs, &[t]).unwrap();
        let c = &table.columns[0];
        assert_eq!(c.counts, [0, 1, 0, 0, 1, 0, 0, 1]);
        assert_eq!(c.copies, [0, 1, 0, 0, 0, 0, 0, 1]);
        let a = c.attribute_errors();
        assert_eq!((a.qa_errors, a.qr_errors, a.true_positives, a.anomalies), (1, 1, 1, 1));
        assert!(table.to_text().contains("1 (1)"));
        assert_eq!(table.to_csv().lines().count(), 9);
    }

    #[test]
    fn join_reports_missing_keys() {
        let m = |ks: &[&str]| ks.iter().map(|k| (k.to_string(), 1.0)).collect::<BTreeMap<_, _>>();
        let err = join_outcomes(&m(&["a", "b"]), &m(&["a", "b"]), &m(&["a"]), &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("b (human)"), "{err}");
        assert_eq!(join_outcomes(&m(&["a"]), &m(&["a"]), &m(&["a"]), &BTreeMap::new()).unwrap().len(), 1);
    }
}
