//! Span selection from start/end distributions.

#[derive(Debug, Clone, PartialEq)]
pub struct SpanChoice {
    pub start: usize,
    pub end: usize,
    /// `S[start] + E[end]`, or `S[0] + E[0]` for No-Answer.
    pub score: f64,
    pub is_no_answer: bool,
}

/// Best `(i, j)` with `first <= i <= j <= min(last, i + max_span_len - 1)`
/// by `S[i] + E[j]`, earlier start then shorter span on ties. No-Answer
/// (position 0) wins when `S[0] + E[0]` is at least the best span score.
pub fn predict_span(s: &[f64], e: &[f64], region: Option<(usize, usize)>, max_span_len: usize) -> SpanChoice {
    let na = SpanChoice {
        start: 0,
        end: 0,
        score: s[0] + e[0],
        is_no_answer: true,
    };
    let Some((first, last)) = region else { return na };
    if max_span_len == 0 {
        return na;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for i in first..=last {
        let stop = last.min(i + max_span_len - 1);
        for j in i..=stop {
            let v = s[i] + e[j];
            if best.map_or(true, |(_, _, b)| v > b) {
                best = Some((i, j, v));
            }
        }
    }
    match best {
        Some((i, j, v)) if v > na.score => SpanChoice {
            start: i,
            end: j,
            score: v,
            is_no_answer: false,
        },
        _ => na,
    }
}
