use serde::{Deserialize, Serialize};

use crate::text::{tokens, tokens_with_offsets, Token};

pub const DEFAULT_ALIGNMENT_THRESHOLD: f64 = 0.80;

/// A model-quoted span located in the post body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSpan {
    pub raw_span: String,
    /// Character offsets into the body, half-open.
    pub start: usize,
    pub end: usize,
    pub alignment_score: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AlignmentError {
    #[error("span is empty")]
    EmptySpan,
    #[error("best window similarity {best_score:.3} is below the threshold {threshold:.2}")]
    AlignmentFailure { best_score: f64, threshold: f64 },
}

#[derive(Clone, Copy)]
struct Best {
    score: f64,
    len_gap: usize,
    start: usize,
    end: usize,
}

impl Best {
    fn beats(&self, other: &Best) -> bool {
        self.score > other.score
            || (self.score == other.score
                && (self.len_gap < other.len_gap
                    || (self.len_gap == other.len_gap && self.start < other.start)))
    }
}

/// Align `span` against `body`.
pub fn align(span: &str, body: &str, threshold: f64) -> Result<AlignedSpan, AlignmentError> {
    align_tokens(span, &tokens_with_offsets(body), threshold)
}

/// Align against a pre-tokenized body. Finds the token window maximizing
/// `1 - edit_distance / max(len)`; ties go to the window closest in length
/// to the span, then to the earliest.
pub fn align_tokens(
    span: &str,
    body: &[Token],
    threshold: f64,
) -> Result<AlignedSpan, AlignmentError> {
    if span.trim().is_empty() {
        return Err(AlignmentError::EmptySpan);
    }
    let span_toks = tokens(span);
    let m = span_toks.len();
    let n = body.len();
    let failure = |best_score| AlignmentError::AlignmentFailure {
        best_score,
        threshold,
    };
    if m == 0 || n == 0 {
        return Err(failure(0.0));
    }

    let mut vocab: std::collections::HashMap<&str, u32> = std::collections::HashMap::new();
    let mut span_ids: Vec<u32> = Vec::with_capacity(m);
    for t in span_toks.iter() {
        let next = vocab.len() as u32;
        span_ids.push(*vocab.entry(t.as_str()).or_insert(next));
    }
    // Body tokens absent from the span never match; map them all to MAX.
    let span_set: std::collections::HashSet<u32> = span_ids.iter().copied().collect();
    let body_ids: Vec<u32> = body
        .iter()
        .map(|t| match vocab.get(t.norm.as_str()) {
            Some(i) if span_set.contains(i) => *i,
            _ => u32::MAX,
        })
        .collect();

    // Windows longer than m / threshold cannot reach the threshold.
    let max_len = if threshold > 0.0 {
        ((m as f64 / threshold).floor() as usize).max(m)
    } else {
        n
    }
    .min(n);

    let mut best: Option<Best> = None;
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    for start in 0..n {
        for (r, slot) in prev.iter_mut().enumerate() {
            *slot = r;
        }
        for (offset, &tok) in body_ids[start..(start + max_len).min(n)].iter().enumerate() {
            let w = offset + 1;
            cur[0] = w;
            for r in 1..=m {
                let sub = prev[r - 1] + usize::from(span_ids[r - 1] != tok);
                cur[r] = sub.min(prev[r] + 1).min(cur[r - 1] + 1);
            }
            std::mem::swap(&mut prev, &mut cur);
            let dist = prev[m];
            let cand = Best {
                score: 1.0 - dist as f64 / m.max(w) as f64,
                len_gap: m.abs_diff(w),
                start,
                end: start + w,
            };
            if best.as_ref().is_none_or(|b| cand.beats(b)) {
                best = Some(cand);
            }
        }
    }
    let best = best.expect("at least one window");
    if best.score < threshold {
        return Err(failure(best.score));
    }
    Ok(AlignedSpan {
        raw_span: span.to_string(),
        start: body[best.start].start,
        end: body[best.end - 1].end,
        alignment_score: best.score,
    })
}
