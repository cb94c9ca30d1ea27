//! Token normalization shared by alignment, matching, echo detection and
//! lexical similarity.
//!
//! A token is a whitespace-delimited chunk, case-folded, with every
//! non-alphanumeric character removed. Chunks that normalize to nothing
//! (a lone dash, an ellipsis) are dropped.

/// A normalized token with its character range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub norm: String,
    /// Character (not byte) offsets, half-open.
    pub start: usize,
    pub end: usize,
}

fn normalize_chunk(chunk: &str) -> String {
    chunk
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Normalized tokens of `text`, without offsets.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_chunk)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Normalized tokens of `text` with their character offsets.
pub fn tokens_with_offsets(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start: Option<usize> = None;
    let mut chunk = String::new();
    let flush = |chunk: &mut String, start: usize, end: usize, out: &mut Vec<Token>| {
        let norm = normalize_chunk(chunk);
        if !norm.is_empty() {
            out.push(Token { norm, start, end });
        }
        chunk.clear();
    };
    let mut count = 0;
    for (idx, c) in text.chars().enumerate() {
        count = idx + 1;
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                flush(&mut chunk, start, idx, &mut out);
            }
        } else {
            chunk_start.get_or_insert(idx);
            chunk.push(c);
        }
    }
    if let Some(start) = chunk_start {
        flush(&mut chunk, start, count, &mut out);
    }
    out
}

/// Levenshtein distance over token sequences.
pub fn token_edit_distance<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta.as_ref() != tb.as_ref());
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - edit_distance / max(len)`, or 0 when either side has no tokens.
pub fn token_similarity<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let longest = a.len().max(b.len());
    1.0 - token_edit_distance(a, b) as f64 / longest as f64
}

/// Token similarity of two raw strings after normalization.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    token_similarity(&tokens(a), &tokens(b))
}

/// Slice `text` by character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let from = indices.by_ref().nth(start).unwrap_or(text.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        from
    };
    &text[from..to]
}
