use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::SpanAnnotation;
use crate::questionnaire::SymptomItem;
use crate::text::{text_similarity, tokens};

/// Minimum token similarity for a predicted span to count as a ground-truth
/// span.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Lexical,
    Endpoint,
}

/// Scores how close a span is to a symptom description.
pub trait SimilarityBackend {
    fn kind(&self) -> BackendKind;
    fn similarity(&self, a: &str, b: &str) -> Result<f64, EvalError>;
}

/// Cosine similarity of term-frequency vectors over normalized tokens.
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let tf = |text: &str| {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokens(text) {
            *counts.entry(t).or_default() += 1.0;
        }
        counts
    };
    let (ta, tb) = (tf(a), tf(b));
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let dot: f64 = ta
        .iter()
        .filter_map(|(t, x)| tb.get(t).map(|y| x * y))
        .sum();
    let sq = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>();
    (dot / (sq(&ta) * sq(&tb)).sqrt()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalBackend;

impl SimilarityBackend for LexicalBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Lexical
    }

    fn similarity(&self, a: &str, b: &str) -> Result<f64, EvalError> {
        Ok(lexical_similarity(a, b))
    }
}

/// Cosine similarity over embeddings fetched ahead of time. Vectors are
/// expected to be unit-normalized.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingBackend {
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingBackend {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Self {
        EmbeddingBackend { vectors }
    }

    fn get(&self, text: &str) -> Result<&[f64], EvalError> {
        self.vectors
            .get(text)
            .map(Vec::as_slice)
            .ok_or_else(|| EvalError::MissingEmbedding(text.chars().take(80).collect()))
    }
}

impl SimilarityBackend for EmbeddingBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Endpoint
    }

    fn similarity(&self, a: &str, b: &str) -> Result<f64, EvalError> {
        let (va, vb) = (self.get(a)?, self.get(b)?);
        if va.len() != vb.len() {
            return Err(EvalError::LengthMismatch {
                left: va.len(),
                right: vb.len(),
            });
        }
        Ok(va.iter().zip(vb).map(|(x, y)| x * y).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HitOutcome {
    Hit,
    Miss,
    /// Ground truth has no span for the symptom; the pair is not scored.
    Skipped,
}

/// Predicted spans ordered by descending similarity to `query`, ties kept
/// in their original order.
pub fn rank_spans<'a>(
    predicted: &'a [String],
    query: &str,
    backend: &dyn SimilarityBackend,
) -> Result<Vec<&'a String>, EvalError> {
    let mut scored = predicted
        .iter()
        .map(|s| backend.similarity(s, query).map(|score| (score, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().map(|(_, s)| s).collect())
}

/// Zero-based rank of the best-ranked predicted span that matches some
/// ground-truth span, or `None` when none does.
pub fn first_match_rank(
    predicted: &[String],
    truth: &[String],
    query: &str,
    backend: &dyn SimilarityBackend,
    match_threshold: f64,
) -> Result<Option<usize>, EvalError> {
    let ranked = rank_spans(predicted, query, backend)?;
    Ok(ranked
        .iter()
        .position(|p| truth.iter().any(|t| text_similarity(p, t) >= match_threshold)))
}

/// hits@k for one (post, symptom) pair.
pub fn hits_at_k(
    predicted: &SpanAnnotation,
    truth: &SpanAnnotation,
    item: &SymptomItem,
    k: usize,
    backend: &dyn SimilarityBackend,
    match_threshold: f64,
) -> Result<HitOutcome, EvalError> {
    let truth_spans = truth.spans(item.slug);
    if truth_spans.is_empty() {
        return Ok(HitOutcome::Skipped);
    }
    let rank = first_match_rank(
        predicted.spans(item.slug),
        truth_spans,
        item.text,
        backend,
        match_threshold,
    )?;
    Ok(match rank {
        Some(r) if r < k => HitOutcome::Hit,
        _ => HitOutcome::Miss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::questionnaire::QuestionnaireId::Phq9;

    fn item() -> &'static SymptomItem {
        Phq9.item_by_slug("Feeling-tired-or-having-little-energy").unwrap()
    }

    fn ann(spans: &[&str]) -> SpanAnnotation {
        let mut a = SpanAnnotation::empty("p", Phq9);
        a.evidence.insert(item().slug, spans.iter().map(|s| s.to_string()).collect());
        a
    }

    #[test]
    fn lexical_examples() {
        assert_eq!(lexical_similarity("feeling tired", "feeling tired"), 1.0);
        // cos = 1 / (sqrt 2 * sqrt 2)
        assert!((lexical_similarity("feeling tired", "feeling down") - 0.5).abs() < 1e-15);
        assert_eq!(lexical_similarity("abc", "xyz"), 0.0);
        assert_eq!(lexical_similarity("", "xyz"), 0.0);
        assert_eq!(lexical_similarity("Feeling, TIRED!", "feeling tired"), 1.0);
    }

    #[test]
    fn identical_single_span_hits() {
        let s = ann(&["I am exhausted all the time."]);
        assert_eq!(hits_at_k(&s, &s, item(), 1, &LexicalBackend, 0.8).unwrap(), HitOutcome::Hit);
    }

    #[test]
    fn decoy_ranked_first_misses_at_one() {
        let relevant = "I am exhausted all the time.";
        // Shares many words with the item text, so it outranks `relevant`.
        let decoy = "feeling tired or having little energy is what my friend said";
        let b = LexicalBackend;
        assert!(
            lexical_similarity(decoy, item().text) > lexical_similarity(relevant, item().text)
        );
        let pred = ann(&[decoy, relevant]);
        let truth = ann(&[relevant]);
        assert_eq!(hits_at_k(&pred, &truth, item(), 1, &b, 0.8).unwrap(), HitOutcome::Miss);
        assert_eq!(hits_at_k(&pred, &truth, item(), 5, &b, 0.8).unwrap(), HitOutcome::Hit);
    }

    #[test]
    fn empty_prediction_and_truth() {
        let truth = ann(&["I am exhausted."]);
        let empty = ann(&[]);
        for k in [1, 5] {
            assert_eq!(
                hits_at_k(&empty, &truth, item(), k, &LexicalBackend, 0.8).unwrap(),
                HitOutcome::Miss
            );
        }
        assert_eq!(
            hits_at_k(&truth, &empty, item(), 1, &LexicalBackend, 0.8).unwrap(),
            HitOutcome::Skipped
        );
    }

    #[test]
    fn embedding_backend_dot_product() {
        let mut v = HashMap::new();
        v.insert("a".to_string(), vec![1.0, 0.0]);
        v.insert("b".to_string(), vec![0.6, 0.8]);
        let b = EmbeddingBackend::new(v);
        assert_eq!(b.similarity("a", "b").unwrap(), 0.6);
        assert!(matches!(b.similarity("a", "zzz"), Err(EvalError::MissingEmbedding(_))));
    }
}
