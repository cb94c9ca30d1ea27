use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

impl FromStr for Averaging {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            other => Err(EvalError::InvalidOption(format!("unknown averaging {other:?}"))),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Micro => "micro",
            Averaging::Macro => "macro",
        })
    }
}

/// One binary decision: what the model said and what the ground truth says.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub slug: String,
    pub predicted: bool,
    pub truth: bool,
}

impl LabeledPair {
    pub fn new(slug: impl Into<String>, predicted: bool, truth: bool) -> Self {
        LabeledPair {
            slug: slug.into(),
            predicted,
            truth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Pooled counts, for either averaging.
    pub confusion: Confusion,
    /// Set when some metric was 0/0 and reported as 0.
    pub degenerate: bool,
}

struct Scores {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    degenerate: bool,
}

fn ratio(num: usize, den: usize, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn scores(c: &Confusion) -> Scores {
    let mut degenerate = false;
    let accuracy = ratio(c.tp + c.tn, c.total(), &mut degenerate);
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// Accuracy, precision, recall and F1 over binary decisions. Micro pools
/// the confusion counts; macro averages the per-slug metrics unweighted.
pub fn classification_metrics(
    pairs: &[LabeledPair],
    averaging: Averaging,
) -> Result<ClassificationReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut pooled = Confusion::default();
    let mut per_slug: BTreeMap<&str, Confusion> = BTreeMap::new();
    for p in pairs {
        pooled.add(p.predicted, p.truth);
        per_slug.entry(&p.slug).or_default().add(p.predicted, p.truth);
    }
    let s = match averaging {
        Averaging::Micro => scores(&pooled),
        Averaging::Macro => {
            let all: Vec<Scores> = per_slug.values().map(scores).collect();
            let n = all.len() as f64;
            let mean = |f: fn(&Scores) -> f64| all.iter().map(f).sum::<f64>() / n;
            Scores {
                accuracy: mean(|s| s.accuracy),
                precision: mean(|s| s.precision),
                recall: mean(|s| s.recall),
                f1: mean(|s| s.f1),
                degenerate: all.iter().any(|s| s.degenerate),
            }
        }
    };
    Ok(ClassificationReport {
        averaging,
        accuracy: s.accuracy,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        confusion: pooled,
        degenerate: s.degenerate,
    })
}
