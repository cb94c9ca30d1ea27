use std::collections::BTreeMap;

use serde::Serialize;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub raters: [String; 2],
    pub items: usize,
    /// Observed agreement.
    pub po: f64,
    /// Agreement expected by chance from the raters' marginals.
    pub pe: f64,
    pub kappa: f64,
}

impl KappaReport {
    pub fn for_raters(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.raters = [a.into(), b.into()];
        self
    }
}

/// Cohen's kappa for two aligned label sequences over any category type.
///
/// When both raters use a single identical category, `pe = 1` and kappa is
/// defined as 1.
pub fn cohens_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<KappaReport, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = a.len();
    let mut marginals: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        marginals.entry(x).or_default().0 += 1;
        marginals.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    let po = agree as f64 / n as f64;
    let chance: usize = marginals.values().map(|(ca, cb)| ca * cb).sum();
    let pe = chance as f64 / (n * n) as f64;
    let kappa = if chance == n * n {
        if agree == n {
            1.0
        } else {
            return Err(EvalError::DegenerateMarginals);
        }
    } else {
        (po - pe) / (1.0 - pe)
    };
    Ok(KappaReport {
        raters: Default::default(),
        items: n,
        po,
        pe,
        kappa,
    })
}

/// Unweighted mean of pairwise kappas.
pub fn mean_kappa(reports: &[KappaReport]) -> Option<f64> {
    if reports.is_empty() {
        None
    } else {
        Some(reports.iter().map(|r| r.kappa).sum::<f64>() / reports.len() as f64)
    }
}
