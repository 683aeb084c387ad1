//! Corpus BLEU, per-response accuracy, micro entity F1 and retrieval
//! statistics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySet;
use crate::{Error, Result};

/// Replaces a zero n-gram precision inside the logarithm.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const BLEU_MAX_N: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 with uniform weights, clipped n-gram counts summed
/// over the corpus and the brevity penalty `exp(1 - r/c)` when `c < r`.
pub fn bleu(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::Data(format!(
            "{} references for {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Data("BLEU of an empty corpus".into()));
    }
    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    let (mut c, mut r) = (0usize, 0usize);
    for (rf, hy) in references.iter().zip(hypotheses) {
        c += hy.len();
        r += rf.len();
        for n in 1..=BLEU_MAX_N {
            let hc = ngram_counts(hy, n);
            let rc = ngram_counts(rf, n);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            totals[n - 1] += hy.len().saturating_sub(n - 1);
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..BLEU_MAX_N)
        .map(|i| {
            let p = if totals[i] == 0 {
                0.0
            } else {
                matches[i] as f64 / totals[i] as f64
            };
            if p > 0.0 {
                p.ln()
            } else {
                BLEU_EPSILON.ln()
            }
        })
        .sum::<f64>()
        / BLEU_MAX_N as f64;
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * log_p.exp())
}

/// Fraction of responses equal to the gold response token for token.
pub fn per_response_accuracy(gold: &[Vec<String>], predicted: &[Vec<String>]) -> Result<f64> {
    if gold.len() != predicted.len() {
        return Err(Error::Data(format!(
            "{} gold responses for {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Summed true-positive, false-positive and false-negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl EntityCounts {
    pub fn add(&mut self, gold: &[String], predicted: &[String]) {
        use std::collections::BTreeSet;
        let g: BTreeSet<&String> = gold.iter().collect();
        let p: BTreeSet<&String> = predicted.iter().collect();
        let tp = g.intersection(&p).count();
        self.tp += tp;
        self.fp += p.len() - tp;
        self.fn_ += g.len() - tp;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, or 0 when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// True when there was nothing to score: no gold and no predicted
    /// entities at all.
    pub fn is_degenerate(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Entity tokens of a response: its tokens found in `lexicon`.
pub fn entities_in(tokens: &[String], lexicon: &EntitySet) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| lexicon.contains(t))
        .cloned()
        .collect()
}

/// Micro-averaged entity F1 with set semantics per response.
pub fn entity_f1(
    gold_entities: &[Vec<String>],
    predicted: &[Vec<String>],
    lexicon: &EntitySet,
) -> Result<EntityCounts> {
    if gold_entities.len() != predicted.len() {
        return Err(Error::Data(format!(
            "{} gold sets for {} predictions",
            gold_entities.len(),
            predicted.len()
        )));
    }
    let mut c = EntityCounts::default();
    for (g, p) in gold_entities.iter().zip(predicted) {
        c.add(g, &entities_in(p, lexicon));
    }
    Ok(c)
}

/// Mean number of retrieved answers per query.
pub fn retrieval_stats(counts: &[usize]) -> f64 {
    crate::retrieval::average_retrieved(counts)
}

/// One scored test response.
#[derive(Clone, Debug)]
pub struct Scored<'a> {
    pub gold: &'a [String],
    pub predicted: &'a [String],
    pub domain: Option<&'a str>,
    pub retrieved: usize,
}

/// Evaluation summary. Serialises with sorted keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: f64,
    pub bleu_x100: f64,
    pub per_response_accuracy: f64,
    pub entity_f1: f64,
    /// Set when no gold and no predicted entities exist, making F1 zero by
    /// convention.
    pub entity_f1_degenerate: bool,
    pub per_domain_f1: BTreeMap<String, f64>,
    pub avg_retrieved: f64,
    pub responses: usize,
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// Scores `items`; gold entity sets are the gold tokens found in
    /// `lexicon`.
    pub fn compute(
        items: &[Scored<'_>],
        lexicon: &EntitySet,
        config: serde_json::Value,
    ) -> Result<Self> {
        let gold: Vec<Vec<String>> = items.iter().map(|s| s.gold.to_vec()).collect();
        let pred: Vec<Vec<String>> = items.iter().map(|s| s.predicted.to_vec()).collect();
        let bleu = bleu(&gold, &pred)?;
        let gold_sets: Vec<Vec<String>> = gold.iter().map(|g| entities_in(g, lexicon)).collect();
        let counts = entity_f1(&gold_sets, &pred, lexicon)?;
        let mut per_domain: BTreeMap<String, EntityCounts> = BTreeMap::new();
        for (s, g) in items.iter().zip(&gold_sets) {
            if let Some(d) = s.domain {
                per_domain
                    .entry(d.to_string())
                    .or_default()
                    .add(g, &entities_in(s.predicted, lexicon));
            }
        }
        let counts_r: Vec<usize> = items.iter().map(|s| s.retrieved).collect();
        Ok(MetricsReport {
            bleu,
            bleu_x100: bleu * 100.0,
            per_response_accuracy: per_response_accuracy(&gold, &pred)?,
            entity_f1: counts.f1(),
            entity_f1_degenerate: counts.is_degenerate(),
            per_domain_f1: per_domain.into_iter().map(|(k, c)| (k, c.f1())).collect(),
            avg_retrieved: retrieval_stats(&counts_r),
            responses: items.len(),
            config,
        })
    }

    /// Pretty JSON with a trailing newline. Object keys are sorted, so equal
    /// reports serialise to equal bytes.
    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }
}
