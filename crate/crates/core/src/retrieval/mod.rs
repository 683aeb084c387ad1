//! Guidance-answer retrieval.
//!
//! Training turns are stored as question/answer pairs. For a new user query
//! the answers of the most similar stored questions (at most three, above a
//! threshold θ) are returned, concatenated into one memory sequence whose
//! entity words are blocked from copying.

mod bm25;
mod cache;
mod vectors;

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use bm25::Bm25Index;
pub use cache::{read_cache, write_cache, CacheEntry};
pub use vectors::{read_external_vectors, WordVectors};

use crate::corpus::{tag_tokens, EntitySet, EntityTag, MemoryItem, QaPair, SpeakerTag};
use crate::{Error, Result};

/// Hard cap on guidance answers per query.
pub const MAX_CANDIDATES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bm25,
    Cosine,
    External,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bm25 => "bm25",
            Method::Cosine => "cosine",
            Method::External => "external",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(Method::Bm25),
            "cosine" | "embed_cosine" => Ok(Method::Cosine),
            "external" | "external_vectors" => Ok(Method::External),
            _ => Err(Error::Config(format!("unknown retrieval method {s:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub theta: f64,
    pub max_candidates: usize,
    pub method: Method,
}

impl RetrievalConfig {
    pub fn new(theta: f64, method: Method) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::Config(format!(
                "theta must lie in (0, 1], got {theta}"
            )));
        }
        Ok(RetrievalConfig {
            theta,
            max_candidates: MAX_CANDIDATES,
            method,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedAnswer {
    pub pair_id: usize,
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Guidance answers plus their flattened, masked memory sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedAnswers {
    /// Descending score.
    pub answers: Vec<RetrievedAnswer>,
    /// Answer tokens in rank order, sentinel last.
    pub flat_items: Vec<MemoryItem>,
    /// `true` where the pattern pointer may copy: non-entity answer tokens.
    pub r_r: Vec<bool>,
}

impl RetrievedAnswers {
    /// The empty retrieval used when retrieval is disabled: a lone sentinel.
    pub fn sentinel_only() -> Self {
        RetrievedAnswers {
            answers: Vec::new(),
            flat_items: vec![MemoryItem::sentinel()],
            r_r: vec![false],
        }
    }

    pub fn from_answers(answers: Vec<RetrievedAnswer>, entities: &EntitySet) -> Self {
        let (flat_items, r_r) = mask_and_flatten(&answers, entities);
        RetrievedAnswers {
            answers,
            flat_items,
            r_r,
        }
    }

    pub fn len(&self) -> usize {
        self.flat_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat_items.is_empty()
    }

    pub fn sentinel_position(&self) -> usize {
        self.flat_items.len() - 1
    }
}

/// Concatenates answers in rank order and appends the sentinel. Tokens found
/// in `entities` are entity words and are blocked (`r_r = false`).
pub fn mask_and_flatten(
    answers: &[RetrievedAnswer],
    entities: &EntitySet,
) -> (Vec<MemoryItem>, Vec<bool>) {
    let mut items = Vec::new();
    for (rank, a) in answers.iter().enumerate() {
        for (tok, tag) in a.tokens.iter().zip(tag_tokens(&a.tokens, entities)) {
            items.push(MemoryItem {
                emit_token: tok.clone(),
                feature_tokens: vec![tok.clone()],
                speaker: SpeakerTag::Answer,
                turn_index: rank,
                tag,
                is_sentinel: false,
            });
        }
    }
    items.push(MemoryItem::sentinel());
    let r_r = items
        .iter()
        .map(|it| !it.is_sentinel && it.tag == EntityTag::New)
        .collect();
    (items, r_r)
}

enum Backend {
    Bm25(Bm25Index),
    Cosine {
        words: WordVectors,
        postings: HashMap<usize, Vec<(usize, f64)>>,
        dense: Option<Vec<Vec<f64>>>,
    },
    External {
        vectors: Vec<Vec<f64>>,
        by_text: HashMap<Vec<String>, usize>,
    },
}

/// Question/answer repository built from training turns.
pub struct QaRepository {
    pairs: Vec<QaPair>,
    backend: Backend,
    calls: AtomicUsize,
}

impl std::fmt::Debug for QaRepository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QaRepository")
            .field("pairs", &self.pairs.len())
            .field("method", &self.method())
            .finish()
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl QaRepository {
    fn non_empty(pairs: &[QaPair]) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::Config(
                "retrieval repository needs at least one pair".into(),
            ));
        }
        Ok(())
    }

    /// BM25 over question tokens (k1 = 1.5, b = 0.75). Scores are divided by
    /// the best score of the query so they lie in `[0, 1]`.
    pub fn bm25(pairs: Vec<QaPair>) -> Result<Self> {
        Self::non_empty(&pairs)?;
        let docs: Vec<Vec<String>> = pairs.iter().map(|p| p.question.clone()).collect();
        Ok(QaRepository {
            backend: Backend::Bm25(Bm25Index::build(&docs)),
            pairs,
            calls: AtomicUsize::new(0),
        })
    }

    /// Cosine similarity between L2-normalised mean word vectors.
    pub fn cosine(pairs: Vec<QaPair>, mut words: WordVectors) -> Result<Self> {
        Self::non_empty(&pairs)?;
        words.fit(&pairs);
        let mut dense = words.is_dense().then(Vec::new);
        let mut postings: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            match &mut dense {
                Some(rows) => rows.push(words.dense_sentence(&p.question)),
                None => {
                    for (dim, w) in words.sparse_sentence(&p.question) {
                        postings.entry(dim).or_default().push((i, w));
                    }
                }
            }
        }
        Ok(QaRepository {
            backend: Backend::Cosine {
                words,
                postings,
                dense,
            },
            pairs,
            calls: AtomicUsize::new(0),
        })
    }

    /// Cosine over externally computed question vectors, one per pair in
    /// repository order. A missing vector is replaced by the zero vector.
    pub fn external(pairs: Vec<QaPair>, vectors: Vec<Option<Vec<f64>>>) -> Result<Self> {
        Self::non_empty(&pairs)?;
        if vectors.len() > pairs.len() {
            return Err(Error::Data(format!(
                "{} external vectors for {} repository questions",
                vectors.len(),
                pairs.len()
            )));
        }
        let dim = vectors.iter().flatten().map(Vec::len).next().unwrap_or(0);
        let mut out = Vec::with_capacity(pairs.len());
        for i in 0..pairs.len() {
            match vectors.get(i).cloned().flatten() {
                Some(mut v) => {
                    if v.len() != dim {
                        return Err(Error::Data(format!(
                            "external vector {i} has length {}, expected {dim}",
                            v.len()
                        )));
                    }
                    normalize(&mut v);
                    out.push(v);
                }
                None => {
                    log::warn!("no external vector for repository question {i}; using the UNK (zero) vector");
                    out.push(vec![0.0; dim]);
                }
            }
        }
        let mut by_text = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            by_text.entry(p.question.clone()).or_insert(i);
        }
        Ok(QaRepository {
            backend: Backend::External {
                vectors: out,
                by_text,
            },
            pairs,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn method(&self) -> Method {
        match self.backend {
            Backend::Bm25(_) => Method::Bm25,
            Backend::Cosine { .. } => Method::Cosine,
            Backend::External { .. } => Method::External,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[QaPair] {
        &self.pairs
    }

    /// Number of `retrieve` calls so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Similarity of `query` to every stored question, in repository order.
    pub fn scores(&self, query: &[String]) -> Vec<f64> {
        let n = self.pairs.len();
        match &self.backend {
            Backend::Bm25(idx) => {
                let raw: Vec<f64> = (0..n).map(|i| idx.score(query, i)).collect();
                let best = raw.iter().copied().fold(0.0, f64::max);
                if best > 0.0 {
                    raw.iter().map(|s| s / best).collect()
                } else {
                    raw
                }
            }
            Backend::Cosine {
                words,
                postings,
                dense,
                ..
            } => match dense {
                Some(rows) => {
                    let q = words.dense_sentence(query);
                    rows.iter()
                        .map(|r| {
                            r.iter()
                                .zip(&q)
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                                .clamp(-1.0, 1.0)
                        })
                        .collect()
                }
                None => {
                    let q = words.sparse_sentence(query);
                    let mut s = vec![0.0; n];
                    for (dim, w) in q {
                        if let Some(list) = postings.get(&dim) {
                            for &(i, v) in list {
                                s[i] += w * v;
                            }
                        }
                    }
                    s.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
                    s
                }
            },
            Backend::External { vectors, by_text } => {
                let Some(&qi) = by_text.get(query) else {
                    log::warn!(
                        "query {:?} has no external vector; using the UNK (zero) vector",
                        query.join(" ")
                    );
                    return vec![0.0; n];
                };
                let q = &vectors[qi];
                vectors
                    .iter()
                    .map(|r| {
                        r.iter()
                            .zip(q)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            .clamp(-1.0, 1.0)
                    })
                    .collect()
            }
        }
    }

    /// Ranked candidates for `query`: every pair scoring strictly above θ,
    /// best first with ties in repository order, capped at
    /// `max_candidates`; when none qualifies, the single best pair. The pair
    /// `exclude` (the query's own training turn) is never returned.
    pub fn retrieve_answers(
        &self,
        query: &[String],
        config: &RetrievalConfig,
        exclude: Option<usize>,
    ) -> Vec<RetrievedAnswer> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let scores = self.scores(query);
        let cap = config.max_candidates.max(1);
        // top-`cap` by (score desc, index asc)
        let mut top: Vec<(usize, f64)> = Vec::with_capacity(cap + 1);
        for (i, &s) in scores.iter().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            let pos = top.iter().position(|&(_, t)| s > t).unwrap_or(top.len());
            if pos < cap {
                top.insert(pos, (i, s));
                top.truncate(cap);
            }
        }
        let qualifying = top.iter().take_while(|&&(_, s)| s > config.theta).count();
        top.truncate(qualifying.max(1));
        top.into_iter()
            .map(|(i, score)| RetrievedAnswer {
                pair_id: i,
                tokens: self.pairs[i].answer.clone(),
                score,
            })
            .collect()
    }

    /// [`retrieve_answers`](Self::retrieve_answers) followed by
    /// [`mask_and_flatten`] against `entities`.
    pub fn retrieve(
        &self,
        query: &[String],
        config: &RetrievalConfig,
        entities: &EntitySet,
        exclude: Option<usize>,
    ) -> RetrievedAnswers {
        RetrievedAnswers::from_answers(self.retrieve_answers(query, config, exclude), entities)
    }
}

/// Mean number of answers per retrieval.
pub fn average_retrieved(counts: &[usize]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().sum::<usize>() as f64 / counts.len() as f64
}
